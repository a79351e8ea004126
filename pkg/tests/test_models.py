"""LSTM / STGAT forward contracts, locality, and local training behavior."""
import numpy as np
import pytest

from fedepi import dataset as dsm
from fedepi import epidemics as ep
from fedepi import models as md
from fedepi import netgraph as ng
from fedepi.autodiff import softmax_cross_entropy
from fedepi.nncore import GatGraph, gradient_check, params_sub_norm

SMALL_STGAT = dict(d_embed=4, lstm_hidden=(3, 4), gat_heads=2, gat_head_dim=3,
                   t_H=4, t_F=2)


@pytest.fixture(scope="module")
def overfit_data():
    """57 windows of a near-frozen mixed-state SIS client: every node
    history determines its future exactly, but no single class does."""
    g = ng.generate_synthetic("erdos-renyi", 12, p=0.35, seed=1)
    tr = ep.simulate(g, ep.ModelSpec.sis(0.8, 0.4), dt=0.01, t_max=0.755,
                     seed=1, init=0.5)
    X, Y = dsm.make_windows(tr, 10, 10)
    train = dsm.WindowDataset(0, X[:50], Y[:50], "train")
    val = dsm.WindowDataset(0, X[50:], Y[50:], "val")
    return g, train, val


class TestModelConfig:
    def test_architecture_validated(self):
        with pytest.raises(ValueError):
            md.ModelConfig("gru", n_classes=2)

    def test_hidden_defaults(self):
        assert md.ModelConfig("lstm", n_classes=2).lstm_hidden == (64,)
        assert md.ModelConfig("stgat", n_classes=2).lstm_hidden == (32, 64)

    def test_n_classes_bound(self):
        with pytest.raises(ValueError):
            md.ModelConfig("lstm", n_classes=1)

    def test_init_params_deterministic(self):
        cfg = md.ModelConfig("stgat", n_classes=3)
        a = md.init_params(cfg, seed=4)
        b = md.init_params(cfg, seed=4)
        assert a.names() == b.names()
        for name, t in a.items():
            np.testing.assert_array_equal(t.data, b[name].data)

    def test_stgat_param_names(self):
        cfg = md.ModelConfig("stgat", n_classes=2)
        names = set(md.init_params(cfg, seed=0).names())
        assert {"embed", "gat.W", "gat.a_src", "gat.a_dst", "bn.gamma",
                "bn.running_mean", "head.W"} <= names
        assert any(n.startswith("lstm2.") for n in names)


class TestForwardContracts:
    def test_lstm_shape_single_node(self):
        cfg = md.ModelConfig("lstm", n_classes=2)
        params = md.init_params(cfg, seed=0)
        logits = md.lstm_forward(params, np.zeros((1, 1, 10), np.int64), cfg)
        assert logits.shape == (1, 1, 10, 2)

    def test_zero_head_uniform(self):
        cfg = md.ModelConfig("lstm", n_classes=3, t_H=5, t_F=4)
        params = md.init_params(cfg, seed=0)
        params["head.W"].data[:] = 0.0
        params["head.b"].data[:] = 0.0
        x = np.random.default_rng(0).integers(0, 3, size=(2, 4, 5))
        logits = md.lstm_forward(params, x, cfg)
        flat = logits.reshape(2 * 4 * 4, 3)
        loss, probs = softmax_cross_entropy(flat, np.zeros(32, np.int64))
        np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-15)
        assert loss.item() == pytest.approx(np.log(3.0), abs=1e-12)

    def test_stgat_shape_and_selfloop_only_graph(self):
        cfg = md.ModelConfig("stgat", n_classes=2, **SMALL_STGAT)
        g = ng.from_edges(5, [])          # no edges: GAT sees self-loops only
        gg = GatGraph.from_graph(g)
        params = md.init_params(cfg, seed=1)
        x = np.random.default_rng(1).integers(0, 2, size=(3, 5, 4))
        logits = md.stgat_forward(params, x, gg, cfg)
        assert logits.shape == (3, 5, 2, 2)
        assert np.all(np.isfinite(logits.data))

    def test_forward_deterministic(self):
        cfg = md.ModelConfig("stgat", n_classes=2, **SMALL_STGAT)
        g = ng.generate_synthetic("ring", 6)
        gg = GatGraph.from_graph(g)
        params = md.init_params(cfg, seed=2)
        x = np.random.default_rng(2).integers(0, 2, size=(2, 6, 4))
        a = md.stgat_forward(params, x, gg, cfg).data
        b = md.stgat_forward(params, x, gg, cfg).data
        np.testing.assert_array_equal(a, b)

    def test_code_out_of_range(self):
        cfg = md.ModelConfig("lstm", n_classes=2, t_H=3, t_F=2)
        params = md.init_params(cfg, seed=0)
        with pytest.raises(ValueError, match="class id"):
            md.lstm_forward(params, np.full((1, 2, 3), 7), cfg)

    def test_stgat_needs_graph(self):
        cfg = md.ModelConfig("stgat", n_classes=2, **SMALL_STGAT)
        params = md.init_params(cfg, seed=0)
        with pytest.raises(ValueError):
            md.model_forward(params, np.zeros((1, 2, 4), np.int64), cfg)


class TestLocality:
    def test_lstm_cross_node_invariance_bit_exact(self):
        cfg = md.ModelConfig("lstm", n_classes=2, t_H=6, t_F=3, d_embed=4,
                             lstm_hidden=(5,))
        params = md.init_params(cfg, seed=0)
        rng = np.random.default_rng(0)
        x = rng.integers(0, 2, size=(2, 5, 6))
        base = md.lstm_forward(params, x, cfg).data
        x2 = x.copy()
        x2[:, 3, :] = 1 - x2[:, 3, :]
        pert = md.lstm_forward(params, x2, cfg).data
        others = [0, 1, 2, 4]
        np.testing.assert_array_equal(pert[:, others], base[:, others])
        assert not np.array_equal(pert[:, 3], base[:, 3])

    def test_stgat_one_hop_locality_bit_exact(self):
        # star: leaves touch only the hub, so leaf 1 ignores leaf 2
        cfg = md.ModelConfig("stgat", n_classes=2, **SMALL_STGAT)
        g = ng.generate_synthetic("star", 6)
        gg = GatGraph.from_graph(g)
        params = md.init_params(cfg, seed=3)
        rng = np.random.default_rng(3)
        x = rng.integers(0, 2, size=(2, 6, 4))
        base = md.stgat_forward(params, x, gg, cfg).data
        x2 = x.copy()
        x2[:, 2, :] = 1 - x2[:, 2, :]
        pert = md.stgat_forward(params, x2, gg, cfg).data
        unaffected = [1, 3, 4, 5]       # every leaf except the perturbed one
        np.testing.assert_array_equal(pert[:, unaffected], base[:, unaffected])
        assert not np.array_equal(pert[:, 0], base[:, 0])   # hub sees leaf 2

    def test_stgat_hub_perturbation_reaches_all(self):
        cfg = md.ModelConfig("stgat", n_classes=2, **SMALL_STGAT)
        g = ng.generate_synthetic("star", 6)
        gg = GatGraph.from_graph(g)
        params = md.init_params(cfg, seed=3)
        rng = np.random.default_rng(4)
        x = rng.integers(0, 2, size=(2, 6, 4))
        base = md.stgat_forward(params, x, gg, cfg).data
        x2 = x.copy()
        x2[:, 0, :] = 1 - x2[:, 0, :]
        pert = md.stgat_forward(params, x2, gg, cfg).data
        for node in range(6):
            assert not np.array_equal(pert[:, node], base[:, node])

    def test_stgat_permutation_equivariance(self):
        cfg = md.ModelConfig("stgat", n_classes=2, **SMALL_STGAT)
        g = ng.generate_synthetic("erdos-renyi", 7, p=0.5, seed=3)
        gg = GatGraph.from_graph(g)
        params = md.init_params(cfg, seed=0)
        rng = np.random.default_rng(0)
        x = rng.integers(0, 2, size=(3, 7, 4))
        base = md.stgat_forward(params, x, gg, cfg).data
        perm = rng.permutation(7)
        g2 = ng.from_edges(7, [tuple(e) for e in perm[g.edges]])
        gg2 = GatGraph.from_graph(g2)
        x2 = np.empty_like(x)
        x2[:, perm] = x
        pert = md.stgat_forward(params, x2, gg2, cfg).data
        # equivariant up to summation reorder inside attention segments
        np.testing.assert_allclose(pert[:, perm], base, atol=1e-12)


class TestPredict:
    def test_uniform_ties_to_class_zero(self):
        logits = np.zeros((2, 3, 4, 3))
        np.testing.assert_array_equal(md.predict(logits), 0)

    def test_one_hot_matches(self):
        rng = np.random.default_rng(0)
        codes = rng.integers(0, 4, size=(2, 5, 3))
        logits = np.eye(4)[codes]
        np.testing.assert_array_equal(md.predict(logits), codes)

    def test_random_vs_scan(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(3, 4, 2, 5))
        got = md.predict(logits)
        for idx in np.ndindex(3, 4, 2):
            row = logits[idx]
            best, arg = -np.inf, 0
            for c in range(5):
                if row[c] > best:
                    best, arg = row[c], c
            assert got[idx] == arg


class TestTrainLocal:
    def _small_cfg(self):
        return md.ModelConfig("lstm", n_classes=2, d_embed=4, lstm_hidden=(6,))

    def test_mu_zero_matches_plain_path(self, overfit_data):
        _, train, val = overfit_data
        cfg = self._small_cfg()
        tcfg = md.TrainConfig(epochs=3, batch_size=16, lr=1e-3, seed=0)
        a = md.init_params(cfg, seed=0)
        b = a.clone()
        theta_g = md.init_params(cfg, seed=99)
        a, curve_a, val_a = md.train_local(a, train, val, tcfg, cfg)
        b, curve_b, val_b = md.train_local(b, train, val, tcfg, cfg,
                                           proximal=(theta_g, 0.0))
        assert curve_a == curve_b and val_a == val_b
        for name, t in a.items():
            np.testing.assert_array_equal(t.data, b[name].data)

    def test_large_mu_pulls_toward_global(self, overfit_data):
        _, train, val = overfit_data
        cfg = self._small_cfg()
        tcfg = md.TrainConfig(epochs=10, batch_size=16, lr=1e-3, seed=0)
        params = md.init_params(cfg, seed=0)
        theta_g = md.init_params(cfg, seed=99)
        before = params_sub_norm(params, theta_g)
        params, _, _ = md.train_local(params, train, val, tcfg, cfg,
                                      proximal=(theta_g, 1e6))
        after = params_sub_norm(params, theta_g)
        assert after < before

    def test_negative_mu_rejected(self, overfit_data):
        _, train, val = overfit_data
        cfg = self._small_cfg()
        params = md.init_params(cfg, seed=0)
        with pytest.raises(ValueError):
            md.train_local(params, train, val,
                           md.TrainConfig(epochs=1), cfg,
                           proximal=(md.init_params(cfg, seed=1), -0.5))

    def test_lr_zero_is_identity(self, overfit_data):
        _, train, val = overfit_data
        cfg = self._small_cfg()
        params = md.init_params(cfg, seed=0)
        snapshot = params.clone()
        params, _, _ = md.train_local(
            params, train, val, md.TrainConfig(epochs=2, lr=0.0), cfg)
        for name, t in params.items():
            np.testing.assert_array_equal(t.data, snapshot[name].data)

    def test_deterministic_given_seed(self, overfit_data):
        _, train, val = overfit_data
        cfg = self._small_cfg()
        tcfg = md.TrainConfig(epochs=2, batch_size=16, seed=7)
        a = md.init_params(cfg, seed=0)
        b = a.clone()
        a, ca, _ = md.train_local(a, train, val, tcfg, cfg)
        b, cb, _ = md.train_local(b, train, val, tcfg, cfg)
        assert ca == cb
        for name, t in a.items():
            np.testing.assert_array_equal(t.data, b[name].data)

    def test_epoch_offset_changes_shuffle_stream(self, overfit_data):
        _, train, val = overfit_data
        cfg = self._small_cfg()
        a = md.init_params(cfg, seed=0)
        b = a.clone()
        a, ca, _ = md.train_local(
            a, train, val, md.TrainConfig(epochs=1, batch_size=16), cfg)
        b, cb, _ = md.train_local(
            b, train, val,
            md.TrainConfig(epochs=1, batch_size=16, epoch_offset=3), cfg)
        assert ca != cb

    def test_empty_train_split_rejected(self, overfit_data):
        _, train, val = overfit_data
        cfg = self._small_cfg()
        empty = dsm.WindowDataset(0, train.inputs[:0], train.targets[:0],
                                  "train")
        with pytest.raises(ValueError, match="empty"):
            md.train_local(md.init_params(cfg, seed=0), empty, val,
                           md.TrainConfig(epochs=1), cfg)

    def test_ce_decreases_first_10_epochs_lstm(self, overfit_data):
        _, train, val = overfit_data
        cfg = md.ModelConfig("lstm", n_classes=2)
        params = md.init_params(cfg, seed=0)
        _, curve, _ = md.train_local(
            params, train, val, md.TrainConfig(epochs=10), cfg)
        assert curve[9] < curve[0]

    def test_ce_decreases_first_10_epochs_stgat(self, overfit_data):
        g, train, val = overfit_data
        gg = GatGraph.from_graph(g)
        cfg = md.ModelConfig("stgat", n_classes=2, d_embed=4,
                             lstm_hidden=(8, 12), gat_heads=2, gat_head_dim=4)
        params = md.init_params(cfg, seed=0)
        _, curve, _ = md.train_local(
            params, train, val, md.TrainConfig(epochs=10, batch_size=16),
            cfg, gg=gg)
        assert curve[9] < curve[0]

    def test_stgat_bn_buffers_move_in_training(self, overfit_data):
        g, train, val = overfit_data
        gg = GatGraph.from_graph(g)
        cfg = md.ModelConfig("stgat", n_classes=2, d_embed=4,
                             lstm_hidden=(3, 4), gat_heads=2, gat_head_dim=3)
        params = md.init_params(cfg, seed=0)
        assert np.all(params["bn.running_mean"].data == 0.0)
        params, _, _ = md.train_local(
            params, train, val, md.TrainConfig(epochs=1, batch_size=16),
            cfg, gg=gg)
        assert np.any(params["bn.running_mean"].data != 0.0)
        assert np.any(params["bn.running_var"].data != 1.0)

    def test_overfit_capacity(self, overfit_data):
        # 50 train windows, up to 2000 epochs; converges far earlier
        _, train, val = overfit_data
        cfg = md.ModelConfig("lstm", n_classes=2)
        params = md.init_params(cfg, seed=0)
        done = 0
        acc = 0.0
        while done < 2000:
            tcfg = md.TrainConfig(epochs=100, epoch_offset=done)
            params, _, _ = md.train_local(params, train, val, tcfg, cfg)
            done += 100
            acc = md.evaluate(params, train, cfg)["acc"]
            if acc > 0.99:
                break
        assert acc > 0.99, f"train accuracy {acc} after {done} epochs"


class TestEvaluate:
    def test_fields_and_ranges(self, overfit_data):
        _, train, val = overfit_data
        cfg = md.ModelConfig("lstm", n_classes=2, d_embed=4, lstm_hidden=(6,))
        params = md.init_params(cfg, seed=0)
        out = md.evaluate(params, val, cfg)
        assert set(out) == {"ce", "acc", "preds", "labels"}
        n_cells = val.n_windows * val.n_nodes * 10
        assert out["preds"].shape == (n_cells,)
        assert out["labels"].shape == (n_cells,)
        assert 0.0 <= out["acc"] <= 1.0 and out["ce"] >= 0.0

    def test_zero_head_ce_is_log_c(self, overfit_data):
        _, train, val = overfit_data
        cfg = md.ModelConfig("lstm", n_classes=2, d_embed=4, lstm_hidden=(6,))
        params = md.init_params(cfg, seed=0)
        params["head.W"].data[:] = 0.0
        params["head.b"].data[:] = 0.0
        out = md.evaluate(params, val, cfg)
        assert out["ce"] == pytest.approx(np.log(2.0), abs=1e-12)


class TestFullModelGradients:
    def test_stgat_six_node_gradient_check(self):
        cfg = md.ModelConfig("stgat", n_classes=2, d_embed=4,
                             lstm_hidden=(3, 4), gat_heads=2, gat_head_dim=3,
                             t_H=4, t_F=2, dropout_p=0.3)
        g = ng.generate_synthetic("star", 6)
        gg = GatGraph.from_graph(g)
        params = md.init_params(cfg, seed=0)
        rng = np.random.default_rng(8)
        x = rng.integers(0, 2, size=(3, 6, 4))
        y = rng.integers(0, 2, size=(3, 6, 2))

        def f(p):
            drop_rng = np.random.default_rng(123)
            logits = md.stgat_forward(p, x, gg, cfg, train=True, rng=drop_rng,
                                      bn_update=False)
            flat = logits.reshape(3 * 6 * 2, 2)
            loss, _ = softmax_cross_entropy(flat, y.ravel())
            return loss

        err = gradient_check(f, params, step=1e-5, max_coords=150, seed=0)
        assert err < 1e-4

    def test_lstm_gradient_check(self):
        cfg = md.ModelConfig("lstm", n_classes=3, d_embed=3, lstm_hidden=(4,),
                             t_H=5, t_F=2)
        params = md.init_params(cfg, seed=1)
        rng = np.random.default_rng(9)
        x = rng.integers(0, 3, size=(2, 4, 5))
        y = rng.integers(0, 3, size=(2, 4, 2))

        def f(p):
            logits = md.lstm_forward(p, x, cfg)
            flat = logits.reshape(2 * 4 * 2, 3)
            loss, _ = softmax_cross_entropy(flat, y.ravel())
            return loss

        err = gradient_check(f, params, step=1e-5, max_coords=150, seed=0)
        assert err < 1e-4
