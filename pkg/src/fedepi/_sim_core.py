"""Jitted event loop for the Markovian compartmental processes.

One direct-Gillespie engine covers SIS, SIR, SEIR, SIRS and SIRVS; the
seasonal-rate SIS variant runs through the same loop with an Ogata
thinning step against the constant envelope a + |b|.  Node bookkeeping
(infected list, per-node infected-neighbor counts, S-I pair count) is
updated incrementally so an event costs O(degree) plus an O(N) weighted
pick for the node-selection scans.
"""
import numpy as np
from numba import njit

# variant codes (keep in sync with epidemics.VARIANT_CODES)
SIS = 0
SIR = 1
SEIR = 2
SIRS = 3
SIRVS = 4
SISTV = 5

# compartment codes
S = 0
I = 1
R = 2
E = 3
V = 4


@njit(cache=True)
def markov_sim(indptr, indices, init_states, variant, p, sample_times, seed):
    """Simulate one trajectory, returning int8 states of shape (T, N).

    ``p`` is the packed parameter vector in the variant's canonical order.
    Samples record the state after the last event at-or-before each sample
    time; once no transition is enabled the final state is replicated.
    """
    np.random.seed(seed)
    n = init_states.shape[0]
    n_samples = sample_times.shape[0]
    states = init_states.copy()
    out = np.empty((n_samples, n), np.int8)

    # unpack rates per variant
    beta = 0.0
    delta = 0.0
    beta2 = 0.0
    omega = 0.0
    v1 = 0.0
    v2 = 0.0
    tv_a = 0.0
    tv_b = 0.0
    tv_c = 1.0
    if variant == SIS or variant == SIR:
        beta = p[0]
        delta = p[1]
    elif variant == SEIR:
        beta = p[0]
        beta2 = p[1]
        delta = p[2]
    elif variant == SIRS:
        beta = p[0]
        delta = p[1]
        omega = p[2]
    elif variant == SIRVS:
        beta = p[0]
        delta = p[1]
        omega = p[2]
        v1 = p[3]
        v2 = p[4]
    else:  # SISTV: params a, b, c, delta; envelope rate a + |b|
        tv_a = p[0]
        tv_b = p[1]
        tv_c = p[2]
        delta = p[3]
        beta = tv_a + abs(tv_b)

    # bookkeeping: infected index list with positions, neighbor counts
    inf_nodes = np.empty(n, np.int64)
    inf_pos = np.full(n, -1, np.int64)
    n_inf = 0
    inf_nb = np.zeros(n, np.int64)
    n_e = 0
    n_r = 0
    n_s = 0
    n_v = 0
    for i in range(n):
        st = states[i]
        if st == I:
            inf_nodes[n_inf] = i
            inf_pos[i] = n_inf
            n_inf += 1
        elif st == E:
            n_e += 1
        elif st == R:
            n_r += 1
        elif st == V:
            n_v += 1
        else:
            n_s += 1
    for i in range(n):
        if states[i] == I:
            for k in range(indptr[i], indptr[i + 1]):
                inf_nb[indices[k]] += 1
    si_count = 0
    for i in range(n):
        if states[i] == S:
            si_count += inf_nb[i]

    t = 0.0
    s_idx = 0
    while s_idx < n_samples:
        r_inf = beta * si_count
        r_rec = delta * n_inf
        r_ei = beta2 * n_e
        r_rs = omega * n_r
        r_sv = v1 * n_s if variant == SIRVS else 0.0
        r_vs = v2 * n_v
        total = r_inf + r_rec + r_ei + r_rs + r_sv + r_vs
        if total <= 0.0:
            break
        t_new = t + (-np.log(np.random.random()) / total)
        while s_idx < n_samples and sample_times[s_idx] < t_new:
            out[s_idx] = states
            s_idx += 1
        if s_idx >= n_samples:
            break
        t = t_new
        u = np.random.random() * total

        if u < r_inf:
            # pick S node weighted by infected-neighbor count
            target = (u / beta) if beta > 0.0 else 0.0
            acc = 0.0
            j = -1
            for i in range(n):
                if states[i] == S and inf_nb[i] > 0:
                    acc += inf_nb[i]
                    if acc > target:
                        j = i
                        break
            if j < 0:
                for i in range(n - 1, -1, -1):
                    if states[i] == S and inf_nb[i] > 0:
                        j = i
                        break
            if j < 0:
                continue
            if variant == SISTV:
                # thinning: accept with beta(t) / envelope
                rate_t = tv_a + tv_b * np.sin(t / tv_c)
                if np.random.random() * beta > rate_t:
                    continue
            if variant == SEIR:
                # S -> E
                states[j] = E
                si_count -= inf_nb[j]
                n_s -= 1
                n_e += 1
            else:
                # S -> I
                states[j] = I
                si_count -= inf_nb[j]
                n_s -= 1
                inf_nodes[n_inf] = j
                inf_pos[j] = n_inf
                n_inf += 1
                for k in range(indptr[j], indptr[j + 1]):
                    nb = indices[k]
                    inf_nb[nb] += 1
                    if states[nb] == S:
                        si_count += 1
        elif u < r_inf + r_rec:
            # curing: uniform infected node
            pick = np.int64((u - r_inf) / delta)
            if pick >= n_inf:
                pick = n_inf - 1
            j = inf_nodes[pick]
            pos = inf_pos[j]
            last = inf_nodes[n_inf - 1]
            inf_nodes[pos] = last
            inf_pos[last] = pos
            inf_pos[j] = -1
            n_inf -= 1
            for k in range(indptr[j], indptr[j + 1]):
                nb = indices[k]
                inf_nb[nb] -= 1
                if states[nb] == S:
                    si_count -= 1
            if variant == SIS or variant == SISTV:
                states[j] = S
                n_s += 1
                si_count += inf_nb[j]
            else:
                states[j] = R
                n_r += 1
        elif u < r_inf + r_rec + r_ei:
            # SEIR incubation: uniform E node -> I
            pick = np.int64((u - r_inf - r_rec) / beta2)
            if pick >= n_e:
                pick = n_e - 1
            j = _kth_in_state(states, E, pick)
            states[j] = I
            n_e -= 1
            inf_nodes[n_inf] = j
            inf_pos[j] = n_inf
            n_inf += 1
            for k in range(indptr[j], indptr[j + 1]):
                nb = indices[k]
                inf_nb[nb] += 1
                if states[nb] == S:
                    si_count += 1
        elif u < r_inf + r_rec + r_ei + r_rs:
            # immunity loss: uniform R node -> S
            pick = np.int64((u - r_inf - r_rec - r_ei) / omega)
            if pick >= n_r:
                pick = n_r - 1
            j = _kth_in_state(states, R, pick)
            states[j] = S
            n_r -= 1
            n_s += 1
            si_count += inf_nb[j]
        elif u < r_inf + r_rec + r_ei + r_rs + r_sv:
            # vaccination: uniform S node -> V
            pick = np.int64((u - r_inf - r_rec - r_ei - r_rs) / v1)
            if pick >= n_s:
                pick = n_s - 1
            j = _kth_in_state(states, S, pick)
            states[j] = V
            n_s -= 1
            n_v += 1
            si_count -= inf_nb[j]
        else:
            # vaccine waning: uniform V node -> S
            pick = np.int64((u - r_inf - r_rec - r_ei - r_rs - r_sv) / v2)
            if pick >= n_v:
                pick = n_v - 1
            j = _kth_in_state(states, V, pick)
            states[j] = S
            n_v -= 1
            n_s += 1
            si_count += inf_nb[j]

    while s_idx < n_samples:
        out[s_idx] = states
        s_idx += 1
    return out


@njit(cache=True)
def _kth_in_state(states, code, k):
    """Index of the k-th node (0-based) currently in ``code``."""
    c = -1
    for i in range(states.shape[0]):
        if states[i] == code:
            c += 1
            if c == k:
                return i
    # numerical edge: fall back to the last matching node
    for i in range(states.shape[0] - 1, -1, -1):
        if states[i] == code:
            return i
    return 0
