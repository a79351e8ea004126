"""Federated epidemic-forecasting workbench.

Simulates compartmental epidemics on contact networks, partitions the
network across federated clients, and trains recurrent / graph-attention
node-state predictors under several aggregation regimes.
"""

__version__ = "0.1.0"
