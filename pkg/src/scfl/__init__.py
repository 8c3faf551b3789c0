"""Simulator and analysis toolkit for federated learning with stochastic coded straggler compensation."""

__version__ = "0.1.0"
