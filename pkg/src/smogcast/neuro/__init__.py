"""Numerical core: parameters, dense/LSTM/GRU layers, kernel backends."""

from .kernels import backend
from .layers import Dense, GRULayer, LSTMLayer, Param, kaiming_uniform

__all__ = ["Dense", "GRULayer", "LSTMLayer", "Param", "kaiming_uniform", "backend"]
