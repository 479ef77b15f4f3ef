"""Parameters and layers with hand-derived forward/backward passes.

Everything is float64. A layer owns its parameters, remembers whatever the
backward pass needs from the last forward call, and accumulates gradients
into ``Param.grad`` (zeroed externally between batches). Models are trained
single-threaded, so the per-layer cache is safe.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatchError
from . import kernels


class Param:
    """One tensor of tuneable weights with its gradient and Adam moments."""

    __slots__ = ("name", "value", "grad", "adam_m", "adam_v", "component")

    def __init__(self, name: str, value: np.ndarray, component: str = "monolithic"):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.component = component

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Param({self.name}, shape={self.value.shape}, component={self.component})"


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform(-b, b) with b = 1/sqrt(fan_in), the framework-default init."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """Fully-connected map y = act(x W + b), act in {ReLU, identity}."""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        rng: np.random.Generator,
        relu: bool = True,
        name: str = "dense",
        component: str = "monolithic",
    ):
        if n_in < 1 or n_out < 1:
            raise ValueError("dense layer needs positive dimensions")
        self.n_in = n_in
        self.n_out = n_out
        self.relu = relu
        self.w = Param(f"{name}.w", kaiming_uniform(rng, (n_in, n_out), n_in), component)
        self.b = Param(f"{name}.b", kaiming_uniform(rng, (n_out,), n_in), component)
        self._x: np.ndarray | None = None
        self._mask: np.ndarray | None = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatchError(f"dense expects [N, {self.n_in}], got {x.shape}")
        y = x @ self.w.value + self.b.value
        self._x = x
        if self.relu:
            self._mask = y > 0.0
            y *= self._mask
        return y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward before forward")
        if grad_y.shape != (self._x.shape[0], self.n_out):
            raise ShapeMismatchError(f"bad upstream gradient shape {grad_y.shape}")
        if self.relu:
            grad_y = grad_y * self._mask
        self.w.grad += self._x.T @ grad_y
        self.b.grad += grad_y.sum(axis=0)
        return grad_y @ self.w.value.T


class _RecurrentBase:
    """Shared plumbing for the gated sequence layers."""

    gate_factor = 0  # set by subclasses

    def __init__(
        self,
        n_in: int,
        n_hidden: int,
        rng: np.random.Generator,
        name: str = "cell",
        component: str = "monolithic",
    ):
        if n_in < 1 or n_hidden < 1:
            raise ValueError("recurrent layer needs positive dimensions")
        self.n_in = n_in
        self.n_hidden = n_hidden
        g = self.gate_factor * n_hidden
        # The framework default draws every cell tensor at 1/sqrt(hidden).
        self.w_ih = Param(f"{name}.w_ih", kaiming_uniform(rng, (g, n_in), n_hidden), component)
        self.w_hh = Param(f"{name}.w_hh", kaiming_uniform(rng, (g, n_hidden), n_hidden), component)
        self.b_ih = Param(f"{name}.b_ih", kaiming_uniform(rng, (g,), n_hidden), component)
        self.b_hh = Param(f"{name}.b_hh", kaiming_uniform(rng, (g,), n_hidden), component)
        self._x: np.ndarray | None = None
        self._h_seq: np.ndarray | None = None
        self._cache = None

    def params(self) -> list[Param]:
        return [self.w_ih, self.w_hh, self.b_ih, self.b_hh]

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeMismatchError(f"expected [B, T, {self.n_in}], got {x.shape}")
        x = np.ascontiguousarray(x, dtype=np.float64)
        if not x.flags.writeable:  # compiled kernels take writable memoryviews
            x = x.copy()
        return x


class LSTMLayer(_RecurrentBase):
    """LSTM over a full sequence; emits the hidden state at every step."""

    gate_factor = 4

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        B = x.shape[0]
        h0 = np.zeros((B, self.n_hidden))
        c0 = np.zeros((B, self.n_hidden))
        h_seq, cache = kernels.lstm_seq_forward(
            x, self.w_ih.value, self.w_hh.value, self.b_ih.value, self.b_hh.value, h0, c0
        )
        self._x, self._h_seq, self._cache = x, h_seq, cache
        return h_seq

    def backward(self, grad_h_seq: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward before forward")
        grad_x, g_wih, g_whh, g_bih, g_bhh = kernels.lstm_seq_backward(
            self._x, self.w_ih.value, self.w_hh.value, self._h_seq, self._cache,
            np.ascontiguousarray(grad_h_seq),
        )
        self.w_ih.grad += g_wih
        self.w_hh.grad += g_whh
        self.b_ih.grad += g_bih
        self.b_hh.grad += g_bhh
        return grad_x

    def init_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.n_hidden)), np.zeros((batch, self.n_hidden))

    def step(self, x_t: np.ndarray, state: tuple[np.ndarray, np.ndarray]):
        """Single-step reference evaluation (inference and parity tests)."""
        h, c = state
        H = self.n_hidden
        pre = x_t @ self.w_ih.value.T + self.b_ih.value + h @ self.w_hh.value.T + self.b_hh.value
        i = _sigmoid(pre[:, :H])
        f = _sigmoid(pre[:, H : 2 * H])
        g = np.tanh(pre[:, 2 * H : 3 * H])
        o = _sigmoid(pre[:, 3 * H :])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        return h_new, (h_new, c_new)


class GRULayer(_RecurrentBase):
    """GRU over a full sequence; reset and update gates, two bias vectors."""

    gate_factor = 3

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        h0 = np.zeros((x.shape[0], self.n_hidden))
        h_seq, cache = kernels.gru_seq_forward(
            x, self.w_ih.value, self.w_hh.value, self.b_ih.value, self.b_hh.value, h0
        )
        self._x, self._h_seq, self._cache = x, h_seq, cache
        return h_seq

    def backward(self, grad_h_seq: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward before forward")
        grad_x, g_wih, g_whh, g_bih, g_bhh = kernels.gru_seq_backward(
            self._x, self.w_ih.value, self.w_hh.value, self._h_seq, self._cache,
            np.ascontiguousarray(grad_h_seq),
        )
        self.w_ih.grad += g_wih
        self.w_hh.grad += g_whh
        self.b_ih.grad += g_bih
        self.b_hh.grad += g_bhh
        return grad_x

    def init_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.n_hidden))

    def step(self, x_t: np.ndarray, state: np.ndarray):
        h = state
        H = self.n_hidden
        xi = x_t @ self.w_ih.value.T + self.b_ih.value
        hh = h @ self.w_hh.value.T + self.b_hh.value
        r = _sigmoid(xi[:, :H] + hh[:, :H])
        z = _sigmoid(xi[:, H : 2 * H] + hh[:, H : 2 * H])
        n = np.tanh(xi[:, 2 * H :] + r * hh[:, 2 * H :])
        h_new = (1.0 - z) * n + z * h
        return h_new, h_new


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
