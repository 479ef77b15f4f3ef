"""The six forecasting architectures and their container format.

MLP, LSTM and GRU are single stacks ending in a shared four-column readout.
The H-variants put one shared layer in front of four per-pollutant branches,
each with its own scalar readout; every parameter carries a component tag so
the alternating trainer can freeze one side.

All models map a scaled source window [B, T, F] to a scaled forecast
[B, h, 4]: recurrent stacks consume every step and emit the last h readouts,
dense stacks apply a per-hour map to each of the last h input rows.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFileError,
    InvalidSpecError,
    ShapeMismatchError,
    UnknownGroupError,
    VersionMismatchError,
)
from .ingest import POLLUTANTS
from .neuro.layers import Dense, GRULayer, LSTMLayer, Param

FAMILIES = ("MLP", "HMLP", "LSTM", "HLSTM", "GRU", "HGRU")
HIERARCHICAL = ("HMLP", "HLSTM", "HGRU")
BRANCH_GROUPS = tuple(f"branch_{p}" for p in POLLUTANTS)

_MAGIC = b"SMGC"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; hierarchy fields only apply to H-variants."""

    family: str
    hidden_layers: int  # k
    width: int  # units per hidden layer
    n_features: int = 10
    n_targets: int = 4
    horizon: int = 24  # readout steps per window
    branch_layers: int = field(default=-1)  # -1 means k - 1
    branch_width: int = field(default=-1)  # -1 means width

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidSpecError(f"unknown family {self.family!r}")
        if self.hidden_layers < 1 or self.width < 1:
            raise InvalidSpecError("need hidden_layers >= 1 and width >= 1")
        if self.n_features < 1 or self.n_targets < 1 or self.horizon < 1:
            raise InvalidSpecError("dimensions must be positive")
        if self.is_hierarchical:
            if self.resolved_branch_layers < 0 or self.resolved_branch_width < 1:
                raise InvalidSpecError("bad branch geometry")

    @property
    def is_hierarchical(self) -> bool:
        return self.family in HIERARCHICAL

    @property
    def is_recurrent(self) -> bool:
        return self.family in ("LSTM", "HLSTM", "GRU", "HGRU")

    @property
    def resolved_branch_layers(self) -> int:
        return self.hidden_layers - 1 if self.branch_layers < 0 else self.branch_layers

    @property
    def resolved_branch_width(self) -> int:
        return self.width if self.branch_width < 0 else self.branch_width

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(data: dict) -> "ModelSpec":
        return ModelSpec(**data)


def _cell_class(family: str):
    return LSTMLayer if family in ("LSTM", "HLSTM") else GRULayer


class Model:
    """A built architecture: layers, component groups, freeze state."""

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self.scaler_hash: str | None = None
        self.frozen: set[str] = set()
        rng = np.random.default_rng(seed)
        f, w, k = spec.n_features, spec.width, spec.hidden_layers

        self.trunk: list = []
        self.branches: dict[str, list] = {}
        self.readout: Dense | None = None

        if spec.family == "MLP":
            self.trunk.append(Dense(f, w, rng, name="in"))
            for i in range(k):
                self.trunk.append(Dense(w, w, rng, name=f"hidden{i}"))
            self.readout = Dense(w, spec.n_targets, rng, name="readout")
        elif spec.family in ("LSTM", "GRU"):
            cell = _cell_class(spec.family)
            self.trunk.append(cell(f, w, rng, name="cell0"))
            for i in range(1, k):
                self.trunk.append(cell(w, w, rng, name=f"cell{i}"))
            self.readout = Dense(w, spec.n_targets, rng, name="readout")
        elif spec.family == "HMLP":
            self.trunk.append(Dense(f, w, rng, name="shared", component="shared"))
            self._build_branches(rng, Dense)
        else:  # HLSTM / HGRU
            cell = _cell_class(spec.family)
            self.trunk.append(cell(f, w, rng, name="shared", component="shared"))
            self._build_branches(rng, cell)

    def _build_branches(self, rng: np.random.Generator, layer_cls) -> None:
        bl = self.spec.resolved_branch_layers
        bw = self.spec.resolved_branch_width
        w = self.spec.width
        for pollutant in POLLUTANTS:
            tag = f"branch_{pollutant}"
            stack: list = []
            n_in = w
            for i in range(bl):
                stack.append(layer_cls(n_in, bw, rng, name=f"{tag}.l{i}", component=tag))
                n_in = bw
            stack.append(Dense(n_in, 1, rng, name=f"{tag}.readout", component=tag))
            self.branches[tag] = stack

    # --- parameter bookkeeping ---------------------------------------------

    def _layers(self) -> list:
        out = list(self.trunk)
        for stack in self.branches.values():
            out.extend(stack)
        if self.readout is not None:
            out.append(self.readout)
        return out

    def params(self) -> list[Param]:
        out: list[Param] = []
        for layer in self._layers():
            out.extend(layer.params())
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def components(self) -> dict[str, list[Param]]:
        """Named disjoint parameter groups (1 for plain, 5 for H-variants)."""
        if not self.spec.is_hierarchical:
            return {"monolithic": self.params()}
        groups: dict[str, list[Param]] = {"shared": []}
        for tag in BRANCH_GROUPS:
            groups[tag] = []
        for p in self.params():
            groups[p.component].append(p)
        return groups

    def _normalize_group(self, group: str) -> str:
        if group in self.components():
            return group
        alias = f"branch_{group}"
        if alias in self.components():
            return alias
        raise UnknownGroupError(f"no parameter group {group!r} on a {self.spec.family}")

    def is_frozen(self, group: str) -> bool:
        return self._normalize_group(group) in self.frozen

    def set_frozen(self, group: str, frozen: bool) -> None:
        """Frozen groups keep inferring and passing gradients through, but
        optimizers skip them."""
        name = self._normalize_group(group)
        if frozen:
            self.frozen.add(name)
        else:
            self.frozen.discard(name)

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    # --- forward / backward --------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Map a scaled window batch [B, T, F] to forecasts [B, h, 4]."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.spec.n_features:
            raise ShapeMismatchError(f"expected [B, T, {self.spec.n_features}], got {x.shape}")
        B, T, _ = x.shape
        h = self.spec.horizon
        if T < h:
            raise ShapeMismatchError(f"window of {T} steps cannot emit {h} readouts")
        self._batch, self._steps = B, T

        if not self.spec.is_recurrent:
            rows = x[:, T - h :, :].reshape(B * h, self.spec.n_features)
            out = rows
            for layer in self.trunk:
                out = layer.forward(out)
            if self.readout is not None:
                out = self.readout.forward(out)
            else:
                out = np.concatenate(
                    [self._branch_forward(tag, out) for tag in BRANCH_GROUPS], axis=1
                )
            return out.reshape(B, h, self.spec.n_targets)

        seq = x
        for layer in self.trunk:
            seq = layer.forward(seq)
        if self.readout is not None:
            rows = seq[:, T - h :, :].reshape(B * h, -1)
            out = self.readout.forward(rows)
            return out.reshape(B, h, self.spec.n_targets)
        cols = []
        for tag in BRANCH_GROUPS:
            branch_seq = seq
            for layer in self.branches[tag][:-1]:
                branch_seq = layer.forward(branch_seq)
            rows = branch_seq[:, T - h :, :].reshape(B * h, -1)
            cols.append(self.branches[tag][-1].forward(rows))
        return np.concatenate(cols, axis=1).reshape(B, h, self.spec.n_targets)

    def _branch_forward(self, tag: str, shared_rows: np.ndarray) -> np.ndarray:
        out = shared_rows
        for layer in self.branches[tag]:
            out = layer.forward(out)
        return out

    def backward(self, grad_out: np.ndarray) -> None:
        """Accumulate gradients for the last forward call."""
        B, T, h = self._batch, self._steps, self.spec.horizon
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != (B, h, self.spec.n_targets):
            raise ShapeMismatchError(f"bad output gradient shape {grad_out.shape}")

        if not self.spec.is_recurrent:
            flat = grad_out.reshape(B * h, self.spec.n_targets)
            if self.readout is not None:
                g = self.readout.backward(flat)
            else:
                g = None
                for j, tag in enumerate(BRANCH_GROUPS):
                    gb = flat[:, j : j + 1]
                    for layer in reversed(self.branches[tag]):
                        gb = layer.backward(gb)
                    g = gb if g is None else g + gb
            for layer in reversed(self.trunk):
                g = layer.backward(g)
            return

        width_out = self.spec.width if self.readout is not None else None
        if self.readout is not None:
            flat = grad_out.reshape(B * h, self.spec.n_targets)
            g_rows = self.readout.backward(flat)
            g_seq = np.zeros((B, T, width_out))
            g_seq[:, T - h :, :] = g_rows.reshape(B, h, width_out)
        else:
            g_seq = None
            for j, tag in enumerate(BRANCH_GROUPS):
                gb = grad_out[:, :, j].reshape(B * h, 1)
                gb = self.branches[tag][-1].backward(gb)
                bw = gb.shape[1]
                gs = np.zeros((B, T, bw))
                gs[:, T - h :, :] = gb.reshape(B, h, bw)
                for layer in reversed(self.branches[tag][:-1]):
                    gs = layer.backward(gs)
                g_seq = gs if g_seq is None else g_seq + gs
        for layer in reversed(self.trunk):
            g_seq = layer.backward(g_seq)

    # --- state copies ----------------------------------------------------------

    def snapshot(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        for p, saved in zip(self.params(), snapshot):
            p.value[...] = saved


def build(spec: ModelSpec, seed: int) -> Model:
    """Construct and Kaiming-initialize a model, deterministically per seed."""
    return Model(spec, seed)


# --- container format ---------------------------------------------------------

def save(model: Model, path: str | Path, config_hash: str | None = None) -> None:
    """Write a versioned container: header JSON, raw float64 buffers, CRC32."""
    params = model.params()
    header = {
        "spec": model.spec.to_json(),
        "seed": model.seed,
        "scaler_hash": model.scaler_hash,
        "config_hash": config_hash,
        "params": [
            {"name": p.name, "shape": list(p.value.shape), "component": p.component}
            for p in params
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray()
    body += _MAGIC
    body += struct.pack("<HI", _FORMAT_VERSION, len(header_bytes))
    body += header_bytes
    for p in params:
        body += np.ascontiguousarray(p.value, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load(path: str | Path) -> Model:
    """Rebuild a model from its container; forward outputs are bit-exact."""
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != _MAGIC:
        raise CorruptFileError(f"{path}: not a model container")
    (checksum,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != checksum:
        raise CorruptFileError(f"{path}: checksum mismatch")
    version, header_len = struct.unpack("<HI", raw[4:10])
    if version != _FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {_FORMAT_VERSION}")
    try:
        header = json.loads(raw[10 : 10 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: bad header") from exc

    model = build(ModelSpec.from_json(header["spec"]), header["seed"])
    model.scaler_hash = header["scaler_hash"]
    offset = 10 + header_len
    params = model.params()
    if len(params) != len(header["params"]):
        raise CorruptFileError(f"{path}: parameter list mismatch")
    for p, meta in zip(params, header["params"]):
        if list(p.value.shape) != meta["shape"] or p.name != meta["name"]:
            raise CorruptFileError(f"{path}: parameter layout mismatch at {meta['name']}")
        nbytes = p.value.size * 8
        buf = np.frombuffer(raw, dtype="<f8", count=p.value.size, offset=offset)
        p.value[...] = buf.reshape(p.value.shape)
        offset += nbytes
    if offset != len(raw) - 4:
        raise CorruptFileError(f"{path}: trailing bytes")
    return model


def load_config_hash(path: str | Path) -> str | None:
    """Peek at the config hash embedded in a container without full load."""
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != _MAGIC:
        raise CorruptFileError(f"{path}: not a model container")
    _, header_len = struct.unpack("<HI", raw[4:10])
    header = json.loads(raw[10 : 10 + header_len].decode("utf-8"))
    return header.get("config_hash")
