"""Chronological splitting, feature selection, scaling, and window pairs.

Everything here is a pure transformation: tables in, chunk lists or pair
lists out, with the arithmetic identities of the pair accounting checked at
construction time.
"""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConstantInputError,
    LayoutMismatchError,
    LengthMismatchError,
    OverlappingAssignmentError,
)
from .ingest import POLLUTANTS, SeriesTable

ROLES = ("train", "validation", "test")

DEFAULT_R_TH = 0.15
DEFAULT_L_IN = 72
DEFAULT_H = 24
DEFAULT_DN = 24


# --- splitting -------------------------------------------------------------

@dataclass(frozen=True)
class SplitEntry:
    role: str
    start: int
    length: int

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.start < 0 or self.length < 1:
            raise ValueError("split entries need start >= 0 and length >= 1")

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass
class SplitSpec:
    """Ordered, disjoint hour-range assignments."""

    entries: list[SplitEntry]

    @staticmethod
    def single_split(n_hours: int, train_frac: float, val_frac: float) -> "SplitSpec":
        """One chronological train/validation/test cut over n_hours."""
        n_train = int(n_hours * train_frac)
        n_val = int(n_hours * val_frac)
        n_test = n_hours - n_train - n_val
        if min(n_train, n_val, n_test) < 1:
            raise ValueError("fractions leave an empty split")
        return SplitSpec(
            [
                SplitEntry("train", 0, n_train),
                SplitEntry("validation", n_train, n_val),
                SplitEntry("test", n_train + n_val, n_test),
            ]
        )

    @staticmethod
    def reference_layout(start: int = 0) -> "SplitSpec":
        """Back-to-back chunks with the published multi-year hour counts.

        Three full training years, then two years that each end with a
        validation and a test block, then a final year split between
        validation and test. Totals 21264 hours at a 76.3/11.9/11.9 balance.
        """
        blocks = [
            ("train", 3648),
            ("train", 3648),
            ("train", 3648),
            ("train", 2640),
            ("validation", 504),
            ("test", 504),
            ("train", 2640),
            ("validation", 504),
            ("test", 504),
            ("validation", 1512),
            ("test", 1512),
        ]
        entries = []
        pos = start
        for role, length in blocks:
            entries.append(SplitEntry(role, pos, length))
            pos += length
        return SplitSpec(entries)

    def total_hours(self) -> dict[str, int]:
        totals = {role: 0 for role in ROLES}
        for e in self.entries:
            totals[e.role] += e.length
        return totals

    def balance(self) -> tuple[float, float, float]:
        totals = self.total_hours()
        grand = sum(totals.values())
        return tuple(totals[r] / grand for r in ROLES)  # type: ignore[return-value]


@dataclass
class Chunk:
    """One contiguous stretch of aligned source/target hours."""

    a: np.ndarray  # [T, F_a]
    b: np.ndarray  # [T, F_b]
    start: int  # absolute hour index in the parent tables
    chunk_id: int

    def __len__(self) -> int:
        return self.a.shape[0]


@dataclass
class SplitDatasets:
    train: list[Chunk]
    validation: list[Chunk]
    test: list[Chunk]
    a_names: tuple[str, ...]
    b_names: tuple[str, ...]

    def role(self, name: str) -> list[Chunk]:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def balance(self) -> tuple[float, float, float]:
        totals = [sum(len(c) for c in self.role(r)) for r in ROLES]
        grand = sum(totals)
        return tuple(t / grand for t in totals)  # type: ignore[return-value]


def split(a: SeriesTable, b: SeriesTable, spec: SplitSpec) -> SplitDatasets:
    """Carve both stations into per-role chunk lists.

    Chunks never span entry boundaries even when two entries of the same
    role are adjacent, so windowing later cannot leak across them.
    """
    if len(a) != len(b):
        raise LayoutMismatchError("station tables differ in length")
    taken = np.zeros(len(a), dtype=bool)
    datasets: dict[str, list[Chunk]] = {role: [] for role in ROLES}
    for chunk_id, entry in enumerate(spec.entries):
        if entry.stop > len(a):
            raise ValueError(f"entry {entry} runs past the table ({len(a)} hours)")
        window = slice(entry.start, entry.stop)
        if taken[window].any():
            raise OverlappingAssignmentError(f"entry {entry} overlaps an earlier one")
        taken[window] = True
        datasets[entry.role].append(
            Chunk(a.values[window].copy(), b.values[window].copy(), entry.start, chunk_id)
        )
    return SplitDatasets(
        train=datasets["train"],
        validation=datasets["validation"],
        test=datasets["test"],
        a_names=a.names,
        b_names=b.names,
    )


# --- correlation-based feature selection -----------------------------------

def pearson_abs(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Absolute Pearson correlation of two equal-length series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatchError(f"shapes {x.shape} vs {y.shape}")
    if x.size < 2:
        raise LengthMismatchError("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    ssx = float(np.dot(dx, dx))
    ssy = float(np.dot(dy, dy))
    if ssx == 0.0 or ssy == 0.0:
        raise ConstantInputError("correlation undefined for constant input")
    r = float(np.dot(dx, dy)) / math.sqrt(ssx * ssy)
    return min(abs(r), 1.0)


@dataclass
class FeatureSelection:
    kept: tuple[str, ...]
    dropped: tuple[str, ...]
    all_names: tuple[str, ...]
    r_matrix: np.ndarray  # symmetric |r|, diagonal 1
    r_th: float

    def matrix_to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("feature",) + self.all_names)
            for i, name in enumerate(self.all_names):
                writer.writerow([name] + [f"{v:.4f}" for v in self.r_matrix[i]])

    def to_json(self) -> dict:
        return {
            "kept": list(self.kept),
            "dropped": list(self.dropped),
            "r_th": self.r_th,
        }


def select_features(
    values: np.ndarray,
    names: Sequence[str],
    targets: Sequence[str] = POLLUTANTS,
    candidates: Sequence[str] | None = None,
    r_th: float = DEFAULT_R_TH,
) -> FeatureSelection:
    """Keep the targets plus every candidate correlated enough with one.

    ``values`` is the training matrix [T, C] matching ``names``. A candidate
    survives iff max over targets of |r(candidate, target)| >= r_th. The full
    |r| matrix over all columns is returned for plotting.
    """
    names = tuple(names)
    if candidates is None:
        candidates = tuple(n for n in names if n not in targets)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2:
        raise LengthMismatchError("need a [T, C] training matrix with T >= 2")

    n_cols = len(names)
    r_matrix = np.eye(n_cols)
    for i in range(n_cols):
        for j in range(i + 1, n_cols):
            r = pearson_abs(values[:, i], values[:, j])
            r_matrix[i, j] = r_matrix[j, i] = r

    kept = [n for n in names if n in targets]
    dropped = []
    t_idx = [names.index(t) for t in targets]
    for cand in candidates:
        c = names.index(cand)
        if max(r_matrix[c, t] for t in t_idx) >= r_th:
            kept.append(cand)
        else:
            dropped.append(cand)
    # Preserve the original column order.
    kept = [n for n in names if n in kept]
    return FeatureSelection(tuple(kept), tuple(dropped), names, r_matrix, r_th)


def apply_selection(datasets: SplitDatasets, selection: FeatureSelection) -> SplitDatasets:
    """Drop deselected source columns across every chunk."""
    keep_idx = [datasets.a_names.index(n) for n in selection.kept]
    out = {}
    for role in ROLES:
        out[role] = [
            replace(c, a=np.ascontiguousarray(c.a[:, keep_idx])) for c in datasets.role(role)
        ]
    return SplitDatasets(
        train=out["train"],
        validation=out["validation"],
        test=out["test"],
        a_names=selection.kept,
        b_names=datasets.b_names,
    )


# --- min-max scaling ---------------------------------------------------------

@dataclass
class ScalerParams:
    """Per-feature training min/max; constant features are flagged."""

    names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self) -> None:
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if np.any(self.maxs < self.mins):
            raise ValueError("max < min")

    @property
    def constant(self) -> np.ndarray:
        return self.maxs == self.mins

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.names).encode())
        h.update(self.mins.tobytes())
        h.update(self.maxs.tobytes())
        return h.hexdigest()

    def to_json(self) -> dict:
        return {
            "names": list(self.names),
            "mins": [float(v) for v in self.mins],
            "maxs": [float(v) for v in self.maxs],
        }

    @staticmethod
    def from_json(data: dict) -> "ScalerParams":
        return ScalerParams(
            tuple(data["names"]), np.array(data["mins"]), np.array(data["maxs"])
        )


def fit_scaler(chunks: list[Chunk] | np.ndarray, names: Sequence[str], side: str = "a") -> ScalerParams:
    """Fit per-feature min/max on the training split only."""
    if isinstance(chunks, np.ndarray):
        stacked = chunks
    else:
        stacked = np.concatenate([getattr(c, side) for c in chunks], axis=0)
    if stacked.shape[1] != len(names):
        raise LengthMismatchError("names do not match the matrix")
    return ScalerParams(tuple(names), stacked.min(axis=0), stacked.max(axis=0))


def apply_scaler(x: np.ndarray, params: ScalerParams) -> np.ndarray:
    """Map training min -> 0 and max -> 1; constant features go to 0.5."""
    x = np.asarray(x, dtype=np.float64)
    span = params.maxs - params.mins
    const = params.constant
    if const.any():
        warnings.warn(
            f"constant features {[params.names[i] for i in np.flatnonzero(const)]} scaled to 0.5",
            stacklevel=2,
        )
    safe_span = np.where(const, 1.0, span)
    scaled = (x - params.mins) / safe_span
    if const.any():
        scaled[..., const] = 0.5
    return scaled


def invert_scaler(scaled: np.ndarray, params: ScalerParams) -> np.ndarray:
    """Undo :func:`apply_scaler`; exact on non-constant features."""
    scaled = np.asarray(scaled, dtype=np.float64)
    span = params.maxs - params.mins
    out = scaled * span + params.mins
    const = params.constant
    if const.any():
        out[..., const] = params.mins[const]
    return out


def scale_datasets(
    datasets: SplitDatasets, scaler_a: ScalerParams, scaler_b: ScalerParams
) -> SplitDatasets:
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("once")
        for role in ROLES:
            out[role] = [
                replace(c, a=apply_scaler(c.a, scaler_a), b=apply_scaler(c.b, scaler_b))
                for c in datasets.role(role)
            ]
    return SplitDatasets(
        train=out["train"],
        validation=out["validation"],
        test=out["test"],
        a_names=datasets.a_names,
        b_names=datasets.b_names,
    )


# --- window pair generation --------------------------------------------------

def window_offset(l_in: int, h: int) -> int:
    """Offset from a window's start to its first target hour."""
    return l_in - h + 1


def pair_count_formula(n_last_index: int, dn: int) -> int:
    """Boundary-free published estimate floor((N+1)/dn); reference only.

    Actual pair counts come from valid-start enumeration per chunk, which
    respects chunk ends; the two disagree near boundaries.
    """
    return (n_last_index + 1) // dn


@dataclass
class WindowPair:
    """One training example: a source window and its target block."""

    input: np.ndarray  # [l_in, F_in], scaled
    target: np.ndarray  # [h, n_targets], scaled
    start: int  # n_i within the chunk
    chunk_id: int


@dataclass
class PairSetStats:
    """Pair accounting; the arithmetic identities are enforced on build."""

    pairs: int
    l_in: int
    h: int
    f_in: int
    n_targets: int
    hrs_total: int = field(init=False)
    n_u: int = field(init=False)
    n_y: int = field(init=False)
    n_total: int = field(init=False)

    def __post_init__(self) -> None:
        self.hrs_total = self.pairs * self.l_in
        self.n_u = self.pairs * self.l_in * self.f_in
        self.n_y = self.pairs * self.h * self.n_targets
        self.n_total = self.n_u + self.n_y


def valid_starts(chunk_length: int, l_in: int, h: int, dn: int) -> list[int]:
    """All window starts n_i = 0, dn, 2dn, ... whose target block fits.

    The last target hour sits at n_i + offset + h - 1 with
    offset = l_in - h + 1, i.e. one hour past the last input hour, and must
    stay inside the chunk.
    """
    last_needed = window_offset(l_in, h) + h - 1  # == l_in
    starts = []
    n_i = 0
    while n_i + last_needed <= chunk_length - 1:
        starts.append(n_i)
        n_i += dn
    return starts


def generate_pairs(
    a_chunks: list[Chunk],
    b_chunks: list[Chunk] | None = None,
    l_in: int = DEFAULT_L_IN,
    h: int = DEFAULT_H,
    dn: int = DEFAULT_DN,
    target_cols: Sequence[int] | None = None,
) -> tuple[list[WindowPair], PairSetStats]:
    """Slide windows over every chunk and cut aligned input/target blocks.

    When ``b_chunks`` is omitted the chunks are assumed to already carry the
    aligned target matrix in ``Chunk.b``. Chunks too short for a single
    window contribute zero pairs.
    """
    if not (l_in >= h >= 1) or dn < 1:
        raise ValueError("need l_in >= h >= 1 and dn >= 1")
    if b_chunks is None:
        b_chunks = a_chunks
    if len(a_chunks) != len(b_chunks):
        raise LayoutMismatchError("chunk lists differ in length")
    offset = window_offset(l_in, h)
    pairs: list[WindowPair] = []
    f_in = a_chunks[0].a.shape[1] if a_chunks else 0
    n_targets = 0
    for ca, cb in zip(a_chunks, b_chunks):
        if len(ca) != len(cb) or ca.start != cb.start:
            raise LayoutMismatchError(
                f"chunk {ca.chunk_id}: A spans ({ca.start},{len(ca)}), B ({cb.start},{len(cb)})"
            )
        target = cb.b if target_cols is None else cb.b[:, list(target_cols)]
        n_targets = target.shape[1]
        for n_i in valid_starts(len(ca), l_in, h, dn):
            pairs.append(
                WindowPair(
                    input=np.ascontiguousarray(ca.a[n_i : n_i + l_in]),
                    target=np.ascontiguousarray(target[n_i + offset : n_i + offset + h]),
                    start=n_i,
                    chunk_id=ca.chunk_id,
                )
            )
    stats = PairSetStats(len(pairs), l_in, h, f_in, n_targets)
    return pairs, stats
