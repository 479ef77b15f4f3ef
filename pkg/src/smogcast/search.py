"""Grid search with k-fold CV for dense models, sliding-window CV for RNNs.

Each (configuration, fold) cell is an independent training run; results go
through an append-only journal so an interrupted search resumes without
retraining finished cells.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyAxisError, SmogcastError, TooFewPairsError
from .models import ModelSpec, build
from .pipeline import WindowPair
from .train import TrainConfig, train


@dataclass(frozen=True)
class GridSpec:
    """Finite value sets; the grid is their Cartesian product."""

    hidden_layers: tuple[int, ...] = (4,)
    widths: tuple[int, ...] = (64,)
    lrs: tuple[float, ...] = (1e-3,)  # shared lr for H-variants (branch tied at k*lr)
    weight_decays: tuple[float, ...] = (1e-5,)

    def size(self) -> int:
        return (
            len(self.hidden_layers) * len(self.widths) * len(self.lrs) * len(self.weight_decays)
        )


def enumerate_grid(grid: GridSpec) -> list[dict]:
    """All configurations in deterministic nested-loop order."""
    axes = [
        ("hidden_layers", grid.hidden_layers),
        ("width", grid.widths),
        ("lr", grid.lrs),
        ("weight_decay", grid.weight_decays),
    ]
    for name, values in axes:
        if not values:
            raise EmptyAxisError(f"axis {name} is empty")
    configs = []
    for k in grid.hidden_layers:
        for w in grid.widths:
            for lr in grid.lrs:
                for wd in grid.weight_decays:
                    configs.append({"hidden_layers": k, "width": w, "lr": lr, "weight_decay": wd})
    return configs


# --- cross-validation folds -----------------------------------------------------

@dataclass(frozen=True)
class Fold:
    train_idx: tuple[int, ...]
    val_idx: tuple[int, ...]


@dataclass(frozen=True)
class CvScheme:
    kind: str = "kfold"  # "kfold" or "sliding_window"
    k_folds: int = 5
    train_frac: float = 0.7
    val_frac: float = 0.1
    shuffle: bool = False
    seed: int = 0

    def folds(self, n_pairs: int) -> list[Fold]:
        if self.kind == "kfold":
            return kfold_splits(n_pairs, self.k_folds, seed=self.seed, shuffle=self.shuffle)
        if self.kind == "sliding_window":
            return sliding_window_splits(n_pairs, self.k_folds, self.train_frac, self.val_frac)
        raise ValueError(f"unknown CV scheme {self.kind!r}")


def kfold_splits(
    n_pairs: int, k_folds: int, seed: int = 0, shuffle: bool = False
) -> list[Fold]:
    """Contiguous balanced blocks; every pair validates exactly once.

    Blocks rather than random rows keep overlapping windows from leaking
    between train and validation. ``shuffle`` restores the classical random
    assignment when that is wanted.
    """
    if n_pairs < k_folds:
        raise TooFewPairsError(f"{n_pairs} pairs cannot make {k_folds} folds")
    order = (
        np.random.default_rng(seed).permutation(n_pairs) if shuffle else np.arange(n_pairs)
    )
    base, extra = divmod(n_pairs, k_folds)
    folds = []
    pos = 0
    for j in range(k_folds):
        size = base + (1 if j < extra else 0)
        val = order[pos : pos + size]
        train = np.concatenate([order[:pos], order[pos + size :]])
        folds.append(Fold(tuple(int(i) for i in train), tuple(int(i) for i in val)))
        pos += size
    return folds


def sliding_window_splits(
    n_pairs: int, k_folds: int, train_frac: float = 0.7, val_frac: float = 0.1
) -> list[Fold]:
    """Chronological windows: fold j trains on [s_j, s_j+T), validates on
    [s_j+T, s_j+T+V), with evenly spaced starts s_j = floor(j*(N-T-V)/(k-1)).

    Windows may overlap across folds, but within a fold the validation block
    always starts after the training block ends.
    """
    t_len = int(n_pairs * train_frac)
    v_len = int(n_pairs * val_frac)
    if t_len < 1 or v_len < 1 or t_len + v_len > n_pairs:
        raise TooFewPairsError(
            f"{n_pairs} pairs cannot carry train={t_len} plus val={v_len} windows"
        )
    span = n_pairs - t_len - v_len
    folds = []
    for j in range(k_folds):
        s = (j * span) // (k_folds - 1) if k_folds > 1 else 0
        train = tuple(range(s, s + t_len))
        val = tuple(range(s + t_len, s + t_len + v_len))
        folds.append(Fold(train, val))
    return folds


# --- search ------------------------------------------------------------------------

@dataclass
class CellResult:
    config_index: int
    fold: int
    val_loss: float
    epochs: int
    error: str | None = None


@dataclass
class ConfigResult:
    config: dict
    fold_losses: list[float]
    mean_loss: float
    std_loss: float
    param_count: int


@dataclass
class SearchResult:
    family: str
    configs: list[ConfigResult]
    ranking: list[int] = field(init=False)

    def __post_init__(self) -> None:
        self.ranking = sorted(
            range(len(self.configs)),
            key=lambda i: (
                self.configs[i].mean_loss,
                self.configs[i].param_count,
                self.configs[i].config["lr"],
            ),
        )

    @property
    def best(self) -> ConfigResult:
        return self.configs[self.ranking[0]]

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        import csv

        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(
                ["rank", "hidden_layers", "width", "lr", "weight_decay",
                 "mean_val_loss", "std_val_loss", "param_count"]
            )
            for rank, i in enumerate(self.ranking, start=1):
                c = self.configs[i]
                writer.writerow(
                    [rank, c.config["hidden_layers"], c.config["width"],
                     repr(c.config["lr"]), repr(c.config["weight_decay"]),
                     repr(c.mean_loss), repr(c.std_loss), c.param_count]
                )


def _grid_hash(family: str, grid: GridSpec, scheme: CvScheme, cfg: TrainConfig, n_pairs: int) -> str:
    payload = json.dumps(
        {
            "family": family,
            "grid": dataclasses.asdict(grid),
            "scheme": dataclasses.asdict(scheme),
            "cfg": dataclasses.asdict(cfg),
            "n_pairs": n_pairs,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _cell_seed(base_seed: int, config_index: int, fold: int) -> int:
    return int(np.random.SeedSequence([base_seed, config_index, fold]).generate_state(1)[0])


def _make_spec(family: str, config: dict, template: ModelSpec | None) -> ModelSpec:
    base = template.to_json() if template is not None else {}
    base.update(
        family=family, hidden_layers=config["hidden_layers"], width=config["width"]
    )
    base.setdefault("n_features", 10)
    return ModelSpec.from_json(base)


def _run_cell(args) -> CellResult:
    family, config, config_index, fold_index, fold, pairs, cfg, template = args
    seed = _cell_seed(cfg.seed, config_index, fold_index)
    cell_cfg = dataclasses.replace(
        cfg, lr=config["lr"], weight_decay=config["weight_decay"], seed=seed, branch_lr=None
    )
    spec = _make_spec(family, config, template)
    model = build(spec, seed)
    train_pairs = [pairs[i] for i in fold.train_idx]
    val_pairs = [pairs[i] for i in fold.val_idx]
    try:
        report = train(model, train_pairs, val_pairs, cell_cfg)
        return CellResult(config_index, fold_index, report.best_val_loss(), len(report.epochs))
    except SmogcastError as exc:
        return CellResult(config_index, fold_index, math.inf, 0, error=str(exc))


def grid_search(
    family: str,
    grid: GridSpec,
    pairs: Sequence[WindowPair],
    scheme: CvScheme,
    cfg: TrainConfig,
    journal_path: str | Path | None = None,
    spec_template: ModelSpec | None = None,
    jobs: int = 1,
) -> SearchResult:
    """Train every (configuration, fold) cell and rank by mean validation loss.

    Ties break on fewer parameters, then lower lr. A cell that fails records
    its error and scores +inf, sinking its configuration without killing the
    search. With a journal path, finished cells survive interruption; the
    journal's header hash refuses to resume a drifted setup.
    """
    configs = enumerate_grid(grid)
    folds = scheme.folds(len(pairs))
    expected_hash = _grid_hash(family, grid, scheme, cfg, len(pairs))

    done: dict[tuple[int, int], CellResult] = {}
    journal = Path(journal_path) if journal_path else None
    if journal and journal.exists():
        with journal.open() as fh:
            for line in fh:
                entry = json.loads(line)
                if entry["kind"] == "header":
                    if entry["grid_hash"] != expected_hash:
                        raise SmogcastError(
                            "journal belongs to a different search setup; delete it to restart"
                        )
                else:
                    done[(entry["config_index"], entry["fold"])] = CellResult(
                        entry["config_index"], entry["fold"], entry["val_loss"],
                        entry["epochs"], entry["error"],
                    )
    elif journal:
        with journal.open("w") as fh:
            fh.write(json.dumps({"kind": "header", "grid_hash": expected_hash}) + "\n")

    todo = [
        (family, config, ci, fi, fold, list(pairs), cfg, spec_template)
        for ci, config in enumerate(configs)
        for fi, fold in enumerate(folds)
        if (ci, fi) not in done
    ]

    if jobs > 1 and todo:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, todo))
    else:
        results = [_run_cell(args) for args in todo]

    for cell in results:
        done[(cell.config_index, cell.fold)] = cell
        if journal:
            with journal.open("a") as fh:
                fh.write(
                    json.dumps(
                        {
                            "kind": "cell",
                            "config_index": cell.config_index,
                            "fold": cell.fold,
                            "val_loss": cell.val_loss,
                            "epochs": cell.epochs,
                            "error": cell.error,
                        }
                    )
                    + "\n"
                )

    config_results = []
    for ci, config in enumerate(configs):
        losses = [done[(ci, fi)].val_loss for fi in range(len(folds))]
        finite = [v for v in losses if math.isfinite(v)]
        mean = float(np.mean(losses)) if len(finite) == len(losses) else math.inf
        std = float(np.std(losses)) if len(finite) == len(losses) else math.inf
        spec = _make_spec(family, config, spec_template)
        config_results.append(
            ConfigResult(config, losses, mean, std, build(spec, 0).param_count())
        )
    return SearchResult(family, config_results)
