"""Run configuration: JSON file, environment overrides, resolved defaults.

Precedence: built-in defaults < config file < SMOGCAST_* environment
variables < command-line flags. The resolved configuration hashes into
every artifact so downstream commands can refuse mismatched inputs.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .models import ModelSpec
from .pipeline import SplitEntry, SplitSpec
from .search import CvScheme, GridSpec
from .train import TrainConfig

# Tuned hyperparameters and training settings per family: grid-searched
# (k, width, lr, weight decay) plus the trial-and-error patience values.
# Branch learning rates are tied at hidden_layers * lr, which reproduces
# every published branch value (7e-4 = 7*1e-4, 4e-3 = 4*1e-3).
FAMILY_DEFAULTS: dict[str, dict[str, Any]] = {
    "MLP": {"hidden_layers": 4, "width": 64, "lr": 1e-5, "weight_decay": 1e-5, "patience": 6},
    "HMLP": {"hidden_layers": 7, "width": 64, "lr": 1e-4, "weight_decay": 1e-5, "patience": 6},
    "LSTM": {"hidden_layers": 6, "width": 112, "lr": 1e-3, "weight_decay": 1e-6, "patience": 15},
    "HLSTM": {"hidden_layers": 7, "width": 48, "lr": 1e-4, "weight_decay": 0.0, "patience": 15},
    "GRU": {"hidden_layers": 4, "width": 128, "lr": 1e-3, "weight_decay": 1e-5, "patience": 15},
    "HGRU": {"hidden_layers": 4, "width": 64, "lr": 1e-3, "weight_decay": 1e-7, "patience": 15},
}

# Sections feeding each artifact generation stage; hashes are scoped so a
# grid-only change does not invalidate the pair archives, etc.
DATA_SECTIONS = ("seed", "paths", "synth", "outliers", "split", "pipeline")
TRAIN_SECTIONS = DATA_SECTIONS + ("model", "train")

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "workdir": "smogcast_work",
    "paths": {"csv_a": None, "csv_b": None},
    "synth": {"hours": 6000, "chunk_layout": None},
    "outliers": {"enabled": False, "bounds": {}},
    "split": {"kind": "fractions", "train_frac": 0.763, "val_frac": 0.119, "entries": None},
    "pipeline": {"r_th": 0.15, "l_in": 72, "h": 24, "dn": 24},
    "model": {
        "family": "HGRU",
        "hidden_layers": None,  # None: family default
        "width": None,
        "branch_layers": None,  # None: hidden_layers - 1
        "branch_width": None,  # None: width
    },
    "train": {
        "lr": None,  # None: family default (shared lr for H-variants)
        "branch_lr": None,  # None: family default, itself tied at k * lr
        "weight_decay": None,
        "batch_size": 16,
        "patience": None,
        "min_improvement": 1e-5,
        "max_epochs": 200,
        "plateau_factor": 0.1,
        "plateau_patience": None,
        "shuffle": True,
    },
    "grid": {
        "hidden_layers": [2, 4],
        "widths": [32, 64],
        "lrs": [1e-4, 1e-3],
        "weight_decays": [1e-5],
        "k_folds": 5,
        "train_frac": 0.7,
        "val_frac": 0.1,
        "kfold_shuffle": False,
        "max_epochs": 25,
    },
    "evaluate": {"time_inference": False, "latency_repeats": 50, "svg": False, "forecast_hours": 168},
}

ENV_PREFIX = "SMOGCAST_"


def _parse_env_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _deep_update(base: dict, overrides: dict) -> dict:
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


class RunConfig:
    """Resolved configuration; raw dict access plus typed resolvers."""

    def __init__(self, data: dict[str, Any]):
        self.data = data

    # --- construction -------------------------------------------------------

    @staticmethod
    def load(
        path: str | Path | None = None,
        overrides: dict[str, Any] | None = None,
        env: dict[str, str] | None = None,
    ) -> "RunConfig":
        data = copy.deepcopy(DEFAULT_CONFIG)
        if path is not None:
            try:
                file_data = json.loads(Path(path).read_text(encoding="utf-8"))
            except FileNotFoundError as exc:
                raise ConfigError(f"config file {path} not found") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
            _validate_keys(file_data, data, str(path))
            _deep_update(data, file_data)
        env = dict(os.environ if env is None else env)
        for name, raw in sorted(env.items()):
            if not name.startswith(ENV_PREFIX) or name == "SMOGCAST_BACKEND":
                continue
            tokens = name[len(ENV_PREFIX) :].lower().split("_", 1)
            target = data
            if tokens[0] in data and isinstance(data[tokens[0]], dict) and len(tokens) > 1:
                target = data[tokens[0]]
                key = tokens[1]
            else:
                key = "_".join(tokens)
            if key not in target:
                raise ConfigError(f"environment override {name} matches no config key")
            target[key] = _parse_env_value(raw)
        if overrides:
            _deep_update(data, overrides)
        return RunConfig(data)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        data = copy.deepcopy(self.data)
        _deep_update(data, overrides)
        return RunConfig(data)

    # --- identity -------------------------------------------------------------

    def digest(self, scope: str = "full") -> str:
        """Hash of the config sections that shape a given artifact stage.

        Scopes: "data" (through pair generation), "train" (adds model and
        training sections), "full" (everything except workdir).
        """
        if scope == "data":
            keys = DATA_SECTIONS
        elif scope == "train":
            keys = TRAIN_SECTIONS
        elif scope == "full":
            keys = tuple(k for k in self.data if k != "workdir")
        else:
            raise ValueError(f"unknown digest scope {scope!r}")
        payload = {k: self.data[k] for k in sorted(keys)}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def workdir(self) -> Path:
        return Path(self.data["workdir"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    # --- typed resolvers ----------------------------------------------------------

    def family(self) -> str:
        family = str(self.data["model"]["family"]).upper()
        if family not in FAMILY_DEFAULTS:
            raise ConfigError(f"unknown model family {family!r}")
        return family

    def model_spec(self, family: str | None = None, n_features: int = 10) -> ModelSpec:
        family = (family or self.family()).upper()
        if family not in FAMILY_DEFAULTS:
            raise ConfigError(f"unknown model family {family!r}")
        m = self.data["model"]
        defaults = FAMILY_DEFAULTS[family]
        return ModelSpec(
            family=family,
            hidden_layers=int(
                defaults["hidden_layers"] if m["hidden_layers"] is None else m["hidden_layers"]
            ),
            width=int(defaults["width"] if m["width"] is None else m["width"]),
            n_features=n_features,
            horizon=int(self.data["pipeline"]["h"]),
            branch_layers=-1 if m["branch_layers"] is None else int(m["branch_layers"]),
            branch_width=-1 if m["branch_width"] is None else int(m["branch_width"]),
        )

    def train_config(self, family: str | None = None, for_search: bool = False) -> TrainConfig:
        family = (family or self.family()).upper()
        t = self.data["train"]
        defaults = FAMILY_DEFAULTS[family]
        max_epochs = int(self.data["grid"]["max_epochs"]) if for_search else int(t["max_epochs"])
        return TrainConfig(
            lr=float(t["lr"] if t["lr"] is not None else defaults["lr"]),
            branch_lr=None if t["branch_lr"] is None else float(t["branch_lr"]),
            weight_decay=float(
                t["weight_decay"] if t["weight_decay"] is not None else defaults["weight_decay"]
            ),
            batch_size=int(t["batch_size"]),
            patience=int(t["patience"] if t["patience"] is not None else defaults["patience"]),
            min_improvement=float(t["min_improvement"]),
            max_epochs=max_epochs,
            plateau_factor=float(t["plateau_factor"]),
            plateau_patience=(
                None if t["plateau_patience"] is None else int(t["plateau_patience"])
            ),
            seed=self.seed,
            shuffle=bool(t["shuffle"]),
        )

    def split_spec(self, n_hours: int) -> SplitSpec:
        s = self.data["split"]
        if s["kind"] == "reference":
            return SplitSpec.reference_layout()
        if s["kind"] == "fractions":
            return SplitSpec.single_split(n_hours, float(s["train_frac"]), float(s["val_frac"]))
        if s["kind"] == "entries":
            if not s["entries"]:
                raise ConfigError("split.kind=entries needs split.entries")
            return SplitSpec([SplitEntry(role, int(a), int(b)) for role, a, b in s["entries"]])
        raise ConfigError(f"unknown split kind {s['kind']!r}")

    def grid_spec(self) -> GridSpec:
        g = self.data["grid"]
        return GridSpec(
            hidden_layers=tuple(int(v) for v in g["hidden_layers"]),
            widths=tuple(int(v) for v in g["widths"]),
            lrs=tuple(float(v) for v in g["lrs"]),
            weight_decays=tuple(float(v) for v in g["weight_decays"]),
        )

    def cv_scheme(self, family: str | None = None) -> CvScheme:
        family = (family or self.family()).upper()
        g = self.data["grid"]
        kind = "kfold" if family in ("MLP", "HMLP") else "sliding_window"
        return CvScheme(
            kind=kind,
            k_folds=int(g["k_folds"]),
            train_frac=float(g["train_frac"]),
            val_frac=float(g["val_frac"]),
            shuffle=bool(g["kfold_shuffle"]),
            seed=self.seed,
        )


def _validate_keys(incoming: dict, reference: dict, where: str) -> None:
    for key, value in incoming.items():
        if key not in reference:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        if isinstance(value, dict) and isinstance(reference[key], dict):
            _validate_keys(value, reference[key], f"{where}:{key}")


def describe_defaults() -> str:
    """Human-readable key listing for --help."""
    lines = ["configuration keys (JSON file, SMOGCAST_SECTION_KEY env, or --set):"]
    for section, value in DEFAULT_CONFIG.items():
        if isinstance(value, dict):
            for key, sub in value.items():
                lines.append(f"  {section}.{key} = {json.dumps(sub)}")
        else:
            lines.append(f"  {section} = {json.dumps(value)}")
    lines.append("per-family defaults applied when model/train values are null")
    lines.append("(branch lr ties to hidden_layers * lr unless train.branch_lr is set):")
    for family, d in FAMILY_DEFAULTS.items():
        lines.append(
            f"  {family}: k={d['hidden_layers']} width={d['width']} lr={d['lr']} "
            f"weight_decay={d['weight_decay']} patience={d['patience']}"
        )
    return "\n".join(lines)
