"""Command-line front end: synth, ingest, preprocess, train, search,
evaluate, forecast.

Every command resolves one RunConfig (file < env < flags), stamps its hash
into the artifacts it writes, and refuses mismatched upstream artifacts
unless --force is given. Exit codes: 0 ok, 2 config, 3 data, 4 training,
5 io.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

import numpy as np

from . import artifacts, evaluation, ingest, models, pipeline
from .config import FAMILY_DEFAULTS, RunConfig, describe_defaults
from .errors import (
    ConfigError,
    DataError,
    IoError,
    SmogcastError,
    TrainError,
)
from .search import grid_search
from .train import train as run_training

_DATA_ERRORS = (
    "MissingColumnError", "DuplicateTimestampError", "NonHourlyCadenceError",
    "AllMissingColumnError", "OverlappingAssignmentError", "ConstantInputError",
    "LengthMismatchError", "LayoutMismatchError", "CorruptFileError",
    "VersionMismatchError", "TooFewPairsError", "ScalerMismatchError",
)


def _classify(exc: Exception) -> int:
    if isinstance(exc, (ConfigError,)):
        return 2
    if isinstance(exc, (DataError,)) or type(exc).__name__ in _DATA_ERRORS:
        return 3
    if isinstance(exc, TrainError) or type(exc).__name__ == "DivergedLossError":
        return 4
    if isinstance(exc, (IoError, OSError)):
        return 5
    return 1


def _parse_set_overrides(items: list[str]) -> dict:
    import json as _json

    out: dict = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = _json.loads(raw)
        except _json.JSONDecodeError:
            value = raw
        target = out
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return out


def _load_config(args: argparse.Namespace) -> RunConfig:
    overrides = _parse_set_overrides(getattr(args, "set", []) or [])
    for flag, path in (
        ("workdir", ("workdir",)),
        ("seed", ("seed",)),
        ("family", ("model", "family")),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            target = overrides
            for part in path[:-1]:
                target = target.setdefault(part, {})
            target[path[-1]] = value
    cfg = RunConfig.load(getattr(args, "config", None), overrides)
    cfg.family()  # validate eagerly
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    return cfg


# --- commands --------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    s = cfg.data["synth"]
    a, b = ingest.synthesize(cfg.seed, s["hours"], s["chunk_layout"])
    stamp = f"config_hash={cfg.digest('data')}"
    ingest.write_csv(a, cfg.workdir / "raw_A.csv", stamp)
    ingest.write_csv(b, cfg.workdir / "raw_B.csv", stamp)
    print(f"wrote {len(a)} hours to {cfg.workdir}/raw_A.csv and raw_B.csv")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    csv_a = cfg.data["paths"]["csv_a"] or cfg.workdir / "raw_A.csv"
    csv_b = cfg.data["paths"]["csv_b"] or cfg.workdir / "raw_B.csv"
    table_a = ingest.parse_csv(csv_a, ingest.SOURCE_SCHEMA, station_id="A")
    table_b = ingest.parse_csv(csv_b, ingest.TARGET_SCHEMA, station_id="B")
    if cfg.data["outliers"]["enabled"]:
        bounds = {
            name: (lo, hi) for name, (lo, hi) in cfg.data["outliers"]["bounds"].items()
        }
        table_a = ingest.clamp_outliers(table_a, {k: v for k, v in bounds.items() if k in table_a.names})
        table_b = ingest.clamp_outliers(table_b, {k: v for k, v in bounds.items() if k in table_b.names})
    ingest.availability(table_a).to_csv(cfg.workdir / "availability_A.csv")
    ingest.availability(table_b).to_csv(cfg.workdir / "availability_B.csv")
    stamp = f"config_hash={cfg.digest('data')}"
    ingest.write_csv(ingest.interpolate(table_a), cfg.workdir / "tidy_A.csv", stamp)
    ingest.write_csv(ingest.interpolate(table_b), cfg.workdir / "tidy_B.csv", stamp)
    print(f"tidied {len(table_a)} hours; availability reports written")
    return 0


def _read_stamp(path: Path) -> str | None:
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("# config_hash="):
        return first.strip().split("=", 1)[1]
    return None


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    digest = cfg.digest('data')
    tidy_a, tidy_b = cfg.workdir / "tidy_A.csv", cfg.workdir / "tidy_B.csv"
    for path in (tidy_a, tidy_b):
        if not path.exists():
            raise DataError(f"{path} missing; run the ingest command first")
        artifacts.check_hash(digest, _read_stamp(path), str(path), args.force)
    table_a = ingest.parse_csv(tidy_a, ingest.SOURCE_SCHEMA, station_id="A")
    table_b = ingest.parse_csv(tidy_b, ingest.TARGET_SCHEMA, station_id="B")

    p = cfg.data["pipeline"]
    spec = cfg.split_spec(len(table_a))
    datasets = pipeline.split(table_a, table_b, spec)
    train_a = np.concatenate([c.a for c in datasets.train], axis=0)
    selection = pipeline.select_features(train_a, datasets.a_names, r_th=p["r_th"])
    datasets = pipeline.apply_selection(datasets, selection)
    scaler_a = pipeline.fit_scaler(datasets.train, datasets.a_names, side="a")
    scaler_b = pipeline.fit_scaler(datasets.train, datasets.b_names, side="b")
    scaled = pipeline.scale_datasets(datasets, scaler_a, scaler_b)

    selection.matrix_to_csv(cfg.workdir / "corr_matrix.csv")
    sidecar = {
        "version": 1,
        "config_hash": digest,
        "selection": selection.to_json(),
        "scaler_a": scaler_a.to_json(),
        "scaler_b": scaler_b.to_json(),
        "balance": list(datasets.balance()),
    }
    stats_all = {}
    for role in ("train", "validation", "test"):
        pairs, stats = pipeline.generate_pairs(
            scaled.role(role), l_in=p["l_in"], h=p["h"], dn=p["dn"]
        )
        if not pairs:
            raise DataError(f"{role} split produced no pairs; supply more hours")
        artifacts.save_pairs(
            cfg.workdir / f"pairs_{role}.smgp",
            pairs,
            meta={"config_hash": digest, "role": role, "scaler_b": scaler_b.digest()},
        )
        stats_all[role] = {
            "pairs": stats.pairs, "hrs_total": stats.hrs_total,
            "n_total": stats.n_total, "n_u": stats.n_u, "n_y": stats.n_y,
        }
    sidecar["stats"] = stats_all
    artifacts.write_json(cfg.workdir / "preprocess.json", sidecar)
    balance = ", ".join(f"{100 * f:.1f}%" for f in datasets.balance())
    print(f"split balance {balance}; pairs: " + ", ".join(
        f"{role}={s['pairs']}" for role, s in stats_all.items()))
    return 0


def _load_role_pairs(cfg: RunConfig, role: str, force: bool):
    path = cfg.workdir / f"pairs_{role}.smgp"
    if not path.exists():
        raise DataError(f"{path} missing; run the preprocess command first")
    pairs, meta = artifacts.load_pairs(path)
    artifacts.check_hash(cfg.digest("data"), meta.get("config_hash"), str(path), force)
    return pairs, meta


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    family = cfg.family()
    train_pairs, meta = _load_role_pairs(cfg, "train", args.force)
    val_pairs, _ = _load_role_pairs(cfg, "validation", args.force)
    n_features = train_pairs[0].input.shape[1]
    spec = cfg.model_spec(family, n_features=n_features)
    model = models.build(spec, cfg.seed)
    model.scaler_hash = meta.get("scaler_b")
    report = run_training(model, train_pairs, val_pairs, cfg.train_config(family))
    models.save(model, cfg.workdir / f"model_{family}.smog", cfg.digest("train"))
    report.to_csv(cfg.workdir / f"train_report_{family}.csv", f"config_hash={cfg.digest('train')}")
    last_epoch = report.epochs[-1].epoch if report.epochs else 0
    print(
        f"{family}: stopped by {report.stop_reason} at epoch {last_epoch}, "
        f"best epoch {report.best_epoch} (val {report.best_val_loss():.6f}), "
        f"{report.wall_time_s:.1f}s"
    )
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    family = cfg.family()
    train_pairs, _ = _load_role_pairs(cfg, "train", args.force)
    val_pairs, _ = _load_role_pairs(cfg, "validation", args.force)
    # CV draws folds from all non-test data: train and validation together.
    pairs = train_pairs + val_pairs
    n_features = pairs[0].input.shape[1]
    result = grid_search(
        family,
        cfg.grid_spec(),
        pairs,
        cfg.cv_scheme(family),
        cfg.train_config(family, for_search=True),
        journal_path=cfg.workdir / f"search_{family}.journal",
        spec_template=cfg.model_spec(family, n_features=n_features),
        jobs=args.jobs,
    )
    result.to_csv(cfg.workdir / f"search_{family}.csv", f"config_hash={cfg.digest()}")
    best = result.best
    print(
        f"{family}: best config k={best.config['hidden_layers']} width={best.config['width']} "
        f"lr={best.config['lr']} wd={best.config['weight_decay']} "
        f"(mean val {best.mean_loss:.6f})"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    test_pairs, _ = _load_role_pairs(cfg, "test", args.force)
    sidecar = artifacts.read_json(cfg.workdir / "preprocess.json")
    artifacts.check_hash(cfg.digest("data"), sidecar.get("config_hash"), "preprocess.json", args.force)
    scaler_b = pipeline.ScalerParams.from_json(sidecar["scaler_b"])

    if args.all:
        families = [f for f in FAMILY_DEFAULTS if (cfg.workdir / f"model_{f}.smog").exists()]
        if not families:
            raise DataError("no model containers in the workdir")
    else:
        families = [cfg.family()]

    e = cfg.data["evaluate"]
    reports, samples = [], {}
    for family in families:
        path = cfg.workdir / f"model_{family}.smog"
        if not path.exists():
            raise DataError(f"{path} missing; run the train command first")
        family_digest = cfg.with_overrides({"model": {"family": family}}).digest("train")
        artifacts.check_hash(family_digest, models.load_config_hash(path), str(path), args.force)
        model = models.load(path)
        report = evaluation.evaluate(model, test_pairs, scaler_b, model_name=family)
        if args.time_inference or e["time_inference"]:
            stats = evaluation.time_inference(model, test_pairs[0], repeats=e["latency_repeats"])
            report.t_inf_ms = (stats.median_ms, stats.iqr_ms)
        reports.append(report)
        truth, pred = evaluation.predict_all(model, test_pairs, scaler_b)
        samples[family] = (truth, pred)
        evaluation.forecast_to_csv(
            truth, pred, cfg.workdir / f"forecast_{family}.csv",
            hours=e["forecast_hours"], header_comment=f"config_hash={cfg.digest('train')}",
        )
        if e["svg"]:
            flat_t = truth.reshape(-1, truth.shape[-1])
            flat_p = pred.reshape(-1, pred.shape[-1])
            hours = min(e["forecast_hours"], flat_t.shape[0])
            for j, pollutant in enumerate(ingest.POLLUTANTS):
                evaluation.svg_lineplot(
                    {"truth": flat_t[:hours, j], "forecast": flat_p[:hours, j]},
                    cfg.workdir / f"forecast_{family}_{pollutant}.svg",
                    title=f"{family} {pollutant}",
                )

    evaluation.metrics_to_csv(reports, cfg.workdir / "metrics.csv", f"config_hash={cfg.digest('train')}")
    if len(families) > 1:
        _write_t_tests(cfg, families, samples)
    for r in reports:
        print(
            f"{r.model}: RMSE total {r.rmse_per['Total']:.3f}, "
            f"sMAPE total {r.smape_per['Total']:.2f}%, params {r.param_count}"
        )
    return 0


def _write_t_tests(cfg: RunConfig, families: list[str], samples: dict) -> None:
    import csv as _csv

    rows = []
    for fam_a, fam_b in itertools.combinations(families, 2):
        truth_a, pred_a = samples[fam_a]
        truth_b, pred_b = samples[fam_b]
        sq_a, sq_b = np.square(truth_a - pred_a), np.square(truth_b - pred_b)
        sm_a = evaluation.smape_terms(truth_a, pred_a)
        sm_b = evaluation.smape_terms(truth_b, pred_b)
        for basis, ea, eb in (("rmse", sq_a, sq_b), ("smape", sm_a, sm_b)):
            try:
                test = evaluation.paired_t_test(ea, eb, labels=(fam_a, fam_b), basis=basis)
                rows.append([fam_a, fam_b, basis, repr(test.t), test.df, repr(test.p)])
            except SmogcastError as exc:
                rows.append([fam_a, fam_b, basis, "", "", str(exc)])
    with (cfg.workdir / "ttests.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["model_a", "model_b", "basis", "t", "df", "p"])
        writer.writerows(rows)


def cmd_forecast(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    sidecar = artifacts.read_json(cfg.workdir / "preprocess.json")
    scaler_a = pipeline.ScalerParams.from_json(sidecar["scaler_a"])
    scaler_b = pipeline.ScalerParams.from_json(sidecar["scaler_b"])
    model = models.load(args.model or cfg.workdir / f"model_{cfg.family()}.smog")

    window = ingest.parse_csv(args.window, sidecar["selection"]["kept"], station_id="window")
    if np.isnan(window.values).any():
        window = ingest.interpolate(window)
    l_in = int(cfg.data["pipeline"]["l_in"])
    if len(window) != l_in:
        raise DataError(f"forecast window must be exactly {l_in} hours, got {len(window)}")
    x = pipeline.apply_scaler(window.values, scaler_a)[np.newaxis, :, :]
    pred = pipeline.invert_scaler(model.forward(x)[0], scaler_b)

    out = Path(args.out)
    import csv as _csv

    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(("timestamp",) + ingest.POLLUTANTS)
        for s in range(pred.shape[0]):
            ts = window.timestamp(l_in - pred.shape[0] + s).strftime("%Y-%m-%dT%H:%M:%SZ")
            writer.writerow([ts] + [repr(float(v)) for v in pred[s]])
    print(f"wrote {pred.shape[0]}-hour forecast to {out}")
    return 0


# --- entry point -----------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--workdir", help="artifact directory (config: workdir)")
    parser.add_argument("--seed", type=int, help="global seed (config: seed)")
    parser.add_argument(
        "--family", choices=sorted(FAMILY_DEFAULTS), help="model family (config: model.family)"
    )
    parser.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE",
        help="override any config key, repeatable",
    )
    parser.add_argument("--force", action="store_true", help="ignore config-hash mismatches")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smogcast",
        description="Two-station pollutant forecasting pipeline",
        epilog=describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic raw station CSVs")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse, clean, and gap-fill raw CSVs")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="split, select features, scale, window")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model family")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="grid search with cross-validation")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for grid cells")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="held-out metrics, t-tests, plots")
    _add_common(p)
    p.add_argument("--all", action="store_true", help="evaluate every trained model")
    p.add_argument("--time-inference", action="store_true", help="measure forward latency")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", help="24-hour forecast from a 72-hour window CSV")
    _add_common(p)
    p.add_argument("--model", help="model container (default: workdir model for the family)")
    p.add_argument("--window", required=True, help="72-hour source-station CSV")
    p.add_argument("--out", required=True, help="output forecast CSV")
    p.set_defaults(func=cmd_forecast)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SmogcastError as exc:
        print(f"smogcast: error: {exc}", file=sys.stderr)
        return _classify(exc)
    except OSError as exc:
        print(f"smogcast: io error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
