"""Held-out evaluation: RMSE, sMAPE, paired t-tests, latency, output files.

Predictions are inverse-scaled back to concentration units before any
metric is computed. The t-test p-value goes through an in-house regularized
incomplete beta so small fixtures are exactly testable.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LengthMismatchError, ScalerMismatchError, ZeroVarianceError
from .ingest import POLLUTANTS
from .models import Model
from .pipeline import ScalerParams, WindowPair, invert_scaler
from .train import make_batches, stack_pairs


def rmse(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Root mean squared error over flattened inputs."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise LengthMismatchError(f"{y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise LengthMismatchError("empty input")
    diff = y - y_hat
    return float(np.sqrt(np.dot(diff, diff) / diff.size))


def smape_terms(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Per-sample symmetric percentage terms in [0, 200].

    A term with |y| + |y_hat| = 0 counts as 0: both series agree on zero.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise LengthMismatchError(f"{y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise LengthMismatchError("empty input")
    denom = np.abs(y) + np.abs(y_hat)
    terms = np.zeros_like(denom)
    nz = denom > 0.0
    terms[nz] = 200.0 * np.abs(y - y_hat)[nz] / denom[nz]
    # |y - y_hat| <= |y| + |y_hat| holds exactly; rounding may not honor it
    return np.minimum(terms, 200.0)


def smape(y: np.ndarray, y_hat: np.ndarray) -> float:
    return float(np.mean(smape_terms(y, y_hat)))


# --- Student's t via the regularized incomplete beta --------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # Lentz's continued fraction for the incomplete beta.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) by continued fraction."""
    if not (0.0 <= x <= 1.0):
        raise ValueError("x outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: int) -> float:
    """Two-sided p-value for Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return betainc_reg(df / 2.0, 0.5, x)


@dataclass
class PairedTest:
    model_a: str
    model_b: str
    basis: str  # "rmse" (squared errors) or "smape" (percentage terms)
    t: float
    df: int
    p: float
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float


def paired_t_test(
    errors_a: np.ndarray,
    errors_b: np.ndarray,
    labels: tuple[str, str] = ("a", "b"),
    basis: str = "rmse",
) -> PairedTest:
    """Two-sided paired t-test on per-sample error values."""
    a = np.asarray(errors_a, dtype=np.float64).ravel()
    b = np.asarray(errors_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatchError(f"{a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise LengthMismatchError("need at least two paired samples")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ZeroVarianceError("all paired differences are identical")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return PairedTest(
        labels[0], labels[1], basis, t, n - 1, t_sf_two_sided(t, n - 1),
        float(np.mean(a)), float(np.std(a, ddof=1)),
        float(np.mean(b)), float(np.std(b, ddof=1)),
    )


# --- model evaluation -------------------------------------------------------------

@dataclass
class MetricsReport:
    model: str
    rmse_per: dict[str, float]  # pollutant name -> RMSE, plus "Total"
    smape_per: dict[str, float]  # pooled; plus "Total"
    smape_macro: float  # mean of the four per-pollutant sMAPEs
    n_samples: int
    param_count: int
    t_inf_ms: tuple[float, float] | None = None  # (median, IQR)


def predict_all(
    model: Model, pairs: Sequence[WindowPair], scaler_b: ScalerParams, batch_size: int = 16
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic unshuffled pass; returns unscaled (truth, pred) [P, h, 4]."""
    preds, truths = [], []
    for idx in make_batches(len(pairs), batch_size, seed=0, epoch=0, shuffle=False):
        x, y = stack_pairs(pairs, idx)
        preds.append(model.forward(x))
        truths.append(y)
    pred = invert_scaler(np.concatenate(preds, axis=0), scaler_b)
    truth = invert_scaler(np.concatenate(truths, axis=0), scaler_b)
    return truth, pred


def evaluate(
    model: Model,
    pairs: Sequence[WindowPair],
    scaler_b: ScalerParams,
    batch_size: int = 16,
    model_name: str | None = None,
) -> MetricsReport:
    """Per-pollutant and pooled RMSE/sMAPE in concentration units."""
    if model.scaler_hash is not None and model.scaler_hash != scaler_b.digest():
        raise ScalerMismatchError("model was trained against a different scaler")
    truth, pred = predict_all(model, pairs, scaler_b, batch_size)
    rmse_per, smape_per = {}, {}
    for j, name in enumerate(POLLUTANTS):
        rmse_per[name] = rmse(truth[:, :, j], pred[:, :, j])
        smape_per[name] = smape(truth[:, :, j], pred[:, :, j])
    rmse_per["Total"] = rmse(truth, pred)
    smape_per["Total"] = smape(truth, pred)
    return MetricsReport(
        model=model_name or model.spec.family,
        rmse_per=rmse_per,
        smape_per=smape_per,
        smape_macro=float(np.mean([smape_per[p] for p in POLLUTANTS])),
        n_samples=truth.size,
        param_count=model.param_count(),
    )


def persistence_forecast(
    pairs: Sequence[WindowPair], scaler_a: ScalerParams, horizon: int
) -> np.ndarray:
    """Carry-forward baseline: each target hour gets the source-station
    pollutant reading from the hour before it, in concentration units."""
    l_in = pairs[0].input.shape[0]
    first_row = l_in - horizon  # input row aligned one hour before target hour 0
    raw = np.stack([p.input[first_row : first_row + horizon, : len(POLLUTANTS)] for p in pairs])
    span = (scaler_a.maxs - scaler_a.mins)[: len(POLLUTANTS)]
    return raw * span + scaler_a.mins[: len(POLLUTANTS)]


@dataclass
class LatencyStats:
    median_ms: float
    iqr_ms: float
    samples_ms: list[float]


def time_inference(model: Model, pair: WindowPair, repeats: int = 50) -> LatencyStats:
    """Wall-clock stats for single-window forward passes (after warmup)."""
    x = pair.input[np.newaxis, :, :]
    for _ in range(3):
        model.forward(x)
    samples = []
    for _ in range(repeats):
        started = time.perf_counter()
        model.forward(x)
        samples.append((time.perf_counter() - started) * 1000.0)
    q25, q50, q75 = np.percentile(samples, [25, 50, 75])
    return LatencyStats(float(q50), float(q75 - q25), samples)


# --- output files --------------------------------------------------------------------

METRICS_COLUMNS = (
    ["model"]
    + [f"rmse_{p}" for p in POLLUTANTS] + ["rmse_total"]
    + [f"smape_{p}" for p in POLLUTANTS] + ["smape_total"]
    + ["t_inf_ms", "param_count"]
)


def metrics_to_csv(
    reports: Sequence[MetricsReport], path: str | Path, header_comment: str | None = None
) -> None:
    """Result-table-shaped CSV; the latency cell stays empty when unmeasured."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in reports:
            row = [r.model]
            row += [f"{r.rmse_per[p]:.4f}" for p in POLLUTANTS] + [f"{r.rmse_per['Total']:.4f}"]
            row += [f"{r.smape_per[p]:.4f}" for p in POLLUTANTS] + [f"{r.smape_per['Total']:.4f}"]
            row += ["" if r.t_inf_ms is None else f"{r.t_inf_ms[0]:.3f}", r.param_count]
            writer.writerow(row)


def forecast_to_csv(
    truth: np.ndarray,
    pred: np.ndarray,
    path: str | Path,
    start: int = 0,
    hours: int = 168,
    header_comment: str | None = None,
) -> None:
    """Forecast-vs-truth series, one row per hour, for plotting a week."""
    flat_truth = truth.reshape(-1, truth.shape[-1])
    flat_pred = pred.reshape(-1, pred.shape[-1])
    stop = min(start + hours, flat_truth.shape[0])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["hour"] + [f"{p}_true" for p in POLLUTANTS] + [f"{p}_pred" for p in POLLUTANTS]
        )
        for i in range(start, stop):
            writer.writerow(
                [i]
                + [repr(float(v)) for v in flat_truth[i]]
                + [repr(float(v)) for v in flat_pred[i]]
            )


def svg_lineplot(
    series: dict[str, Sequence[float]],
    path: str | Path,
    title: str = "",
    width: int = 640,
    height: int = 320,
) -> None:
    """Minimal SVG line plot: one polyline per named series."""
    pad = 40
    all_vals = [v for vals in series.values() for v in vals]
    lo, hi = min(all_vals), max(all_vals)
    if hi == lo:
        hi = lo + 1.0
    n = max(len(vals) for vals in series.values())
    colors = ["#000000", "#800000", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"]

    def sx(i: int) -> float:
        return pad + i * (width - 2 * pad) / max(n - 1, 1)

    def sy(v: float) -> float:
        return height - pad - (v - lo) * (height - 2 * pad) / (hi - lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#888"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2}" y="20" text-anchor="middle">{title}</text>')
    for idx, (name, vals) in enumerate(series.items()):
        points = " ".join(f"{sx(i):.2f},{sy(float(v)):.2f}" for i, v in enumerate(vals))
        color = colors[idx % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" points="{points}"/>')
        parts.append(
            f'<text x="{pad + 4}" y="{pad + 14 + 14 * idx}" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")
