"""Metrics, per-horizon breakdowns, the seasonal-mean baseline, and ablations.

Averaged metrics are means over per-horizon values. MAPE masks zero
targets by default (percentage error is undefined on zero flow); the
masked count is reported alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bgcnet.errors import DataError, ShapeError


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mape: float                     # percent; NaN when every target is masked
    per_horizon_mae: list = field(default_factory=list)
    per_horizon_rmse: list = field(default_factory=list)
    per_horizon_mape: list = field(default_factory=list)
    masked_count: int = 0

    def as_dict(self):
        return {
            "mae": self.mae, "rmse": self.rmse, "mape": self.mape,
            "per_horizon_mae": self.per_horizon_mae,
            "per_horizon_rmse": self.per_horizon_rmse,
            "per_horizon_mape": self.per_horizon_mape,
            "masked_count": self.masked_count,
        }


def metrics(pred, target, mask_zero=True) -> MetricReport:
    """MAE / RMSE / MAPE(%) per horizon and averaged.

    Expects de-normalized arrays of shape (B, N, horizon, D); 2-D or
    3-D inputs are treated as a single horizon.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    while pred.ndim < 4:
        pred = pred[..., None, :] if pred.ndim == 3 else pred[None, ...]
        target = target[..., None, :] if target.ndim == 3 else target[None, ...]

    horizons = pred.shape[2]
    mae_h, rmse_h, mape_h = [], [], []
    masked_total = 0
    for h in range(horizons):
        err = pred[:, :, h, :] - target[:, :, h, :]
        mae_h.append(float(np.mean(np.abs(err))))
        rmse_h.append(float(np.sqrt(np.mean(err ** 2))))
        t = target[:, :, h, :]
        if mask_zero:
            valid = t != 0
            masked_total += int(t.size - valid.sum())
        else:
            valid = np.ones_like(t, dtype=bool)
        if valid.any():
            mape_h.append(float(np.mean(np.abs(err[valid] / t[valid])) * 100.0))
        else:
            mape_h.append(float("nan"))
    finite_mape = [m for m in mape_h if np.isfinite(m)]
    return MetricReport(
        mae=float(np.mean(mae_h)),
        rmse=float(np.mean(rmse_h)),
        mape=float(np.mean(finite_mape)) if finite_mape else float("nan"),
        per_horizon_mae=mae_h,
        per_horizon_rmse=rmse_h,
        per_horizon_mape=mape_h,
        masked_count=masked_total,
    )


def format_metric_table(rows):
    """Plain-text table from {label: MetricReport}."""
    lines = [f"{'setting':<30} {'MAE':>10} {'RMSE':>10} {'MAPE(%)':>10}"]
    for label, rep in rows.items():
        lines.append(f"{label:<30} {rep.mae:>10.4f} {rep.rmse:>10.4f} {rep.mape:>10.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# historical average baseline
# ---------------------------------------------------------------------------

class HistoricalAverage:
    """Seasonal-mean predictor with a one-week season.

    Prediction at absolute step t is the mean of all training
    observations sharing t's weekly phase. Phases never observed in
    training fall back to the overall mean (flagged).
    """

    def __init__(self, train_values, interval_minutes=5):
        self.values = np.asarray(train_values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError("train series must be (N, T, D)")
        self.steps_per_week = 7 * 24 * 60 // interval_minutes
        t = self.values.shape[1]
        if t < self.steps_per_week:
            raise DataError(
                f"need at least one full week of history ({self.steps_per_week} steps),"
                f" got {t}")
        self.overall_mean = self.values.mean(axis=1)           # (N, D)
        self.phase_mean = np.empty(
            (self.values.shape[0], self.steps_per_week, self.values.shape[2]))
        self.phase_observed = np.zeros(self.steps_per_week, dtype=bool)
        for phase in range(self.steps_per_week):
            obs = self.values[:, phase::self.steps_per_week, :]
            if obs.shape[1] > 0:
                self.phase_mean[:, phase, :] = obs.mean(axis=1)
                self.phase_observed[phase] = True
            else:
                self.phase_mean[:, phase, :] = self.overall_mean
        self.fallback_used = not self.phase_observed.all()

    def predict(self, query_times):
        """Predictions for absolute time indices; shape (N, len(q), D)."""
        phases = np.asarray(query_times, dtype=np.int64) % self.steps_per_week
        return self.phase_mean[:, phases, :]


def historical_average(train_values, query_times, interval_minutes=5):
    model = HistoricalAverage(train_values, interval_minutes)
    return model.predict(query_times)


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------

ABLATION_ROWS = ("full", "no_uncertainty", "no_phi", "no_constant")


@dataclass
class AblationSpec:
    disable_uncertainty: bool = False   # dropout rate forced to 0
    disable_phi: bool = False           # phi frozen at 0
    disable_constant: bool = False      # constant adjacency replaced by identity

    @classmethod
    def from_row(cls, row):
        if row not in ABLATION_ROWS:
            raise DataError(f"unknown ablation row {row!r}")
        return cls(disable_uncertainty=(row == "no_uncertainty"),
                   disable_phi=(row == "no_phi"),
                   disable_constant=(row == "no_constant"))


def run_ablation(build_and_train, rows=ABLATION_ROWS, seeds=(0,)):
    """Train one model per (row, seed) and tabulate validation metrics.

    build_and_train(spec, seed) -> MetricReport for one configuration;
    failures are recorded per row and the table still emitted for
    completed rows.
    """
    table = {}
    errors = {}
    for row in rows:
        spec = AblationSpec.from_row(row)
        reports = []
        for seed in seeds:
            try:
                reports.append(build_and_train(spec, seed))
            except Exception as exc:  # keep the sweep alive per spec
                errors[(row, seed)] = repr(exc)
        if reports:
            table[row] = reports
    return table, errors


def ablation_csv(table, path):
    """Delimited file mirroring the ablation-table columns."""
    with open(path, "w") as fh:
        fh.write("setting,seed,mae,rmse,mape\n")
        for row, reports in table.items():
            for seed, rep in enumerate(reports):
                fh.write(f"{row},{seed},{rep.mae:.6f},{rep.rmse:.6f},{rep.mape:.6f}\n")
