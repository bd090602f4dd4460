"""Clinical control-performance indices and cohort aggregation.

Conventions (all configurable at call sites, echoed in reports):

* IAE integrates |target - BIS| over the full run by trapezoid; reported in
  BIS*s (literature-comparable scale) with BIS*min alongside.
* The percent-error family (MDPE/MDAPE/WOBBLE) is evaluated over the
  maintenance window only; induction transients would otherwise dominate the
  medians.
* WOBBLE is centered on MDAPE as printed in the source formula; the
  conventional MDPE-centered variant is reported as wobble_mdpe.
* Q integrates the saturated, delivered infusion (exact for ZOH profiles).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

# Clinically acceptable BIS bands around the target.
ENTER_BAND = (45.0, 55.0)
STAY_BAND = (40.0, 60.0)


def iae(t: np.ndarray, bis: np.ndarray, target: float) -> float:
    """Integrated absolute error in BIS*min (trapezoid; t in minutes)."""
    t = np.asarray(t, dtype=float)
    bis = np.asarray(bis, dtype=float)
    if t.size == 0 or bis.size != t.size:
        raise ValueError("empty trace or mismatched time/BIS lengths")
    if t.size == 1:
        return 0.0
    return float(np.trapezoid(np.abs(target - bis), t))


def tv(u: np.ndarray) -> float:
    """Total variation of the infusion command: sum |u_k - u_{k-1}|.

    Correctly-rounded summation, so the result is independent of
    accumulation order.
    """
    u = np.asarray(u, dtype=float)
    if u.size < 2:
        raise ValueError("total variation needs at least 2 samples")
    return math.fsum(np.abs(np.diff(u)))


def pe_series(bis: np.ndarray, target: float) -> np.ndarray:
    """Percent performance errors (measured - target)/target * 100."""
    if target <= 0:
        raise ValueError(f"target must be > 0, got {target}")
    return (np.asarray(bis, dtype=float) - target) / target * 100.0


def mdpe(pe: np.ndarray) -> float:
    """Median performance error (bias), percent."""
    return float(np.median(_nonempty(pe)))


def mdape(pe: np.ndarray) -> float:
    """Median absolute performance error (accuracy), percent."""
    return float(np.median(np.abs(_nonempty(pe))))


def wobble(pe: np.ndarray) -> float:
    """Median |PE - MDAPE|, percent (MDAPE-centered, as printed)."""
    pe = _nonempty(pe)
    return float(np.median(np.abs(pe - mdape(pe))))


def wobble_mdpe(pe: np.ndarray) -> float:
    """Median |PE - MDPE|, percent (conventional Varvel-style centering)."""
    pe = _nonempty(pe)
    return float(np.median(np.abs(pe - mdpe(pe))))


def _nonempty(pe) -> np.ndarray:
    pe = np.asarray(pe, dtype=float)
    if pe.size == 0:
        raise ValueError("empty PE series")
    return pe


def total_drug(t: np.ndarray, u: np.ndarray) -> float:
    """Administered drug in mg: left-rectangle sum, exact for ZOH infusion."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if t.size != u.size or t.size == 0:
        raise ValueError("empty trace or mismatched time/infusion lengths")
    if t.size == 1:
        return 0.0
    return math.fsum(u[:-1] * np.diff(t))


def settling_time(t: np.ndarray, bis: np.ndarray,
                  band: tuple[float, float] = ENTER_BAND) -> float:
    """First time (minutes) BIS enters the band; nan if it never does."""
    t = np.asarray(t, dtype=float)
    bis = np.asarray(bis, dtype=float)
    inside = (bis >= band[0]) & (bis <= band[1])
    idx = np.flatnonzero(inside)
    return float(t[idx[0]]) if idx.size else math.nan


def undershoot_depth(bis: np.ndarray, target: float) -> float:
    """How far BIS dropped below target at its deepest point (>= 0)."""
    return float(max(0.0, target - float(np.min(np.asarray(bis, dtype=float)))))


@dataclass(frozen=True)
class MetricsReport:
    """Per-run performance indices. PE-family fields are nan when the run has
    no maintenance phase."""

    patient_id: int
    iae_bis_s: float
    iae_bis_min: float
    iae_induction_bis_s: float
    iae_maintenance_bis_s: float
    tv: float
    q_mg: float
    mdpe: float
    mdape: float
    wobble: float
    wobble_mdpe: float
    settling_time_min: float
    undershoot_depth: float


METRIC_FIELDS = tuple(f.name for f in fields(MetricsReport) if f.name != "patient_id")


def compute_report(trace, channel: str = "measured") -> MetricsReport:
    """All indices for one closed-loop trace.

    channel selects the BIS series the error metrics read: "measured"
    (default; what the controller saw), "disturbed" (noise-free), or "clean".
    """
    series = {
        "measured": trace.bis_measured,
        "disturbed": trace.bis_disturbed,
        "clean": trace.bis_clean,
    }
    try:
        bis = series[channel]
    except KeyError:
        raise ValueError(f"unknown BIS channel {channel!r}; valid: {sorted(series)}")
    t = trace.t
    target = trace.target_bis
    induction_end = trace.induction_end
    horizon = float(t[-1])

    iae_min_full = iae(t, bis, target)
    ind = t < induction_end
    if np.count_nonzero(ind) >= 2:
        iae_ind = 60.0 * iae(t[ind], bis[ind], target)
    else:
        iae_ind = 0.0
    maint = t >= induction_end
    has_maintenance = induction_end < horizon and np.count_nonzero(maint) >= 2
    if has_maintenance:
        iae_maint = 60.0 * iae(t[maint], bis[maint], target)
        pe = pe_series(bis[maint], target)
        pe_stats = (mdpe(pe), mdape(pe), wobble(pe), wobble_mdpe(pe))
    else:
        iae_maint = 0.0
        pe_stats = (math.nan,) * 4

    return MetricsReport(
        patient_id=trace.patient_id,
        iae_bis_s=60.0 * iae_min_full,
        iae_bis_min=iae_min_full,
        iae_induction_bis_s=iae_ind,
        iae_maintenance_bis_s=iae_maint,
        tv=tv(trace.u),
        q_mg=total_drug(t, trace.u),
        mdpe=pe_stats[0],
        mdape=pe_stats[1],
        wobble=pe_stats[2],
        wobble_mdpe=pe_stats[3],
        settling_time_min=settling_time(t, bis),
        undershoot_depth=undershoot_depth(bis, target),
    )


@dataclass(frozen=True)
class MetricStat:
    """Cohort statistics for one index; worst is the largest magnitude."""

    mean: float
    std: float          # population (n denominator)
    worst: float        # signed value with the largest |.|
    worst_patient: int  # -1 when undefined


@dataclass(frozen=True)
class CohortSummary:
    patients: tuple
    stats: dict  # metric name -> MetricStat

    def stat(self, name: str) -> MetricStat:
        return self.stats[name]


def summarize_cohort(reports) -> CohortSummary:
    """Mean +/- std per metric plus the per-metric worst patient.

    nan entries (e.g. PE metrics of induction-only runs, never-settled
    settling times) are excluded per metric.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to summarize")
    stats = {}
    for name in METRIC_FIELDS:
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        pids = np.array([r.patient_id for r in reports])
        ok = np.isfinite(vals)
        if not np.any(ok):
            stats[name] = MetricStat(math.nan, math.nan, math.nan, -1)
            continue
        v, p = vals[ok], pids[ok]
        worst_idx = int(np.argmax(np.abs(v)))
        stats[name] = MetricStat(
            mean=float(np.mean(v)),
            std=float(np.std(v)),
            worst=float(v[worst_idx]),
            worst_patient=int(p[worst_idx]),
        )
    return CohortSummary(patients=tuple(r.patient_id for r in reports), stats=stats)
