"""Desk-scale reproduction engine: parameter sweeps, peak extraction,
temperature-crossover detection, theory-vs-simulation comparison, and
deterministic tabular output.

Sweeps warm-start each grid point from the previous converged solution.  Peak
locations are refined by a local quadratic fit through the three points around
the discrete maximum (solver cost dominates, so no re-solving on finer grids).
Every sweep record carries metric reports at the two canonical test mixes
rho_test = 0.5 and rho_test = rho0(b0), plus any extras requested.

Serialisation is deterministic: floats at 17 significant digits (round-trip
exact), no timestamps, provenance identified by an explicit run id or the
seed.  CSV columns are documented in docs/csv_schema.md.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import __version__
from .landscape import ControlParams
from .metrics import METRIC_COLUMNS, MetricsReport, report, train_error
from .saddle import SaddleSolution, SolverSettings, continuation_sweep, solve
from .simulator import SimConfig, SimResult, run_simulation
from .special import DomainError, rho_intrinsic

__all__ = [
    "SweepRecord",
    "PeakSummary",
    "ComparisonRecord",
    "run_rho_sweep",
    "run_temperature_sweep",
    "run_rhostar_map",
    "compare_theory_simulation",
    "sweep_csv_header",
    "sweep_csv_rows",
    "write_sweep_csv",
    "write_json",
]

log = logging.getLogger(__name__)

SOLUTION_COLUMNS = ("b0", "alpha", "T", "rho_train", "R", "q", "R_hat", "q_hat",
                    "b", "residual_max", "free_energy", "converged", "eps_train")


@dataclass(frozen=True)
class SweepRecord:
    control: ControlParams
    solution: SaddleSolution
    reports: tuple[tuple[float, MetricsReport], ...]
    train_error: float


@dataclass(frozen=True)
class PeakSummary:
    rho_at_max_R: float | None
    max_R: float | None
    rho_at_bias_match: float | None
    bias_crossings: tuple[float, ...]
    rho_at_max_metric: dict[str, float]
    non_converged: tuple[float, ...]


@dataclass(frozen=True)
class ComparisonRecord:
    control: ControlParams
    theory_R: float
    theory_b: float
    theory_a_bal: float
    sim_R_mean: float
    sim_R_se: float
    sim_b_mean: float
    sim_b_se: float
    sim_a_bal_mean: float
    sim_a_bal_se: float
    n_seeds: int
    tolerance: float
    within_tolerance: bool
    seeds: tuple[int, ...]


def canonical_rho_tests(b0: float, extra: tuple[float, ...] = ()) -> tuple[float, ...]:
    """The two canonical evaluations (0.5 and rho0), deduplicated, plus extras."""
    vals = [0.5, rho_intrinsic(b0)]
    vals.extend(extra)
    out: list[float] = []
    for v in vals:
        if not any(abs(v - o) < 1e-12 for o in out):
            out.append(v)
    return tuple(out)


def _make_record(sol: SaddleSolution, rho_tests: tuple[float, ...]) -> SweepRecord:
    cp = sol.control
    op = sol.params
    reports = tuple((rt, report(op.R, op.b, cp.b0, rt)) for rt in rho_tests)
    return SweepRecord(control=cp, solution=sol, reports=reports,
                       train_error=train_error(cp, op))


def _quadratic_peak(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Location/value of the maximum, refined by a 3-point quadratic fit.

    Boundary maxima are returned as-is; a degenerate (flat) triple falls back
    to the discrete maximiser.
    """
    i = int(np.argmax(y))
    if i == 0 or i == len(y) - 1:
        return float(x[i]), float(y[i])
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = (y0 - y1) * (x2 - x1) + (y2 - y1) * (x1 - x0)
    if denom == 0.0:
        return float(x1), float(y1)
    xs = x1 + 0.5 * ((y0 - y1) * (x2 - x1) ** 2 - (y2 - y1) * (x1 - x0) ** 2) / denom
    xs = min(max(xs, x0), x2)
    # value from the fitted parabola through the three points
    la = (xs - x1) * (xs - x2) / ((x0 - x1) * (x0 - x2))
    lb = (xs - x0) * (xs - x2) / ((x1 - x0) * (x1 - x2))
    lc = (xs - x0) * (xs - x1) / ((x2 - x0) * (x2 - x1))
    return float(xs), float(la * y0 + lb * y1 + lc * y2)


def _bias_crossings(rhos: np.ndarray, bias: np.ndarray, b0: float) -> tuple[float, ...]:
    """All sign-change crossings of b(rho) - b0, linearly interpolated."""
    d = bias - b0
    out = []
    for i in range(len(d) - 1):
        if d[i] == 0.0:
            out.append(float(rhos[i]))
        elif d[i] * d[i + 1] < 0.0:
            frac = d[i] / (d[i] - d[i + 1])
            out.append(float(rhos[i] + frac * (rhos[i + 1] - rhos[i])))
    if len(d) and d[-1] == 0.0:
        out.append(float(rhos[-1]))
    return tuple(out)


def _metric_peaks(records: list[SweepRecord], keep: np.ndarray) -> dict[str, float]:
    """argmax location per metric column and test mix, quadratically refined."""
    out: dict[str, float] = {}
    if not records:
        return out
    rho_tests = [rt for rt, _ in records[0].reports]
    rhos = np.array([rec.control.rho_train for rec in records])
    for j, rt in enumerate(rho_tests):
        for name in METRIC_COLUMNS[1:]:
            attr = {"r": "recall", "s": "specificity", "a": "accuracy",
                    "a_bal": "balanced_accuracy", "p": "precision", "f1": "f1",
                    "p_neg": "precision_neg", "f1_neg": "f1_neg",
                    "eps_g": "generalization_error"}[name]
            vals, xs = [], []
            for k, rec in enumerate(records):
                if not keep[k]:
                    continue
                v = getattr(rec.reports[j][1], attr)
                if v is not None:
                    vals.append(v)
                    xs.append(rhos[k])
            if len(vals) >= 1:
                x, _ = _quadratic_peak(np.array(xs), np.array(vals))
                out[f"{name}@rho_test={rt:g}"] = x
    return out


def run_rho_sweep(base: ControlParams, grid, settings: SolverSettings | None = None,
                  extra_rho_test: tuple[float, ...] = ()) -> tuple[list[SweepRecord], PeakSummary]:
    """Warm-started sweep over rho_train with peak extraction."""
    settings = settings or SolverSettings()
    grid = np.asarray(list(grid), dtype=float)
    sols = continuation_sweep(base, "rho_train", grid, settings)
    rho_tests = canonical_rho_tests(base.b0, extra_rho_test)
    records = [_make_record(s, rho_tests) for s in sols]

    keep = np.array([s.converged for s in sols])
    non_conv = tuple(float(g) for g, k in zip(grid, keep) if not k)
    if non_conv:
        log.warning("rho sweep: non-converged points excluded from peaks: %s", non_conv)
    if keep.any():
        rk = grid[keep]
        Rk = np.array([s.params.R for s in sols])[keep]
        bk = np.array([s.params.b for s in sols])[keep]
        rho_star, r_star = _quadratic_peak(rk, Rk)
        crossings = _bias_crossings(rk, bk, base.b0)
    else:
        rho_star = r_star = None
        crossings = ()
    summary = PeakSummary(
        rho_at_max_R=rho_star, max_R=r_star,
        rho_at_bias_match=crossings[0] if crossings else None,
        bias_crossings=crossings,
        rho_at_max_metric=_metric_peaks(records, keep),
        non_converged=non_conv,
    )
    return records, summary


def run_temperature_sweep(base: ControlParams, grid,
                          settings: SolverSettings | None = None,
                          drop_fraction: float = 0.02,
                          extra_rho_test: tuple[float, ...] = (),
                          ) -> tuple[list[SweepRecord], float | None]:
    """Sweep over T (ascending log grid spanning >= 2 decades) and estimate the
    crossover T* where balanced accuracy drops ``drop_fraction`` below its
    low-temperature plateau (the mean over the lowest decade).  Returns None
    for T* when no such drop exists on the grid.
    """
    settings = settings or SolverSettings()
    grid = np.asarray(sorted(float(g) for g in grid))
    if len(grid) < 2 or grid[0] <= 0 or grid[-1] / grid[0] < 99.0:
        raise DomainError("temperature grid must be positive and span >= 2 decades")
    sols = continuation_sweep(base, "temperature", grid, settings)
    rho_tests = canonical_rho_tests(base.b0, extra_rho_test)
    records = [_make_record(s, rho_tests) for s in sols]

    abal = np.array([rec.reports[0][1].balanced_accuracy for rec in records])
    low = grid <= grid[0] * 10.0
    plateau = float(abal[low].mean())
    cut = plateau * (1.0 - drop_fraction)
    t_star = None
    for i in range(len(grid)):
        if abal[i] < cut:
            if i == 0:
                t_star = float(grid[0])
            else:
                frac = (abal[i - 1] - cut) / (abal[i - 1] - abal[i])
                # interpolate in log T
                t_star = float(np.exp(np.log(grid[i - 1])
                                      + frac * (np.log(grid[i]) - np.log(grid[i - 1]))))
            break
    return records, t_star


def run_rhostar_map(b0_grid, alpha_grid, T: float,
                    settings: SolverSettings | None = None,
                    rho_grid=None) -> list[dict]:
    """Nested rho sweeps over a (b0, alpha) grid; one row per cell."""
    settings = settings or SolverSettings()
    if rho_grid is None:
        rho_grid = np.arange(0.05, 0.951, 0.025)
    rows = []
    for b0 in b0_grid:
        for alpha in alpha_grid:
            base = ControlParams(b0=float(b0), alpha=float(alpha),
                                 temperature=T, rho_train=float(rho_grid[0]))
            try:
                records, peaks = run_rho_sweep(base, rho_grid, settings)
                rows.append({
                    "b0": float(b0), "alpha": float(alpha), "T": float(T),
                    "rho_at_max_R": peaks.rho_at_max_R, "max_R": peaks.max_R,
                    "n_non_converged": len(peaks.non_converged),
                    "failed": False,
                })
            except Exception as exc:  # record the failure, keep the table
                log.warning("rhostar cell (b0=%s, alpha=%s) failed: %s", b0, alpha, exc)
                rows.append({"b0": float(b0), "alpha": float(alpha), "T": float(T),
                             "rho_at_max_R": None, "max_R": None,
                             "n_non_converged": None, "failed": True})
    return rows


def compare_theory_simulation(cp: ControlParams, sim: SimConfig, n_seeds: int,
                              settings: SolverSettings | None = None,
                              tolerance: float = 0.03,
                              temperature_slack: float = 0.25) -> ComparisonRecord:
    """Saddle-point prediction vs simulation mean +- standard error.

    ``sim`` provides the template; seeds sim.seed .. sim.seed + n_seeds - 1
    are run.  Requires matching (b0, alpha, rho_train) and an effective
    temperature within ``temperature_slack`` (relative) of cp.temperature.
    """
    if n_seeds < 3:
        raise DomainError("need at least 3 seeds for a comparison")
    if (sim.b0, sim.alpha, sim.rho_train) != (cp.b0, cp.alpha, cp.rho_train):
        raise DomainError("theory and simulation disagree on (b0, alpha, rho_train)")
    t_eff = sim.effective_temperature
    if abs(t_eff - cp.temperature) > temperature_slack * cp.temperature:
        raise DomainError(
            f"effective temperature {t_eff} outside slack of theory T={cp.temperature}")

    sol = solve(cp, settings)
    rep = report(sol.params.R, sol.params.b, cp.b0, sim.rho_test)

    results: list[SimResult] = []
    seeds = []
    for k in range(n_seeds):
        seed = (sim.seed + k) % 2 ** 64
        seeds.append(seed)
        cfg = SimConfig(**{**sim.__dict__, "seed": seed})
        res = run_simulation(cfg)
        if math.isfinite(res.train_loss_final):
            results.append(res)
    if len(results) < 3:
        raise RuntimeError(f"only {len(results)} simulation seeds finished; comparison refused")

    def mean_se(vals):
        arr = np.array(vals, dtype=float)
        return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))

    r_mean, r_se = mean_se([r.overlap_R_emp for r in results])
    b_mean, b_se = mean_se([r.bias_emp for r in results])
    a_mean, a_se = mean_se([r.metrics_emp.balanced_accuracy for r in results])
    return ComparisonRecord(
        control=cp,
        theory_R=sol.params.R, theory_b=sol.params.b,
        theory_a_bal=rep.balanced_accuracy,
        sim_R_mean=r_mean, sim_R_se=r_se,
        sim_b_mean=b_mean, sim_b_se=b_se,
        sim_a_bal_mean=a_mean, sim_a_bal_se=a_se,
        n_seeds=len(results), tolerance=tolerance,
        within_tolerance=abs(a_mean - rep.balanced_accuracy) <= tolerance,
        seeds=tuple(seeds),
    )


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def sweep_csv_header(n_blocks: int) -> list[str]:
    cols = list(SOLUTION_COLUMNS)
    for i in range(1, n_blocks + 1):
        cols.extend(f"{c}{i}" for c in METRIC_COLUMNS)
    return cols


def sweep_csv_rows(records: list[SweepRecord]) -> list[list[str]]:
    rows = []
    n_blocks = len(records[0].reports) if records else 0
    for rec in records:
        cp, sol, op = rec.control, rec.solution, rec.solution.params
        if len(rec.reports) != n_blocks:
            raise DomainError("all records in one table must share the rho_test blocks")
        row = [_fmt(v) for v in (
            cp.b0, cp.alpha, cp.temperature, cp.rho_train,
            op.R, op.q, op.R_hat, op.q_hat, op.b,
            max(sol.residuals), sol.free_energy, sol.converged, rec.train_error)]
        for rt, mrep in rec.reports:
            row.extend(mrep.to_csv_fields())
        rows.append(row)
    return rows


def write_sweep_csv(records: list[SweepRecord], path) -> None:
    n_blocks = len(records[0].reports) if records else 0
    lines = [",".join(sweep_csv_header(n_blocks))]
    lines += [",".join(r) for r in sweep_csv_rows(records)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "__dict__") and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in obj.__dict__.items()}
    return obj


def write_json(payload: dict, path, run_id: str | None = None) -> None:
    """Deterministic JSON with a provenance block (no timestamps)."""
    body = {"provenance": {"code_version": __version__, "run_id": run_id or "unset"},
            **_jsonable(payload)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
