"""Sweep engine: peak extraction, serialisation round-trips, comparisons."""

import json
import math

import numpy as np
import pytest

from adperc.experiments import (
    ComparisonRecord,
    _bias_crossings,
    _quadratic_peak,
    canonical_rho_tests,
    compare_theory_simulation,
    run_rho_sweep,
    run_temperature_sweep,
    sweep_csv_header,
    sweep_csv_rows,
    write_json,
    write_sweep_csv,
)
from adperc.landscape import ControlParams
from adperc.metrics import METRIC_COLUMNS
from adperc.saddle import SolverSettings
from adperc.simulator import SimConfig
from adperc.special import DomainError, QuadratureSpec

FAST = SolverSettings(quadrature=QuadratureSpec(120, 120))


# --- helpers -----------------------------------------------------------------

def test_canonical_rho_tests():
    vals = canonical_rho_tests(-0.6)
    assert vals[0] == 0.5
    assert vals[1] == pytest.approx(0.27425311775007, rel=1e-10)
    # degenerate dedupe at b0 = 0
    assert canonical_rho_tests(0.0) == (0.5,)


def test_quadratic_peak_exact_parabola():
    x = np.array([0.2, 0.3, 0.4, 0.5, 0.6])
    y = -(x - 0.437) ** 2
    xs, ys = _quadratic_peak(x, y)
    assert xs == pytest.approx(0.437, abs=1e-12)
    assert ys == pytest.approx(0.0, abs=1e-12)


def test_quadratic_peak_boundary():
    x = np.array([0.1, 0.2, 0.3])
    y = np.array([3.0, 2.0, 1.0])
    xs, ys = _quadratic_peak(x, y)
    assert (xs, ys) == (0.1, 3.0)


def test_bias_crossings_interpolation():
    rhos = np.array([0.2, 0.4, 0.6, 0.8])
    bias = np.array([-1.0, -0.2, 0.6, 1.4])
    crossings = _bias_crossings(rhos, bias, 0.0)
    assert len(crossings) == 1
    assert crossings[0] == pytest.approx(0.45, abs=1e-12)


# --- rho sweep ---------------------------------------------------------------

def test_rho_sweep_symmetric_peak():
    base = ControlParams(b0=0.0, alpha=1.1, temperature=0.5, rho_train=0.5)
    grid = np.linspace(0.3, 0.7, 9)
    records, peaks = run_rho_sweep(base, grid, FAST)
    assert len(records) == 9
    assert all(rec.solution.converged for rec in records)
    assert abs(peaks.rho_at_max_R - 0.5) <= 0.05 + 1e-9   # within one grid step
    # records carry the canonical test mixes and a train error
    assert records[0].reports[0][0] == 0.5
    assert 0.0 <= records[0].train_error <= 1.0


def test_rho_sweep_metric_peaks_present():
    base = ControlParams(b0=-0.6, alpha=1.1, temperature=0.5, rho_train=0.5)
    grid = np.linspace(0.35, 0.65, 7)
    records, peaks = run_rho_sweep(base, grid, FAST)
    assert "a_bal@rho_test=0.5" in peaks.rho_at_max_metric
    assert "p@rho_test=0.274253" in peaks.rho_at_max_metric


# --- temperature sweep ---------------------------------------------------------

def test_temperature_sweep_grid_validation():
    base = ControlParams(b0=-0.6, alpha=1.1, temperature=0.5, rho_train=0.5)
    with pytest.raises(DomainError):
        run_temperature_sweep(base, [0.1, 0.2, 0.5], FAST)   # < 2 decades


def test_temperature_sweep_finds_crossover():
    base = ControlParams(b0=-0.6, alpha=1.1, temperature=0.05, rho_train=0.5)
    grid = np.geomspace(0.02, 4.0, 10)
    records, t_star = run_temperature_sweep(base, grid, FAST)
    assert t_star is not None
    assert 0.02 < t_star < 4.0
    # balanced accuracy on the low side of T* is higher than at the top end
    abal = [rec.reports[0][1].balanced_accuracy for rec in records]
    assert abal[0] > abal[-1] + 0.02


# --- CSV / JSON ----------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    base = ControlParams(b0=-0.6, alpha=1.1, temperature=0.5, rho_train=0.5)
    records, _ = run_rho_sweep(base, [0.45, 0.5, 0.55], FAST)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(records, path)
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    assert header == sweep_csv_header(len(records[0].reports))
    assert header[:4] == ["b0", "alpha", "T", "rho_train"]
    # parse-back equality at 17 significant digits is exact
    row = lines[1].split(",")
    assert float(row[header.index("R")]) == records[0].solution.params.R
    assert float(row[header.index("free_energy")]) == records[0].solution.free_energy
    blocks = [c for c in header if c.startswith("rho_test")]
    assert len(blocks) == len(records[0].reports)
    # metric identities survive the round trip
    i_r, i_s = header.index("r1"), header.index("s1")
    i_a, i_rt = header.index("a1"), header.index("rho_test1")
    for line in lines[1:]:
        cells = line.split(",")
        a = float(cells[i_rt]) * float(cells[i_r]) + \
            (1 - float(cells[i_rt])) * float(cells[i_s])
        assert a == pytest.approx(float(cells[i_a]), abs=1e-12)


def test_csv_undefined_metric_serialises_empty(tmp_path):
    from adperc.experiments import SweepRecord
    from adperc.metrics import metrics_from_rates
    from adperc.saddle import solve
    base = ControlParams(b0=-0.6, alpha=1.1, temperature=0.5, rho_train=0.5)
    sol = solve(base, FAST)
    rep = metrics_from_rates(0.0, 1.0, 0.5)       # precision undefined
    rec = SweepRecord(control=base, solution=sol, reports=((0.5, rep),),
                      train_error=0.1)
    path = tmp_path / "row.csv"
    write_sweep_csv([rec], path)
    header, row = path.read_text().strip().split("\n")
    cells = row.split(",")
    assert cells[header.split(",").index("p1")] == ""
    assert cells[header.split(",").index("f11")] == ""


def test_json_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    payload = {"grid": [0.1, 0.2], "value": 1.0 / 3.0}
    write_json(payload, p1, run_id="seed-7")
    write_json(payload, p2, run_id="seed-7")
    assert p1.read_bytes() == p2.read_bytes()
    body = json.loads(p1.read_text())
    assert body["provenance"]["run_id"] == "seed-7"
    assert body["value"] == 1.0 / 3.0   # exact float round-trip


# --- theory vs simulation -------------------------------------------------------

def test_compare_theory_simulation_smoke():
    cp = ControlParams(b0=-0.6, alpha=2.0, temperature=0.025, rho_train=0.5)
    sim = SimConfig(dimension_N=300, alpha=2.0, b0=-0.6, rho_train=0.5,
                    rho_test=0.5, test_size=3000, learning_rate=0.5,
                    batch_size=20, epochs=120, seed=42)
    rec = compare_theory_simulation(cp, sim, n_seeds=3, settings=FAST,
                                    tolerance=0.25)
    assert rec.n_seeds == 3
    assert rec.seeds == (42, 43, 44)
    assert 0.5 <= rec.theory_a_bal <= 1.0
    assert 0.4 <= rec.sim_a_bal_mean <= 1.0
    assert rec.sim_a_bal_se > 0.0
    assert rec.within_tolerance == (
        abs(rec.sim_a_bal_mean - rec.theory_a_bal) <= 0.25)


def test_compare_refuses_too_few_seeds():
    cp = ControlParams(b0=-0.6, alpha=2.0, temperature=0.025, rho_train=0.5)
    sim = SimConfig(dimension_N=100, alpha=2.0, b0=-0.6, rho_train=0.5,
                    test_size=100, epochs=2, seed=1)
    with pytest.raises(DomainError):
        compare_theory_simulation(cp, sim, n_seeds=2, settings=FAST)


def test_compare_rejects_mismatched_parameters():
    cp = ControlParams(b0=-0.6, alpha=2.0, temperature=0.025, rho_train=0.5)
    sim = SimConfig(dimension_N=100, alpha=1.0, b0=-0.6, rho_train=0.5,
                    test_size=100, epochs=2, seed=1)
    with pytest.raises(DomainError):
        compare_theory_simulation(cp, sim, n_seeds=3, settings=FAST)
    sim = SimConfig(dimension_N=100, alpha=2.0, b0=-0.6, rho_train=0.5,
                    test_size=100, epochs=2, seed=1, learning_rate=10.0)
    with pytest.raises(DomainError):   # effective temperature out of slack
        compare_theory_simulation(cp, sim, n_seeds=3, settings=FAST)
