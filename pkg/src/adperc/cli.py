"""Command-line front door.

Usage:  adperc COMMAND [CONFIG_FILE] [--set key=value ...] [--output PATH]
               [--jobs N] [--quiet]

Commands: solve | sweep-rho | sweep-temperature | map-rhostar | simulate |
compare | boundary.  The config file is a flat ``key = value`` text document
('#' starts a comment); command-line ``--set`` pairs override file values.
Unknown keys and invariant violations are rejected at parse time with the
offending line or key named.

Data files (CSV/JSON) are deterministic: a second run of the same config with
the same seed is byte-identical.  Progress goes to stderr only.

Exit codes: 0 success, 2 config/parse error, 3 solver non-convergence
anywhere in the run, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .landscape import ControlParams
from .experiments import (
    ComparisonRecord,
    compare_theory_simulation,
    run_rho_sweep,
    run_rhostar_map,
    run_temperature_sweep,
    write_json,
    write_sweep_csv,
)
from .metrics import boundary_density
from .saddle import SolverSettings
from .simulator import SimConfig, run_simulation
from .special import DomainError, QuadratureSpec

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "dispatch", "main"]

log = logging.getLogger("adperc")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_IO = 4

COMMANDS = ("solve", "sweep-rho", "sweep-temperature", "map-rhostar",
            "simulate", "compare", "boundary")


class ConfigError(ValueError):
    pass


# key -> (type, validator message).  Grids are comma lists or start:stop:count
# triples with an optional trailing :log flag.
_FLOAT_KEYS = {
    "b0", "alpha", "temperature", "rho_train", "rho_test", "learning_rate",
    "threshold", "damping", "tolerance", "bias_bracket_halfwidth",
    "floor_epsilon", "truncation_radius", "comparison_tolerance",
    "drop_fraction", "langevin_temperature",
}
_INT_KEYS = {
    "max_iterations", "node_count_t", "node_count_y", "dimension_N",
    "test_size", "batch_size", "epochs", "n_seeds", "seed", "jobs",
}
_STR_KEYS = {"mode", "dynamics", "run_id", "output", "scheme"}
_GRID_KEYS = {"rho_grid", "temperature_grid", "b0_grid", "alpha_grid"}
_LIST_KEYS = {"rho_test_extra"}
_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS | _GRID_KEYS | _LIST_KEYS


@dataclass
class ExperimentConfig:
    command: str
    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def control(self) -> ControlParams:
        missing = [k for k in ("b0", "alpha", "temperature") if k not in self.values]
        if missing:
            raise ConfigError(f"missing required keys: {', '.join(missing)}")
        return ControlParams(
            b0=self.values["b0"], alpha=self.values["alpha"],
            temperature=self.values["temperature"],
            rho_train=self.values.get("rho_train", 0.5))

    def solver_settings(self) -> SolverSettings:
        v = self.values
        quad = QuadratureSpec(
            node_count_t=v.get("node_count_t", 160),
            node_count_y=v.get("node_count_y", 160),
            truncation_radius=v.get("truncation_radius", 8.0),
            scheme=v.get("scheme", "gauss_legendre_mapped"))
        return SolverSettings(
            damping=v.get("damping", 0.3),
            tolerance=v.get("tolerance", 1e-9),
            max_iterations=v.get("max_iterations", 3000),
            bias_bracket_halfwidth=v.get("bias_bracket_halfwidth"),
            floor_epsilon=v.get("floor_epsilon", 1e-12),
            mode=v.get("mode", "learned_bias"),
            quadrature=quad)

    def sim_config(self) -> SimConfig:
        v = self.values
        required = [k for k in ("dimension_N", "b0", "alpha", "rho_train") if k not in v]
        if required:
            raise ConfigError(f"simulate/compare needs keys: {', '.join(required)}")
        return SimConfig(
            dimension_N=v["dimension_N"], alpha=v["alpha"], b0=v["b0"],
            rho_train=v["rho_train"], rho_test=v.get("rho_test", 0.5),
            test_size=v.get("test_size", 10000),
            learning_rate=v.get("learning_rate", 0.5),
            batch_size=v.get("batch_size", 20),
            epochs=v.get("epochs", 1000), seed=v.get("seed", 0),
            dynamics=v.get("dynamics", "sgd_sigmoid"),
            threshold=v.get("threshold", 0.5),
            langevin_temperature=v.get("langevin_temperature"))


def _parse_scalar(key: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key in _LIST_KEYS:
            return tuple(float(p) for p in raw.split(",") if p.strip())
        if key in _GRID_KEYS:
            return _parse_grid(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse value for '{key}': {exc}") from exc


def _parse_grid(raw: str):
    """Either a comma list of numbers or start:stop:count[:log]."""
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) not in (3, 4):
            raise ValueError("grid triple must be start:stop:count[:log]")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("grid count must be >= 1")
        if len(parts) == 4:
            if parts[3] != "log":
                raise ValueError("only ':log' is accepted as a spacing flag")
            if start <= 0 or stop <= 0:
                raise ValueError("log spacing needs positive endpoints")
            return tuple(np.geomspace(start, stop, count))
        return tuple(np.linspace(start, stop, count))
    return tuple(float(p) for p in raw.split(",") if p.strip())


def parse_config(command: str, text: str = "", overrides: list[str] | None = None
                 ) -> ExperimentConfig:
    """Parse the flat key=value document plus --set overrides (strict schema)."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        values[key] = _parse_scalar(key, raw, f"line {lineno}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = (p.strip() for p in item.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"--set: unknown key '{key}'")
        values[key] = _parse_scalar(key, raw, "--set")
    cfg = ExperimentConfig(command=command, values=values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    try:
        if cfg.command in ("solve", "sweep-rho", "sweep-temperature"):
            cfg.control()
            cfg.solver_settings()
        if cfg.command == "sweep-rho" and "rho_grid" not in v:
            raise ConfigError("sweep-rho needs a rho_grid")
        if cfg.command == "sweep-temperature" and "temperature_grid" not in v:
            raise ConfigError("sweep-temperature needs a temperature_grid")
        if cfg.command == "map-rhostar":
            for k in ("b0_grid", "alpha_grid", "temperature"):
                if k not in v:
                    raise ConfigError(f"map-rhostar needs '{k}'")
        if cfg.command == "compare" and "rho_train" not in v:
            if "rho_grid" in v:
                v["rho_train"] = float(v["rho_grid"][0])
            else:
                raise ConfigError("compare needs rho_train or a rho_grid")
        if cfg.command in ("simulate", "compare"):
            cfg.sim_config()
        if cfg.command == "compare":
            cfg.control()
        if cfg.command == "boundary" and "b0" not in v:
            raise ConfigError("boundary needs 'b0'")
    except (DomainError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _records_converged(records) -> bool:
    return all(rec.solution.converged for rec in records)


def _echo_settings(cfg: ExperimentConfig) -> dict:
    """Config values for the provenance block; file-system specifics (which
    would break byte-identity across output locations) stay out."""
    return {k: v for k, v in cfg.values.items() if k not in ("output", "jobs")}


def _comparison_payload(rec: ComparisonRecord) -> dict:
    return {
        "rho_train": rec.control.rho_train,
        "theory": {"R": rec.theory_R, "b": rec.theory_b, "a_bal": rec.theory_a_bal},
        "simulation": {
            "R_mean": rec.sim_R_mean, "R_se": rec.sim_R_se,
            "b_mean": rec.sim_b_mean, "b_se": rec.sim_b_se,
            "a_bal_mean": rec.sim_a_bal_mean, "a_bal_se": rec.sim_a_bal_se,
        },
        "n_seeds": rec.n_seeds, "seeds": list(rec.seeds),
        "tolerance": rec.tolerance, "within_tolerance": rec.within_tolerance,
    }


def dispatch(cfg: ExperimentConfig) -> int:
    out = cfg.get("output")
    out_path = Path(out) if out else None
    run_id = cfg.get("run_id") or f"seed-{cfg.get('seed', 0)}"
    all_converged = True

    if cfg.command == "boundary":
        dp, dm = boundary_density(cfg.values["b0"])
        print(f"boundary density (anomaly class):  {dp:.12g}")
        print(f"boundary density (normal class):   {dm:.12g}")
        print(f"ratio anomaly/normal:              {dp / dm:.12g}")
        if out_path:
            write_json({"b0": cfg.values["b0"], "density_plus": dp,
                        "density_minus": dm, "ratio": dp / dm}, out_path, run_id)
        return EXIT_OK

    if cfg.command == "solve":
        from .saddle import solve as solve_one
        from .experiments import _make_record, canonical_rho_tests
        cp = cfg.control()
        sol = solve_one(cp, cfg.solver_settings())
        rec = _make_record(sol, canonical_rho_tests(cp.b0, cfg.get("rho_test_extra", ())))
        op = sol.params
        print(f"converged={sol.converged} iterations={sol.iterations}")
        print(f"R={op.R:.12g} q={op.q:.12g} b={op.b:.12g}")
        print(f"R_hat={op.R_hat:.12g} q_hat={op.q_hat:.12g}")
        print(f"max residual={max(sol.residuals):.3e} free_energy={sol.free_energy:.12g}")
        if out_path:
            write_sweep_csv([rec], out_path)
        return EXIT_OK if sol.converged else EXIT_NONCONVERGED

    if cfg.command == "sweep-rho":
        records, peaks = run_rho_sweep(cfg.control(), cfg.values["rho_grid"],
                                       cfg.solver_settings(),
                                       cfg.get("rho_test_extra", ()))
        all_converged = _records_converged(records)
        if out_path:
            write_sweep_csv(records, out_path)
            write_json({"peaks": peaks, "grid": list(cfg.values["rho_grid"]),
                        "settings": _echo_settings(cfg)},
                       out_path.with_suffix(".summary.json"), run_id)
        log.info("rho sweep done: rho(R*)=%s", peaks.rho_at_max_R)
        return EXIT_OK if all_converged else EXIT_NONCONVERGED

    if cfg.command == "sweep-temperature":
        records, t_star = run_temperature_sweep(
            cfg.control(), cfg.values["temperature_grid"], cfg.solver_settings(),
            cfg.get("drop_fraction", 0.02), cfg.get("rho_test_extra", ()))
        all_converged = _records_converged(records)
        if out_path:
            write_sweep_csv(records, out_path)
            write_json({"T_star": t_star, "grid": list(cfg.values["temperature_grid"]),
                        "settings": _echo_settings(cfg)},
                       out_path.with_suffix(".summary.json"), run_id)
        log.info("temperature sweep done: T*=%s", t_star)
        return EXIT_OK if all_converged else EXIT_NONCONVERGED

    if cfg.command == "map-rhostar":
        rows = run_rhostar_map(cfg.values["b0_grid"], cfg.values["alpha_grid"],
                               cfg.values["temperature"], cfg.solver_settings(),
                               cfg.get("rho_grid"))
        ok = all(not r["failed"] for r in rows)
        if out_path:
            header = ["b0", "alpha", "T", "rho_at_max_R", "max_R",
                      "n_non_converged", "failed"]
            lines = [",".join(header)]
            for r in rows:
                lines.append(",".join(
                    "" if r[h] is None else
                    (format(r[h], ".17g") if isinstance(r[h], float) else
                     ("true" if r[h] is True else "false" if r[h] is False else str(r[h])))
                    for h in header))
            out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            write_json({"rows": rows, "settings": _echo_settings(cfg)},
                       out_path.with_suffix(".summary.json"), run_id)
        return EXIT_OK if ok else EXIT_NONCONVERGED

    if cfg.command == "simulate":
        res = run_simulation(cfg.sim_config())
        print(f"R_emp={res.overlap_R_emp:.6g} b_emp={res.bias_emp:.6g} "
              f"a_bal={res.metrics_emp.balanced_accuracy} auc={res.auc_emp} "
              f"epochs={res.epochs_run}")
        if out_path:
            payload = {"config": res.config, "overlap_R_emp": res.overlap_R_emp,
                       "bias_emp": res.bias_emp, "auc_emp": res.auc_emp,
                       "train_loss_final": res.train_loss_final,
                       "epochs_run": res.epochs_run,
                       "effective_temperature": res.effective_temperature,
                       "metrics": res.metrics_emp,
                       "loss_trajectory": [list(p) for p in res.loss_trajectory]}
            write_json(payload, out_path, run_id)
        return EXIT_OK

    if cfg.command == "compare":
        sim = cfg.sim_config()
        cp_base = cfg.control()
        grid = cfg.get("rho_grid") or (cp_base.rho_train,)
        payloads, ok = [], True
        for rho in grid:
            cp = ControlParams(b0=cp_base.b0, alpha=cp_base.alpha,
                               temperature=cp_base.temperature, rho_train=float(rho))
            sim_k = SimConfig(**{**sim.__dict__, "rho_train": float(rho)})
            rec = compare_theory_simulation(
                cp, sim_k, cfg.get("n_seeds", 20), cfg.solver_settings(),
                cfg.get("comparison_tolerance", 0.03))
            ok = ok and rec.within_tolerance
            payloads.append(_comparison_payload(rec))
            log.info("compare rho=%.3f: theory a_bal=%.4f sim=%.4f+-%.4f",
                     rho, rec.theory_a_bal, rec.sim_a_bal_mean, rec.sim_a_bal_se)
        if out_path:
            write_json({"comparisons": payloads, "settings": _echo_settings(cfg)}, out_path, run_id)
        print(f"within_tolerance={ok}")
        return EXIT_OK

    raise ConfigError(f"unhandled command {cfg.command}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="adperc", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", nargs="?", help="flat key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config value")
    parser.add_argument("--output", help="output data file path")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel worker bound (advisory)")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(stream=sys.stderr,
                        level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_CONFIG
    overrides = list(args.overrides)
    if args.output:
        overrides.append(f"output={args.output}")
    if args.jobs != 1:
        overrides.append(f"jobs={args.jobs}")
    try:
        cfg = parse_config(args.command, text, overrides)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        return dispatch(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
