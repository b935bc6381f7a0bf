"""Damped fixed-point solver for the five coupled saddle-point equations.

State is (R, q, R_hat, q_hat, b).  One sweep of the update map:

1. conjugates from the current state,

       R_hat = alpha phi(b0)/sqrt(1-q) [ rho/c+ int Dt phi(v)/Dp(v)
                                       + (1-rho)/c- int Dt phi(v)/Dp(-v) ] ,
       q_hat = alpha/(2 pi (1-q)) [ rho/c+ II+ e^{-u^2}/Dp(u)^2
                                  + (1-rho)/c- II- e^{-u^2}/Dp(-u)^2 ] ,

   with Dp(x) = (e^beta - 1)^{-1} + H(x) > 0 and the boundary field
   v = (t sqrt(q-R^2) + R b0 - b)/sqrt(1-q), i.e. u evaluated at y = -b0.
   Both expressions are the exact derivatives of the energetic part of the
   free energy (R_hat = -dE/dR, q_hat = 2 dE/dq); the test suite verifies
   this by central finite differences, which is what pins the sign
   conventions and the boundary-field reading.

2. overlaps in closed form from the conjugates: with D = q_hat + R_hat^2,
   the unique root of q = D (1-q)^2 in [0, 1) is

       q = (2D + 1 - sqrt(4D + 1)) / (2D)     (q = 0 at D = 0),

   and R = R_hat (1 - q).  This guarantees q - R^2 = q_hat (1-q)^2 >= 0
   exactly and removes one source of fixed-point oscillation.

3. the bias from a bracketed 1-D root-find on the stationarity residual

       0 = rho/c+ II+ e^{-u^2/2}/Dp(u) - (1-rho)/c- II- e^{-u^2/2}/Dp(-u) ,

   which avoids the ill-conditioned fixed-point form of the bias equation.

4. damping x <- (1-eta) x + eta x_candidate on all updated parameters.

The minus-class denominators never cross zero: (e^-beta - 1)^{-1} + H(u) is
identically -((e^beta - 1)^{-1} + H(-u)), so every integrand reduces to the
strictly positive Dp form.  All ratios are assembled in log space, which keeps
them finite and bounded for beta up to ~1e3 (there is no separate "large beta
branch" to switch to; the log-space form is already the stable algebraic
form).  A magnitude cap at 1e12 remains as a guard and logs if it ever binds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr

from .landscape import ControlParams, OrderParams, SingularityError, _sw
from .special import (
    DomainError,
    QuadratureSpec,
    SQRT2PI,
    full_gaussian,
    gaussian_above,
    gaussian_below,
    gaussian_nodes,
    log_expm1,
    norm_pdf,
)

__all__ = [
    "SolverSettings",
    "SaddleSolution",
    "BracketError",
    "update_conjugates",
    "update_overlaps",
    "bias_residual",
    "solve",
    "continuation_sweep",
    "default_init",
]

log = logging.getLogger(__name__)

MAGNITUDE_CAP = 1e12


class BracketError(RuntimeError):
    """No sign change found for the bias residual, even after widening."""


@dataclass(frozen=True)
class SolverSettings:
    damping: float = 0.3
    tolerance: float = 1e-9
    max_iterations: int = 3000
    bias_bracket_halfwidth: float | None = None   # default: max(5, 3|b0|)
    floor_epsilon: float = 1e-12
    mode: str = "learned_bias"                    # or "fixed_bias"
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise DomainError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.tolerance >= 1e-12:
            raise DomainError(f"tolerance must be >= 1e-12, got {self.tolerance}")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be positive")
        if self.bias_bracket_halfwidth is not None and self.bias_bracket_halfwidth <= 0:
            raise DomainError("bias_bracket_halfwidth must be > 0")
        if self.floor_epsilon <= 0:
            raise DomainError("floor_epsilon must be > 0")
        if self.mode not in ("learned_bias", "fixed_bias"):
            raise DomainError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class SaddleSolution:
    params: OrderParams
    residuals: tuple[float, float, float, float, float]
    free_energy: float
    iterations: int
    converged: bool
    control: ControlParams
    init: OrderParams


def default_init(cp: ControlParams) -> OrderParams:
    """Mildly informative start inside the feasible region."""
    return OrderParams(R=0.1, q=0.2, R_hat=0.1, q_hat=0.2, b=cp.b0 / 2.0)


# ---------------------------------------------------------------------------
# stable integrand blocks
# ---------------------------------------------------------------------------

def _log_Dp(x, beta: float, lem1: float):
    """log[(e^beta - 1)^{-1} + H(x)]; lem1 = log(e^beta - 1)."""
    return np.logaddexp(-lem1, log_ndtr(-np.asarray(x, dtype=float)))


def _capped_exp(logvals):
    out = np.exp(logvals)
    if np.any(out > MAGNITUDE_CAP):
        log.warning("saddle integrand exceeded the %g magnitude cap; clamping", MAGNITUDE_CAP)
        out = np.minimum(out, MAGNITUDE_CAP)
    return out


def _u_grid(y, t, R, q, b, s, w):
    return (t[None, :] * s - y[:, None] * R - b) / w


# ---------------------------------------------------------------------------
# the three update operations
# ---------------------------------------------------------------------------

def update_conjugates(cp: ControlParams, op: OrderParams,
                      spec: QuadratureSpec | None = None) -> tuple[float, float]:
    """(R_hat, q_hat) evaluated from the current (R, q, b)."""
    spec = spec or QuadratureSpec()
    s, w = _sw(op)
    beta = cp.beta
    lem1 = log_expm1(beta)
    t, wt = gaussian_nodes(spec, full_gaussian(), axis="t")

    # R_hat: single Dt integral of the boundary field v = u(y = -b0)
    v = (t * s + op.R * cp.b0 - op.b) / w
    log_num = -0.5 * v * v - math.log(SQRT2PI)
    r_acc = 0.0
    if cp.rho_train > 0.0:
        r_acc += cp.rho_train / cp.c_plus * float(
            wt @ _capped_exp(log_num - _log_Dp(v, beta, lem1)))
    if cp.rho_train < 1.0:
        r_acc += (1.0 - cp.rho_train) / cp.c_minus * float(
            wt @ _capped_exp(log_num - _log_Dp(-v, beta, lem1)))
    R_hat = cp.alpha * norm_pdf(cp.b0) / w * r_acc

    # q_hat: double integrals with squared denominators
    q_acc = 0.0
    if cp.rho_train > 0.0:
        y, wy = gaussian_nodes(spec, gaussian_above(-cp.b0), axis="y")
        u = _u_grid(y, t, op.R, op.q, op.b, s, w)
        q_acc += cp.rho_train / cp.c_plus * float(
            wy @ _capped_exp(-u * u - 2.0 * _log_Dp(u, beta, lem1)) @ wt)
    if cp.rho_train < 1.0:
        y, wy = gaussian_nodes(spec, gaussian_below(-cp.b0), axis="y")
        u = _u_grid(y, t, op.R, op.q, op.b, s, w)
        q_acc += (1.0 - cp.rho_train) / cp.c_minus * float(
            wy @ _capped_exp(-u * u - 2.0 * _log_Dp(-u, beta, lem1)) @ wt)
    q_hat = cp.alpha / (2.0 * math.pi * (1.0 - op.q)) * q_acc
    return R_hat, q_hat


def update_overlaps(R_hat: float, q_hat: float) -> tuple[float, float]:
    """Closed-form (R, q) from the conjugates; exact on valid inputs.

    The root of q = D (1-q)^2 is taken in the rationalised form
    2D / (2D + 1 + sqrt(4D + 1)), which is cancellation-free for D -> 0
    (where the textbook form (2D+1-sqrt(4D+1))/(2D) loses all digits).
    """
    if q_hat < 0:
        raise DomainError(f"q_hat must be >= 0, got {q_hat}")
    D = q_hat + R_hat * R_hat
    if D == 0.0:
        return 0.0, 0.0
    q = 2.0 * D / (2.0 * D + 1.0 + math.sqrt(4.0 * D + 1.0))
    R = R_hat * (1.0 - q)
    return R, q


def bias_residual(cp: ControlParams, op: OrderParams,
                  spec: QuadratureSpec | None = None) -> float:
    """Right-hand side of the bias stationarity equation at op.b.

    Positive first (anomaly) term, negative second term; equals
    sqrt(2 pi (1-q)) / alpha times the b-derivative of the variational
    objective, and vanishes at the stationary bias.
    """
    spec = spec or QuadratureSpec()
    s, w = _sw(op)
    beta = cp.beta
    lem1 = log_expm1(beta)
    t, wt = gaussian_nodes(spec, full_gaussian(), axis="t")
    acc = 0.0
    if cp.rho_train > 0.0:
        y, wy = gaussian_nodes(spec, gaussian_above(-cp.b0), axis="y")
        u = _u_grid(y, t, op.R, op.q, op.b, s, w)
        acc += cp.rho_train / cp.c_plus * float(
            wy @ _capped_exp(-0.5 * u * u - _log_Dp(u, beta, lem1)) @ wt)
    if cp.rho_train < 1.0:
        y, wy = gaussian_nodes(spec, gaussian_below(-cp.b0), axis="y")
        u = _u_grid(y, t, op.R, op.q, op.b, s, w)
        acc -= (1.0 - cp.rho_train) / cp.c_minus * float(
            wy @ _capped_exp(-0.5 * u * u - _log_Dp(-u, beta, lem1)) @ wt)
    return acc


def _solve_bias(cp, R, q, b_prev, settings) -> float:
    """Bracketed root of the bias residual around the previous bias.

    The bracket ladder starts local (the root rarely moves far between
    sweeps) and widens geometrically: near-single-class mixes push the
    stationary bias to ~ -sqrt(2 log odds)/sqrt(1-q), far beyond any fixed
    halfwidth.  A truly rootless residual (rho_train in {0, 1}) still fails
    every stage and raises.
    """
    W = settings.bias_bracket_halfwidth
    if W is None:
        W = max(5.0, 3.0 * abs(cp.b0))
    probe = OrderParams(R=R, q=q, R_hat=0.0, q_hat=0.0, b=b_prev)

    def f(bb):
        return bias_residual(cp, probe.replace(b=bb), settings.quadrature)

    widths = (0.25, W, 2.0 * W, 4.0 * W, 8.0 * W)
    for width in widths:
        lo, hi = b_prev - width, b_prev + width
        flo, fhi = f(lo), f(hi)
        if flo == 0.0:
            return lo
        if fhi == 0.0:
            return hi
        if flo * fhi < 0.0:
            return float(brentq(f, lo, hi, xtol=1e-13, rtol=8.9e-16))
    raise BracketError(
        f"no sign change of the bias residual in "
        f"[{b_prev - widths[-1]}, {b_prev + widths[-1]}]")


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------

def _residuals(cp: ControlParams, op: OrderParams, spec: QuadratureSpec,
               fixed_bias: bool) -> tuple[float, ...]:
    """Absolute residuals of the five equations at op, given quadrature spec."""
    R_hat_f, q_hat_f = update_conjugates(cp, op, spec)
    res1 = abs(op.R - op.R_hat * (1.0 - op.q))
    res2 = abs(op.q - (op.q_hat + op.R_hat ** 2) * (1.0 - op.q) ** 2)
    res3 = abs(op.R_hat - R_hat_f)
    res4 = abs(op.q_hat - q_hat_f)
    res5 = 0.0 if fixed_bias else abs(bias_residual(cp, op, spec))
    return (res1, res2, res3, res4, res5)


def solve(cp: ControlParams, settings: SolverSettings | None = None,
          init: OrderParams | None = None) -> SaddleSolution:
    """Damped fixed-point iteration until the max-norm update drops below
    tolerance.  Returns converged=False (with diagnostics) rather than raising
    on non-convergence.  Residuals in the result are recomputed with doubled
    node counts.
    """
    settings = settings or SolverSettings()
    init = init or default_init(cp)
    fixed_bias = settings.mode == "fixed_bias"
    if fixed_bias:
        init = init.replace(b=cp.b0)

    op = init
    eta = settings.damping
    prev_update = math.inf
    grew = 0
    iterations = 0
    converged = False

    for iterations in range(1, settings.max_iterations + 1):
        R_hat_c, q_hat_c = update_conjugates(cp, op, settings.quadrature)
        R_c, q_c = update_overlaps(R_hat_c, q_hat_c)
        q_c = min(q_c, 1.0 - settings.floor_epsilon)
        b_c = op.b if fixed_bias else _solve_bias(cp, R_c, q_c, op.b, settings)

        update = max(abs(R_c - op.R), abs(q_c - op.q), abs(R_hat_c - op.R_hat),
                     abs(q_hat_c - op.q_hat), abs(b_c - op.b))
        op = OrderParams(
            R=(1 - eta) * op.R + eta * R_c,
            q=(1 - eta) * op.q + eta * q_c,
            R_hat=(1 - eta) * op.R_hat + eta * R_hat_c,
            q_hat=(1 - eta) * op.q_hat + eta * q_hat_c,
            b=(1 - eta) * op.b + eta * b_c,
        )
        if update < settings.tolerance:
            converged = True
            break
        if update > prev_update:
            grew += 1
            if grew >= 5 and eta > 0.05:
                eta = max(0.05, eta / 2.0)
                grew = 0
                log.debug("update norm grew 5x in a row; damping lowered to %g", eta)
        else:
            grew = 0
        prev_update = update

    fine = settings.quadrature.doubled()
    residuals = _residuals(cp, op, fine, fixed_bias)
    from .landscape import variational_free_energy
    f_val = variational_free_energy(cp, op, fine)
    return SaddleSolution(params=op, residuals=residuals, free_energy=f_val,
                          iterations=iterations, converged=converged,
                          control=cp, init=init)


def continuation_sweep(cp_template: ControlParams, axis: str,
                       grid: Sequence[float], settings: SolverSettings | None = None,
                       init: OrderParams | None = None) -> list[SaddleSolution]:
    """Solve along a parameter grid, warm-starting from the previous solution.

    ``axis`` is one of rho_train | temperature | alpha | b0.  Non-converged
    points are recorded and the sweep continues from them regardless.
    """
    if axis not in ("rho_train", "temperature", "alpha", "b0"):
        raise DomainError(f"unknown sweep axis {axis!r}")
    grid = [float(g) for g in grid]
    if len(grid) == 0:
        raise DomainError("sweep grid must be non-empty")
    diffs = np.diff(grid)
    if len(grid) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise DomainError("sweep grid must be strictly monotone")

    settings = settings or SolverSettings()
    base = {"b0": cp_template.b0, "alpha": cp_template.alpha,
            "temperature": cp_template.temperature, "rho_train": cp_template.rho_train}
    out: list[SaddleSolution] = []
    warm = init
    for value in grid:
        params = dict(base)
        params[axis] = value
        sol = solve(ControlParams(**params), settings, warm)
        out.append(sol)
        warm = sol.params
    return out
