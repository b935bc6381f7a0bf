"""Replica-symmetric free-energy landscape of the imbalanced teacher-student
spherical perceptron.

The variational objective whose stationary point fixes the order parameters is

    Phi = G0(R, q, R_hat, q_hat) - alpha [rho G+ (R, q, b) + (1-rho) G-(R, q, b)] ,

where G+- are the class-conditional energetic terms (log Boltzmann factors of
the field averaged over the conditioned Gaussian measure) and G0 the entropic
(log-volume) term of students at fixed overlaps.  The field variable inside
both energetic integrals is

    u(y, t) = (t sqrt(q - R^2) - y R - b) / sqrt(1 - q) .

The Lagrange multiplier of the spherical constraint is eliminated through
lambda = 1/(1-q) - q_hat (the value the full stationarity conditions force),
so G0 here is a function of the four overlap parameters only.  A consequence
worth knowing: after elimination the q_hat terms of G0 cancel identically, so
Phi does not depend on q_hat at all.  q_hat still matters - it parameterises
the saddle-point update map - but only R, q, R_hat, b carry free-energy
gradients.

Sign conventions for the conjugate parameters follow from requiring
stationarity of Phi at the solver's fixed point; they are pinned by
finite-difference oracle tests, not taken on faith.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .special import (
    DomainError,
    QuadratureSpec,
    class_fractions,
    full_gaussian,
    gaussian_above,
    gaussian_below,
    gaussian_nodes,
    log_boltzmann_from_field,
)

__all__ = [
    "SingularityError",
    "ControlParams",
    "OrderParams",
    "integrand_u",
    "energetic_term_plus",
    "energetic_term_minus",
    "entropic_term",
    "variational_free_energy",
    "reduced_free_energy",
]

DEFAULT_SPEC = QuadratureSpec()


class SingularityError(DomainError):
    """q >= 1 (or another removable parameterisation singularity) was hit."""


@dataclass(frozen=True)
class ControlParams:
    """The theory's knobs: teacher bias, data abundance, temperature, train mix.

    ``beta = 1/temperature`` and the class masses c_plus/c_minus are derived
    and cached.  temperature = 0 is rejected: the equilibrium analysis holds
    for T > 0 and the ground-state limit is out of scope.
    """

    b0: float
    alpha: float
    temperature: float
    rho_train: float

    def __post_init__(self):
        for name in ("b0", "alpha", "temperature", "rho_train"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise DomainError(f"{name} must be a finite number, got {v!r}")
        if self.alpha <= 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")
        if self.temperature <= 0:
            raise DomainError(
                f"temperature must be > 0 (T = 0 is not supported), got {self.temperature}")
        if not 0.0 <= self.rho_train <= 1.0:
            raise DomainError(f"rho_train must lie in [0, 1], got {self.rho_train}")

    @cached_property
    def beta(self) -> float:
        return 1.0 / self.temperature

    @cached_property
    def c_plus(self) -> float:
        return class_fractions(self.b0)[0]

    @cached_property
    def c_minus(self) -> float:
        return class_fractions(self.b0)[1]


@dataclass(frozen=True)
class OrderParams:
    """Order parameters (R, q, R_hat, q_hat, b) of a (candidate) student state."""

    R: float
    q: float
    R_hat: float
    q_hat: float
    b: float

    def __post_init__(self):
        for name in ("R", "q", "R_hat", "q_hat", "b"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise DomainError(f"{name} must be a finite number, got {v!r}")
        if not 0.0 <= self.q < 1.0:
            raise SingularityError(f"q must lie in [0, 1), got {self.q}")
        if abs(self.R) > 1.0:
            raise DomainError(f"|R| must be <= 1, got {self.R}")
        if self.R * self.R > self.q + 1e-12:
            raise DomainError(
                f"R^2 = {self.R * self.R} exceeds q = {self.q}: sqrt(q - R^2) undefined")

    def replace(self, **kw) -> "OrderParams":
        fields = {"R": self.R, "q": self.q, "R_hat": self.R_hat,
                  "q_hat": self.q_hat, "b": self.b}
        fields.update(kw)
        return OrderParams(**fields)


def _sw(op: OrderParams) -> tuple[float, float]:
    """(sqrt(q - R^2), sqrt(1 - q)) with the q - R^2 floor at 0."""
    if op.q >= 1.0 - 1e-12:
        raise SingularityError(f"q = {op.q} too close to 1")
    s = math.sqrt(max(op.q - op.R * op.R, 0.0))
    w = math.sqrt(1.0 - op.q)
    return s, w


def integrand_u(y, t, op: OrderParams):
    """Field u(y, t) = (t sqrt(q - R^2) - y R - b) / sqrt(1 - q)."""
    s, w = _sw(op)
    return (np.asarray(t, dtype=float) * s - np.asarray(y, dtype=float) * op.R - op.b) / w


def energetic_term_plus(cp: ControlParams, op: OrderParams,
                        spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """G+ = -(1/c+) int_{-b0}^inf Dy int Dt log(e^-beta + (1-e^-beta) H(u))."""
    return _energetic_term(cp, op, spec, positive_class=True)


def energetic_term_minus(cp: ControlParams, op: OrderParams,
                         spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """G- = -(1/c-) int_-inf^{-b0} Dy int Dt log((e^-beta - 1) H(u) + 1).

    The log argument is evaluated as e^-beta + (1-e^-beta) H(-u), an exact
    rewriting that stays safe as the argument approaches 0 for large beta.
    """
    return _energetic_term(cp, op, spec, positive_class=False)


def _energetic_term(cp, op, spec, positive_class):
    s, w = _sw(op)
    weight = gaussian_above(-cp.b0) if positive_class else gaussian_below(-cp.b0)
    y, wy = gaussian_nodes(spec, weight, axis="y")
    t, wt = gaussian_nodes(spec, full_gaussian(), axis="t")
    u = (t[None, :] * s - y[:, None] * op.R - op.b) / w
    field = u if positive_class else -u
    vals = log_boltzmann_from_field(field, cp.beta)
    c = cp.c_plus if positive_class else cp.c_minus
    return float(-(wy @ vals @ wt) / c)


def entropic_term(op: OrderParams) -> float:
    """Entropic term G0 with the spherical multiplier eliminated.

    G0 = -R_hat R + q q_hat / 2 + lambda/2 - log(lambda + q_hat)/2
         + (R_hat^2 + q_hat) / (2 (lambda + q_hat)) - 1/2 ,
    lambda = 1/(1-q) - q_hat.
    """
    if op.q >= 1.0 - 1e-12:
        raise SingularityError(f"q = {op.q} too close to 1")
    lam_plus_qhat = 1.0 / (1.0 - op.q)
    lam = lam_plus_qhat - op.q_hat
    return (-op.R_hat * op.R
            + 0.5 * op.q * op.q_hat
            + 0.5 * lam
            - 0.5 * math.log(lam_plus_qhat)
            + 0.5 * (op.R_hat * op.R_hat + op.q_hat) / lam_plus_qhat
            - 0.5)


def variational_free_energy(cp: ControlParams, op: OrderParams,
                            spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """The variational objective Phi = G0 - alpha rho G+ - alpha (1-rho) G-.

    Class terms with zero weight (rho_train = 0 or 1) are skipped entirely, so
    degenerate single-class training sets are valid inputs.
    """
    val = entropic_term(op)
    if cp.rho_train > 0.0:
        val -= cp.alpha * cp.rho_train * energetic_term_plus(cp, op, spec)
    if cp.rho_train < 1.0:
        val -= cp.alpha * (1.0 - cp.rho_train) * energetic_term_minus(cp, op, spec)
    return val


def reduced_free_energy(cp: ControlParams, q: float, R: float, b: float,
                        spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Phi with the conjugates re-solved at their stationary values.

    Eliminating R_hat via its stationarity condition R_hat = R/(1-q) (q_hat
    drops out of G0 identically) collapses the entropic term to the classic
    spherical form

        G0* = [ (1 - R^2)/(1 - q) + log(1 - q) - 1 ] / 2 ,

    so the reduced objective depends only on (q, R, b).  Central differences
    of this function vanish at a converged saddle point; the solver test suite
    uses exactly that as its joint-stationarity oracle.
    """
    if q >= 1.0 - 1e-12:
        raise SingularityError(f"q = {q} too close to 1")
    g0 = 0.5 * ((1.0 - R * R) / (1.0 - q) + math.log(1.0 - q) - 1.0)
    op = OrderParams(R=R, q=q, R_hat=R / (1.0 - q), q_hat=0.0, b=b)
    val = g0
    if cp.rho_train > 0.0:
        val -= cp.alpha * cp.rho_train * energetic_term_plus(cp, op, spec)
    if cp.rho_train < 1.0:
        val -= cp.alpha * (1.0 - cp.rho_train) * energetic_term_minus(cp, op, spec)
    return val
