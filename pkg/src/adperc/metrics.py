"""Closed-form test/train performance metrics of a trained student.

Everything here is a deterministic function of (R, b) - the overlap and bias
of the student - plus the teacher bias b0 and the test mix rho_test.  The two
class-conditional error masses are 1-D Gaussian integrals

    I+ = int_{-b0}^inf Dy (1 - H(u')),   I- = int_-inf^{-b0} Dy H(u'),
    u' = (-y R - b) / sqrt(1 - R^2),

from which recall r = 1 - I+/c+ and specificity s = 1 - I-/c-.  The remaining
metrics are exact algebraic combinations of (r, s, rho_test); their defining
identities (a = rho r + (1-rho) s, a_bal = (r+s)/2, eps_g = 1-a, harmonic-mean
F1) hold to machine precision by construction.

Ratios whose denominator is exactly zero (e.g. precision with r = 0, s = 1)
are reported as None - an explicit "undefined" marker that serialises to an
empty CSV field - never as NaN or a silently substituted 0/1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .landscape import ControlParams, OrderParams, _sw
from .special import (
    DomainError,
    QuadratureSpec,
    class_fractions,
    full_gaussian,
    gauss_tail_H,
    gaussian_above,
    gaussian_below,
    gaussian_nodes,
    log_expm1,
    log_gauss_tail_H,
    norm_pdf,
)

__all__ = [
    "MetricsReport",
    "METRIC_COLUMNS",
    "class_error_integrals",
    "metrics_from_rates",
    "report",
    "train_error",
    "boundary_density",
]

METRIC_COLUMNS = ("rho_test", "r", "s", "a", "a_bal", "p", "f1", "p_neg", "f1_neg", "eps_g")


@dataclass(frozen=True)
class MetricsReport:
    recall: float
    specificity: float
    accuracy: float
    balanced_accuracy: float
    precision: float | None
    f1: float | None
    precision_neg: float | None
    f1_neg: float | None
    generalization_error: float
    rho_test: float

    def to_csv_fields(self) -> list[str]:
        """Values in METRIC_COLUMNS order; undefined metrics become ''."""
        vals = (self.rho_test, self.recall, self.specificity, self.accuracy,
                self.balanced_accuracy, self.precision, self.f1,
                self.precision_neg, self.f1_neg, self.generalization_error)
        return ["" if v is None else format(v, ".17g") for v in vals]


def class_error_integrals(R: float, b: float, b0: float,
                          spec: QuadratureSpec | None = None) -> tuple[float, float]:
    """(I+, I-): class-conditional misclassification masses.

    |R| = 1 is handled analytically; the student field then lies entirely
    along the teacher axis and I+- reduce to the mass of sign disagreement
    between (y + b0) and (y sign(R) + b).
    """
    for name, v in (("R", R), ("b", b), ("b0", b0)):
        if not math.isfinite(v):
            raise DomainError(f"{name} must be finite, got {v!r}")
    if abs(R) > 1.0:
        raise DomainError(f"|R| must be <= 1, got {R}")
    spec = spec or QuadratureSpec()
    if abs(R) == 1.0:
        if R > 0:
            # prediction sign(y + b): disagreement band between -b0 and -b
            i_plus = max(0.0, gauss_tail_H(-b0) - gauss_tail_H(-b))
            i_minus = max(0.0, gauss_tail_H(-b) - gauss_tail_H(-b0))
        else:
            # prediction sign(-y + b): positive iff y < b
            i_plus = gauss_tail_H(max(-b0, b))
            i_minus = 1.0 - gauss_tail_H(min(-b0, b))
        return i_plus, i_minus

    den = math.sqrt(1.0 - R * R)

    y_p, w_p = gaussian_nodes(spec, gaussian_above(-b0), axis="y")
    up = (-y_p * R - b) / den
    i_plus = float(w_p @ (1.0 - gauss_tail_H(up)))

    y_m, w_m = gaussian_nodes(spec, gaussian_below(-b0), axis="y")
    um = (-y_m * R - b) / den
    i_minus = float(w_m @ gauss_tail_H(um))
    return i_plus, i_minus


def _safe_ratio(num: float, den: float) -> float | None:
    return None if den == 0.0 else num / den


def metrics_from_rates(r: float, s: float, rho_test: float) -> MetricsReport:
    """Assemble the full report from (recall, specificity, rho_test).

    Exact algebra only; used by both the closed-form theory path and as the
    single place where the undefined-marker convention lives.
    """
    if not 0.0 < rho_test < 1.0:
        raise DomainError(f"rho_test must lie in (0, 1), got {rho_test}")
    a = rho_test * r + (1.0 - rho_test) * s
    a_bal = 0.5 * (r + s)
    p = _safe_ratio(r, r + (1.0 - rho_test) / rho_test * (1.0 - s))
    f1 = None if p is None else _safe_ratio(2.0 * p * r, p + r)
    p_neg = _safe_ratio(s, s + rho_test / (1.0 - rho_test) * (1.0 - r))
    f1_neg = None if p_neg is None else _safe_ratio(2.0 * p_neg * s, p_neg + s)
    return MetricsReport(recall=r, specificity=s, accuracy=a,
                         balanced_accuracy=a_bal, precision=p, f1=f1,
                         precision_neg=p_neg, f1_neg=f1_neg,
                         generalization_error=1.0 - a, rho_test=rho_test)


def report(R: float, b: float, b0: float, rho_test: float,
           spec: QuadratureSpec | None = None) -> MetricsReport:
    """All closed-form test metrics at the given student state and test mix."""
    c_plus, c_minus = class_fractions(b0)
    i_plus, i_minus = class_error_integrals(R, b, b0, spec)
    r = min(1.0, max(0.0, 1.0 - i_plus / c_plus))
    s = min(1.0, max(0.0, 1.0 - i_minus / c_minus))
    return metrics_from_rates(r, s, rho_test)


def train_error(cp: ControlParams, op: OrderParams,
                spec: QuadratureSpec | None = None) -> float:
    """Mean train error per sample, eps_t in [0, 1].

    eps_t = rho dG+/dbeta + (1-rho) dG-/dbeta, i.e. the thermal average of the
    misclassification fraction on the training measure:

        eps_t = rho/c+  II+  (1 - H(u)) / (1 + (e^beta - 1) H(u))
              + (1-rho)/c- II- H(u) / (e^beta + (1 - e^beta) H(u)) .

    Both integrands are evaluated in log space (they lie in [0, 1]).
    """
    spec = spec or QuadratureSpec()
    s, w = _sw(op)
    beta = cp.beta
    lem1 = log_expm1(beta)
    t, wt = gaussian_nodes(spec, full_gaussian(), axis="t")
    acc = 0.0
    if cp.rho_train > 0.0:
        y, wy = gaussian_nodes(spec, gaussian_above(-cp.b0), axis="y")
        u = (t[None, :] * s - y[:, None] * op.R - op.b) / w
        # (1-H(u))/(1+(e^beta-1)H(u)) = exp(-lem1 + log H(-u) - log[(e^beta-1)^-1 + H(u)])
        vals = np.exp(-lem1 + log_gauss_tail_H(-u)
                      - np.logaddexp(-lem1, log_gauss_tail_H(u)))
        acc += cp.rho_train / cp.c_plus * float(wy @ vals @ wt)
    if cp.rho_train < 1.0:
        y, wy = gaussian_nodes(spec, gaussian_below(-cp.b0), axis="y")
        u = (t[None, :] * s - y[:, None] * op.R - op.b) / w
        # H(u)/(e^beta + (1-e^beta)H(u)) = H(u) / (e^beta H(-u) + H(u))
        lh, lhm = log_gauss_tail_H(u), log_gauss_tail_H(-u)
        vals = np.exp(-beta + lh - np.logaddexp(lhm, lh - beta))
        acc += (1.0 - cp.rho_train) / cp.c_minus * float(wy @ vals @ wt)
    return acc


def boundary_density(b0: float) -> tuple[float, float]:
    """Class-conditional densities of samples on the teacher hyperplane.

    (phi(b0)/c+, phi(b0)/c-): the slab-probability densities obtained in the
    zero-width limit, normalised per class.  Their ratio is c-/c+; both are
    independent of the ambient dimension.
    """
    c_plus, c_minus = class_fractions(b0)
    pdf = norm_pdf(b0)
    return pdf / c_plus, pdf / c_minus
