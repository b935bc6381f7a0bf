"""Monte-Carlo teacher-student perceptron on Gaussian data.

Mirrors the analytic setup: a teacher hyperplane (w0, b0) with |w0|^2 = N
labels i.i.d. standard-normal inputs; the student is a spherical perceptron
trained by mini-batch SGD on the squared loss between a sigmoid output and
{0, 1} targets, with the hard constraint |w|^2 = N enforced by projection
after every step.  The SGD noise plays the role of the thermal noise of the
theory with effective temperature T ~ learning_rate / batch_size; an explicit
Langevin mode (isotropic Gaussian noise of variance 2 lr T per step) is also
available.

Class imbalance in the training set is imposed exactly, not by rejection:
a sample is S = y e0 + S_perp with e0 = w0/sqrt(N), S_perp an isotropic
Gaussian orthogonal to e0, and y drawn from the standard normal truncated to
y > -b0 (positives) or y < -b0 (negatives) by inverse CDF.  This stays exact
at intrinsic imbalances as extreme as rho0 ~ 3e-7, where rejection sampling
would be hopeless.

Randomness is counter-based and splittable (numpy Philox keyed through
SeedSequence.spawn), so teacher, data, training noise and test draws are
independent reproducible streams: identical SimConfig -> bit-identical
SimResult.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .metrics import MetricsReport
from .special import DomainError

__all__ = [
    "SimConfig",
    "SimResult",
    "TrainingSet",
    "TestSet",
    "DivergentLossError",
    "sample_training_set",
    "sample_test_set",
    "draw_teacher",
    "train_student",
    "empirical_metrics",
    "run_simulation",
]

PLATEAU_REL_TOL = 1e-5
PLATEAU_WINDOW = 10


class DivergentLossError(RuntimeError):
    """Training loss became non-finite; carries the trajectory so far."""

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class SimConfig:
    dimension_N: int
    alpha: float
    b0: float
    rho_train: float
    rho_test: float = 0.5
    test_size: int = 10000
    learning_rate: float = 0.5
    batch_size: int = 20
    epochs: int = 1000
    seed: int = 0
    dynamics: str = "sgd_sigmoid"          # or "langevin"
    threshold: float = 0.5
    langevin_temperature: float | None = None

    def __post_init__(self):
        if self.dimension_N < 2:
            raise DomainError("dimension_N must be >= 2")
        if self.alpha <= 0:
            raise DomainError("alpha must be > 0")
        if not 0.0 <= self.rho_train <= 1.0:
            raise DomainError("rho_train must lie in [0, 1]")
        if not 0.0 < self.rho_test < 1.0:
            raise DomainError("rho_test must lie in (0, 1)")
        if self.test_size < 1 or self.batch_size < 1 or self.epochs < 1:
            raise DomainError("test_size, batch_size and epochs must be positive")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be > 0")
        if not 0.0 < self.threshold < 1.0:
            raise DomainError("threshold must lie in (0, 1)")
        if self.dynamics not in ("sgd_sigmoid", "langevin"):
            raise DomainError(f"unknown dynamics {self.dynamics!r}")
        if self.dynamics == "langevin" and not (self.langevin_temperature or 0) > 0:
            raise DomainError("langevin dynamics needs langevin_temperature > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def n_train(self) -> int:
        return int(round(self.alpha * self.dimension_N))

    @property
    def n_positive(self) -> int:
        return int(round(self.n_train * self.rho_train))

    @property
    def n_negative(self) -> int:
        return int(round(self.n_train * (1.0 - self.rho_train)))

    @property
    def effective_temperature(self) -> float:
        if self.dynamics == "langevin":
            return float(self.langevin_temperature)
        return self.learning_rate / self.batch_size


@dataclass(frozen=True)
class TrainingSet:
    samples: np.ndarray        # (P, N)
    labels: np.ndarray         # (P,) in {0.0, 1.0}
    teacher_fields: np.ndarray  # (P,) teacher pre-activations w0.S/sqrt(N)
    teacher_w0: np.ndarray     # (N,), |w0|^2 = N


@dataclass(frozen=True)
class TestSet:
    __test__ = False        # not a pytest collection target

    samples: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class SimResult:
    overlap_R_emp: float
    bias_emp: float
    metrics_emp: MetricsReport
    auc_emp: float | None
    train_loss_final: float
    loss_trajectory: tuple[tuple[int, float], ...]
    epochs_run: int
    effective_temperature: float
    config: SimConfig


def draw_teacher(N: int, rng: np.random.Generator) -> np.ndarray:
    """Teacher weights: standard normal direction rescaled to |w0|^2 = N."""
    w0 = rng.standard_normal(N)
    return w0 * (math.sqrt(N) / np.linalg.norm(w0))


def _truncated_teacher_fields(n_pos: int, n_neg: int, b0: float,
                              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Teacher fields y for exactly n_pos positives (y >= -b0) and n_neg
    negatives (y <= -b0) via inverse CDF of the one-sided truncations."""
    c_plus = float(ndtr(b0))
    c_minus = 1.0 - c_plus
    u = 1.0 - rng.random(n_pos)          # in (0, 1]
    y_pos = -ndtri(u * c_plus)           # upper tail, mass c_plus
    u = 1.0 - rng.random(n_neg)
    y_neg = ndtri(u * c_minus)           # lower tail, mass c_minus
    return y_pos, y_neg


def _embed(fields: np.ndarray, e0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Samples with prescribed teacher fields: S = y e0 + (isotropic _|_ e0)."""
    n, N = len(fields), len(e0)
    g = rng.standard_normal((n, N))
    return g - np.outer(g @ e0, e0) + np.outer(fields, e0)


def sample_training_set(config: SimConfig, teacher_w0: np.ndarray,
                        rng: np.random.Generator) -> TrainingSet:
    """Exactly n_positive anomalies and n_negative normals from the
    class-conditioned Gaussian measure (exact construction, no rejection)."""
    N = config.dimension_N
    if teacher_w0.shape != (N,) or abs(teacher_w0 @ teacher_w0 / N - 1.0) > 1e-8:
        raise DomainError("teacher_w0 must have squared norm N")
    n_pos, n_neg = config.n_positive, config.n_negative
    if n_pos + n_neg == 0:
        raise DomainError("training set would be empty")
    e0 = teacher_w0 / math.sqrt(N)
    y_pos, y_neg = _truncated_teacher_fields(n_pos, n_neg, config.b0, rng)
    fields = np.concatenate([y_pos, y_neg])
    samples = _embed(fields, e0, rng)
    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    return TrainingSet(samples=samples, labels=labels, teacher_fields=fields,
                       teacher_w0=teacher_w0.copy())


def sample_test_set(config: SimConfig, teacher_w0: np.ndarray,
                    rng: np.random.Generator) -> TestSet:
    """Stratified test set at the configured rho_test."""
    n_pos = int(round(config.test_size * config.rho_test))
    n_neg = config.test_size - n_pos
    e0 = teacher_w0 / math.sqrt(config.dimension_N)
    y_pos, y_neg = _truncated_teacher_fields(n_pos, n_neg, config.b0, rng)
    samples = _embed(np.concatenate([y_pos, y_neg]), e0, rng)
    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    return TestSet(samples=samples, labels=labels)


def _rank_auc(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Mann-Whitney AUC with average-rank tie handling."""
    from scipy.stats import rankdata
    n_pos, n_neg = len(scores_pos), len(scores_neg)
    ranks = rankdata(np.concatenate([scores_pos, scores_neg]))
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def empirical_metrics(student_w: np.ndarray, student_b: float,
                      teacher_w0: np.ndarray, b0: float, test_set: TestSet,
                      threshold: float = 0.5) -> tuple[MetricsReport, float | None]:
    """Counts-based metrics plus rank-statistic AUC on a labelled test set.

    Prediction is positive when sigmoid(margin) > threshold, i.e. when the
    margin exceeds logit(threshold).  Ratio metrics with empty denominators
    (e.g. an absent test class) come back as None markers.
    """
    N = len(student_w)
    margins = test_set.samples @ student_w / math.sqrt(N) + student_b
    cut = math.log(threshold / (1.0 - threshold))
    pred_pos = margins > cut
    actual_pos = test_set.labels > 0.5
    n_pos = int(actual_pos.sum())
    n_neg = len(test_set.labels) - n_pos

    tp = int(np.count_nonzero(pred_pos & actual_pos))
    tn = int(np.count_nonzero(~pred_pos & ~actual_pos))
    fp = n_neg - tn
    fn = n_pos - tp

    r = tp / n_pos if n_pos else None
    s = tn / n_neg if n_neg else None
    total = n_pos + n_neg
    a = (tp + tn) / total
    a_bal = 0.5 * (r + s) if (r is not None and s is not None) else None
    p = tp / (tp + fp) if (tp + fp) else None
    f1 = 2 * p * r / (p + r) if (p is not None and r is not None and (p + r) > 0) else None
    p_neg = tn / (tn + fn) if (tn + fn) else None
    f1_neg = (2 * p_neg * s / (p_neg + s)
              if (p_neg is not None and s is not None and (p_neg + s) > 0) else None)
    rho_emp = n_pos / total
    rep = MetricsReport(recall=r, specificity=s, accuracy=a,
                        balanced_accuracy=a_bal, precision=p, f1=f1,
                        precision_neg=p_neg, f1_neg=f1_neg,
                        generalization_error=1.0 - a, rho_test=rho_emp)
    auc = _rank_auc(margins[actual_pos], margins[~actual_pos]) if n_pos and n_neg else None
    return rep, auc


def _full_loss(S32, w, b, labels32, sqrt_n):
    h = S32 @ w.astype(np.float32) / np.float32(sqrt_n) + np.float32(b)
    o = 1.0 / (1.0 + np.exp(-h))
    d = o - labels32
    return float(0.5 * np.mean(d.astype(np.float64) ** 2))


def train_student(config: SimConfig, data: TrainingSet,
                  rng: np.random.Generator,
                  student_w0: np.ndarray | None = None) -> SimResult:
    """Mini-batch SGD (batch-mean squared loss, sigmoid output) on the sphere.

    After every step the weights are rescaled back to |w|^2 = N.  Training
    stops at the epoch cap or when the full-train loss plateaus (relative
    change < 1e-5 across a 10-epoch window).  ``student_w0`` is a test hook
    for a prescribed initial weight vector (e.g. starting at the teacher).

    Data is staged in float32 for speed (one CPU-memory pass per step); the
    weight accumulator stays float64 and the spherical projection is exact to
    float64 round-off.
    """
    N = config.dimension_N
    P = len(data.labels)
    if P == 0:
        raise DomainError("training set is empty")
    sqrt_n = math.sqrt(N)
    S32 = np.ascontiguousarray(data.samples, dtype=np.float32)
    labels32 = data.labels.astype(np.float32)

    if student_w0 is None:
        w = rng.standard_normal(N)
        w *= sqrt_n / np.linalg.norm(w)
    else:
        w = np.asarray(student_w0, dtype=float).copy()
    b = 0.0

    lr = config.learning_rate
    bs = config.batch_size
    langevin = config.dynamics == "langevin"
    # One batch-mean gradient step advances Langevin time by dt = lr/P with
    # respect to the TOTAL training loss, so sampling exp(-loss_total/T)
    # needs per-step noise variance 2 (lr/P) T.  (With variance 2 lr T the
    # bias performs an unbounded random walk.)
    noise_scale = math.sqrt(2.0 * lr * config.effective_temperature / P) if langevin else 0.0

    idx = np.arange(P)
    trajectory: list[tuple[int, float]] = [(0, _full_loss(S32, w, b, labels32, sqrt_n))]
    inv = np.float32(1.0 / sqrt_n)
    epochs_run = 0
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(idx)
        w32 = w.astype(np.float32)
        b32 = np.float32(b)
        for k in range(0, P - bs + 1, bs):
            rows = idx[k:k + bs]
            Sb = S32[rows]
            h = Sb @ w32 * inv + b32
            o = 1.0 / (1.0 + np.exp(-h))
            gvec = (o - labels32[rows]) * o * (1.0 - o)
            gw = gvec @ Sb
            w -= (lr / (sqrt_n * bs)) * gw.astype(np.float64)
            b -= lr * float(gvec.mean())
            if langevin:
                w += noise_scale * rng.standard_normal(N)
                b += noise_scale * rng.standard_normal()
            w *= sqrt_n / np.linalg.norm(w)
            w32 = w.astype(np.float32)
            b32 = np.float32(b)
        loss = _full_loss(S32, w, b, labels32, sqrt_n)
        trajectory.append((epoch, loss))
        epochs_run = epoch
        if not math.isfinite(loss):
            raise DivergentLossError(f"training loss diverged at epoch {epoch}",
                                     tuple(trajectory))
        if epoch > PLATEAU_WINDOW:
            past = trajectory[-1 - PLATEAU_WINDOW][1]
            if abs(past - loss) < PLATEAU_REL_TOL * max(abs(past), 1e-30):
                break

    test_rng_seed = rng.integers(0, 2 ** 63 - 1, dtype=np.int64)
    test_rng = np.random.Generator(np.random.Philox(key=int(test_rng_seed)))
    test_set = sample_test_set(config, data.teacher_w0, test_rng)
    rep, auc = empirical_metrics(w, b, data.teacher_w0, config.b0, test_set,
                                 config.threshold)
    return SimResult(
        overlap_R_emp=float(w @ data.teacher_w0 / N),
        bias_emp=float(b),
        metrics_emp=rep,
        auc_emp=auc,
        train_loss_final=trajectory[-1][1],
        loss_trajectory=tuple(trajectory),
        epochs_run=epochs_run,
        effective_temperature=config.effective_temperature,
        config=config,
    )


def run_simulation(config: SimConfig) -> SimResult:
    """One fully seeded experiment: teacher, data, training, test evaluation."""
    streams = np.random.SeedSequence(config.seed).spawn(3)
    teacher_rng = np.random.Generator(np.random.Philox(streams[0]))
    data_rng = np.random.Generator(np.random.Philox(streams[1]))
    train_rng = np.random.Generator(np.random.Philox(streams[2]))
    w0 = draw_teacher(config.dimension_N, teacher_rng)
    data = sample_training_set(config, w0, data_rng)
    return train_student(config, data, train_rng)
