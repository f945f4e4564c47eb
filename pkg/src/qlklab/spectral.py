"""Truncated Hilbert-space arithmetic for the diagonal spectral model.

Everything downstream works on an N-mode truncation in which the drift
generator, the noise covariance and the trace-class perturbation are
simultaneously diagonal in one orthonormal basis.  Vectors are plain numpy
arrays of mode coordinates (the H-norm is the Euclidean norm); diagonal
operators carry their operator / Hilbert-Schmidt / trace norms explicitly.

Function-space norms (sup norms, Holder seminorms) are estimated on the
closed ball of radius ``ball_radius``: desk-scale field surrogates are only
trusted on a compact set, so every report carries the radius it used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .util import NumericalError, decay_exponent

HVector = np.ndarray  # mode coordinates; ||x||_H == euclidean norm


@dataclass(frozen=True)
class SpectralModel:
    """N-mode truncation of the pair (A, Q).

    alpha[i] are the eigenvalues of -A (strictly positive, non-decreasing),
    gamma[i] the eigenvalues of Q (strictly positive).  ``ball_radius`` is
    the radius of the ball on which field surrogates live.
    """

    alpha: np.ndarray
    gamma: np.ndarray
    ball_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        if self.alpha.ndim != 1 or self.gamma.shape != self.alpha.shape:
            raise ValueError("alpha and gamma must be 1-d arrays of equal length")
        if np.any(self.alpha <= 0):
            raise ValueError("alpha must be strictly positive")
        if np.any(np.diff(self.alpha) < 0):
            raise ValueError("alpha must be non-decreasing")
        if np.any(self.gamma <= 0):
            raise ValueError("gamma must be strictly positive")
        if not self.ball_radius > 0:
            raise ValueError("ball_radius must be positive")

    @property
    def n_modes(self) -> int:
        return self.alpha.size

    def trace_sum(self, n: int | None = None) -> float:
        """Partial sum of gamma_i / alpha_i (finiteness is the trace-class test)."""
        n = self.n_modes if n is None else min(n, self.n_modes)
        return float(np.sum(self.gamma[:n] / self.alpha[:n]))

    def semigroup_diag(self, t: float) -> np.ndarray:
        """Eigenvalues of e^{tA}."""
        return np.exp(-self.alpha * t)

    def stationary_variance(self) -> np.ndarray:
        """Per-mode variance of the invariant OU measure, gamma/(2 alpha)."""
        return self.gamma / (2.0 * self.alpha)


def laplacian_preset(n_modes: int = 8, ball_radius: float = 1.0) -> SpectralModel:
    """alpha_i = i^2, gamma_i = 1: the interval-Laplacian spectrum with white Q."""
    i = np.arange(1, n_modes + 1, dtype=float)
    return SpectralModel(alpha=i**2, gamma=np.ones(n_modes), ball_radius=ball_radius)


def constant_alpha_preset(n_modes: int = 8, ball_radius: float = 1.0) -> SpectralModel:
    """Degenerate spectrum alpha_i = 1: the trace sum grows linearly in N."""
    return SpectralModel(
        alpha=np.ones(n_modes), gamma=np.ones(n_modes), ball_radius=ball_radius
    )


MODEL_PRESETS = {
    "laplacian": laplacian_preset,
    "constant_alpha": constant_alpha_preset,
}


@dataclass(frozen=True)
class DiagonalOperator:
    """Diagonal operator on the truncated space."""

    diag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "diag", np.asarray(self.diag, dtype=float))

    @property
    def operator_norm(self) -> float:
        return float(np.max(np.abs(self.diag))) if self.diag.size else 0.0

    @property
    def hs_norm(self) -> float:
        return float(np.linalg.norm(self.diag))

    @property
    def trace_norm(self) -> float:
        return float(np.sum(np.abs(self.diag)))

    @property
    def trace(self) -> float:
        return float(np.sum(self.diag))

    def apply(self, x: HVector) -> HVector:
        return self.diag * x

    def __matmul__(self, other: "DiagonalOperator") -> "DiagonalOperator":
        return DiagonalOperator(self.diag * other.diag)


@dataclass(frozen=True)
class GaussianMeasure:
    """Centered-or-shifted Gaussian with diagonal covariance."""

    mean: HVector
    cov_diag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov_diag", np.asarray(self.cov_diag, dtype=float))
        if np.any(self.cov_diag < 0):
            raise ValueError("cov_diag must be non-negative")
        if self.mean.shape != self.cov_diag.shape:
            raise ValueError("mean and cov_diag shapes differ")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.mean.size))
        return self.mean[None, :] + np.sqrt(self.cov_diag)[None, :] * z


def qt_covariance(model: SpectralModel, t: float, epsilon: float = 1.0) -> DiagonalOperator:
    """Covariance of the time-t OU increment, eps * gamma_i (1-e^{-2 a_i t})/(2 a_i)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    diag = epsilon * self_convolved_variance(model, t)
    return DiagonalOperator(diag)


def self_convolved_variance(model: SpectralModel, t: float) -> np.ndarray:
    # -expm1(-2 a t) = 1 - e^{-2 a t}, accurate for small t
    return model.gamma * (-np.expm1(-2.0 * model.alpha * t)) / (2.0 * model.alpha)


def lambda_t(model: SpectralModel, t: float) -> DiagonalOperator:
    """The smoothing operator Q_t^{-1/2} e^{tA} (defined for t > 0)."""
    if t <= 0:
        raise ValueError("lambda_t requires t > 0")
    v = self_convolved_variance(model, t)
    return DiagonalOperator(np.exp(-model.alpha * t) / np.sqrt(v))


def lambda_qa_hs_norm(model: SpectralModel, t: float) -> float:
    """Hilbert-Schmidt norm of Lambda_t Q e^{tA*} (closed form in the diagonal model)."""
    if t <= 0:
        raise ValueError("t must be positive")
    lam = lambda_t(model, t).diag
    return float(np.linalg.norm(lam * model.gamma * np.exp(-model.alpha * t)))


def kappa_probe(model: SpectralModel, t: float, theta: float) -> float:
    """Mixed smoothing quantity ||Lambda_t Q e^{tA*}||_HS * ||Lambda_t||^(1-theta)."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    return lambda_qa_hs_norm(model, t) * lambda_t(model, t).operator_norm ** (1.0 - theta)


def kappa_exponent(model: SpectralModel, theta: float, t_grid: np.ndarray) -> float:
    """Fitted p with kappa_theta(t) ~ t^(-p) on the grid; p < 1 is the usable regime."""
    vals = np.array([kappa_probe(model, t, theta) for t in t_grid])
    return decay_exponent(np.asarray(t_grid, dtype=float), vals)


# --------------------------------------------------------------------------
# Ball sampling and norm estimators
# --------------------------------------------------------------------------


def ball_points(
    model: SpectralModel, n: int, rng: np.random.Generator, radius: float | None = None
) -> np.ndarray:
    """n points uniform in the ball (rows are points)."""
    r = model.ball_radius if radius is None else radius
    d = model.n_modes
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    u = rng.random(n) ** (1.0 / d)
    return r * u[:, None] * z


def _pair_schedule(
    model: SpectralModel, n_pairs: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic pair sample; the first k pairs are identical for every k."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    x = ball_points(model, n_pairs, rng)
    y = ball_points(model, n_pairs, rng)
    # keep pairs distinct: nudge coincident partners toward the origin
    same = np.linalg.norm(x - y, axis=1) < 1e-12
    y[same] *= 0.5
    y[same & (np.linalg.norm(x, axis=1) < 1e-12)] += model.ball_radius * 0.1
    return x, y


@dataclass(frozen=True)
class HolderReport:
    theta: float
    sup_norm: float
    holder_seminorm_est: float
    n_pairs: int
    ball_radius: float


def holder_seminorm(
    field,
    theta: float,
    model: SpectralModel,
    n_pairs: int = 2000,
    seed: int = 7,
) -> HolderReport:
    """Sampled-pair lower bound of sup |f(x)-f(y)| / ||x-y||^theta on the ball.

    ``field`` is either a callable on batches of points or an object with a
    batched ``value``; see :mod:`qlklab.fields`.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if n_pairs < 2:
        raise ValueError("need at least 2 pairs")
    value = field.value if hasattr(field, "value") else field
    x, y = _pair_schedule(model, n_pairs, seed)
    fx = np.asarray(value(x), dtype=float)
    fy = np.asarray(value(y), dtype=float)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
        raise NumericalError("field returned non-finite values on the ball")
    dist = np.linalg.norm(x - y, axis=1)
    ratios = np.abs(fx - fy) / dist**theta
    sup = float(max(np.max(np.abs(fx)), np.max(np.abs(fy))))
    return HolderReport(
        theta=theta,
        sup_norm=sup,
        holder_seminorm_est=float(np.max(ratios)),
        n_pairs=n_pairs,
        ball_radius=model.ball_radius,
    )


@dataclass
class NormEstimate:
    """Ball-restricted estimates of the norms entering the interpolation bounds."""

    sup: float
    sup_grad: float
    sup_hess: float
    holder: float
    holder_grad: float
    holder_hess: float
    theta: float
    n_points: int
    n_pairs: int


def estimate_norms(
    field,
    theta: float,
    model: SpectralModel,
    n_points: int = 1500,
    n_pairs: int = 1500,
    seed: int = 7,
) -> NormEstimate:
    """Monte-Carlo lower bounds for sup norms and Holder seminorms of f, Df, D^2f.

    Sup norms are maximised over the union of the dense cloud and every pair
    endpoint, so each seminorm ratio is checked against sup norms that have
    seen its own sample points.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed + 1)))
    cloud = ball_points(model, n_points, rng)
    xa, xb = _pair_schedule(model, n_pairs, seed)
    pts = np.concatenate([cloud, xa, xb], axis=0)

    vals = np.asarray(field.value(pts), dtype=float)
    grads = np.asarray(field.grad(pts), dtype=float)  # (m, d)
    hesses = np.asarray(field.hess(pts), dtype=float)  # (m, d, d)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("field values not finite")

    hess_ops = np.linalg.norm(hesses, ord=2, axis=(1, 2))
    na, nb = n_points, n_points + n_pairs
    dist = np.linalg.norm(xa - xb, axis=1)
    dth = dist**theta
    dv = np.abs(vals[na:nb] - vals[nb:])
    dg = np.linalg.norm(grads[na:nb] - grads[nb:], axis=1)
    dh = np.linalg.norm(hesses[na:nb] - hesses[nb:], ord=2, axis=(1, 2))

    return NormEstimate(
        sup=float(np.max(np.abs(vals))),
        sup_grad=float(np.max(np.linalg.norm(grads, axis=1))),
        sup_hess=float(np.max(hess_ops)),
        holder=float(np.max(dv / dth)),
        holder_grad=float(np.max(dg / dth)),
        holder_hess=float(np.max(dh / dth)),
        theta=theta,
        n_points=n_points,
        n_pairs=n_pairs,
    )


@dataclass
class InterpolationEntry:
    name: str
    lhs: float
    rhs: float  # constant-free right-hand side
    constant: float | None  # explicit constant when the proof provides one
    violated: bool  # only meaningful when ``constant`` is known


@dataclass
class InterpolationReport:
    theta: float
    ball_radius: float
    entries: list[InterpolationEntry] = field(default_factory=list)

    def entry(self, name: str) -> InterpolationEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def any_violation(self) -> bool:
        return any(e.violated for e in self.entries)


def interpolation_probe(
    field,
    theta: float,
    model: SpectralModel,
    n_points: int = 1500,
    n_pairs: int = 1500,
    seed: int = 7,
) -> InterpolationReport:
    """Two-sided report for the interpolation inequalities between C^0, C^1, C^2+theta.

    The first entry carries the explicit constant 2 from the elementary
    chain |f(x+y)-f(x)| <= 2 ||f||^(1-theta) |<Df, y>|^theta and is flagged on
    violation; the remaining entries report constant-free ratios only.
    """
    est = estimate_norms(field, theta, model, n_points, n_pairs, seed)
    report = InterpolationReport(theta=theta, ball_radius=model.ball_radius)

    rhs1 = est.sup ** (1.0 - theta) * est.sup_grad**theta
    report.entries.append(
        InterpolationEntry(
            name="holder_from_c1",
            lhs=est.holder,
            rhs=rhs1,
            constant=2.0,
            violated=bool(est.holder > 2.0 * rhs1 + 1e-12),
        )
    )
    rhs2 = est.sup_grad ** (theta / (1 + theta)) * est.holder_hess ** (1 / (1 + theta))
    report.entries.append(
        InterpolationEntry("hess_sup_from_grad", est.sup_hess, rhs2, None, False)
    )
    rhs3 = est.sup ** ((1 + theta) / (2 + theta)) * est.holder_hess ** (1 / (2 + theta))
    report.entries.append(
        InterpolationEntry("grad_sup_from_sup", est.sup_grad, rhs3, None, False)
    )
    rhs4 = est.sup * est.holder_hess
    report.entries.append(
        InterpolationEntry(
            "product_bound", est.holder * est.sup_hess, rhs4, None, False
        )
    )
    return report
