"""Scalar fields on a box around the ball: analytic closures and Chebyshev
tensor interpolants with exact derivatives of the interpolant.

Both kinds expose the same batched interface:

    value(x) -> (m,)        grad(x) -> (m, d)        hess(x) -> (m, d, d)

with ``x`` of shape (m, d) (a single point of shape (d,) is promoted).
Interpolants live on the cube [-halfwidth, halfwidth]^d; evaluation outside
raises unless the caller asks for clipping, because Chebyshev extrapolation
is meaningless.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.fft import dct

from .util import NumericalError


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != dim:
            raise ValueError(f"point has dimension {x.size}, field has {dim}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected (m, {dim}) batch, got {x.shape}")
    return x, False


class AnalyticField:
    """Field given by closed-form batched callables."""

    def __init__(self, fn, grad_fn=None, hess_fn=None, dim=1, name="analytic"):
        self._fn = fn
        self._grad = grad_fn
        self._hess = hess_fn
        self.dim = dim
        self.name = name

    def value(self, x):
        xb, single = _as_batch(x, self.dim)
        v = np.asarray(self._fn(xb), dtype=float)
        return v[0] if single else v

    def grad(self, x):
        if self._grad is None:
            raise NumericalError(f"field {self.name!r} has no analytic gradient")
        xb, single = _as_batch(x, self.dim)
        g = np.asarray(self._grad(xb), dtype=float)
        return g[0] if single else g

    def hess(self, x):
        if self._hess is None:
            raise NumericalError(f"field {self.name!r} has no analytic Hessian")
        xb, single = _as_batch(x, self.dim)
        h = np.asarray(self._hess(xb), dtype=float)
        return h[0] if single else h

    @property
    def has_grad(self):
        return self._grad is not None

    @property
    def has_hess(self):
        return self._hess is not None


def _cheb_basis(t: np.ndarray, n: int) -> np.ndarray:
    """T_0..T_{n-1} evaluated at t, shape (n, m)."""
    m = t.size
    T = np.empty((n, m))
    T[0] = 1.0
    if n > 1:
        T[1] = t
    for k in range(2, n):
        T[k] = 2.0 * t * T[k - 1] - T[k - 2]
    return T


_VALUE_PATH = {1: "im,i->m", 2: "im,jm,ij->m", 3: "im,jm,km,ijk->m"}


def cheb_nodes(n: int) -> np.ndarray:
    """Chebyshev points of the first kind on [-1, 1], ascending."""
    j = np.arange(n)
    return -np.cos((2 * j + 1) * np.pi / (2 * n))


def values_to_coef(vals: np.ndarray) -> np.ndarray:
    """Tensor of nodal values on the first-kind grid -> Chebyshev coefficients."""
    c = np.asarray(vals, dtype=float)
    for axis in range(c.ndim):
        n = c.shape[axis]
        # first-kind nodes ascending = cos(theta_j) reversed; flip to match DCT-II
        c = dct(np.flip(c, axis=axis), type=2, axis=axis) / n
        sl = [slice(None)] * c.ndim
        sl[axis] = 0
        c[tuple(sl)] *= 0.5
    return c


class ChebyshevField:
    """Tensor-product Chebyshev interpolant on [-halfwidth, halfwidth]^d."""

    def __init__(self, coef: np.ndarray, halfwidth: float, name="chebfield"):
        self.coef = np.asarray(coef, dtype=float)
        self.dim = self.coef.ndim
        if self.dim > 3:
            raise ValueError("tensor interpolants support at most 3 modes")
        self.halfwidth = float(halfwidth)
        self.name = name
        self._dcoef: dict[int, np.ndarray] = {}
        self._d2coef: dict[tuple[int, int], np.ndarray] = {}

    # -- construction -----------------------------------------------------

    @classmethod
    def fit(cls, fn, dim: int, halfwidth: float, n_nodes: int, name="chebfield"):
        """Interpolate a batched callable on the tensor first-kind grid."""
        axes = [halfwidth * cheb_nodes(n_nodes) for _ in range(dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = np.asarray(fn(pts), dtype=float).reshape((n_nodes,) * dim)
        if not np.all(np.isfinite(vals)):
            raise NumericalError("non-finite values while fitting interpolant")
        return cls(values_to_coef(vals), halfwidth, name=name)

    @classmethod
    def from_values(cls, vals: np.ndarray, halfwidth: float, name="chebfield"):
        return cls(values_to_coef(vals), halfwidth, name=name)

    def grid_points(self) -> np.ndarray:
        """The interpolation nodes, shape (n^d, d)."""
        n = self.coef.shape[0]
        axes = [self.halfwidth * cheb_nodes(n) for _ in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    # -- coefficient calculus ----------------------------------------------

    def _dc(self, axis: int) -> np.ndarray:
        if axis not in self._dcoef:
            self._dcoef[axis] = C.chebder(self.coef, m=1, scl=1.0 / self.halfwidth, axis=axis)
        return self._dcoef[axis]

    def _d2c(self, a1: int, a2: int) -> np.ndarray:
        key = (min(a1, a2), max(a1, a2))
        if key not in self._d2coef:
            c = C.chebder(self.coef, m=1, scl=1.0 / self.halfwidth, axis=key[0])
            if key[0] == key[1]:
                c = C.chebder(c, m=1, scl=1.0 / self.halfwidth, axis=key[0])
            else:
                c = C.chebder(c, m=1, scl=1.0 / self.halfwidth, axis=key[1])
            self._d2coef[key] = c
        return self._d2coef[key]

    # -- evaluation ---------------------------------------------------------

    def _prep(self, x, clip):
        xb, single = _as_batch(x, self.dim)
        t = xb / self.halfwidth
        if clip:
            t = np.clip(t, -1.0, 1.0)
        elif np.any(np.abs(t) > 1.0 + 1e-9):
            raise NumericalError(
                f"evaluation outside the interpolation cube of {self.name!r} "
                f"(halfwidth {self.halfwidth:g})"
            )
        return t, single

    def _contract(self, coef: np.ndarray, t: np.ndarray) -> np.ndarray:
        bases = [_cheb_basis(t[:, a], coef.shape[a]) for a in range(self.dim)]
        return np.einsum(_VALUE_PATH[self.dim], *bases, coef, optimize=True)

    def value(self, x, clip=False):
        t, single = self._prep(x, clip)
        v = self._contract(self.coef, t)
        return v[0] if single else v

    def grad(self, x, clip=False):
        t, single = self._prep(x, clip)
        g = np.stack([self._contract(self._dc(a), t) for a in range(self.dim)], axis=-1)
        return g[0] if single else g

    def hess(self, x, clip=False):
        t, single = self._prep(x, clip)
        m = t.shape[0]
        h = np.empty((m, self.dim, self.dim))
        for a in range(self.dim):
            for b in range(a, self.dim):
                hab = self._contract(self._d2c(a, b), t)
                h[:, a, b] = hab
                h[:, b, a] = hab
        return h[0] if single else h

    def hess_diag(self, x, clip=False):
        """Only the pure second derivatives (the diagonal trace needs nothing else)."""
        t, single = self._prep(x, clip)
        d = np.stack(
            [self._contract(self._d2c(a, a), t) for a in range(self.dim)], axis=-1
        )
        return d[0] if single else d

    @property
    def has_grad(self):
        return True

    @property
    def has_hess(self):
        return True

    # -- algebra -------------------------------------------------------------

    def blend(self, other: "ChebyshevField", w: float) -> "ChebyshevField":
        """(1-w) * self + w * other, exact in coefficient space."""
        if other.coef.shape != self.coef.shape or other.halfwidth != self.halfwidth:
            raise ValueError("blend requires matching interpolants")
        return ChebyshevField(
            (1.0 - w) * self.coef + w * other.coef, self.halfwidth, name=self.name
        )

    def diff_sup_on_grid(self, other: "ChebyshevField") -> float:
        pts = self.grid_points()
        return float(np.max(np.abs(self.value(pts) - other.value(pts))))


# --------------------------------------------------------------------------
# Ready-made analytic fields
# --------------------------------------------------------------------------


def constant_field(c: float, dim: int) -> AnalyticField:
    return AnalyticField(
        lambda x: np.full(x.shape[0], float(c)),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros((x.shape[0], dim, dim)),
        dim=dim,
        name=f"const({c})",
    )


def linear_field(a: np.ndarray) -> AnalyticField:
    a = np.asarray(a, dtype=float)
    d = a.size
    return AnalyticField(
        lambda x: x @ a,
        lambda x: np.broadcast_to(a, x.shape).copy(),
        lambda x: np.zeros((x.shape[0], d, d)),
        dim=d,
        name="linear",
    )


def quadratic_field(w: np.ndarray) -> AnalyticField:
    """sum_i w_i x_i^2."""
    w = np.asarray(w, dtype=float)
    d = w.size
    return AnalyticField(
        lambda x: (x**2) @ w,
        lambda x: 2.0 * w[None, :] * x,
        lambda x: np.broadcast_to(np.diag(2.0 * w), (x.shape[0], d, d)).copy(),
        dim=d,
        name="quadratic",
    )


def tanh_ridge_field(a: np.ndarray, shift: float = 0.0, amp: float = 1.0) -> AnalyticField:
    """amp * tanh(<a, x> + shift); the standard bounded Lipschitz initial datum."""
    a = np.asarray(a, dtype=float)
    d = a.size

    def val(x):
        return amp * np.tanh(x @ a + shift)

    def grad(x):
        s = 1.0 - np.tanh(x @ a + shift) ** 2
        return amp * s[:, None] * a[None, :]

    def hess(x):
        th = np.tanh(x @ a + shift)
        s = -2.0 * th * (1.0 - th**2)
        return amp * s[:, None, None] * np.einsum("i,j->ij", a, a)[None, :, :]

    return AnalyticField(val, grad, hess, dim=d, name="tanh_ridge")


def sin_ridge_field(a: np.ndarray, shift: float = 0.0, amp: float = 1.0) -> AnalyticField:
    a = np.asarray(a, dtype=float)
    d = a.size
    return AnalyticField(
        lambda x: amp * np.sin(x @ a + shift),
        lambda x: amp * np.cos(x @ a + shift)[:, None] * a[None, :],
        lambda x: -amp
        * np.sin(x @ a + shift)[:, None, None]
        * np.einsum("i,j->ij", a, a)[None, :, :],
        dim=d,
        name="sin_ridge",
    )


def gauss_bump_field(center: np.ndarray, width: float, amp: float = 1.0) -> AnalyticField:
    c = np.asarray(center, dtype=float)
    d = c.size
    w2 = width**2

    def val(x):
        return amp * np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * w2))

    def grad(x):
        v = val(x)
        return -(x - c) / w2 * v[:, None]

    def hess(x):
        v = val(x)
        r = (x - c) / w2
        outer = np.einsum("mi,mj->mij", r, r)
        eye = np.eye(d)[None, :, :] / w2
        return v[:, None, None] * (outer - eye)

    return AnalyticField(val, grad, hess, dim=d, name="gauss_bump")


def abs_coord_field(dim: int, axis: int = 0) -> AnalyticField:
    """|x_axis|: Lipschitz with a kink (a.e. derivatives; kink has measure zero)."""

    def val(x):
        return np.abs(x[:, axis])

    def grad(x):
        g = np.zeros_like(x)
        g[:, axis] = np.sign(x[:, axis])
        return g

    def hess(x):
        return np.zeros((x.shape[0], dim, dim))

    return AnalyticField(val, grad, hess, dim=dim, name="abs_coord")


def sign_coord_field(dim: int, axis: int = 0) -> AnalyticField:
    """sign(x_axis): bounded and discontinuous; no derivatives supplied."""
    return AnalyticField(
        lambda x: np.sign(x[:, axis]), None, None, dim=dim, name="sign_coord"
    )


def field_catalog(dim: int, count: int, seed: int = 0) -> list[AnalyticField]:
    """Deterministic catalog of smooth bounded test fields on R^dim."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    makers = [
        lambda r: tanh_ridge_field(r.normal(size=dim), r.normal() * 0.5, 0.5 + r.random()),
        lambda r: sin_ridge_field(r.normal(size=dim), r.normal(), 0.5 + r.random()),
        lambda r: gauss_bump_field(r.normal(size=dim) * 0.5, 0.5 + r.random(), 0.5 + r.random()),
        lambda r: quadratic_field(r.normal(size=dim) * 0.3),
        lambda r: linear_field(r.normal(size=dim)),
    ]
    return [makers[k % len(makers)](rng) for k in range(count)]
