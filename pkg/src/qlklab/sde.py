"""Exponential-Euler simulation of the SPDE with solution-dependent diffusion,
the probabilistic fixed point built on the expectation identity
u(t, x) = E g(X^{t,x}(t)), and mild-form residual diagnostics.

The scheme (per mode, E = e^{-alpha dt}):

    X_{k+1} = E (X_k + dt b(X_k) + dt sigma_k phi_k) + sigma_k sqrt(eps dt) xi_k

with sigma_k = sigma(X_k, u(t - s_k, X_k)) frozen at the step start.  Noise
comes from a counter-based generator keyed by the config seed, so ensembles
are bit-reproducible; path batches reduce in fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet
from .fields import ChebyshevField
from .solver import SolverGrids, SpaceTimeField, evaluation_halfwidth, time_grid, validate_exponents
from .util import ConfigError, NumericalError, substream

_PATH_STORE_LIMIT = 3.0e8  # bytes


@dataclass(frozen=True)
class SimConfig:
    n_steps: int = 64
    scheme: str = "exponential_euler"
    n_paths: int = 10_000
    seed: int = 0
    epsilon: float = 0.1
    antithetic: bool = False
    store_paths: bool = False

    def __post_init__(self):
        if self.scheme != "exponential_euler":
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1")
        if self.n_paths < 2:
            raise ConfigError("n_paths must be at least 2 for standard errors")
        if self.antithetic and self.n_paths % 2:
            raise ConfigError("antithetic sampling needs an even n_paths")


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray
    initial: np.ndarray
    terminal: np.ndarray          # (n_paths, d)
    terminal_g: np.ndarray        # (n_paths,)
    sup_norm: np.ndarray          # per-path sup_s ||X(s)||
    exit_fraction: float          # fraction of paths that ever left the trusted ball
    paths: np.ndarray | None = None   # (n_paths, n_steps + 1, d) when stored
    noise: np.ndarray | None = None   # (n_paths, n_steps, d) when stored

    @property
    def n_paths(self) -> int:
        return self.terminal.shape[0]

    def terminal_mean_stderr(self, antithetic: bool) -> tuple[float, float]:
        vals = self.terminal_g
        if antithetic:
            vals = 0.5 * (vals[0::2] + vals[1::2])
        mean = float(np.mean(vals))
        stderr = float(np.std(vals, ddof=1) / np.sqrt(vals.size))
        return mean, stderr


class _UEvaluator:
    """Uniform access to u(tau, x) for the diffusion argument."""

    def __init__(self, u, trust_radius: float):
        self.trust_radius = trust_radius
        if isinstance(u, SpaceTimeField):
            self._kind = "spacetime"
            self.u = u
        elif hasattr(u, "value"):
            self._kind = "field"
            self.u = u
        elif callable(u):
            self._kind = "callable"
            self.u = u
        else:
            raise TypeError("u must be a SpaceTimeField, a field, or callable(tau, X)")

    def __call__(self, tau: float, x_projected: np.ndarray) -> np.ndarray:
        if self._kind == "spacetime":
            return self.u.slice_at(tau).value(x_projected, clip=True)
        if self._kind == "field":
            return self.u.value(x_projected)
        return np.asarray(self.u(tau, x_projected), dtype=float)


def _project_ball(x: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Radial projection onto the trusted ball; returns (projected, exited mask)."""
    norms = np.linalg.norm(x, axis=1)
    out = norms > radius
    if not np.any(out):
        return x, out
    proj = x.copy()
    proj[out] *= (radius / norms[out])[:, None]
    return proj, out


def spde_simulate(
    coeffs: CoefficientSet,
    u,
    x: np.ndarray,
    t: float,
    cfg: SimConfig,
    control=None,
    g=None,
    rng: np.random.Generator | None = None,
) -> TrajectoryEnsemble:
    """Exponential-Euler ensemble of the controlled SPDE started at x.

    ``u`` supplies the scalar argument of the diffusion (typically the solver
    output for the same coefficients); ``control`` is an optional ControlPath
    on a compatible grid; ``g`` overrides the terminal functional (defaults to
    the coefficient set's initial datum).  Paths that leave the trusted ball
    keep evolving, but all coefficient evaluations see the radial projection
    and the exit fraction is reported.
    """
    model = coeffs.model
    d = model.n_modes
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise ValueError(f"initial state must have shape ({d},)")
    if t < 0:
        raise ValueError("t must be non-negative")
    g = g if g is not None else coeffs.g
    trust_radius = evaluation_halfwidth(model, cfg.epsilon)
    u_eval = _UEvaluator(u, trust_radius)

    n, m = cfg.n_steps, cfg.n_paths
    dt = t / n if n else 0.0
    times = np.linspace(0.0, t, n + 1)
    if control is not None:
        phi = control.values_on_grid(times)  # (n+1, d)
    else:
        phi = None

    if cfg.store_paths and m * (n + 1) * d * 8 > _PATH_STORE_LIMIT:
        raise ConfigError("path storage would exceed the memory guard; lower n_paths")

    rng = rng or substream(cfg.seed, "mc")
    xi = rng.standard_normal((n, m, d))
    if cfg.antithetic:
        xi[:, 1::2, :] = -xi[:, 0::2, :]

    damp = np.exp(-model.alpha * dt)[None, :]
    sq = np.sqrt(cfg.epsilon * dt)
    X = np.tile(x, (m, 1))
    sup_norm = np.linalg.norm(X, axis=1)
    ever_exited = np.zeros(m, dtype=bool)
    paths = np.empty((m, n + 1, d)) if cfg.store_paths else None
    if paths is not None:
        paths[:, 0] = X

    for k in range(n):
        Xp, out = _project_ball(X, trust_radius)
        ever_exited |= out
        r = u_eval(t - times[k], Xp)
        sig = coeffs.sigma_diag(Xp, r)
        drift = X + dt * coeffs.b.value(Xp)
        if phi is not None:
            drift = drift + dt * sig * phi[k][None, :]
        X = damp * drift + sq * sig * xi[k]
        if not np.all(np.isfinite(X)):
            raise NumericalError(f"non-finite state at step {k + 1}")
        sup_norm = np.maximum(sup_norm, np.linalg.norm(X, axis=1))
        if paths is not None:
            paths[:, k + 1] = X

    Xp, out = _project_ball(X, trust_radius)
    ever_exited |= out
    terminal_g = np.asarray((g.value if hasattr(g, "value") else g)(Xp), dtype=float)
    return TrajectoryEnsemble(
        times=times,
        initial=x,
        terminal=X,
        terminal_g=terminal_g,
        sup_norm=sup_norm,
        exit_fraction=float(np.mean(ever_exited)),
        paths=paths,
        noise=xi.transpose(1, 0, 2) if cfg.store_paths else None,
    )


# ---------------------------------------------------------------------------
# Expectation-identity verification
# ---------------------------------------------------------------------------


@dataclass
class FKReport:
    u_value: float
    mc_mean: float
    mc_stderr: float
    z_score: float
    bias_estimate: float
    bias_budget: float
    n_paths: int
    n_steps: int
    passed: bool

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def feynman_kac_verify(
    coeffs: CoefficientSet,
    u: SpaceTimeField,
    x: np.ndarray,
    t: float,
    cfg: SimConfig,
) -> FKReport:
    """Check u(t, x) against the Monte-Carlo mean of g at the SPDE terminal state.

    The time-step bias is estimated by step-halving with coupled noise (the
    coarse run consumes pairwise-aggregated fine increments), so the budget
    |mc - u| <= 2 |mean_fine - mean_coarse| + 4 stderr reflects the weak
    order-one error of the scheme rather than Monte-Carlo scatter.
    """
    x = np.asarray(x, dtype=float)
    if t == 0:
        g_val = float(coeffs.g.value(x[None, :])[0])
        u_val = float(u.eval(0.0, x[None, :])[0])
        return FKReport(u_val, g_val, 0.0, 0.0, 0.0, 0.0, cfg.n_paths, 0, passed=u_val == g_val)

    fine_cfg = SimConfig(
        n_steps=2 * cfg.n_steps,
        n_paths=cfg.n_paths,
        seed=cfg.seed,
        epsilon=cfg.epsilon,
        antithetic=cfg.antithetic,
    )
    rng = substream(cfg.seed, "mc")
    xi_fine = rng.standard_normal((fine_cfg.n_steps, cfg.n_paths, coeffs.model.n_modes))
    if cfg.antithetic:
        xi_fine[:, 1::2, :] = -xi_fine[:, 0::2, :]
    xi_coarse = (xi_fine[0::2] + xi_fine[1::2]) / np.sqrt(2.0)

    fine = _simulate_with_noise(coeffs, u, x, t, fine_cfg, xi_fine)
    coarse = _simulate_with_noise(coeffs, u, x, t, cfg, xi_coarse)
    mean_f, stderr_f = fine.terminal_mean_stderr(cfg.antithetic)
    mean_c, _ = coarse.terminal_mean_stderr(cfg.antithetic)

    u_val = float(u.eval(t, x[None, :])[0])
    bias_est = abs(mean_f - mean_c)
    budget = 2.0 * bias_est + 4.0 * stderr_f
    z = (mean_f - u_val) / stderr_f if stderr_f > 0 else float("inf")
    passed = abs(z) <= 4.0 and abs(mean_f - u_val) <= budget
    return FKReport(
        u_value=u_val,
        mc_mean=mean_f,
        mc_stderr=stderr_f,
        z_score=float(z),
        bias_estimate=bias_est,
        bias_budget=budget,
        n_paths=cfg.n_paths,
        n_steps=fine_cfg.n_steps,
        passed=bool(passed),
    )


def _simulate_with_noise(coeffs, u, x, t, cfg, xi) -> TrajectoryEnsemble:
    """Exponential Euler with externally supplied standard-normal increments."""
    model = coeffs.model
    d = model.n_modes
    n, m = cfg.n_steps, xi.shape[1]
    assert xi.shape == (n, m, d)
    dt = t / n
    times = np.linspace(0.0, t, n + 1)
    trust_radius = evaluation_halfwidth(model, cfg.epsilon)
    u_eval = _UEvaluator(u, trust_radius)
    damp = np.exp(-model.alpha * dt)[None, :]
    sq = np.sqrt(cfg.epsilon * dt)
    X = np.tile(np.asarray(x, dtype=float), (m, 1))
    sup_norm = np.linalg.norm(X, axis=1)
    ever = np.zeros(m, dtype=bool)
    for k in range(n):
        Xp, out = _project_ball(X, trust_radius)
        ever |= out
        r = u_eval(t - times[k], Xp)
        sig = coeffs.sigma_diag(Xp, r)
        X = damp * (X + dt * coeffs.b.value(Xp)) + sq * sig * xi[k]
        sup_norm = np.maximum(sup_norm, np.linalg.norm(X, axis=1))
    Xp, out = _project_ball(X, trust_radius)
    ever |= out
    terminal_g = np.asarray(coeffs.g.value(Xp), dtype=float)
    return TrajectoryEnsemble(
        times=times,
        initial=np.asarray(x, dtype=float),
        terminal=X,
        terminal_g=terminal_g,
        sup_norm=sup_norm,
        exit_fraction=float(np.mean(ever)),
    )


# ---------------------------------------------------------------------------
# Probabilistic fixed point
# ---------------------------------------------------------------------------


@dataclass
class FixedPointReport:
    sup_distances: list[float]
    converged: bool
    n_sweeps: int
    mc_stderr_scale: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def probabilistic_fixed_point(
    coeffs: CoefficientSet,
    g,
    epsilon: float,
    delta: float,
    t: float,
    grids: SolverGrids,
    cfg: SimConfig,
    tol: float,
    max_sweeps: int = 8,
) -> tuple[SpaceTimeField, FixedPointReport]:
    """Iterate u_{k+1}(tau, node) = MC mean of g(X(tau)) with sigma frozen at u_k.

    Every sweep re-simulates fresh ensembles from each (slice, node) pair; no
    regression and no spatial derivatives of u are ever needed.  Convergence
    is declared when the node-wise sup distance between sweeps drops below
    tol (which should dominate the Monte-Carlo noise floor).
    """
    if coeffs.delta != delta:
        raise ConfigError("delta argument must match the coefficient set")
    model = coeffs.model
    d = model.n_modes
    eta = coeffs.g_eta
    theta = min(eta - 0.5, 1.0) * 0.6
    rho = validate_exponents(eta, theta)
    halfwidth = evaluation_halfwidth(model, epsilon, grids.inflation_sigmas)
    g_field = g
    g_interp = ChebyshevField.fit(
        (g.value if hasattr(g, "value") else g), d, halfwidth, grids.n_nodes, name="g"
    )
    nodes = g_interp.grid_points()
    n_nodes = nodes.shape[0]
    tg = time_grid(t, grids)

    def make_field(slices):
        return SpaceTimeField(
            t_grid=tg, slices=slices, epsilon=epsilon, rho=rho, eta=eta,
            theta=theta, ball_radius=model.ball_radius,
        )

    u = make_field([g_interp] * tg.size)
    report = FixedPointReport([], False, 0, float("nan"))
    stderr_scale = 0.0
    for sweep in range(max_sweeps):
        new_slices = [g_interp]
        for mslice, tau in enumerate(tg[1:], start=1):
            n_steps = max(4, int(round(cfg.n_steps * tau / t)))
            sub = substream(cfg.seed, "fixed-point", sweep * 10_000 + mslice)
            means, stderr = _node_ensemble_means(
                coeffs, u, g_field, nodes, float(tau), n_steps, cfg, sub, halfwidth
            )
            stderr_scale = max(stderr_scale, stderr)
            new_slices.append(
                ChebyshevField.from_values(
                    means.reshape((grids.n_nodes,) * d), halfwidth
                )
            )
        u_next = make_field(new_slices)
        dist = max(
            a.diff_sup_on_grid(b) for a, b in zip(u_next.slices[1:], u.slices[1:])
        )
        report.sup_distances.append(float(dist))
        report.n_sweeps += 1
        u = u_next
        if dist < tol:
            report.converged = True
            break
    report.mc_stderr_scale = float(stderr_scale)
    if not report.converged:
        raise NumericalError(
            f"probabilistic fixed point did not reach tol={tol:g} in {max_sweeps} sweeps "
            f"(last sup distance {report.sup_distances[-1]:.3g}; MC floor ~{stderr_scale:.3g})"
        )
    return u, report


def _node_ensemble_means(
    coeffs, u, g, nodes, tau, n_steps, cfg, rng, trust_radius
) -> tuple[np.ndarray, float]:
    """Simultaneous ensembles from every node; returns per-node means of g."""
    model = coeffs.model
    d = model.n_modes
    n_nodes = nodes.shape[0]
    m = cfg.n_paths
    dt = tau / n_steps
    damp = np.exp(-model.alpha * dt)[None, :]
    sq = np.sqrt(cfg.epsilon * dt)
    u_eval = _UEvaluator(u, trust_radius)
    X = np.repeat(nodes, m, axis=0)
    for k in range(n_steps):
        xi = rng.standard_normal((n_nodes * m, d))
        if cfg.antithetic:
            xi[1::2] = -xi[0::2]
        Xp, _ = _project_ball(X, trust_radius)
        r = u_eval(tau - k * dt, Xp)
        sig = coeffs.sigma_diag(Xp, r)
        X = damp * (X + dt * coeffs.b.value(Xp)) + sq * sig * xi
    Xp, _ = _project_ball(X, trust_radius)
    vals = np.asarray((g.value if hasattr(g, "value") else g)(Xp), dtype=float)
    vals = vals.reshape(n_nodes, m)
    means = vals.mean(axis=1)
    stderr = float(np.max(np.std(vals, axis=1, ddof=1) / np.sqrt(m)))
    return means, stderr


# ---------------------------------------------------------------------------
# Mild-form residual
# ---------------------------------------------------------------------------


def weighted_space_residual(
    coeffs: CoefficientSet,
    u,
    x: np.ndarray,
    t: float,
    cfg: SimConfig,
    beta: float,
    control=None,
) -> float:
    """sup_s e^{-beta s} E || mild-RHS(X)(s) - X(s) ||^2 on the simulated grid.

    The right-hand side re-integrates the Duhamel form on the stored paths
    with exact per-step semigroup weights, so the residual measures the
    scheme's consistency with the mild property and vanishes under
    refinement.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    store_cfg = SimConfig(
        n_steps=cfg.n_steps,
        n_paths=cfg.n_paths,
        seed=cfg.seed,
        epsilon=cfg.epsilon,
        antithetic=cfg.antithetic,
        store_paths=True,
    )
    ens = spde_simulate(coeffs, u, x, t, store_cfg, control=control)
    model = coeffs.model
    d = model.n_modes
    n = cfg.n_steps
    m = cfg.n_paths
    dt = t / n
    times = ens.times
    trust_radius = evaluation_halfwidth(model, cfg.epsilon)
    u_eval = _UEvaluator(u, trust_radius)

    phi = control.values_on_grid(times) if control is not None else None
    alpha = model.alpha
    # per-step coefficient arrays evaluated at the left endpoints
    bvals = np.empty((n, m, d))
    sigvals = np.empty((n, m, d))
    for k in range(n):
        Xp, _ = _project_ball(ens.paths[:, k], trust_radius)
        r = u_eval(t - times[k], Xp)
        sigvals[k] = coeffs.sigma_diag(Xp, r)
        bvals[k] = coeffs.b.value(Xp)

    sup_resid = 0.0
    sqeps = np.sqrt(cfg.epsilon * dt)
    for idx in range(1, n + 1):
        s_n = times[idx]
        # exact integral of e^{(s_n - r)A} over each step for the drift part
        k_idx = np.arange(idx)
        seg = (1.0 - np.exp(-alpha[None, :] * dt)) / alpha[None, :]
        w_drift = np.exp(-alpha[None, :] * (s_n - times[k_idx + 1, None])) * seg  # (idx, d)
        rhs = np.exp(-alpha * s_n)[None, :] * ens.initial[None, :]
        drift_term = bvals[:idx]
        if phi is not None:
            drift_term = drift_term + sigvals[:idx] * phi[:idx][:, None, :]
        rhs = rhs + np.einsum("kd,kmd->md", w_drift, drift_term)
        w_noise = np.exp(-alpha[None, :] * (s_n - times[k_idx, None]))  # (idx, d)
        rhs = rhs + sqeps * np.einsum("kd,kmd,kmd->md", w_noise, sigvals[:idx], ens.noise[:, :idx].transpose(1, 0, 2))
        resid = float(np.mean(np.sum((rhs - ens.paths[:, idx]) ** 2, axis=1)))
        sup_resid = max(sup_resid, np.exp(-beta * s_n) * resid)
    return sup_resid


def moment_bound_scan(
    coeffs: CoefficientSet,
    u,
    x: np.ndarray,
    t: float,
    epsilon_grid,
    cfg: SimConfig,
    powers=(2, 4),
) -> dict:
    """E sup_s ||X||^p across the epsilon grid, normalized by 1 + ||x||^p."""
    out = {p: [] for p in powers}
    x = np.asarray(x, dtype=float)
    for i, eps in enumerate(epsilon_grid):
        c = SimConfig(
            n_steps=cfg.n_steps, n_paths=cfg.n_paths, seed=cfg.seed + i,
            epsilon=float(eps), antithetic=cfg.antithetic,
        )
        ens = spde_simulate(coeffs, u, x, t, c)
        for p in powers:
            norm = float(np.mean(ens.sup_norm**p)) / (1.0 + np.linalg.norm(x) ** p)
            out[p].append(norm)
    return {p: np.array(v) for p, v in out.items()}
