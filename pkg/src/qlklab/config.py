"""Experiment configuration: one TOML file drives every subcommand.

All randomness in a run derives from ``master_seed`` through named
sub-streams; the fully resolved configuration is embedded into every summary
so outputs are self-describing.  Validation happens before any computation
and names the violated clause.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import (
    FRAK_CATALOG,
    CoefficientSet,
    DriftMap,
    FFamily,
    decaying_tanh_drift,
    zero_drift,
)
from .fields import (
    abs_coord_field,
    constant_field,
    linear_field,
    quadratic_field,
    sign_coord_field,
    tanh_ridge_field,
)
from .solver import SolverGrids, validate_exponents
from .spectral import MODEL_PRESETS, SpectralModel
from .sde import SimConfig
from .util import ConfigError


_G_BUILDERS = {
    "tanh_ridge": lambda vec, d: tanh_ridge_field(np.asarray(vec, dtype=float)),
    "quadratic": lambda vec, d: quadratic_field(np.asarray(vec, dtype=float)),
    "linear": lambda vec, d: linear_field(np.asarray(vec, dtype=float)),
    "abs": lambda vec, d: abs_coord_field(d, axis=0),
    "sign": lambda vec, d: sign_coord_field(d, axis=0),
    "constant": lambda vec, d: constant_field(float(vec[0]) if vec else 1.0, d),
}


@dataclass
class ExperimentConfig:
    raw: dict
    path: str

    # ---------------- loading and validation ----------------

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
        cfg = cls(raw=raw, path=str(p))
        cfg.validate()
        return cfg

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    @property
    def master_seed(self) -> int:
        return int(self.raw.get("master_seed", 0))

    def validate(self) -> None:
        """Reject invalid configurations, naming the violated clause."""
        model = self.build_model()
        co = self.section("coefficients")
        sol = self.section("solver")
        eta = float(co.get("g_eta", 1.0))
        theta = sol.get("theta")
        try:
            validate_exponents(eta, float(theta) if theta is not None else min(eta - 0.5, 1.0) * 0.6)
        except ConfigError as exc:
            raise ConfigError(f"solver exponents: {exc}") from exc
        eps = float(sol.get("epsilon", 0.1))
        if not 0 < eps <= 1:
            raise ConfigError("solver.epsilon must lie in (0, 1]")
        coeffs = self.build_coefficients()
        if coeffs.delta > 0 and coeffs.positivity_margin(r_max=2.0) <= 0:
            raise ConfigError(
                "coefficients.delta violates the diffusion positivity threshold"
            )
        sim = self.section("simulation")
        if int(sim.get("n_paths", 1000)) < 2:
            raise ConfigError("simulation.n_paths must be at least 2")
        grids = self.solver_grids()
        if model.n_modes > 3:
            raise ConfigError(
                "tensor-grid solver supports at most 3 modes "
                "(reduce model.n_modes or run the probabilistic pipeline only)"
            )
        if grids.n_nodes > 64:
            raise ConfigError("solver.n_nodes beyond 64 is not supported")

    # ---------------- builders ----------------

    def build_model(self) -> SpectralModel:
        m = self.section("model")
        ball = float(m.get("ball_radius", 1.0))
        if "alpha" in m or "gamma" in m:
            if "alpha" not in m or "gamma" not in m:
                raise ConfigError("model.alpha and model.gamma must be given together")
            return SpectralModel(
                alpha=np.asarray(m["alpha"], dtype=float),
                gamma=np.asarray(m["gamma"], dtype=float),
                ball_radius=ball,
            )
        preset = m.get("preset", "laplacian")
        if preset not in MODEL_PRESETS:
            raise ConfigError(f"unknown model preset {preset!r}")
        return MODEL_PRESETS[preset](int(m.get("n_modes", 2)), ball)

    def build_coefficients(self, delta: float | None = None) -> CoefficientSet:
        model = self.build_model()
        d = model.n_modes
        co = self.section("coefficients")

        b_kind = co.get("b", "decaying_tanh")
        b_scale = float(co.get("b_scale", 0.2))
        if b_kind == "zero":
            drift = zero_drift(d)
        elif b_kind == "decaying_tanh":
            drift = decaying_tanh_drift(d, b_scale)
        elif b_kind == "tanh":
            drift = DriftMap(np.full(d, b_scale))
        else:
            raise ConfigError(f"unknown drift preset {b_kind!r}")

        g_kind = co.get("g", "tanh_ridge")
        if g_kind not in _G_BUILDERS:
            raise ConfigError(f"unknown initial-datum preset {g_kind!r}")
        vec = co.get("g_vector", [1.0] + [0.0] * (d - 1))
        if g_kind in ("tanh_ridge", "quadratic", "linear") and len(vec) != d:
            raise ConfigError("coefficients.g_vector length must equal n_modes")
        g = _G_BUILDERS[g_kind](vec, d)

        frak_name = co.get("frak", "sin")
        if frak_name not in FRAK_CATALOG:
            raise ConfigError(
                f"unknown frak family {frak_name!r}; catalog: {sorted(FRAK_CATALOG)}"
            )
        lam_scale = float(co.get("lambda_scale", 1.0))
        lam_decay = float(co.get("lambda_decay", 0.5))
        lam = lam_scale * lam_decay ** np.arange(d)
        return CoefficientSet(
            model=model,
            b=drift,
            g=g,
            g_eta=float(co.get("g_eta", 1.0)),
            f=FFamily(lambda_f=lam, frak=FRAK_CATALOG[frak_name]),
            delta=float(co.get("delta", 0.0)) if delta is None else float(delta),
        )

    def solver_grids(self) -> SolverGrids:
        s = self.section("solver")
        return SolverGrids(
            n_time_slices=int(s.get("n_time_slices", 13)),
            time_grading=float(s.get("time_grading", 2.0)),
            n_nodes=int(s.get("n_nodes", 21)),
            quad_panels=int(s.get("quad_panels", 5)),
            quad_ratio=float(s.get("quad_ratio", 0.3)),
            quad_gauss=int(s.get("quad_gauss", 4)),
            inflation_sigmas=float(s.get("inflation_sigmas", 6.0)),
        )

    def sim_config(self, seed: int | None = None, epsilon: float | None = None) -> SimConfig:
        s = self.section("simulation")
        return SimConfig(
            n_steps=int(s.get("n_steps", 64)),
            n_paths=int(s.get("n_paths", 10_000)),
            seed=self.master_seed if seed is None else seed,
            epsilon=float(self.section("solver").get("epsilon", 0.1))
            if epsilon is None
            else float(epsilon),
            antithetic=bool(s.get("antithetic", False)),
            store_paths=bool(s.get("store_paths", False)),
        )

    def resolved(self) -> dict:
        """Full configuration with defaults applied, for self-describing output."""
        model = self.build_model()
        co = self.build_coefficients()
        sol = self.section("solver")
        eta = co.g_eta
        theta = sol.get("theta")
        theta = float(theta) if theta is not None else min(eta - 0.5, 1.0) * 0.6
        return {
            "master_seed": self.master_seed,
            "model": {
                "alpha": model.alpha.tolist(),
                "gamma": model.gamma.tolist(),
                "ball_radius": model.ball_radius,
            },
            "coefficients": {
                "b_bound": co.b.bound,
                "b_lipschitz": co.b.lipschitz,
                "g": self.section("coefficients").get("g", "tanh_ridge"),
                "g_eta": eta,
                "frak": co.f.frak.name,
                "lambda_f": co.f.lambda_f.tolist(),
                "delta": co.delta,
            },
            "solver": {
                "epsilon": float(sol.get("epsilon", 0.1)),
                "T": float(sol.get("T", 1.0)),
                "theta": theta,
                "rho": validate_exponents(eta, theta),
                "tol": float(sol.get("tol", 1e-6)),
                "max_iter": int(sol.get("max_iter", 25)),
                "grids": self.solver_grids().__dict__,
                "n_windows": int(sol.get("n_windows", 1)),
            },
            "simulation": self.section("simulation"),
            "ldp": self.section("ldp"),
            "sweep": self.section("sweep"),
            "probes": self.section("probes"),
            "smoothing": self.section("smoothing"),
            "interp": self.section("interp"),
        }
