"""NLS systems ``i u_t + M Laplacian u = f(u)`` and their structural checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericalError, ValidationError
from .spectral import SpectralField

GROWTH_SCALES = (1e-3, 1.0, 1e3)


@dataclass(frozen=True)
class SystemSpec:
    """Diagonal masses, nonlinearity and conserved quadratic form.

    ``f`` maps a component-first array ``u[N, ...]`` to an array of the same
    shape. ``gauge_diagonal`` marks scalar ``coupling * |u|^p u`` systems,
    whose nonlinear flow is an exact phase rotation.
    """

    name: str
    masses: np.ndarray
    p: float
    f: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    Lambda: np.ndarray = None
    gauge_diagonal: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if masses.ndim != 1 or masses.size == 0:
            raise ConfigurationError("masses must be a nonempty vector")
        if np.any(masses == 0) or not np.all(np.isfinite(masses)):
            raise ConfigurationError("masses must be finite and nonzero")
        lam = np.eye(masses.size) if self.Lambda is None else np.asarray(self.Lambda, dtype=complex)
        if lam.shape != (masses.size, masses.size):
            raise ConfigurationError("conservation matrix has the wrong shape")
        if np.max(np.abs(lam - lam.conj().T)) > 1e-14 * max(1.0, np.max(np.abs(lam))):
            raise ValidationError("conservation matrix is not Hermitian")
        if np.min(np.linalg.eigvalsh(lam)) <= 0:
            raise ValidationError("conservation matrix is not positive definite")
        Mmat = np.diag(masses)
        if np.max(np.abs(Mmat @ lam - lam @ Mmat)) > 1e-14 * max(1.0, np.max(np.abs(lam))):
            raise ValidationError("conservation matrix does not commute with the mass matrix")
        if not self.p > 0:
            raise ConfigurationError("growth exponent must be positive")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "Lambda", lam)

    @property
    def N(self) -> int:
        return self.masses.size

    @property
    def is_free(self) -> bool:
        return bool(self.params.get("free", False))

    def to_dict(self) -> dict:
        return {"name": self.name, "N": self.N, "masses": self.masses.tolist(), "p": self.p,
                "Lambda": self.Lambda.real.tolist() if not np.any(self.Lambda.imag) else self.Lambda.tolist(),
                "params": {k: (v if not isinstance(v, complex) else [v.real, v.imag]) for k, v in self.params.items()}}

    def nonlinear_flow(self, u: np.ndarray, dt: float) -> np.ndarray:
        """Advance ``i u_t = f(u)`` by ``dt`` pointwise (component axis first)."""
        if self.is_free:
            return u
        if self.gauge_diagonal:
            c = self.params["coupling"]
            return u * np.exp(-1j * dt * c * np.abs(u) ** self.p)
        rhs = lambda w: -1j * self.f(w)
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * dt * k1)
        k3 = rhs(u + 0.5 * dt * k2)
        k4 = rhs(u + dt * k3)
        return u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def eval_f(spec: SystemSpec, u):
    """Nonlinearity at every grid point. Accepts a field or a component-first array."""
    if isinstance(u, SpectralField):
        out = eval_f(spec, u.values())
        return u.with_data(out, "physical")
    u = np.asarray(u, dtype=complex)
    if u.shape[0] != spec.N:
        raise ConfigurationError(f"system has {spec.N} components, got {u.shape[0]}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.asarray(spec.f(u), dtype=complex)
    bad = ~np.isfinite(out)
    if np.any(bad):
        loc = tuple(int(i[0]) for i in np.nonzero(bad))
        raise NumericalError(f"non-finite nonlinearity at index {loc}")
    return out


# --------------------------------------------------------------------------
# structural checks


def _random_ball(rng, count, N, radius):
    z = rng.normal(size=(N, count)) + 1j * rng.normal(size=(N, count))
    z /= np.linalg.norm(z, axis=0)
    rad = radius * rng.uniform(size=count) ** (1.0 / (2 * N))
    return z * rad


@dataclass(frozen=True)
class GrowthReport:
    constant: float
    per_scale: dict
    violated: bool


def check_growth_bound(spec: SystemSpec, sample_count: int = 2000, seed: int = 0,
                       scales=GROWTH_SCALES, growth_factor: float = 10.0) -> GrowthReport:
    """Largest observed ``|f(u)-f(v)| / (max(|u|,|v|)^p |u-v|)`` per scale.

    Flags a violation when the ratio is non-finite or grows by more than
    ``growth_factor`` between the smallest and largest ratio across scales.
    """
    rng = np.random.default_rng(seed)
    per_scale = {}
    for R in scales:
        u = _random_ball(rng, sample_count, spec.N, R)
        v = _random_ball(rng, sample_count, spec.N, R)
        with np.errstate(over="ignore", invalid="ignore"):
            num = np.linalg.norm(spec.f(u) - spec.f(v), axis=0)
            w = np.maximum(np.linalg.norm(u, axis=0), np.linalg.norm(v, axis=0))
            ratio = num / (w**spec.p * np.linalg.norm(u - v, axis=0))
        per_scale[R] = float(np.max(ratio)) if np.all(np.isfinite(ratio)) else float("inf")
    values = np.array(list(per_scale.values()))
    finite = np.all(np.isfinite(values))
    violated = (not finite) or values.max() > growth_factor * max(values.min(), 1e-300)
    return GrowthReport(float(values.max()), per_scale, bool(violated))


@dataclass(frozen=True)
class GaugeReport:
    max_imag: float
    normalized: float
    passed: bool


def check_gauge_condition(spec: SystemSpec, sample_count: int = 2000, seed: int = 1,
                          scales=GROWTH_SCALES) -> GaugeReport:
    """Largest ``|Im(u* Lambda f(u))|``, normalized per scale by ``R^(p+2)``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_norm = 0.0
    for R in scales:
        u = _random_ball(rng, sample_count, spec.N, R)
        with np.errstate(over="ignore", invalid="ignore"):
            im = np.abs(np.einsum("jn,jk,kn->n", u.conj(), spec.Lambda, spec.f(u)).imag)
        if not np.all(np.isfinite(im)):
            return GaugeReport(float("inf"), float("inf"), False)
        worst = max(worst, float(im.max()))
        worst_norm = max(worst_norm, float(im.max()) / R ** (spec.p + 2))
    return GaugeReport(worst, worst_norm, worst_norm <= 1e-12)


def validate_system(spec: SystemSpec, sample_count: int = 2000) -> SystemSpec:
    """Run both structural checks; raise ``ValidationError`` on failure."""
    growth = check_growth_bound(spec, sample_count)
    if growth.violated:
        raise ValidationError(f"{spec.name}: growth bound violated {growth.per_scale}")
    gauge = check_gauge_condition(spec, sample_count)
    if not gauge.passed:
        raise ValidationError(f"{spec.name}: gauge condition violated, max |Im u*Lf| = {gauge.max_imag:.3e}")
    return spec


def mass_functional(spec: SystemSpec, field: SpectralField) -> float:
    """``<u | Lambda u> = Re int u^* Lambda u dx``."""
    u = field.values()
    dens = np.einsum("j...,jk,k...->...", u.conj(), spec.Lambda, u).real
    return float(np.sum(dens) * field.grid.cell_volume)


# --------------------------------------------------------------------------
# built-in systems


def scalar_power(p: float = 3.0, coupling: float = 1.0, mass: float = 1.0, validate: bool = True) -> SystemSpec:
    """``i u_t + mass * Laplacian u = coupling |u|^p u``."""
    c = complex(coupling)
    if c.imag != 0:
        raise ValidationError("scalar power nonlinearity needs a real coupling")
    c = c.real

    def f(u):
        return c * np.abs(u) ** p * u

    spec = SystemSpec("scalar-power", [mass], p, f, np.eye(1), gauge_diagonal=True,
                      params={"coupling": c, "mass": mass})
    return validate_system(spec) if validate else spec


def quadratic_system(m1: float = 0.5, m2: float = 0.5, lam: complex = 1.0, mu: complex = 1.0,
                     validate: bool = True) -> SystemSpec:
    """Two-component system ``f(u, v) = (lam conj(u) v, mu u^2)`` with masses ``1/(2 m_j)``.

    ``lam * mu`` must be real and positive; the conserved form is
    ``diag(|mu|, |lam|)``.
    """
    lam, mu = complex(lam), complex(mu)
    if m1 == 0 or m2 == 0:
        raise ConfigurationError("masses m1, m2 must be nonzero")
    prod = lam * mu
    if validate and not (abs(prod.imag) <= 1e-14 * abs(prod) and prod.real > 0):
        raise ValidationError(f"need lam*mu real and positive, got {prod}")

    def f(u):
        return np.stack([lam * u[0].conj() * u[1], mu * u[0] ** 2])

    spec = SystemSpec("quadratic-2system", [1 / (2 * m1), 1 / (2 * m2)], 1.0, f,
                      np.diag([abs(mu), abs(lam)]), params={"m1": m1, "m2": m2, "lam": lam, "mu": mu})
    return validate_system(spec) if validate else spec


def free_system(N: int = 1, masses=None, p: float = 1.0) -> SystemSpec:
    """``f = 0``: the solution is the free evolution."""
    masses = np.ones(N) if masses is None else masses
    return SystemSpec("free", masses, p, lambda u: np.zeros_like(u), None, params={"free": True})


SYSTEMS = {
    "scalar-power": scalar_power,
    "quadratic-2system": quadratic_system,
    "free": free_system,
}


def build_system(name: str, **params) -> SystemSpec:
    if name not in SYSTEMS:
        raise ConfigurationError(f"unknown system {name!r}; built-ins are {sorted(SYSTEMS)} and 'gp'")
    return SYSTEMS[name](**params)
