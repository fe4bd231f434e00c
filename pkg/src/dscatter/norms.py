"""Spatial norms, time-weighted space-time norms and exponent arithmetic.

Vector-valued fields are measured through their pointwise Euclidean
magnitude ``|u(x)| = (sum_n |u_n(x)|^2)^{1/2}``.

The weighted norm ``X^{q,r}_eps(I_T)`` of a trajectory is
``|| t^eps ||u(t)||_{L^r_x} ||_{L^q_t(T, T_max)}``. Time integrals are taken
in ``tau = log t`` with composite Simpson weights; the error estimate is
the change when every other node is dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson, trapezoid

from .errors import ConfigurationError
from .spectral import Grid, SpectralField, Trajectory, bracket, combined_symbol


def _check_exponent(r):
    if not r > 0:
        raise ConfigurationError(f"Lebesgue exponent must be positive, got {r}")


def magnitude(data: np.ndarray, component_axis: int = 0) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(data) ** 2, axis=component_axis))


def lp_norm_array(grid: Grid, data: np.ndarray, r) -> np.ndarray:
    """L^r_x norms of physical samples ``data[..., N, *grid.shape]`` over the last d+1 axes."""
    _check_exponent(r)
    mag = magnitude(data, component_axis=-grid.dim - 1)
    axes = tuple(range(-grid.dim, 0))
    if math.isinf(r):
        return np.max(mag, axis=axes)
    # diverging iterates overflow to inf here; callers reject non-finite norms
    with np.errstate(over="ignore"):
        if r == 2:
            return np.sqrt(np.sum(mag**2, axis=axes) * grid.cell_volume)
        return (np.sum(mag**r, axis=axes) * grid.cell_volume) ** (1.0 / r)


def lp_norm_x(field: SpectralField, r) -> float:
    return float(lp_norm_array(field.grid, field.values(), r))


def sobolev_norm(field: SpectralField, s: float, homogeneous: bool = True) -> float:
    """``|| |grad|^s u ||_2`` or ``|| <grad>^s u ||_2`` with ``<xi> = sqrt(2 + |xi|^2)``.

    For homogeneous norms of negative order the zero mode is projected out.
    """
    grid = field.grid
    hat = field.frequency().data
    if homogeneous:
        with np.errstate(divide="ignore"):
            weight = np.where(grid.xi2 > 0, grid.xi2 ** (s / 2.0), 0.0 if s < 0 else float(s == 0))
    else:
        weight = bracket(grid.xi2) ** s
    total = np.sum(np.abs(hat) ** 2 * weight**2)
    return float(np.sqrt(total * grid.volume) / grid.n**grid.dim)


def h1_norm(field: SpectralField) -> float:
    """``|| <grad> u ||_2`` (GP convention)."""
    return sobolev_norm(field, 1.0, homogeneous=False)


def h1_norm_array(grid: Grid, hat: np.ndarray) -> np.ndarray:
    """``|| <grad> u ||_2`` for a stack of Fourier coefficient arrays ``hat[..., *grid.shape]``."""
    axes = tuple(range(-grid.dim, 0))
    total = np.sum(np.abs(hat) ** 2 * (2.0 + grid.xi2), axis=axes)
    return np.sqrt(total * grid.volume) / grid.n**grid.dim


# --------------------------------------------------------------------------
# time-weighted norms


def log_time_grid(T: float, T_max: float, n_time: int = 128) -> np.ndarray:
    if not (0 < T < T_max):
        raise ConfigurationError(f"need 0 < T < T_max, got T={T}, T_max={T_max}")
    if n_time < 3:
        raise ConfigurationError("need at least 3 time nodes")
    return np.geomspace(T, T_max, n_time)


@dataclass(frozen=True)
class WeightedNormSpec:
    q: float
    r: float
    epsilon: float
    T: float
    time_grid: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (self.q > 0 and self.r > 0):
            raise ConfigurationError("norm exponents must be positive")
        if self.epsilon < 0 or not self.T > 0:
            raise ConfigurationError("need epsilon >= 0 and T > 0")
        if self.time_grid is not None:
            grid = np.asarray(self.time_grid, dtype=float)
            if grid.size == 0 or np.any(np.diff(grid) <= 0):
                raise ConfigurationError("time grid must be nonempty and increasing")
            object.__setattr__(self, "time_grid", grid)

    @property
    def T_max(self) -> float:
        return float(self.time_grid[-1])

    @classmethod
    def log_spaced(cls, q, r, epsilon, T, T_max, n_time=128):
        return cls(q, r, epsilon, T, log_time_grid(T, T_max, n_time))


@dataclass(frozen=True)
class NormValue:
    value: float
    error: float

    def __float__(self):
        return self.value


def _log_quadrature(tau: np.ndarray, h: np.ndarray) -> tuple[float, float]:
    """Simpson integral of ``h`` over ``tau`` and a half-resolution error estimate."""
    if tau.size == 1:
        return 0.0, 0.0
    if tau.size == 2:
        full = float(trapezoid(h, x=tau))
        return full, abs(full)
    full = float(simpson(h, x=tau))
    idx = np.arange(0, tau.size, 2)
    if idx[-1] != tau.size - 1:
        idx = np.append(idx, tau.size - 1)
    coarse = float(simpson(h[idx], x=tau[idx]) if idx.size > 2 else trapezoid(h[idx], x=tau[idx]))
    return full, abs(full - coarse)


def weighted_norm_profile(times, spatial, q, epsilon, T: float | None = None) -> NormValue:
    """``|| t^eps a(t) ||_{L^q(T, t_last)}`` from samples ``a(t_j) = spatial[j]``.

    If ``T`` lies strictly between nodes, the log-integrand is interpolated
    linearly in ``log t`` at ``T`` and the partial interval is a trapezoid.
    """
    times = np.asarray(times, dtype=float)
    spatial = np.asarray(spatial, dtype=float)
    if times.size == 0:
        raise ConfigurationError("empty trajectory")
    if T is None:
        T = float(times[0])
    if T > times[-1]:
        raise ConfigurationError("T beyond the sampled horizon")
    weighted = times**epsilon * spatial
    if math.isinf(q):
        keep = times >= T * (1 - 1e-12)
        return NormValue(float(np.max(weighted[keep])) if np.any(keep) else 0.0, 0.0)
    tau = np.log(times)
    h = weighted**q * times
    keep = times >= T * (1 - 1e-12)
    tT = math.log(T)
    # partial first interval: trapezoid on the interpolated integrand, so the
    # value stays monotone in T; Simpson only on the sampled nodes
    head = 0.0
    if not np.isclose(tau[keep][0], tT, rtol=0, atol=1e-12):
        hT = float(np.interp(tT, tau, h))
        head = 0.5 * (tau[keep][0] - tT) * (hT + h[keep][0])
    integral, err = _log_quadrature(tau[keep], h[keep])
    integral += head
    integral = max(integral, 0.0)
    value = integral ** (1.0 / q)
    if integral > 0:
        err_value = value * err / (q * integral)
    else:
        err_value = err ** (1.0 / q)
    return NormValue(value, err_value)


def trajectory_lp_norms(traj: Trajectory, r) -> np.ndarray:
    return np.array([lp_norm_array(traj.grid, traj.data[j], r) for j in range(len(traj))])


def weighted_spacetime_norm(traj: Trajectory, spec: WeightedNormSpec, with_error: bool = False):
    """``X^{q,r}_eps(I_T)`` norm of a trajectory sampled on ``spec.time_grid``."""
    if len(traj) == 0:
        raise ConfigurationError("empty trajectory")
    if spec.time_grid is not None and (
        spec.time_grid.size != traj.times.size or not np.allclose(spec.time_grid, traj.times, rtol=1e-12)
    ):
        raise ConfigurationError("trajectory is not sampled on the norm's time grid")
    res = weighted_norm_profile(traj.times, trajectory_lp_norms(traj, spec.r), spec.q, spec.epsilon, spec.T)
    return res if with_error else res.value


def norm_table(traj: Trajectory, specs) -> list[dict]:
    """Rows ``(T, q, r, epsilon, value, quadrature_error)`` for CSV output."""
    rows = []
    cache = {}
    for spec in specs:
        if spec.r not in cache:
            cache[spec.r] = trajectory_lp_norms(traj, spec.r)
        res = weighted_norm_profile(traj.times, cache[spec.r], spec.q, spec.epsilon, spec.T)
        rows.append({"T": spec.T, "q": spec.q, "r": spec.r, "epsilon": spec.epsilon,
                     "value": res.value, "quadrature_error": res.error})
    return rows


# --------------------------------------------------------------------------
# exponent arithmetic


def strauss_exponent(d: int) -> float:
    return (2 - d + math.sqrt(d * d + 12 * d + 4)) / (2 * d)


def lower_threshold(d: int) -> float:
    """Positive root of ``2 d p^2 + (d - 4) p - 4``."""
    return (4 - d + math.sqrt(d * d + 24 * d + 16)) / (4 * d)


@dataclass(frozen=True)
class ExponentWindow:
    d: int
    p: float
    lower: float
    upper: float
    p0: float
    p1: float
    q0: float
    r0: float

    @property
    def nonempty(self) -> bool:
        return self.upper > max(self.lower, 0.0)

    @property
    def epsilon(self) -> float:
        """Default weight: the midpoint of the window."""
        return 0.5 * (max(self.lower, 0.0) + self.upper)

    def contains(self, eps: float) -> bool:
        return max(self.lower, 0.0) < eps < self.upper

    def to_dict(self) -> dict:
        return {"d": self.d, "p": self.p, "lower": self.lower, "upper": self.upper, "p0": self.p0,
                "p1": self.p1, "q0": self.q0, "r0": self.r0, "epsilon": self.epsilon, "nonempty": self.nonempty}


def exponent_window(d: int, p: float) -> ExponentWindow:
    if d < 1 or not p > 0:
        raise ConfigurationError("need d >= 1 and p > 0")
    lower = 1.0 / p - d / 4.0
    upper = d * p / (4.0 * (p + 1.0))
    return ExponentWindow(d, p, lower, upper, strauss_exponent(d), lower_threshold(d),
                          4.0 * (p + 1.0) / (d * p), 2.0 * (p + 1.0))


@dataclass(frozen=True)
class Admissibility:
    admissible: bool
    residual: float
    excluded_endpoint: bool
    uniqueness: bool | None = None
    ratio: float | None = None

    def __bool__(self):
        return self.admissible


def _inv(x) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def check_admissible(d: int, q, r, p: float | None = None, tol: float = 1e-12) -> Admissibility:
    """Strichartz admissibility ``1/q + d/(2r) = d/4`` on ``[2, inf]^2`` minus ``(2, 2, inf)``.

    With ``p`` given, also test ``max(1, 2d/(d+2)) <= r/(p+1) <= 2`` and
    ``(d, r/(p+1)) != (2, 1)``.
    """
    residual = _inv(q) + d * _inv(r) / 2.0 - d / 4.0
    excluded = d == 2 and q == 2 and math.isinf(r)
    in_range = q >= 2 and r >= 2
    ok = abs(residual) <= tol and not excluded and in_range
    uniq = ratio = None
    if p is not None:
        ratio = r / (p + 1.0)
        uniq = bool(max(1.0, 2.0 * d / (d + 2.0)) - tol <= ratio <= 2.0 + tol and not (d == 2 and abs(ratio - 1) < tol))
    return Admissibility(bool(ok), residual, excluded, uniq, ratio)


# --------------------------------------------------------------------------
# GP energy


@dataclass(frozen=True)
class EnergyPair:
    direct: float
    transformed: float

    @property
    def relative_gap(self) -> float:
        scale = max(abs(self.direct), abs(self.transformed), 1e-300)
        return abs(self.direct - self.transformed) / scale


def _l2sq_hat(grid: Grid, hat: np.ndarray) -> float:
    return float(np.sum(np.abs(hat) ** 2) * grid.volume / grid.n ** (2 * grid.dim))


def gp_energy(u: SpectralField) -> EnergyPair:
    """GP energy of ``u = psi - 1`` by two independent evaluators.

    direct:      int |grad u|^2/2 + (|u|^2 + 2 u_1)^2/4
    transformed: ||grad zeta||^2/2 + ||U |u|^2||^2/4 with zeta = U^{-1} M(u),
                 where |grad U^{-1}| is applied as the regular symbol <xi>.
    """
    if u.components != 1:
        raise ConfigurationError("GP energy expects a single-component field")
    grid = u.grid
    vals = u.values()[0]
    hat = grid.fft(vals)
    grad_sq = _l2sq_hat(grid, hat * grid.abs_xi)
    pot = np.sum((np.abs(vals) ** 2 + 2 * vals.real) ** 2) * grid.cell_volume
    direct = 0.5 * grad_sq + 0.25 * float(pot)

    dens_hat = grid.fft(np.abs(vals) ** 2)
    K = combined_symbol(["K"]).on(grid)
    real_part = grid.fft(vals.real) + K * dens_hat
    imag_part = grid.fft(vals.imag)
    # |grad U^{-1}| simplifies to the regular symbol <xi>, kept at xi = 0
    grad_zeta = _l2sq_hat(grid, combined_symbol(["|∇|", "U^-1"]).on(grid) * real_part)
    grad_zeta += _l2sq_hat(grid, combined_symbol(["|∇|"]).on(grid) * imag_part)
    U = combined_symbol(["U"]).on(grid)
    transformed = 0.5 * grad_zeta + 0.25 * _l2sq_hat(grid, U * dens_hat)
    return EnergyPair(float(direct), float(transformed))


# --------------------------------------------------------------------------
# scaling


def scaling_map(traj: Trajectory, a: float, p: float) -> Trajectory:
    """``u -> a^{2/p} u(a^2 t, a x)`` realized on the grid of side ``L / a``.

    Grid samples are shared exactly, so the map is lossless.
    """
    if not a > 0:
        raise ConfigurationError("scaling parameter must be positive")
    grid = Grid(traj.grid.dim, traj.grid.n, traj.grid.length / a)
    return Trajectory(grid, traj.times / a**2, traj.data * a ** (2.0 / p), dict(traj.meta))
