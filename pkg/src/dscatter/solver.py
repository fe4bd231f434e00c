"""Backward Picard construction of scattering solutions and forward extension.

The final-data problem ``u(t) - U(t) u_+ -> 0`` is solved on ``[T, T_max]``
through the fixed point of

    Phi(v)(t) = i int_t^{T_max} U(t - s) f(U(s) u_+ + v(s)) ds,

with ``U(t) = exp(-i t Omega(xi))``. The Duhamel integral is evaluated in the
interaction picture: ``G(s) = U(-s) F(s)`` is integrated cumulatively from
the right in ``tau = log s`` (fourth-order cumulative rule) and mapped back with one propagator per output
time. The same engine serves the Gross-Pitaevskii variable, for which
``Omega = H``.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import ConfigurationError, DivergenceError, NonConvergenceError, NumericalError, PreconditionError
from .fitting import fit_power_law
from .norms import (
    WeightedNormSpec,
    check_admissible,
    exponent_window,
    lp_norm_array,
    log_time_grid,
    weighted_norm_profile,
)
from .spectral import Grid, SpectralField, Trajectory, free_propagate, gp_dispersion
from .systems import SystemSpec, eval_f, validate_system

T_LADDER_CAP = 2**10


@dataclass(frozen=True)
class SolverConfig:
    T: float = 10.0
    T_max: float = 1000.0
    n_time: int = 129
    tol: float = 1e-8
    max_iter: int = 200
    eta_target: float = 0.1
    epsilon: float | None = None
    q1: float | None = None
    r1: float | None = None
    q0: float | None = None
    r0: float | None = None
    divergence_window: int = 3
    check_residual: bool = True

    def __post_init__(self):
        if not (1 <= self.T < self.T_max):
            raise ConfigurationError(f"need 1 <= T < T_max, got T={self.T}, T_max={self.T_max}")
        if not self.tol > 0:
            raise ConfigurationError("tolerance must be positive")
        if self.n_time < 5:
            raise ConfigurationError("need at least 5 time nodes")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be positive")

    def time_grid(self) -> np.ndarray:
        return log_time_grid(self.T, self.T_max, self.n_time)

    def with_T(self, T: float) -> SolverConfig:
        """Same horizon ratio ``T_max / T`` started at a new ``T``."""
        return replace(self, T=T, T_max=T * self.T_max / self.T)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class IterationReport:
    converged: bool = False
    iterations: int = 0
    updates: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    residual: float | None = None
    residual_coarse: float | None = None
    quadrature_error: float | None = None
    tail_bound: float | None = None
    tail_decay: float | None = None
    smallness: float | None = None
    solution_norm: float | None = None
    wall_time: float = 0.0
    epsilon: float | None = None
    pairs: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def max_ratio(self) -> float:
        r = [x for x in self.ratios if np.isfinite(x)]
        return max(r) if r else 0.0

    def geometric_decay(self, tail: int = 3) -> bool:
        """All contraction ratios after the first ``tail`` iterations are below 1."""
        r = np.asarray(self.ratios, dtype=float)
        r = r[np.isfinite(r)]
        return bool(r.size == 0 or np.all(r[min(tail, max(r.size - 1, 0)):] < 1.0))

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items()}
        out["max_ratio"] = self.max_ratio
        return out


# --------------------------------------------------------------------------
# linear flows


@dataclass(frozen=True)
class LinearFlow:
    """``exp(-i t Omega)`` with a real dispersion ``Omega[N, *grid.shape]``."""

    grid: Grid
    omega: np.ndarray = field(repr=False)
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def nls(cls, grid: Grid, masses) -> LinearFlow:
        masses = np.atleast_1d(np.asarray(masses, dtype=float))
        if np.any(masses == 0):
            raise ConfigurationError("mass matrix entries must be nonzero")
        return cls(grid, masses.reshape((-1,) + (1,) * grid.dim) * grid.xi2[np.newaxis], "nls")

    @classmethod
    def gp(cls, grid: Grid) -> LinearFlow:
        return cls(grid, gp_dispersion(grid.xi2)[np.newaxis], "gp")

    @property
    def max_frequency(self) -> float:
        return float(np.max(np.abs(self.omega)))

    def phases(self, times: np.ndarray) -> np.ndarray:
        """``exp(-i t_j Omega)`` stacked over ``times``; the last table is cached."""
        key = (times.size, hash(times.tobytes()))
        table = self._cache.get(key)
        if table is None:
            table = np.exp(-1j * times.reshape((-1,) + (1,) * self.omega.ndim) * self.omega)
            self._cache.clear()
            self._cache[key] = table
        return table

    def evolve(self, hat: np.ndarray, times) -> np.ndarray:
        """Apply ``exp(-i t_j Omega)`` to ``hat[j]`` (or to a single ``hat`` for scalar t)."""
        times = np.asarray(times, dtype=float)
        if times.ndim == 0:
            return hat * np.exp(-1j * float(times) * self.omega)
        if np.all(times >= 0):
            return hat * self.phases(times)
        if np.all(times <= 0):
            return hat * self.phases(-times).conj()
        return np.stack([self.evolve(hat[j] if hat.ndim > self.omega.ndim else hat, t) for j, t in enumerate(times)])


# --------------------------------------------------------------------------
# Duhamel integral


def _uniform_log(times: np.ndarray) -> bool:
    d = np.diff(np.log(times))
    return np.allclose(d, d[0], rtol=1e-9, atol=0)


def _right_cumulative(tau: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``int_{tau_j}^{tau_end} y`` for every node.

    On a uniform grid each interval is integrated with the cubic through
    four neighbouring nodes (fourth order); otherwise cumulative Simpson.
    """
    if tau.size < 4:
        raise ConfigurationError("need at least 4 nodes")
    steps = np.diff(tau)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        if np.iscomplexobj(y):
            return _right_cumulative(tau, y.real) + 1j * _right_cumulative(tau, y.imag)
        C = cumulative_simpson(y, x=tau, axis=0, initial=0)
        return C[-1] - C
    h = float(steps[0]) / 24.0
    pieces = np.empty((tau.size - 1,) + y.shape[1:], dtype=y.dtype)
    pieces[1:-1] = 13.0 * (y[1:-2] + y[2:-1])
    pieces[1:-1] -= y[:-3]
    pieces[1:-1] -= y[3:]
    pieces[0] = 9.0 * y[0] + 19.0 * y[1] - 5.0 * y[2] + y[3]
    pieces[-1] = 9.0 * y[-1] + 19.0 * y[-2] - 5.0 * y[-3] + y[-4]
    pieces *= h
    out = np.zeros_like(y)
    np.cumsum(pieces[::-1], axis=0, out=out[-2::-1])
    return out


def duhamel_hat(times: np.ndarray, F_hat: np.ndarray, flow: LinearFlow, with_error: bool = False):
    """``i int_t^{t_last} exp(-i(t-s)Omega) F(s) ds`` on Fourier data ``F_hat[nt, N, ...]``.

    With ``with_error`` also returns the largest L^2 change at the nodes
    shared with the every-other-node quadrature.
    """
    if not np.all(np.isfinite(F_hat)):
        raise NumericalError("non-finite Duhamel source")
    tau = np.log(times)
    G = flow.evolve(F_hat, -times)
    G *= times.reshape((-1,) + (1,) * (G.ndim - 1))
    W = _right_cumulative(tau, G)
    err = None
    if with_error:
        idx = np.arange(0, times.size, 2)
        if idx[-1] != times.size - 1:
            idx = np.append(idx, times.size - 1)
        Wc = _right_cumulative(tau[idx], G[idx])
        diff = Wc - W[idx]
        g = flow.grid
        axes = tuple(range(1, diff.ndim))
        err = float(np.max(np.sqrt(np.sum(np.abs(diff) ** 2, axis=axes) * g.volume) / g.n**g.dim))
    del G
    out = 1j * flow.evolve(W, times)
    return (out, err) if with_error else out


def duhamel_backward(F: Trajectory, M, t_out=None):
    """Backward Duhamel integral ``i int_t^{T_max} U(t-s) F(s) ds`` of a sampled source.

    Returns ``(trajectory, quadrature_error)`` on the requested output times
    (all nodes by default).
    """
    flow = LinearFlow.nls(F.grid, _masses_for(M, F.components))
    F_hat = F.grid.fft(F.data)
    out_hat, err = duhamel_hat(F.times, F_hat, flow, with_error=True)
    data = F.grid.ifft(out_hat)
    times = F.times
    if t_out is not None:
        t_out = np.atleast_1d(np.asarray(t_out, dtype=float))
        idx = np.searchsorted(F.times, t_out)
        if np.any(idx >= F.times.size) or not np.allclose(F.times[np.minimum(idx, F.times.size - 1)], t_out, rtol=1e-12):
            raise ConfigurationError("output times must be nodes of the source time grid")
        data, times = data[idx], t_out
    return Trajectory(F.grid, times, data, {"quadrature_error": err}), err


def _masses_for(M, components):
    masses = np.atleast_1d(np.asarray(M, dtype=float))
    if masses.ndim == 2:
        masses = np.diag(masses)
    if masses.size == 1 and components > 1:
        masses = np.full(components, masses[0])
    if masses.size != components:
        raise ConfigurationError("mass matrix does not match the component count")
    return masses


# --------------------------------------------------------------------------
# generic Picard engine


def _l2_from_hat(grid: Grid, hat: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, hat.ndim))
    return np.sqrt(np.sum(np.abs(hat) ** 2, axis=axes) * grid.volume) / grid.n**grid.dim


@dataclass(frozen=True)
class SolverNorm:
    """``max(X^{inf,2}_eps, X^{q1,r1}_eps)`` of ``weight(xi) * w``."""

    grid: Grid
    times: np.ndarray
    epsilon: float
    q1: float
    r1: float
    weight: np.ndarray | None = None

    def spatial(self, hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.weight is not None:
            hat = hat * self.weight
        l2 = _l2_from_hat(self.grid, hat)
        if self.r1 == 2:
            return l2, l2
        phys = self.grid.ifft(hat)
        return l2, np.array([lp_norm_array(self.grid, phys[j], self.r1) for j in range(phys.shape[0])])

    def __call__(self, hat: np.ndarray) -> float:
        l2, lr = self.spatial(hat)
        a = weighted_norm_profile(self.times, l2, math.inf, self.epsilon).value
        b = weighted_norm_profile(self.times, lr, self.q1, self.epsilon).value
        return max(a, b)


def picard_iterate(source: Callable[[np.ndarray], np.ndarray], times: np.ndarray, flow: LinearFlow,
                   norm: SolverNorm, cfg: SolverConfig, init: np.ndarray | None = None,
                   report: IterationReport | None = None):
    """Iterate ``w <- i int_t U(t-s) source(w)(s) ds`` from ``init``.

    ``source`` maps the Fourier data of the correction to the Fourier data
    of the nonlinearity. Returns ``(w, report)``.
    """
    report = report or IterationReport()
    shape = (times.size,) + flow.omega.shape
    w = np.zeros(shape, dtype=np.complex128) if init is None else np.array(init, dtype=np.complex128)
    prev_update = None
    streak = 0
    t0 = _time.perf_counter()
    for k in range(cfg.max_iter):
        new = duhamel_hat(times, source(w), flow)
        update = norm(new - w)
        w = new
        report.iterations = k + 1
        report.updates.append(float(update))
        if not np.isfinite(update):
            report.wall_time = _time.perf_counter() - t0
            raise NumericalError("non-finite iterate")
        if prev_update is not None:
            ratio = update / prev_update if prev_update > 0 else (0.0 if update == 0 else math.inf)
            report.ratios.append(float(ratio))
            streak = streak + 1 if ratio >= 1 else 0
            if streak >= cfg.divergence_window:
                report.wall_time = _time.perf_counter() - t0
                err = DivergenceError(f"contraction ratio >= 1 for {streak} consecutive iterations; increase T")
                err.report = report
                raise err
        prev_update = update
        if update <= cfg.tol:
            report.converged = True
            break
    report.wall_time = _time.perf_counter() - t0
    if not report.converged:
        err = NonConvergenceError(f"no convergence in {cfg.max_iter} iterations (last update {report.updates[-1]:.3e})")
        err.report = report
        raise err
    return w, report


def refine_log_grid(times: np.ndarray) -> np.ndarray:
    """Insert the log-midpoint of every interval."""
    tau = np.log(times)
    fine = np.empty(2 * tau.size - 1)
    fine[0::2] = tau
    fine[1::2] = 0.5 * (tau[1:] + tau[:-1])
    return np.exp(fine)


_MID_INTERIOR = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
_MID_EDGE = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0


def midpoint_interpolate(values: np.ndarray) -> np.ndarray:
    """Cubic Lagrange values at the midpoints of a uniform node sequence (axis 0)."""
    n = values.shape[0]
    if n < 4:
        raise ConfigurationError("need at least 4 nodes for midpoint interpolation")
    out = np.empty((n - 1,) + values.shape[1:], dtype=values.dtype)
    for j in range(n - 1):
        if j == 0:
            out[j] = np.tensordot(_MID_EDGE, values[0:4], axes=1)
        elif j == n - 2:
            out[j] = np.tensordot(_MID_EDGE, values[[n - 1, n - 2, n - 3, n - 4]], axes=1)
        else:
            out[j] = np.tensordot(_MID_INTERIOR, values[j - 1 : j + 3], axes=1)
    return out


def interpolate_correction(times: np.ndarray, w: np.ndarray, flow: LinearFlow) -> tuple[np.ndarray, np.ndarray]:
    """Correction on the refined grid, interpolated in the interaction picture."""
    if not _uniform_log(times):
        raise ConfigurationError("refinement requires a log-uniform time grid")
    fine_t = refine_log_grid(times)
    pulled = flow.evolve(w, -times)
    mid = midpoint_interpolate(pulled)
    fine = np.empty((fine_t.size,) + w.shape[1:], dtype=np.complex128)
    fine[0::2] = w
    fine[1::2] = flow.evolve(mid, fine_t[1::2])
    return fine_t, fine


def doubled_residual(source, times, w, flow, norm: SolverNorm) -> float:
    """``||Phi(w) - w||`` with ``Phi`` evaluated on the refined quadrature grid."""
    fine_t, fine_w = interpolate_correction(times, w, flow)
    phi = duhamel_hat(fine_t, source(fine_w, fine_t), flow)
    return norm(phi[0::2] - w)


# --------------------------------------------------------------------------
# NLS systems


def _exponents(spec: SystemSpec, d: int, cfg: SolverConfig):
    win = exponent_window(d, spec.p)
    eps = cfg.epsilon if cfg.epsilon is not None else win.epsilon
    q0 = cfg.q0 if cfg.q0 is not None else win.q0
    r0 = cfg.r0 if cfg.r0 is not None else win.r0
    q1 = cfg.q1 if cfg.q1 is not None else q0
    r1 = cfg.r1 if cfg.r1 is not None else r0
    flags = []
    if not win.nonempty:
        flags.append("empty_exponent_window")
    elif not win.contains(eps):
        flags.append("epsilon_outside_window")
    if not check_admissible(d, q0, r0):
        flags.append("non_admissible_smallness_pair")
    if not check_admissible(d, q1, r1):
        flags.append("non_admissible_solution_pair")
    return win, eps, (q0, r0), (q1, r1), flags


@dataclass
class ScatteringRun:
    """Everything produced by one backward construction."""

    times: np.ndarray
    free_hat: np.ndarray = field(repr=False)
    correction_hat: np.ndarray = field(repr=False)
    flow: LinearFlow = field(repr=False)
    report: IterationReport
    norm: SolverNorm = field(repr=False)
    source: Callable = field(repr=False)

    def trajectory(self) -> Trajectory:
        g = self.flow.grid
        return Trajectory(g, self.times, g.ifft(self.free_hat + self.correction_hat), {"report": self.report})

    def correction(self) -> Trajectory:
        g = self.flow.grid
        return Trajectory(g, self.times, g.ifft(self.correction_hat))


def smallness_norm(u_plus: SpectralField, masses, cfg: SolverConfig, eps: float, q0: float, r0: float) -> float:
    times = cfg.time_grid()
    flow = LinearFlow.nls(u_plus.grid, masses)
    free = u_plus.grid.ifft(flow.evolve(u_plus.frequency().data, times))
    lr = np.array([lp_norm_array(u_plus.grid, free[j], r0) for j in range(times.size)])
    return weighted_norm_profile(times, lr, q0, eps).value


def _nls_source(spec: SystemSpec, grid: Grid, free_hat: np.ndarray, flow: LinearFlow, u_plus_hat: np.ndarray):
    def source(w_hat, times=None):
        if times is None:
            base = free_hat
        else:
            base = flow.evolve(u_plus_hat, times)
        u = grid.ifft(base + w_hat)
        F = eval_f(spec, np.moveaxis(u, 1, 0))
        return grid.fft(np.moveaxis(F, 0, 1))

    return source


def picard_run(spec: SystemSpec, u_plus: SpectralField, cfg: SolverConfig, init: np.ndarray | None = None,
               check_precondition: bool = True) -> ScatteringRun:
    grid = u_plus.grid
    if u_plus.components != spec.N:
        raise ConfigurationError(f"final datum has {u_plus.components} components, system has {spec.N}")
    if not spec.is_free:
        validate_system(spec, sample_count=500)
    win, eps, (q0, r0), (q1, r1), flags = _exponents(spec, grid.dim, cfg)
    times = cfg.time_grid()
    flow = LinearFlow.nls(grid, spec.masses)
    u_plus_hat = u_plus.frequency().data
    free_hat = flow.evolve(u_plus_hat, times)
    free_phys = grid.ifft(free_hat)
    lr = np.array([lp_norm_array(grid, free_phys[j], r0) for j in range(times.size)])
    small = weighted_norm_profile(times, lr, q0, eps).value
    del free_phys
    report = IterationReport(smallness=small, epsilon=eps, flags=flags,
                             pairs={"q0": q0, "r0": r0, "q1": q1, "r1": r1})
    if check_precondition and small > cfg.eta_target:
        err = PreconditionError(
            f"free evolution too large on [T, T_max]: {small:.3e} > eta_target {cfg.eta_target:.3e}; increase T")
        err.report = report
        raise err
    norm = SolverNorm(grid, times, eps, q1, r1)
    source = _nls_source(spec, grid, free_hat, flow, u_plus_hat)
    w, report = picard_iterate(source, times, flow, norm, cfg, init, report)
    run = ScatteringRun(times, free_hat, w, flow, report, norm, source)
    _finalize(run, spec, cfg)
    return run


def _finalize(run: ScatteringRun, spec: SystemSpec | None, cfg: SolverConfig):
    report = run.report
    report.solution_norm = run.norm(run.correction_hat)
    report.residual_coarse = report.updates[-1] if report.updates else 0.0
    if cfg.check_residual:
        _, report.quadrature_error = duhamel_hat(run.times, run.source(run.correction_hat), run.flow, with_error=True)
        report.residual = doubled_residual(run.source, run.times, run.correction_hat, run.flow, run.norm)
    if spec is not None:
        tail, decay = tail_bound(spec, run)
        report.tail_bound, report.tail_decay = tail, decay


def picard_solve(spec: SystemSpec, u_plus: SpectralField, cfg: SolverConfig, init=None):
    """Scattering solution on ``[T, T_max]``; returns ``(trajectory, IterationReport)``."""
    run = picard_run(spec, u_plus, cfg, init)
    return run.trajectory(), run.report


def tail_bound(spec: SystemSpec, run: ScatteringRun) -> tuple[float, float]:
    """Bound on ``|| int_{T_max}^inf f(u) ds ||_2`` from the fitted free sup-norm decay.

    With ``||u(t)||_inf ~ t^-gamma`` fitted on the last third of nodes,
    ``||f(u(s))||_2 <= c (s/T_max)^(-p gamma)`` with ``c = ||f(u(T_max))||_2``.
    """
    if spec.is_free:
        return 0.0, math.inf
    grid = run.flow.grid
    times = run.times
    start = times.size - max(times.size // 3, 8)
    free = grid.ifft(run.free_hat[start:])
    sup = np.array([lp_norm_array(grid, free[j], math.inf) for j in range(free.shape[0])])
    if np.any(sup <= 0):
        return 0.0, math.inf
    gamma = -fit_power_law(times[start:], sup).exponent
    last = grid.ifft(run.free_hat[-1] + run.correction_hat[-1])
    F = eval_f(spec, last)
    c = float(lp_norm_array(grid, F, 2))
    beta = spec.p * gamma
    if beta <= 1:
        return math.inf, gamma
    return c * times[-1] / (beta - 1.0), gamma


def scan_T(spec: SystemSpec, u_plus: SpectralField, cfg: SolverConfig, cap: float = T_LADDER_CAP) -> tuple[SolverConfig, float]:
    """Smallest ``T`` on the doubling ladder from ``cfg.T`` meeting the smallness precondition."""
    win, eps, (q0, r0), _, _ = _exponents(spec, u_plus.grid.dim, cfg)
    T = cfg.T
    last = math.inf
    while T <= cap:
        trial = cfg.with_T(T)
        last = smallness_norm(u_plus, spec.masses, trial, eps, q0, r0)
        if last <= cfg.eta_target:
            return trial, last
        T *= 2
    raise PreconditionError(f"smallness not reached up to T={cap} (last value {last:.3e}); increase T or shrink data")


def random_start(run: ScatteringRun, scale: float, seed: int = 0) -> np.ndarray:
    """Smooth random correction with solver norm ``scale``, used to probe uniqueness."""
    rng = np.random.default_rng(seed)
    grid = run.flow.grid
    shape = run.free_hat.shape[1:]
    noise = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    hat = grid.fft(noise) * np.exp(-grid.xi2)
    w = run.flow.evolve(hat, run.times) * (run.times[0] / run.times).reshape((-1,) + (1,) * len(shape))
    n = run.norm(w)
    return w * (scale / n) if n > 0 else w


def uniqueness_probe(spec: SystemSpec, u_plus: SpectralField, cfg: SolverConfig, run: ScatteringRun,
                     seed: int = 0, scale: float | None = None) -> dict:
    """Restart from a random small correction and compare fixed points."""
    scale = scale if scale is not None else 0.5 * cfg.eta_target
    init = random_start(run, scale, seed)
    other = picard_run(spec, u_plus, replace(cfg, check_residual=False), init=init, check_precondition=False)
    gap = run.norm(other.correction_hat - run.correction_hat)
    return {"gap": gap, "start_norm": scale, "iterations": other.report.iterations,
            "agrees": bool(gap <= 10 * cfg.tol)}


# --------------------------------------------------------------------------
# forward extension


def extend_forward(spec: SystemSpec, u_at_T: SpectralField, t_span, dt: float, max_phase: float = math.pi / 4,
                   record_every: int = 1) -> Trajectory:
    """Strang splitting: half nonlinear step, exact linear step, half nonlinear step.

    ``t_span = (t0, t1)``; ``t1 < t0`` integrates backward. ``dt`` is the
    step magnitude and is shortened to land exactly on ``t1``.
    """
    t0, t1 = map(float, t_span)
    grid = u_at_T.grid
    if not dt > 0:
        raise ConfigurationError("step size must be positive")
    steps = max(1, int(math.ceil(abs(t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / steps
    phase = abs(h) * float(np.max(np.abs(spec.masses))) * grid.xi_max**2
    if phase > max_phase:
        raise ConfigurationError(f"step too large: dt*max|M|*xi_max^2 = {phase:.3f} > {max_phase:.3f}")
    flow = LinearFlow.nls(grid, spec.masses)
    lin = np.exp(-1j * h * flow.omega)
    u = u_at_T.values().copy()
    times = [t0]
    frames = [u.copy()]
    for k in range(steps):
        u = spec.nonlinear_flow(u, 0.5 * h)
        u = grid.ifft(grid.fft(u) * lin)
        u = spec.nonlinear_flow(u, 0.5 * h)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite state at step {k + 1}")
        if (k + 1) % record_every == 0 or k + 1 == steps:
            times.append(t0 + (k + 1) * h)
            frames.append(u.copy())
    times = np.array(times)
    data = np.array(frames)
    if t1 < t0:
        times, data = times[::-1], data[::-1]
    return Trajectory(grid, times, data, {"dt": abs(h), "steps": steps})


# --------------------------------------------------------------------------
# scattering verification


@dataclass
class ScatteringReport:
    times: np.ndarray
    differences: np.ndarray
    monotone: bool
    decay_exponent: float | None
    fit_r_squared: float | None
    weighted_norm: float
    weighted_norm_truncated: float
    weighted_norm_change: float
    tail_bound: float
    reduction: float
    epsilon: float
    passes: dict
    tail_in_fit: bool = True

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def tail_is_resolvable(tail: float, reference: float) -> bool:
    """A tail bound is added to fitted differences only if it does not exceed them at the window end."""
    return bool(math.isfinite(tail) and tail <= reference)


def _monotone(values: np.ndarray, wiggle: float = 0.10, floor: float = 1e-300) -> bool:
    running = np.minimum.accumulate(values)
    return bool(np.all(values[1:] <= (1 + wiggle) * running[:-1] + floor))


def verify_scattering(spec: SystemSpec, traj: Trajectory, u_plus: SpectralField, window: WeightedNormSpec,
                      tail: float = 0.0) -> ScatteringReport:
    """Compare a trajectory with the free evolution of ``u_plus`` on the window nodes.

    ``tail`` bounds the difference still accumulated beyond the last node. It
    always enters the "difference at T_max" of the reduction factor. The decay
    fit uses ``differences + tail`` only when ``tail_is_resolvable``; a larger
    bound carries no rate information and the truncated differences are fitted.
    """
    keep = traj.times >= window.T * (1 - 1e-12)
    if window.time_grid is not None:
        keep &= traj.times <= window.T_max * (1 + 1e-12)
    times = traj.times[keep]
    if times.size == 0:
        raise ConfigurationError("trajectory does not cover the window")
    grid = traj.grid
    flow = LinearFlow.nls(grid, spec.masses)
    uh = grid.fft(traj.data[keep])
    pulled = flow.evolve(uh, -times)
    diff_hat = pulled - u_plus.frequency().data[np.newaxis]
    diffs = _l2_from_hat(grid, diff_hat)
    scale = max(float(np.max(_l2_from_hat(grid, uh))), 1e-300)
    exact_zero = bool(np.max(diffs) <= 1e-13 * scale) and tail == 0
    free_diff = grid.ifft(flow.evolve(diff_hat, times))
    lr = np.array([lp_norm_array(grid, free_diff[j], window.r) for j in range(times.size)])
    wn = weighted_norm_profile(times, lr, window.q, window.epsilon).value
    half = times <= times[-1] / 2
    wn_trunc = weighted_norm_profile(times[half], lr[half], window.q, window.epsilon).value if half.sum() >= 3 else wn
    change = abs(wn - wn_trunc) / wn if wn > 0 else 0.0
    half_end = times <= times[-1] / 2
    fit_tail = tail if tail_is_resolvable(tail, diffs[half_end][-1] if half_end.any() else diffs[0]) else 0.0
    envelope = diffs + fit_tail
    monotone = exact_zero or _monotone(diffs + tail if math.isfinite(tail) else diffs)
    exponent = r2 = None
    if not exact_zero:
        try:
            fit = fit_power_law(times, envelope, (times[0], times[-1] / 2))
            exponent, r2 = -fit.exponent, fit.r_squared
        except ConfigurationError:
            pass
    end = diffs[-1] + tail
    reduction = math.inf if end == 0 else float(diffs[0] / end)
    eps = window.epsilon
    passes = {
        "monotone": monotone,
        "finite_norm": bool(np.isfinite(wn)),
        "reduction": exact_zero or reduction >= 2.0,
        "decay": exact_zero or (exponent is not None and exponent >= eps),
    }
    return ScatteringReport(times, diffs, monotone, exponent, r2, wn, wn_trunc, change, tail, reduction, eps, passes,
                            tail_in_fit=fit_tail > 0 or tail == 0)
