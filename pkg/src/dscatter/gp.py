"""Gross-Pitaevskii final-data problem around the constant state psi = 1.

With ``u = psi - 1 = u_1 + i u_2`` the quadratic change of variables

    M(u) = u_1 + i U u_2 + K |u|^2,   U = |xi|/<xi>,  K = <xi>^-2,
    zeta = U^{-1} M(u),

turns the equation into ``i zeta_t - H zeta = N(u)`` with ``H = |xi| <xi>``
and

    N(u) = 2 u_1^2 + |u|^2 u_1 - i H^{-1} div(4 u_1 grad u_2 + grad(|u|^2 u_2)).

Inverting ``M(u) = U phi`` is the fixed point ``u = U phi_1 + i phi_2 - K |u|^2``.
Every operator singular at the origin is applied through a simplified
combined symbol; residual zero modes are dropped and flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, NumericalError, PreconditionError, ThresholdError
from .fitting import fit_power_law
from .norms import check_admissible, lp_norm_array, weighted_norm_profile
from .solver import (
    IterationReport,
    LinearFlow,
    ScatteringRun,
    SolverConfig,
    SolverNorm,
    doubled_residual,
    duhamel_hat,
    picard_iterate,
    random_start,
    tail_is_resolvable,
)
from .spectral import Grid, SpectralField, Trajectory, combined_symbol

# calibrate_eta_star() on the default 32^3 grid with box 16 pi: largest
# ||phi||_3 on the factor-2 ladder with contraction <= 1/2.
ETA_STAR_DEFAULT = 16.0
GP_EPSILON = 5.0 / 16.0
GP_Q, GP_R = 4.0, 3.0


@dataclass(frozen=True)
class GPSymbols:
    grid: Grid
    U: np.ndarray
    K: np.ndarray
    grad: tuple
    div_H: tuple
    bracket: np.ndarray
    v_correction: np.ndarray
    zeta_real: np.ndarray


@lru_cache(maxsize=8)
def gp_symbols(grid: Grid) -> GPSymbols:
    d = grid.dim
    return GPSymbols(
        grid,
        U=combined_symbol(["U"]).on(grid).real,
        K=combined_symbol(["K"]).on(grid).real,
        grad=tuple(combined_symbol(["grad"], axis=j).on(grid) for j in range(d)),
        div_H=tuple(combined_symbol(["H^-1∇·"], axis=j).on(grid) for j in range(d)),
        bracket=combined_symbol(["<∇>"]).on(grid).real,
        v_correction=combined_symbol(["<∇>^-1", "|∇|^-1"]).on(grid).real,
        zeta_real=combined_symbol(["U^-1"]).on(grid).real,
    )


def _axes(grid: Grid):
    return tuple(range(-grid.dim, 0))


def _single(field: SpectralField) -> np.ndarray:
    if field.components != 1:
        raise ConfigurationError("GP variables are single-component fields")
    return field.values()[0]


def _real_apply(grid: Grid, symbol: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply a real, even symbol to a real array; the result is real."""
    return grid.ifft(grid.fft(values) * symbol).real


# --------------------------------------------------------------------------
# transform and inverse


def transform_m_array(grid: Grid, u: np.ndarray) -> np.ndarray:
    sym = gp_symbols(grid)
    return u.real + 1j * _real_apply(grid, sym.U, u.imag) + _real_apply(grid, sym.K, np.abs(u) ** 2)


def transform_M(u: SpectralField) -> SpectralField:
    """``M(u) = u_1 + i U u_2 + (2 - Laplacian)^{-1} |u|^2``."""
    vals = _single(u)
    return u.with_data(transform_m_array(u.grid, vals)[np.newaxis], "physical")


def zeta_of_u(u: SpectralField) -> SpectralField:
    """``zeta = U^{-1} M(u)``; the zero mode of the real part is dropped."""
    grid = u.grid
    sym = gp_symbols(grid)
    vals = _single(u)
    real = vals.real + _real_apply(grid, sym.K, np.abs(vals) ** 2)
    zeta = _real_apply(grid, sym.zeta_real, real) + 1j * vals.imag
    return u.with_data(zeta[np.newaxis], "physical", zero_mode_dropped=True)


@dataclass(frozen=True)
class InversionInfo:
    iterations: int
    contraction: float
    phi_l3: float
    u_l3: float
    tilde_l3: float


def l3_norm(grid: Grid, values: np.ndarray) -> np.ndarray:
    """L^3 norm over the trailing spatial axes."""
    return (np.sum(np.abs(values) ** 3, axis=_axes(grid)) * grid.cell_volume) ** (1.0 / 3.0)


def invert_g_array(grid: Grid, phi: np.ndarray, eta_star: float = ETA_STAR_DEFAULT, tol: float = 1e-12,
                   max_iter: int = 50, check_threshold: bool = True) -> tuple[np.ndarray, InversionInfo]:
    """Solve ``M(u) = U phi`` for a stack of complex arrays ``phi[..., *grid.shape]``.

    Iterates ``u <- U phi_1 + i phi_2 - K |u|^2`` from 0. ``tol`` is relative
    to ``||tilde phi||_inf``.
    """
    sym = gp_symbols(grid)
    axes = _axes(grid)
    phi_l3 = float(np.max(l3_norm(grid, phi)))
    if check_threshold and phi_l3 > eta_star:
        raise ThresholdError(f"||phi||_3 = {phi_l3:.3e} exceeds eta* = {eta_star:.3e}")
    tilde = _real_apply(grid, sym.U, phi.real) + 1j * phi.imag
    scale = max(float(np.max(np.abs(tilde))), 1e-300)
    u = tilde.copy()
    prev = None
    contraction = 0.0
    for k in range(1, max_iter + 1):
        new = tilde - _real_apply(grid, sym.K, np.abs(u) ** 2)
        step = float(np.max(np.abs(new - u)))
        u = new
        if prev is not None and prev > 0:
            contraction = max(contraction, step / prev)
            if step / prev >= 1 and step > tol * scale:
                raise ThresholdError(f"inversion does not contract (factor {step / prev:.3f}); ||phi||_3 too large")
        if not np.isfinite(step):
            raise NumericalError("non-finite iterate in the GP inversion")
        if step <= tol * scale:
            break
        prev = step
    else:
        raise ThresholdError(f"inversion did not converge in {max_iter} iterations")
    info = InversionInfo(k, contraction, phi_l3, float(np.max(l3_norm(grid, u))),
                         float(np.max(l3_norm(grid, tilde))))
    if check_threshold and info.u_l3 > 2 * info.tilde_l3:
        raise ThresholdError(f"||u||_3 = {info.u_l3:.3e} exceeds twice ||U phi_1 + i phi_2||_3")
    return u, info


def invert_g(phi: SpectralField, eta_star: float = ETA_STAR_DEFAULT, tol: float = 1e-12, max_iter: int = 50):
    """``g(phi)``: the small solution ``u`` of ``M(u) = U phi``. Returns ``(u, info)``."""
    u, info = invert_g_array(phi.grid, _single(phi), eta_star, tol, max_iter)
    return phi.with_data(u[np.newaxis], "physical"), info


# --------------------------------------------------------------------------
# nonlinearity


def eval_n_array(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Fourier coefficients of ``N(u)`` for a stack ``u[..., *grid.shape]``."""
    sym = gp_symbols(grid)
    u1, u2 = u.real, u.imag
    dens = np.abs(u) ** 2
    u2_hat = grid.fft(u2)
    flux_hat = 0.0
    for j in range(grid.dim):
        du2 = grid.ifft(u2_hat * sym.grad[j]).real
        flux_hat = flux_hat + sym.div_H[j] * grid.fft(4.0 * u1 * du2)
    # H^-1 div grad = -U
    local = grid.fft(2.0 * u1**2 + dens * u1)
    return local - 1j * flux_hat + 1j * sym.U * grid.fft(dens * u2)


def eval_N(u: SpectralField) -> SpectralField:
    hat = eval_n_array(u.grid, _single(u))
    return SpectralField(u.grid, hat[np.newaxis], "frequency", {"singular_modes_zeroed": True}).physical()


# --------------------------------------------------------------------------
# fixed point for zeta


def _h1(grid: Grid, hat: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, hat.ndim))
    return np.sqrt(np.sum(np.abs(hat) ** 2 * (2.0 + grid.xi2), axis=axes) * grid.volume) / grid.n**grid.dim


def gp_smallness(grid: Grid, times, free_hat, epsilon, q, r) -> float:
    """``||<grad> e^{-itH} zeta_+||_{X^{q,r}_eps} + ||e^{-itH} zeta_+||_{X^{inf,3}_0}``."""
    sym = gp_symbols(grid)
    weighted = grid.ifft(free_hat * sym.bracket)
    plain = grid.ifft(free_hat)
    lr = np.array([lp_norm_array(grid, weighted[j], r) for j in range(len(times))])
    l3 = np.array([lp_norm_array(grid, plain[j], 3) for j in range(len(times))])
    return weighted_norm_profile(times, lr, q, epsilon).value + float(np.max(l3))


@dataclass
class GPRun:
    run: ScatteringRun
    u_data: np.ndarray = field(repr=False)
    eta_star: float = ETA_STAR_DEFAULT

    @property
    def report(self) -> IterationReport:
        return self.run.report

    @property
    def times(self):
        return self.run.times

    def zeta(self) -> Trajectory:
        t = self.run.trajectory()
        t.meta["zero_mode_dropped"] = True
        return t

    def u(self) -> Trajectory:
        return Trajectory(self.run.flow.grid, self.run.times, self.u_data, {})


def _gp_source(grid: Grid, flow: LinearFlow, free_hat: np.ndarray, zeta_plus_hat: np.ndarray, eta_star: float,
               stub: bool = False):
    def source(w_hat, times=None):
        base = free_hat if times is None else flow.evolve(zeta_plus_hat, times)
        if stub:
            return np.zeros_like(base)
        zeta = grid.ifft(base + w_hat)[:, 0]
        u, _ = invert_g_array(grid, zeta, eta_star)
        N_hat = eval_n_array(grid, u)
        # zeta carries no zero mode, so neither does its source
        N_hat[(slice(None),) + (0,) * grid.dim] = 0.0
        return N_hat[:, np.newaxis]

    return source


def gp_picard_run(zeta_plus: SpectralField, cfg: SolverConfig, epsilon: float = GP_EPSILON, q: float = GP_Q,
                  r: float = GP_R, eta_star: float = ETA_STAR_DEFAULT, init=None, check_precondition: bool = True,
                  stub_nonlinearity: bool = False) -> GPRun:
    grid = zeta_plus.grid
    if zeta_plus.components != 1:
        raise ConfigurationError("GP final datum must be single-component")
    flags = []
    if not check_admissible(grid.dim, q, r):
        flags.append("non_admissible_pair")
    if grid.dim == 3 and not (12 / 5 <= r <= 4 and 2 < q < math.inf):
        flags.append("pair_outside_uniqueness_range")
    if not (0.25 < epsilon < 0.375):
        flags.append("epsilon_outside_window")
    times = cfg.time_grid()
    flow = LinearFlow.gp(grid)
    zp_hat = zeta_plus.frequency().data
    free_hat = flow.evolve(zp_hat, times)
    small = gp_smallness(grid, times, free_hat, epsilon, q, r)
    report = IterationReport(smallness=small, epsilon=epsilon, flags=flags,
                             pairs={"q": q, "r": r}, extra={"eta_star": eta_star, "zero_mode_dropped": True})
    if check_precondition and small > cfg.eta_target:
        err = PreconditionError(f"free GP evolution too large on [T, T_max]: {small:.3e} > {cfg.eta_target:.3e}; increase T")
        err.report = report
        raise err
    norm = SolverNorm(grid, times, epsilon, q, r, weight=gp_symbols(grid).bracket)
    source = _gp_source(grid, flow, free_hat, zp_hat, eta_star, stub_nonlinearity)
    w, report = picard_iterate(source, times, flow, norm, cfg, init, report)
    run = ScatteringRun(times, free_hat, w, flow, report, norm, source)
    report.solution_norm = norm(w)
    report.residual_coarse = report.updates[-1]
    if cfg.check_residual and not stub_nonlinearity:
        _, report.quadrature_error = duhamel_hat(times, source(w), flow, with_error=True)
        report.residual = doubled_residual(source, times, w, flow, norm)
    zeta = grid.ifft(free_hat + w)[:, 0]
    u, info = invert_g_array(grid, zeta, eta_star)
    report.extra["max_u_l3"] = info.u_l3
    report.extra["max_zeta_l3"] = info.phi_l3
    if not stub_nonlinearity:
        report.tail_bound, report.tail_decay = gp_tail_bound(grid, times, free_hat, u)
    return GPRun(run, u[:, np.newaxis], eta_star)


def gp_picard_solve(zeta_plus: SpectralField, cfg: SolverConfig, **kwargs):
    """Returns ``(zeta trajectory, u trajectory, IterationReport)``."""
    res = gp_picard_run(zeta_plus, cfg, **kwargs)
    return res.zeta(), res.u(), res.report


def gp_tail_bound(grid: Grid, times, free_hat, u) -> tuple[float, float]:
    """H^1 bound on the Duhamel tail beyond the last node.

    ``||<grad> N(u(s))||_2 <= c (s/T_max)^-gamma`` with ``gamma`` the fitted
    sup-norm decay of the free evolution (N is quadratic to leading order).
    """
    start = len(times) - max(len(times) // 3, 8)
    free = grid.ifft(free_hat[start:])
    sup = np.array([lp_norm_array(grid, free[j], math.inf) for j in range(free.shape[0])])
    gamma = -fit_power_law(times[start:], sup).exponent
    c = float(_h1(grid, eval_n_array(grid, u[-1])[np.newaxis])[0])
    if gamma <= 1:
        return math.inf, gamma
    return c * times[-1] / (gamma - 1.0), gamma


def scan_gp_T(zeta_plus: SpectralField, cfg: SolverConfig, epsilon=GP_EPSILON, q=GP_Q, r=GP_R, cap=2**10):
    grid = zeta_plus.grid
    flow = LinearFlow.gp(grid)
    T = cfg.T
    last = math.inf
    while T <= cap:
        trial = cfg.with_T(T)
        times = trial.time_grid()
        last = gp_smallness(grid, times, flow.evolve(zeta_plus.frequency().data, times), epsilon, q, r)
        if last <= cfg.eta_target:
            return trial, last
        T *= 2
    raise PreconditionError(f"GP smallness not reached up to T={cap} (last {last:.3e})")


# --------------------------------------------------------------------------
# rates


@dataclass
class GPRateReport:
    times: np.ndarray
    zeta_diff: np.ndarray
    v_diff: np.ndarray
    correction: np.ndarray
    tail: float
    exponents: dict
    epsilon: float
    passes: dict
    tail_included: bool = True
    zero_mode_dropped: bool = True

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def v_from(grid: Grid, zeta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``v = zeta - <grad>^-1 |grad|^-1 |u|^2`` (zero mode of the correction dropped)."""
    sym = gp_symbols(grid)
    return zeta - _real_apply(grid, sym.v_correction, np.abs(u) ** 2)


def gp_verify_rates(zeta: Trajectory, u: Trajectory, zeta_plus: SpectralField, epsilon: float = GP_EPSILON,
                    tail: float = 0.0, slack: float = 0.05) -> GPRateReport:
    """Decay of ``||zeta - e^{-itH} zeta_+||_{H^1}``, ``||v - e^{-itH} zeta_+||_{H^1}`` and of the
    quadratic correction ``||<grad>^-1 |grad|^-1 |u|^2||_{H^1}``.

    Differences are fitted as ``difference + tail`` over the first half of the
    horizon when the tail does not exceed either difference at the end of that
    window. Otherwise (including an infinite tail) the truncated differences
    are fitted and ``tail_included`` is false.
    """
    grid = zeta.grid
    sym = gp_symbols(grid)
    flow = LinearFlow.gp(grid)
    times = zeta.times
    free_hat = flow.evolve(zeta_plus.frequency().data, times)
    z_hat = grid.fft(zeta.data)
    corr_hat = grid.fft(np.abs(u.data) ** 2) * sym.v_correction
    dz = _h1(grid, z_hat - free_hat)
    dv = _h1(grid, z_hat - corr_hat - free_hat)
    corr = _h1(grid, corr_hat)
    window = (times[0], times[-1] / 2)
    last = int(np.searchsorted(times, window[1], side="right")) - 1
    tail_included = tail_is_resolvable(tail, min(dz[max(last, 0)], dv[max(last, 0)]))
    add = tail if tail_included else 0.0
    exps = {}
    for name, series in (("zeta", dz + add), ("v", dv + add), ("correction", corr)):
        try:
            exps[name] = -fit_power_law(times, series, window).exponent
        except ConfigurationError:
            exps[name] = None
    target = epsilon - slack
    passes = {name: (val is not None and val >= target) for name, val in exps.items()}
    return GPRateReport(times, dz, dv, corr, float(tail), exps, epsilon, passes, tail_included=tail_included)


def gp_uniqueness_probe(zeta_plus: SpectralField, cfg: SolverConfig, res: GPRun, seed: int = 0,
                        scale: float | None = None, **kwargs) -> dict:
    """Restart the fixed point from a random small correction and compare."""
    scale = scale if scale is not None else 0.5 * cfg.eta_target
    init = random_start(res.run, scale, seed)
    other = gp_picard_run(zeta_plus, replace(cfg, check_residual=False), init=init, check_precondition=False,
                          eta_star=res.eta_star, **kwargs)
    gap = res.run.norm(other.run.correction_hat - res.run.correction_hat)
    return {"gap": gap, "start_norm": scale, "iterations": other.report.iterations,
            "agrees": bool(gap <= 10 * cfg.tol)}


def lipschitz_sample(grid: Grid, count: int = 100, level: float = 0.5, seed: int = 0,
                     eta_star: float = ETA_STAR_DEFAULT) -> np.ndarray:
    """Observed ``||g(phi) - g(psi)||_{H^1} / ||phi - psi||_{H^1}`` over random nearby pairs.

    ``phi`` has ``||phi||_3 = level``; ``psi`` is ``phi`` plus a perturbation
    of relative size drawn from ``[0.01, 0.5]``.
    """
    rng = np.random.default_rng(seed)
    out = np.empty(count)
    for k in range(count):
        phi, pert = (_smooth_noise(grid, rng) for _ in range(2))
        phi *= level / float(l3_norm(grid, phi))
        pert *= rng.uniform(0.01, 0.5) * level / float(l3_norm(grid, pert))
        u, _ = invert_g_array(grid, phi, eta_star)
        w, _ = invert_g_array(grid, phi + pert, eta_star)
        num = _h1(grid, grid.fft(u - w)[np.newaxis])[0]
        out[k] = num / _h1(grid, grid.fft(pert)[np.newaxis])[0]
    return out


# --------------------------------------------------------------------------
# calibration


def _smooth_noise(grid: Grid, rng) -> np.ndarray:
    noise = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    return grid.ifft(grid.fft(noise) * np.exp(-grid.xi2))


def _battery(grid: Grid, count: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        smooth = _smooth_noise(grid, rng)
        yield smooth / float(l3_norm(grid, smooth))


def inversion_contraction(grid: Grid, phi: np.ndarray) -> float:
    try:
        _, info = invert_g_array(grid, phi, math.inf, tol=1e-12, max_iter=200, check_threshold=False)
    except ThresholdError:
        return math.inf
    return info.contraction


def calibrate_eta_star(grid: Grid | None = None, count: int = 8, seed: int = 0, start: float = 1.0,
                       target: float = 0.5) -> float:
    """Largest ``||phi||_3`` on a factor-2 ladder whose inversion contracts by ``<= target``.

    The battery is smooth random complex fields rescaled to unit L^3 norm.
    """
    grid = grid or Grid(3, 32, 16 * math.pi)
    battery = list(_battery(grid, count, seed))

    def ok(level):
        return all(inversion_contraction(grid, level * phi) <= target for phi in battery)

    level = start
    if ok(level):
        while ok(2 * level) and level < 2**20:
            level *= 2
        return level
    while not ok(level) and level > 2**-20:
        level /= 2
    return level


# --------------------------------------------------------------------------
# forward evolution in the original variable


def gp_forward(u0: SpectralField, t_span, dt: float, record_every: int = 1, max_phase: float = math.pi / 4) -> Trajectory:
    """Strang splitting for ``i psi_t + Laplacian psi = (|psi|^2 - 1) psi`` with ``psi = 1 + u``.

    The nonlinear substep is the exact phase rotation; returns ``u``.
    """
    t0, t1 = map(float, t_span)
    grid = u0.grid
    if not dt > 0:
        raise ConfigurationError("step size must be positive")
    steps = max(1, int(math.ceil(abs(t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / steps
    if abs(h) * grid.xi_max**2 > max_phase:
        raise ConfigurationError(f"step too large: dt*xi_max^2 = {abs(h) * grid.xi_max**2:.3f} > {max_phase:.3f}")
    lin = np.exp(-1j * h * grid.xi2)
    psi = 1.0 + _single(u0)

    def half(p):
        return p * np.exp(-0.5j * h * (np.abs(p) ** 2 - 1.0))

    times, frames = [t0], [psi - 1.0]
    for k in range(steps):
        psi = half(grid.ifft(grid.fft(half(psi)) * lin))
        if not np.all(np.isfinite(psi)):
            raise NumericalError(f"non-finite state at step {k + 1}")
        if (k + 1) % record_every == 0 or k + 1 == steps:
            times.append(t0 + (k + 1) * h)
            frames.append(psi - 1.0)
    times = np.array(times)
    data = np.array(frames)[:, np.newaxis]
    if t1 < t0:
        times, data = times[::-1], data[::-1]
    return Trajectory(grid, times, data, {"dt": abs(h), "steps": steps})
