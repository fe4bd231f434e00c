"""Ensemble orchestration: randomized data, free decay, large deviations, scattering runs.

Every member seed is derived from ``(master_seed, index)`` so results do not
depend on scheduling or worker count.
"""

from __future__ import annotations

import logging
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import gp
from .errors import (
    ConfigurationError,
    DivergenceError,
    NonConvergenceError,
    NumericalError,
    PreconditionError,
    ThresholdError,
    ValidationError,
)
from .fitting import FitResult, fit_power_law
from .io import load_snapshot, save_snapshot, write_csv, write_json
from .norms import WeightedNormSpec, lp_norm_array, weighted_norm_profile
from .randomization import CoefficientLaw, bump, randomize_h1dot, randomize_l2
from .solver import (
    LinearFlow,
    SolverConfig,
    picard_run,
    scan_T,
    uniqueness_probe,
    verify_scattering,
)
from .spectral import Grid, SpectralField
from .systems import SYSTEMS, SystemSpec, build_system

__all__ = [
    "ExperimentSpec",
    "FitResult",
    "fit_power_law",
    "member_seed",
    "build_profile",
    "randomized_datum",
    "run_free_decay",
    "run_large_deviation",
    "run_scattering_ensemble",
    "run_member",
]

log = logging.getLogger(__name__)

PROFILE_SHAPES = ("gaussian", "bump", "multi-bump", "file")


def member_seed(master: int, index: int) -> int:
    """Seed of ensemble member ``index``; a pure function of its arguments."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, np.uint32)[0])


# --------------------------------------------------------------------------
# profiles


def _shifted_radius(grid: Grid, center) -> np.ndarray:
    center = np.zeros(grid.dim) if center is None else np.asarray(center, dtype=float)
    if center.size != grid.dim:
        raise ConfigurationError(f"profile center needs {grid.dim} coordinates")
    return np.sqrt(sum((x - c) ** 2 for x, c in zip(grid.coords, center)))


def build_profile(grid: Grid, desc: dict, components: int = 1) -> SpectralField:
    """Final-datum profile from a descriptor.

    Shapes: ``gaussian`` (amplitude, sigma, center), ``bump`` (amplitude,
    radius, center), ``multi-bump`` (list of bumps), ``file`` (path to a
    snapshot). ``weights`` scales the copy placed in each component.
    """
    shape = desc.get("shape", "gaussian")
    if shape not in PROFILE_SHAPES:
        raise ConfigurationError(f"unknown profile shape {shape!r}; choose from {PROFILE_SHAPES}")
    if shape == "file":
        field_ = load_snapshot(desc["path"])
        if field_.grid != grid:
            raise ConfigurationError("snapshot grid does not match the experiment grid")
        if field_.components != components:
            raise ConfigurationError(f"snapshot has {field_.components} components, system needs {components}")
        return field_.physical()
    if shape == "gaussian":
        r = _shifted_radius(grid, desc.get("center"))
        base = desc.get("amplitude", 1.0) * np.exp(-(r**2) / (2 * desc.get("sigma", 1.0) ** 2))
    elif shape == "bump":
        r = _shifted_radius(grid, desc.get("center"))
        base = desc.get("amplitude", 1.0) * bump(r / desc.get("radius", 1.0))
    else:
        bumps = desc.get("bumps")
        if not bumps:
            raise ConfigurationError("multi-bump profile needs a nonempty 'bumps' list")
        base = sum(build_profile(grid, {**b, "shape": "bump"}).data[0] for b in bumps)
    weights = np.asarray(desc.get("weights", [1.0] * components), dtype=complex)
    if weights.size != components:
        raise ConfigurationError(f"profile weights need {components} entries")
    data = weights.reshape((-1,) + (1,) * grid.dim) * np.asarray(base, dtype=complex)[np.newaxis]
    return SpectralField(grid, data, "physical", {"profile": dict(desc)})


# --------------------------------------------------------------------------
# spec


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment; built from a JSON document and echoed into outputs with every default."""

    name: str = "experiment"
    system: dict = field(default_factory=lambda: {"name": "scalar-power", "params": {"p": 3.0}})
    grid: Grid = field(default_factory=lambda: Grid(1, 4096, 1024.0))
    profile: dict = field(default_factory=lambda: {"shape": "gaussian", "amplitude": 0.5, "sigma": 4.0})
    law: CoefficientLaw = field(default_factory=lambda: CoefficientLaw("gaussian", 1.0))
    randomization: str = "l2"
    cell_size: float = 1.0
    master_seed: int = 0
    seeds: tuple = ()
    count: int = 10
    cfg: SolverConfig = field(default_factory=SolverConfig)
    norms: tuple = ()
    free_decay: dict = field(default_factory=dict)
    large_deviation: dict = field(default_factory=dict)
    outputs: str = "out"
    uniqueness: bool = True
    gp_eta_star: float = gp.ETA_STAR_DEFAULT

    def __post_init__(self):
        if self.randomization not in ("l2", "h1dot"):
            raise ConfigurationError("randomization must be 'l2' or 'h1dot'")
        if not self.seeds and self.count < 1:
            raise ConfigurationError("need explicit seeds or a positive count")

    @property
    def is_gp(self) -> bool:
        return self.system.get("name") == "gp"

    def build_system(self) -> SystemSpec | None:
        if self.is_gp:
            return None
        return build_system(self.system["name"], **self.system.get("params", {}))

    @property
    def components(self) -> int:
        if self.is_gp:
            return 1
        name = self.system["name"]
        if name not in SYSTEMS:
            raise ConfigurationError(f"unknown system {name!r}")
        return self.build_system().N

    def member_seeds(self) -> list[int]:
        if self.seeds:
            return [int(s) for s in self.seeds]
        return [member_seed(self.master_seed, k) for k in range(self.count)]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system,
            "grid": self.grid.to_dict(),
            "profile": self.profile,
            "law": self.law.to_dict(),
            "randomization": self.randomization,
            "cell_size": self.cell_size,
            "master_seed": self.master_seed,
            "seeds": list(self.seeds),
            "count": self.count,
            "solver": self.cfg.to_dict(),
            "norms": [{"q": n.q, "r": n.r, "epsilon": n.epsilon} for n in self.norms],
            "free_decay": self.free_decay,
            "large_deviation": self.large_deviation,
            "outputs": self.outputs,
            "uniqueness": self.uniqueness,
            "gp_eta_star": self.gp_eta_star,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentSpec:
        doc = dict(doc)
        kwargs = {}
        if "grid" in doc:
            g = doc.pop("grid")
            kwargs["grid"] = Grid(int(g["dim"]), int(g["n"]), float(g.get("length", g.get("L"))))
        if "law" in doc:
            law = doc.pop("law")
            kwargs["law"] = CoefficientLaw(law.get("family", "gaussian"), float(law.get("scale", 1.0)))
        if "solver" in doc:
            kwargs["cfg"] = SolverConfig(**doc.pop("solver"))
        if "norms" in doc:
            kwargs["norms"] = tuple(WeightedNormSpec(float(n["q"]), float(n["r"]), float(n["epsilon"]), 1.0)
                                    for n in doc.pop("norms"))
        if "seeds" in doc:
            kwargs["seeds"] = tuple(int(s) for s in doc.pop("seeds"))
        known = set(cls.__dataclass_fields__) - {"grid", "law", "cfg", "norms", "seeds"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment keys {sorted(unknown)}")
        return cls(**doc, **kwargs)


def randomized_datum(spec: ExperimentSpec, seed: int) -> SpectralField:
    profile = build_profile(spec.grid, spec.profile, spec.components)
    if spec.randomization == "h1dot":
        return randomize_h1dot(profile, spec.law, seed, spec.cell_size)
    return randomize_l2(profile, spec.law, seed, spec.cell_size)


# --------------------------------------------------------------------------
# free decay of randomized data


@dataclass
class FreeDecayResult:
    rows: list
    mean_rows: list
    fit: FitResult | None
    epsilon0: float
    params: dict

    @property
    def exponent(self) -> float | None:
        return None if self.fit is None else -self.fit.exponent

    def passes(self, factor: float = 0.5) -> bool:
        return self.exponent is not None and self.exponent >= factor * self.epsilon0


def decay_epsilon0(d: int, a: float, b: float, epsilon: float) -> float:
    return -epsilon + d * (0.5 - 1.0 / b) - 1.0 / a


def run_free_decay(spec: ExperimentSpec, masses=None, workers: int = 1) -> FreeDecayResult:
    """``||U(t) u_+^omega||_{X^{a,b}_eps(T, T_max)}`` over a T ladder, per seed and ensemble mean.

    ``spec.free_decay`` holds ``a, b, epsilon, T_values, T_max, n_time``.
    """
    fd = spec.free_decay
    a, b, eps = float(fd["a"]), float(fd["b"]), float(fd["epsilon"])
    d = spec.grid.dim
    eps0 = decay_epsilon0(d, a, b, eps)
    if eps0 <= 0:
        raise ConfigurationError(
            f"need eps0 = -eps + d(1/2 - 1/b) - 1/a > 0 for the randomized decay estimate, got {eps0:.6g}")
    T_values = np.asarray(fd.get("T_values", [1, 2, 4, 8, 16, 32, 64]), dtype=float)
    T_max = float(fd.get("T_max", 4 * T_values.max()))
    n_time = int(fd.get("n_time", 129))
    if masses is None:
        masses = np.ones(spec.components) if spec.is_gp else spec.build_system().masses
    params = {"a": a, "b": b, "epsilon": eps, "epsilon0": eps0, "T_values": T_values.tolist(),
              "T_max": T_max, "n_time": n_time, "masses": np.atleast_1d(masses).tolist()}
    seeds = spec.member_seeds()
    jobs = [(spec, s, masses, T_values, T_max, n_time, a, b, eps) for s in seeds]
    per_seed = _map(_free_decay_member, jobs, workers)
    rows = [row for chunk in per_seed for row in chunk]
    values = np.array([[r["norm"] for r in chunk] for chunk in per_seed])
    errors = np.array([[r["quadrature_error"] for r in chunk] for chunk in per_seed])
    mean = values.mean(axis=0)
    sem = values.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros_like(mean)
    mean_rows = [{"T": float(T), "mean_norm": float(m), "standard_error": float(s),
                  "max_quadrature_error": float(e)} for T, m, s, e in zip(T_values, mean, sem, errors.max(axis=0))]
    fit = None
    try:
        fit = fit_power_law(T_values, mean, min_samples=min(8, T_values.size))
    except ConfigurationError as exc:
        log.warning("free-decay fit failed: %s", exc)
    return FreeDecayResult(rows, mean_rows, fit, eps0, params)


def _free_decay_member(job):
    spec, seed, masses, T_values, T_max, n_time, a, b, eps = job
    u = randomized_datum(spec, seed)
    grid = spec.grid
    times = np.geomspace(T_values.min(), T_max, n_time)
    flow = LinearFlow.nls(grid, masses) if not spec.is_gp else LinearFlow.gp(grid)
    hat = u.frequency().data
    lr = np.empty(times.size)
    for j, t in enumerate(times):
        lr[j] = lp_norm_array(grid, grid.ifft(flow.evolve(hat, t)), b)
    out = []
    for T in T_values:
        val = weighted_norm_profile(times, lr, a, eps, float(T))
        out.append({"seed": seed, "T": float(T), "norm": val.value, "quadrature_error": val.error})
    return out


# --------------------------------------------------------------------------
# large deviations


def _as_coefficients(c) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    return c[:, np.newaxis] if c.ndim == 1 else c


def moment_estimate(law: CoefficientLaw, coeffs, alpha: float, samples: int, seed: int, stream: tuple = ()):
    """Monte Carlo ``(E|sum_k G_k c_k|^alpha)^{1/alpha}`` and its standard error (delta method)."""
    c = _as_coefficients(coeffs)
    K = c.shape[0]
    G = law.sample(seed, samples * K, stream).reshape(samples, K)
    S = np.linalg.norm(G @ c, axis=1)
    powers = S**alpha
    m = float(powers.mean())
    se_m = float(powers.std(ddof=1) / math.sqrt(samples))
    est = m ** (1.0 / alpha)
    return est, est * se_m / (alpha * m) if m > 0 else 0.0


def run_large_deviation(law: CoefficientLaw, coeff_vectors, alphas, samples: int = 100_000, seed: int = 0,
                        band: float = 0.25, trend_tolerance: float = 0.10) -> dict:
    """Ratios ``(E|sum G_k c_k|^alpha)^{1/alpha} / (sqrt(alpha) ||c||_2)`` on an alpha ladder.

    A vector passes when no ratio exceeds its alpha = min ladder value by more
    than ``band`` and fewer than ``trend_tolerance`` of consecutive steps
    increase beyond three standard errors.
    """
    alphas = [float(a) for a in alphas]
    if min(alphas) < 2:
        raise ConfigurationError("large deviation ladder needs alpha >= 2")
    rows = []
    verdicts = []
    for v, c in enumerate(coeff_vectors):
        c = _as_coefficients(c)
        norm = float(np.linalg.norm(c))
        ratios, ses = [], []
        for i, alpha in enumerate(alphas):
            # one stream per (vector, alpha) keeps entries reproducible and independent
            est, se = moment_estimate(law, c, alpha, samples, seed, (v, i))
            ratio = est / (math.sqrt(alpha) * norm)
            ratios.append(ratio)
            ses.append(se / (math.sqrt(alpha) * norm))
            rows.append({"law": law.family, "vector": v, "alpha": alpha, "moment": est, "standard_error": se,
                         "ratio": ratio, "ratio_standard_error": ses[-1]})
        ratios, ses = np.array(ratios), np.array(ses)
        bounded = bool(np.all(ratios <= (1 + band) * ratios[0] + 3 * ses))
        rises = np.diff(ratios) > 3 * np.hypot(ses[1:], ses[:-1])
        trend_ok = bool(rises.size == 0 or rises.mean() < trend_tolerance)
        verdicts.append({"vector": v, "bounded": bounded, "trend_ok": trend_ok, "max_ratio": float(ratios.max())})
    return {"law": law.to_dict(), "rows": rows, "verdicts": verdicts,
            "passes": all(x["bounded"] and x["trend_ok"] for x in verdicts)}


# --------------------------------------------------------------------------
# scattering ensemble


FAILURE_KINDS = {
    PreconditionError: "precondition",
    DivergenceError: "divergence",
    NonConvergenceError: "nonconvergence",
    ThresholdError: "threshold",
    ValidationError: "validation",
    NumericalError: "numerical",
}


def _classify(exc: Exception) -> str:
    for cls, kind in FAILURE_KINDS.items():
        if isinstance(exc, cls):
            return kind
    return "error"


def _diagnosis(kind: str) -> str:
    if kind == "precondition":
        return "smallness not reached on the T ladder: T_max too small or data too large"
    if kind in ("divergence", "nonconvergence"):
        return "contraction failed after the smallness scan: genuine divergence at this T"
    if kind == "threshold":
        return "GP inversion threshold exceeded"
    return kind


def run_member(spec: ExperimentSpec, index: int, seed: int, snapshot_dir: str | None = None) -> tuple[dict, dict]:
    """One ensemble member. Failures are recorded, never raised."""
    t0 = _time.perf_counter()
    row = {"index": index, "seed": seed, "status": "ok", "failure": "", "diagnosis": ""}
    report = {"index": index, "seed": seed}
    try:
        if spec.is_gp:
            _gp_member(spec, seed, row, report, snapshot_dir)
        else:
            _nls_member(spec, seed, row, report, snapshot_dir)
    except ConfigurationError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is diagnosed per member
        kind = _classify(exc)
        row.update(status="failed", failure=kind, diagnosis=_diagnosis(kind))
        report["error"] = str(exc)
        if getattr(exc, "report", None) is not None:
            report["iteration"] = exc.report.to_dict()
    # wall time stays out of the CSV row so outputs are byte-stable
    report["wall_time"] = _time.perf_counter() - t0
    return row, report


def _nls_member(spec, seed, row, report, snapshot_dir):
    system = spec.build_system()
    u_plus = randomized_datum(spec, seed)
    cfg, small = scan_T(system, u_plus, spec.cfg)
    run = picard_run(system, u_plus, cfg)
    rep = run.report
    traj = run.trajectory()
    window = WeightedNormSpec(2.0, 2.0, rep.epsilon, cfg.T, run.times)
    tail = rep.tail_bound if rep.tail_bound is not None else 0.0
    ver = verify_scattering(system, traj, u_plus, window, tail)
    row.update(T=cfg.T, T_max=cfg.T_max, iterations=rep.iterations, max_ratio=rep.max_ratio,
               residual=rep.residual, quadrature_error=rep.quadrature_error, smallness=small,
               solution_norm=rep.solution_norm, tail_bound=tail, reduction=ver.reduction,
               decay_exponent=ver.decay_exponent, monotone=ver.monotone,
               geometric=rep.geometric_decay(), residual_ok=_residual_ok(rep, cfg))
    report.update(solver=cfg.to_dict(), iteration=rep.to_dict(), scattering=ver.to_dict())
    if spec.uniqueness:
        probe = uniqueness_probe(system, u_plus, cfg, run, seed=seed)
        row.update(uniqueness_gap=probe["gap"], unique=probe["agrees"])
        report["uniqueness"] = probe
    row["verified"] = bool(row["geometric"] and row["residual_ok"] and all(ver.passes.values())
                           and row.get("unique", True))
    if snapshot_dir is not None:
        base = Path(snapshot_dir) / f"member{row['index']:04d}"
        save_snapshot(u_plus, base.with_name(base.name + "_uplus"))
        save_snapshot(traj.field(0), base.with_name(base.name + "_uT"), float(traj.times[0]))


def _residual_ok(rep, cfg) -> bool:
    return rep.residual is not None and rep.residual <= 10 * cfg.tol


def _gp_member(spec, seed, row, report, snapshot_dir):
    zeta_plus = randomized_datum(spec, seed)
    eps = spec.cfg.epsilon if spec.cfg.epsilon is not None else gp.GP_EPSILON
    q = spec.cfg.q1 if spec.cfg.q1 is not None else gp.GP_Q
    r = spec.cfg.r1 if spec.cfg.r1 is not None else gp.GP_R
    cfg, small = gp.scan_gp_T(zeta_plus, spec.cfg, eps, q, r)
    res = gp.gp_picard_run(zeta_plus, cfg, eps, q, r, eta_star=spec.gp_eta_star)
    rep = res.report
    rates = gp.gp_verify_rates(res.zeta(), res.u(), zeta_plus, eps, rep.tail_bound)
    row.update(T=cfg.T, T_max=cfg.T_max, iterations=rep.iterations, max_ratio=rep.max_ratio,
               residual=rep.residual, quadrature_error=rep.quadrature_error, smallness=small,
               solution_norm=rep.solution_norm, tail_bound=rep.tail_bound,
               zeta_exponent=rates.exponents["zeta"], v_exponent=rates.exponents["v"],
               correction_exponent=rates.exponents["correction"], tail_included=rates.tail_included,
               geometric=rep.geometric_decay())
    report.update(solver=cfg.to_dict(), iteration=rep.to_dict(), rates=rates.to_dict(),
                  eta_star=res.eta_star, zero_mode_dropped=True, epsilon=eps, q=q, r=r)
    if spec.uniqueness:
        probe = gp.gp_uniqueness_probe(zeta_plus, cfg, res, seed=seed, epsilon=eps, q=q, r=r)
        row.update(uniqueness_gap=probe["gap"], unique=probe["agrees"])
        report["uniqueness"] = probe
    row["verified"] = bool(row["geometric"] and all(rates.passes.values()) and row.get("unique", True))
    if snapshot_dir is not None:
        base = Path(snapshot_dir) / f"member{row['index']:04d}"
        save_snapshot(zeta_plus, base.with_name(base.name + "_zetaplus"))


@dataclass
class EnsembleSummary:
    rows: list
    reports: list
    success_fraction: float
    verified_fraction: float
    T_values: list
    exponent_stats: dict
    failures: dict

    def to_dict(self) -> dict:
        return {"success_fraction": self.success_fraction, "verified_fraction": self.verified_fraction,
                "T_values": self.T_values, "exponent_stats": self.exponent_stats, "failures": self.failures,
                "members": len(self.rows)}


def _member_job(job):
    spec, index, seed, snapshot_dir = job
    return run_member(spec, index, seed, snapshot_dir)


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_scattering_ensemble(spec: ExperimentSpec, workers: int = 1, snapshot_dir: str | None = None) -> EnsembleSummary:
    """Per seed: randomize, scan T, solve, verify, probe uniqueness. Aggregation is sequential."""
    if not spec.is_gp:
        spec.build_system()  # invalid systems are rejected before any member runs
    seeds = spec.member_seeds()
    jobs = [(spec, k, s, snapshot_dir) for k, s in enumerate(seeds)]
    results = _map(_member_job, jobs, workers)
    rows = [r for r, _ in results]
    reports = [rep for _, rep in results]
    ok = [r for r in rows if r["status"] == "ok"]
    key = "zeta_exponent" if spec.is_gp else "decay_exponent"
    exps = np.array([r[key] for r in ok if r.get(key) is not None], dtype=float)
    stats = {}
    if exps.size:
        stats = {"mean": float(exps.mean()), "min": float(exps.min()), "max": float(exps.max()),
                 "std": float(exps.std(ddof=1)) if exps.size > 1 else 0.0}
    failures = {}
    for r in rows:
        if r["status"] != "ok":
            failures[r["failure"]] = failures.get(r["failure"], 0) + 1
    n = max(len(rows), 1)
    return EnsembleSummary(rows, reports, len(ok) / n, sum(bool(r.get("verified")) for r in ok) / n,
                           sorted({r["T"] for r in ok}), stats, failures)


def write_ensemble(summary: EnsembleSummary, spec: ExperimentSpec, out: str | Path) -> Path:
    out = Path(out)
    write_csv(out / "summary.csv", summary.rows)
    for rep in summary.reports:
        write_json(out / "runs" / f"member{rep['index']:04d}.json", {"spec": spec.to_dict(), **rep})
    write_json(out / "report.json", {"spec": spec.to_dict(), "summary": summary.to_dict()})
    return out
