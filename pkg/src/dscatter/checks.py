"""Fast invariant battery behind ``dscatter check``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gp
from .norms import check_admissible, exponent_window, gp_energy, lower_threshold, strauss_exponent
from .randomization import CoefficientLaw, build_partition, randomize_l2
from .spectral import Grid, SpectralField, free_propagate, gp_propagate
from .systems import check_gauge_condition, quadratic_system, scalar_power


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)

    def row(self) -> dict:
        return {"check": self.name, "value": float(self.value), "tolerance": self.tolerance, "passed": self.passed}


def _gaussian_field(grid: Grid, seed: int = 0) -> SpectralField:
    rng = np.random.default_rng(seed)
    r2 = grid.radius**2
    phase = sum(rng.normal() * x for x in grid.coords)
    return SpectralField(grid, (np.exp(-r2 / 4) * np.exp(1j * phase))[np.newaxis])


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def run_checks(seed: int = 0) -> list[Check]:
    out = []
    g1 = Grid(1, 512, 64.0)
    x = g1.coords[0]
    t = 1.5
    u0 = SpectralField(g1, np.exp(-(x**2))[np.newaxis])
    exact = np.exp(-(x**2) / (1 + 4j * t)) / np.sqrt(1 + 4j * t)
    out.append(Check("free_gaussian_exact", _rel(free_propagate(u0, 1.0, t).values()[0], exact), 1e-8))

    g3 = Grid(3, 16, 12.0)
    f = _gaussian_field(g3, seed)
    a = free_propagate(free_propagate(f, 1.0, 0.7), 1.0, 0.5).values()
    b = free_propagate(f, 1.0, 1.2).values()
    out.append(Check("group_law", _rel(a, b), 1e-12))
    n0 = np.linalg.norm(f.values())
    out.append(Check("unitarity", abs(np.linalg.norm(free_propagate(f, 1.0, 3.0).values()) - n0) / n0, 1e-12))
    z = gp_propagate(f, 2.0).frequency().data[0]
    h1 = lambda hat: np.sqrt(np.sum(np.abs(hat) ** 2 * (2 + g3.xi2)))
    out.append(Check("gp_propagator_h1", abs(h1(z) - h1(f.frequency().data[0])) / h1(z), 1e-12))

    g2 = Grid(2, 64, 16.0)
    part = build_partition(g2, 1.0)
    out.append(Check("partition_of_unity", float(np.max(np.abs(part.partition_sum() - 1))), 1e-12))
    prof = _gaussian_field(g2, seed)
    ident = randomize_l2(prof, CoefficientLaw("identity"), seed)
    out.append(Check("identity_randomization", _rel(ident.values(), prof.values()), 1e-12))

    gg = Grid(3, 16, 8 * math.pi)
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=gg.shape) + 1j * rng.normal(size=gg.shape)
    phi = gg.ifft(gg.fft(noise) * np.exp(-gg.xi2))
    phi *= 0.5 / float(gp.l3_norm(gg, phi))
    u, _ = gp.invert_g_array(gg, phi)
    sym = gp.gp_symbols(gg)
    target = gp._real_apply(gg, sym.U, phi.real) + 1j * gp._real_apply(gg, sym.U, phi.imag)
    out.append(Check("gp_round_trip", float(np.max(np.abs(gp.transform_m_array(gg, u) - target))), 1e-10))
    out.append(Check("gp_energy_identity", gp_energy(SpectralField(gg, u[np.newaxis])).relative_gap, 1e-10))

    out.append(Check("p0_d3", abs(strauss_exponent(3) - 1.0), 1e-15))
    out.append(Check("p1_d3", abs(lower_threshold(3) - (1 + math.sqrt(97)) / 12), 1e-15))
    win = exponent_window(3, 1.0)
    out.append(Check("window_d3_p1", max(abs(win.lower - 0.25), abs(win.upper - 0.375)), 1e-15))
    out.append(Check("admissibility_rejects_2_2_inf", float(bool(check_admissible(2, 2, math.inf))), 0.0))
    out.append(Check("gauge_scalar", check_gauge_condition(scalar_power(3.0, validate=False)).normalized, 1e-12))
    out.append(Check("gauge_quadratic", check_gauge_condition(quadratic_system(validate=False)).normalized, 1e-12))
    return out
