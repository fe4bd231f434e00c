"""Physical-space randomization of final data.

A profile ``u`` is cut into lattice cells by a smooth partition of unity
``chi_k`` and each piece is multiplied by an independent random ``N x N``
matrix ``G_k``::

    u^w(x) = sum_k chi_k(x) G_k(w) u(x)

Lattice points sit at integer multiples of ``cell_size`` and wrap
periodically with the box. Random entries are counter-based: the value of
``g^k_{ab}`` is a function of ``(seed, a, b, k)`` only, so any traversal
order or parallel split gives the same draw.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import expit, ndtri

from .errors import ConfigurationError
from .spectral import Grid, SpectralField, apply_symbol, combined_symbol

FAMILIES = ("gaussian", "uniform", "rademacher", "identity")
BUMP_DESCRIPTION = "chi(x)=s(2-|x|), s(t)=e^(-1/t)/(e^(-1/t)+e^(-1/(1-t)))"


def smooth_step(t):
    """C-infinity transition from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.asarray(t, dtype=float)
    inner = (t > 0) & (t < 1)
    ti = np.where(inner, t, 0.5)
    with np.errstate(over="ignore", divide="ignore"):
        mid = expit(1.0 / (1.0 - ti) - 1.0 / ti)
    return np.where(t >= 1, 1.0, np.where(inner, mid, 0.0))


def bump(r):
    """Radial bump: 1 for r <= 1, 0 for r >= 2."""
    return smooth_step(2.0 - np.asarray(r, dtype=float))


@dataclass(frozen=True)
class CoefficientLaw:
    """Mean-zero law of the matrix entries.

    ``scale`` is the variance for ``gaussian`` and the amplitude ``a`` for
    ``uniform`` (on ``[-a, a]``) and ``rademacher`` (values ``+-a``).
    ``identity`` is a deterministic test mode with ``G_k = I``.
    """

    family: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown law {self.family!r}; choose from {FAMILIES}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ConfigurationError("law scale must be positive")

    @property
    def mgf_constant(self) -> float:
        """C with E exp(g y) <= exp(C y^2) for all real y."""
        if self.family == "gaussian":
            return self.scale / 2.0
        if self.family == "identity":
            return 0.0
        return self.scale**2 / 2.0

    @property
    def variance(self) -> float:
        return {
            "gaussian": self.scale,
            "uniform": self.scale**2 / 3.0,
            "rademacher": self.scale**2,
            "identity": 0.0,
        }[self.family]

    def transform(self, raw: np.ndarray) -> np.ndarray:
        """Map raw 64-bit counters to samples of the law."""
        raw = np.asarray(raw, dtype=np.uint64)
        if self.family == "rademacher":
            return self.scale * np.where(raw >> np.uint64(63), 1.0, -1.0)
        # 53-bit uniform strictly inside (0, 1)
        u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
        if self.family == "gaussian":
            return np.sqrt(self.scale) * ndtri(u)
        if self.family == "uniform":
            return self.scale * (2.0 * u - 1.0)
        raise ConfigurationError("identity law has no random samples")

    def sample(self, seed: int, count: int, stream: tuple = ()) -> np.ndarray:
        """``count`` i.i.d. samples from the counter stream keyed by ``(seed, *stream)``."""
        return self.transform(philox_counters(seed, stream, 0, count))

    def to_dict(self) -> dict:
        return {"family": self.family, "scale": self.scale}


def _philox(seed: int, stream: tuple) -> np.random.Philox:
    key = np.random.SeedSequence([int(seed) % 2**64, *[int(s) for s in stream]]).generate_state(2, np.uint64)
    return np.random.Philox(key=key)


def philox_counters(seed: int, stream: tuple, start: int, count: int) -> np.ndarray:
    """Raw outputs ``start .. start+count-1`` of the Philox stream keyed by ``(seed, *stream)``."""
    bitgen = _philox(seed, stream)
    # each Philox counter step yields a block of 4 raw words
    block, skip = divmod(int(start), 4)
    if block:
        bitgen.advance(block)
    return bitgen.random_raw(skip + count)[skip:]


@dataclass(frozen=True)
class BumpPartition:
    """Smooth partition of unity over the periodic lattice ``cell_size * Z^d``."""

    grid: Grid
    cell_size: float = 1.0

    def __post_init__(self):
        m = self.grid.length / self.cell_size
        if abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise ConfigurationError("box length must be an integer number of lattice cells")
        if round(m) < 8:
            raise ConfigurationError(f"box holds {round(m)} lattice cells per axis, need at least 8")
        if self.cell_size / self.grid.dx < 4 - 1e-9:
            raise ConfigurationError("grid must resolve the bump with at least 4 points per lattice unit")

    @property
    def cells_per_axis(self) -> int:
        return int(round(self.grid.length / self.cell_size))

    @property
    def cell_count(self) -> int:
        return self.cells_per_axis**self.grid.dim

    @cached_property
    def _axis_data(self):
        """Per axis: floor index of each grid coordinate and its lattice position."""
        s = self.grid.axis_points / self.cell_size
        return np.floor(s).astype(np.int64), s

    def terms(self):
        """Yield ``(cell_ids, raw_bumps)`` for each of the 4^d lattice offsets.

        ``cell_ids`` are flat periodic cell indices and ``raw_bumps`` the
        unnormalized ``chi(x - k)``; both broadcast to the grid shape.
        """
        base, s = self._axis_data
        m = self.cells_per_axis
        d = self.grid.dim
        for offsets in itertools.product((-1, 0, 1, 2), repeat=d):
            r2 = 0.0
            flat = 0
            for axis, o in enumerate(offsets):
                j = base + o
                shape = [1] * d
                shape[axis] = self.grid.n
                r2 = r2 + ((s - j) ** 2).reshape(shape)
                flat = flat * m + np.mod(j, m).reshape(shape)
            yield np.broadcast_to(flat, self.grid.shape), bump(np.sqrt(r2))

    @cached_property
    def normalizer(self) -> np.ndarray:
        total = np.zeros(self.grid.shape)
        for _, w in self.terms():
            total = total + w
        return total

    def chi(self, cell) -> np.ndarray:
        """``chi_k`` on the grid for the cell with integer coordinates ``cell``."""
        m = self.cells_per_axis
        target = 0
        for c in cell:
            target = target * m + int(c) % m
        out = np.zeros(self.grid.shape)
        for ids, w in self.terms():
            out = out + np.where(ids == target, w, 0.0)
        return out / self.normalizer

    def partition_sum(self) -> np.ndarray:
        total = np.zeros(self.grid.shape)
        for _, w in self.terms():
            total = total + w / self.normalizer
        return total

    def to_dict(self) -> dict:
        return {"cell_size": self.cell_size, "cells_per_axis": self.cells_per_axis, "bump": BUMP_DESCRIPTION}


def build_partition(grid: Grid, cell_size: float = 1.0) -> BumpPartition:
    return BumpPartition(grid, cell_size)


def draw_matrices(law: CoefficientLaw, seed: int, components: int, cell_count: int) -> np.ndarray:
    """Random matrices for every cell, shape ``(cell_count, N, N)``."""
    if law.family == "identity":
        return np.broadcast_to(np.eye(components), (cell_count, components, components))
    out = np.empty((cell_count, components, components))
    for a in range(components):
        for b in range(components):
            out[:, a, b] = law.transform(philox_counters(seed, (a, b), 0, cell_count))
    return out


@dataclass(frozen=True)
class RandomMatrixDraw:
    seed: int
    law: CoefficientLaw
    matrices: np.ndarray = field(repr=False)


def randomize_l2(profile: SpectralField, law: CoefficientLaw, seed: int, cell_size: float = 1.0,
                 partition: BumpPartition | None = None) -> SpectralField:
    """``sum_k chi_k G_k u`` for an N-component profile."""
    u = profile.physical()
    part = partition or build_partition(u.grid, cell_size)
    N = u.components
    G = draw_matrices(law, seed, N, part.cell_count)
    out = np.zeros_like(u.data)
    for ids, w in part.terms():
        w = w / part.normalizer
        for a in range(N):
            for b in range(N):
                out[a] += w * G[ids, a, b] * u.data[b]
    meta = {
        **profile.meta,
        "law": law.to_dict(),
        "seed": int(seed),
        "partition": part.to_dict(),
        "randomization": "l2",
    }
    return SpectralField(u.grid, out, "physical", meta).in_view(profile.view)


def randomize_h1dot(profile: SpectralField, law: CoefficientLaw, seed: int, cell_size: float = 1.0,
                    partition: BumpPartition | None = None) -> SpectralField:
    """``|grad|^{-1} (|grad| phi)^w`` with the zero mode projected out."""
    if profile.components != 1:
        raise ConfigurationError("the H1-dot randomization acts on single-component profiles")
    grad = apply_symbol(profile, combined_symbol(["|∇|"])).physical()
    rand = randomize_l2(grad, law, seed, cell_size, partition)
    out = apply_symbol(rand, combined_symbol(["|∇|^-1"]))
    return out.with_meta(randomization="h1dot", zero_mode_dropped=True).in_view(profile.view)
