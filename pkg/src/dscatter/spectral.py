"""Periodic grids, spectral fields and Fourier multipliers.

Conventions used throughout the package:

* the physical box is ``[-L/2, L/2)^d`` sampled at ``n`` points per axis;
* forward FFT is unnormalized, the inverse carries ``1/n^d``;
* the free propagator acts as ``u_hat(t) = exp(-i t M |xi|^2) u_hat(0)``,
  i.e. it solves ``i u_t + M Laplacian u = 0``;
* ``<xi> = sqrt(2 + |xi|^2)`` (Gross-Pitaevskii convention), so that
  ``U = |xi| / <xi>`` and ``H = |xi| <xi>``.
"""

from __future__ import annotations

import re
from fractions import Fraction
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError

PHYSICAL = "physical"
FREQUENCY = "frequency"


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)^d``."""

    dim: int
    n: int
    length: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n <= 0 or self.n % 2:
            raise ConfigurationError(f"points per axis must be a positive even integer, got {self.n}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise ConfigurationError(f"box length must be positive, got {self.length}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "length", float(self.length))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        """Trailing array axes holding the spatial dimensions."""
        return tuple(range(-self.dim, 0))

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @cached_property
    def axis_points(self) -> np.ndarray:
        return -0.5 * self.length + self.dx * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Open-mesh (broadcastable) coordinate arrays."""
        return _open_mesh(self.axis_points, self.dim)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.coords))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.fftfreq(self.n, d=self.dx)

    @cached_property
    def xi(self) -> tuple[np.ndarray, ...]:
        return _open_mesh(self.wavenumbers, self.dim)

    @cached_property
    def xi2(self) -> np.ndarray:
        return sum(k**2 for k in self.xi) * np.ones(self.shape)

    @cached_property
    def abs_xi(self) -> np.ndarray:
        return np.sqrt(self.xi2)

    @property
    def xi_max(self) -> float:
        """Largest |xi| on the lattice (corner of the Nyquist cube)."""
        return np.sqrt(self.dim) * np.pi / self.dx

    def fft(self, a: np.ndarray) -> np.ndarray:
        return sfft.fftn(a, axes=self.axes)

    def ifft(self, a: np.ndarray) -> np.ndarray:
        return sfft.ifftn(a, axes=self.axes)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n": self.n, "L": self.length}


def _open_mesh(points: np.ndarray, dim: int) -> tuple[np.ndarray, ...]:
    out = []
    for j in range(dim):
        shape = [1] * dim
        shape[j] = points.size
        out.append(points.reshape(shape))
    return tuple(out)


@dataclass(frozen=True)
class SpectralField:
    """N-component complex field on a periodic grid.

    ``data`` has shape ``(N, n, ..., n)``. ``view`` says whether the samples
    are physical values or (unnormalized) Fourier coefficients. ``meta``
    carries provenance flags such as ``zero_mode_dropped`` or the
    randomization law; it is ignored by equality.
    """

    grid: Grid
    data: np.ndarray
    view: str = PHYSICAL
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.shape == self.grid.shape:
            data = data[np.newaxis]
        if data.ndim != self.grid.dim + 1 or data.shape[1:] != self.grid.shape:
            raise ConfigurationError(
                f"data shape {data.shape} incompatible with grid shape {self.grid.shape}"
            )
        if self.view not in (PHYSICAL, FREQUENCY):
            raise ConfigurationError(f"unknown view {self.view!r}")
        object.__setattr__(self, "data", data)

    @property
    def components(self) -> int:
        return self.data.shape[0]

    def physical(self) -> SpectralField:
        if self.view == PHYSICAL:
            return self
        return replace(self, data=self.grid.ifft(self.data), view=PHYSICAL)

    def frequency(self) -> SpectralField:
        if self.view == FREQUENCY:
            return self
        return replace(self, data=self.grid.fft(self.data), view=FREQUENCY)

    def in_view(self, view: str) -> SpectralField:
        return self.physical() if view == PHYSICAL else self.frequency()

    def with_data(self, data, view: str | None = None, **meta) -> SpectralField:
        return SpectralField(self.grid, data, view or self.view, {**self.meta, **meta})

    def with_meta(self, **meta) -> SpectralField:
        return replace(self, meta={**self.meta, **meta})

    def values(self) -> np.ndarray:
        """Physical-space samples."""
        return self.physical().data

    def component(self, n: int) -> SpectralField:
        return SpectralField(self.grid, self.data[n : n + 1], self.view, dict(self.meta))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable, **meta) -> SpectralField:
        """Sample ``func(*coords)`` on the grid; the result may carry a leading component axis."""
        values = np.asarray(func(*grid.coords), dtype=np.complex128)
        values = np.broadcast_to(values, values.shape[:-grid.dim] + grid.shape) if values.ndim >= grid.dim else np.broadcast_to(values, grid.shape)
        return cls(grid, np.array(values), PHYSICAL, meta)

    @classmethod
    def zeros(cls, grid: Grid, components: int = 1) -> SpectralField:
        return cls(grid, np.zeros((components,) + grid.shape, dtype=np.complex128))

    def _binary(self, other, op):
        if isinstance(other, SpectralField):
            if other.grid != self.grid:
                raise ConfigurationError("fields live on different grids")
            return self.with_data(op(self.values(), other.values()), PHYSICAL)
        return self.with_data(op(self.values(), other), PHYSICAL)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Trajectory:
    """Fields sampled on an increasing time grid; ``data`` has shape ``(nt, N, *grid.shape)``."""

    grid: Grid
    times: np.ndarray
    data: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        data = np.asarray(self.data)
        if times.ndim != 1 or data.shape[0] != times.size:
            raise ConfigurationError("trajectory data must have one slice per time")
        if data.shape[2:] != self.grid.shape:
            raise ConfigurationError("trajectory data does not match grid")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "data", data)

    def __len__(self):
        return self.times.size

    @property
    def components(self) -> int:
        return self.data.shape[1]

    def field(self, j: int) -> SpectralField:
        return SpectralField(self.grid, self.data[j], PHYSICAL, {"time": float(self.times[j])})

    def restrict(self, mask) -> Trajectory:
        return Trajectory(self.grid, self.times[mask], self.data[mask], dict(self.meta))


# --------------------------------------------------------------------------
# Fourier symbols


@dataclass(frozen=True)
class FourierSymbol:
    """Scalar multiplier ``xi -> evaluator(xi)``.

    ``evaluator`` receives the open-mesh tuple of frequency arrays. Symbols
    that are singular at the origin must use ``zero_mode_policy="zero"``.
    A symbol tabulated on one grid records it in ``grid`` and can only be
    applied to fields on that grid.
    """

    evaluator: Callable[[tuple], np.ndarray]
    zero_mode_policy: str = "keep"
    name: str = ""
    flags: frozenset = frozenset()
    grid: Grid | None = None

    def on(self, grid: Grid) -> np.ndarray:
        if self.grid is not None and self.grid != grid:
            raise ConfigurationError(f"symbol {self.name!r} is tabulated on a different grid")
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.asarray(self.evaluator(grid.xi), dtype=np.complex128)
        values = np.broadcast_to(values, grid.shape).copy()
        if self.zero_mode_policy == "zero":
            values[(0,) * grid.dim] = 0.0
        elif self.zero_mode_policy != "keep":
            raise ConfigurationError(f"unknown zero-mode policy {self.zero_mode_policy!r}")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError(f"symbol {self.name!r} is not finite on the lattice")
        return values

    @classmethod
    def from_array(cls, grid: Grid, values: np.ndarray, name: str = "") -> FourierSymbol:
        values = np.asarray(values)
        return cls(lambda xi: values, "keep", name, frozenset(), grid)

    @property
    def zero_mode_flagged(self) -> bool:
        return "zero_mode_flagged" in self.flags


def identity_symbol() -> FourierSymbol:
    return FourierSymbol(lambda xi: np.ones(()), name="1")


def laplacian_symbol() -> FourierSymbol:
    """Symbol of -Laplacian, ``|xi|^2``."""
    return FourierSymbol(lambda xi: sum(k**2 for k in xi), name="|xi|^2")


def bracket(xi2: np.ndarray) -> np.ndarray:
    return np.sqrt(2.0 + xi2)


def gp_dispersion(xi2: np.ndarray) -> np.ndarray:
    """``H(xi) = sqrt(|xi|^2 (2 + |xi|^2))``."""
    return np.sqrt(xi2 * (2.0 + xi2))


def apply_symbol(field: SpectralField, sym: FourierSymbol, component_mask: Sequence[int] | None = None) -> SpectralField:
    """Multiply the Fourier coefficients of the selected components by ``sym``."""
    values = sym.on(field.grid)
    hat = field.frequency().data.copy()
    mask = range(field.components) if component_mask is None else component_mask
    for n in mask:
        hat[n] *= values
    out = SpectralField(field.grid, hat, FREQUENCY, dict(field.meta))
    if sym.zero_mode_flagged:
        out = out.with_meta(zero_mode_dropped=True)
    return out.in_view(field.view)


def _check_masses(M, components: int) -> np.ndarray:
    masses = np.atleast_1d(np.asarray(M, dtype=float))
    if masses.ndim == 2:
        if np.any(masses - np.diag(np.diag(masses))):
            raise ConfigurationError("mass matrix must be diagonal")
        masses = np.diag(masses)
    if masses.size == 1 and components > 1:
        masses = np.full(components, masses[0])
    if masses.size != components:
        raise ConfigurationError(f"mass matrix has {masses.size} entries for {components} components")
    if np.any(masses == 0) or not np.all(np.isfinite(masses)):
        raise ConfigurationError("mass matrix entries must be finite and nonzero")
    return masses


def free_multipliers(grid: Grid, M, t: float) -> np.ndarray:
    """``exp(-i t M_n |xi|^2)`` stacked over components, shape ``(N, *grid.shape)``."""
    masses = np.atleast_1d(np.asarray(M, dtype=float))
    phase = -t * masses.reshape((-1,) + (1,) * grid.dim) * grid.xi2
    return np.exp(1j * phase)


def free_propagate(field: SpectralField, M, t: float) -> SpectralField:
    """Free Schroedinger evolution ``U(t) = exp(i t M Laplacian)``."""
    masses = _check_masses(M, field.components)
    hat = field.frequency().data * free_multipliers(field.grid, masses, t)
    return SpectralField(field.grid, hat, FREQUENCY, dict(field.meta)).in_view(field.view)


def gp_multiplier(grid: Grid, t: float) -> np.ndarray:
    return np.exp(-1j * t * gp_dispersion(grid.xi2))


def gp_propagate(field: SpectralField, t: float) -> SpectralField:
    """Linearized Gross-Pitaevskii evolution ``exp(-i t H)`` on a single-component field."""
    if field.components != 1:
        raise ConfigurationError("gp_propagate expects a single-component field")
    hat = field.frequency().data * gp_multiplier(field.grid, t)
    return SpectralField(field.grid, hat, FREQUENCY, dict(field.meta)).in_view(field.view)


# --------------------------------------------------------------------------
# Combined GP symbols.
#
# Every operator of the chain is a monomial |xi|^a <xi>^b, possibly times
# unit direction factors i xi_j / |xi| (gradients). Exponents are summed
# before evaluation so singular factors cancel analytically.

_ATOMS = {
    "U": (1, -1),
    "H": (1, 1),
    "|∇|": (1, 0),
    "absgrad": (1, 0),
    "<∇>": (0, 1),
    "⟨∇⟩": (0, 1),
    "bracket": (0, 1),
    "K": (0, -2),
    "(2-Δ)": (0, 2),
}
_DIRECTIONAL = {"grad", "∇", "div", "∇·"}
_TOKEN = re.compile(r"^(?P<name>.+?)(\^(?P<exp>[-+]?[0-9./]+))?$")


def _parse_exponent(text: str | None) -> Fraction:
    if text is None:
        return Fraction(1)
    return Fraction(text)


def _parse_op(op) -> tuple[Fraction, Fraction, int, bool]:
    """Return ``(a, b, directions, singular)`` for one chain element."""
    if isinstance(op, tuple):
        name, power = op[0], Fraction(op[1]).limit_denominator(10**6)
    else:
        text = op.replace(" ", "").replace("(2-Δ)^-1", "K").replace("(2-Δ)^{-1}", "K")
        if text in ("H^-1∇·", "H^-1div", "H^{-1}∇·"):
            # H^-1 = |xi|^-1 <xi>^-1, the divergence contributes |xi| and a direction
            return Fraction(0), Fraction(-1), 1, True
        m = _TOKEN.match(text.replace("{", "").replace("}", ""))
        if m is None:
            raise ConfigurationError(f"cannot parse operator {op!r}")
        name, power = m.group("name"), _parse_exponent(m.group("exp"))
    if name in _DIRECTIONAL:
        if power != 1:
            raise ConfigurationError("directional factors take no exponent")
        return Fraction(1), Fraction(0), 1, False
    if name not in _ATOMS:
        raise ConfigurationError(f"unknown operator {name!r}")
    a, b = _ATOMS[name]
    return a * power, b * power, 0, a * power < 0


def combined_symbol(op_chain: Sequence, axis: int | None = None) -> FourierSymbol:
    """Product symbol of a chain of GP operators, simplified before evaluation.

    Chain elements are strings such as ``"U"``, ``"U^-1"``, ``"H^-1∇·"``,
    ``"K"`` (for ``(2-Δ)^-1``), ``"|∇|^s"``, ``"<∇>^s"``, ``"grad"`` or
    tuples ``(name, power)``. Directional elements need ``axis``.

    The result carries ``flags``: ``zero_mode_flagged`` whenever any factor
    is singular at the origin, ``residual_singular`` when the simplified
    product still is (its zero mode is then set to 0).
    """
    a = b = Fraction(0)
    directions = 0
    singular = False
    for op in op_chain:
        da, db, dirs, sing = _parse_op(op)
        a += da
        b += db
        directions += dirs
        singular |= sing
    if directions and axis is None:
        raise ConfigurationError("a directional chain needs an axis")
    flags = set()
    if singular:
        flags.add("zero_mode_flagged")
    if a < 0:
        flags.add("residual_singular")
        flags.add("zero_mode_flagged")

    def evaluate(xi):
        xi2 = sum(k**2 for k in xi)
        mod = np.sqrt(xi2)
        out = np.ones_like(xi2, dtype=np.complex128)
        if a != 0:
            with np.errstate(divide="ignore"):
                out = out * mod ** float(a)
        if b != 0:
            out = out * bracket(xi2) ** float(b)
        if directions:
            with np.errstate(divide="ignore", invalid="ignore"):
                unit = np.where(mod > 0, xi[axis] / np.where(mod > 0, mod, 1.0), 0.0)
            out = out * (1j * unit) ** directions
        return out

    policy = "zero" if (a < 0 or directions) else "keep"
    name = "·".join(str(op) for op in op_chain)
    return FourierSymbol(evaluate, policy, name, frozenset(flags))
