"""Local coupling g = g1 + g2, the smoothing operator h and the potential V."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, GridMismatchError, SingularDerivativeError
from .grid import Field, TorusGrid, periodic_convolve, wrapped_gaussian_kernel


@dataclass(frozen=True)
class CouplingSpec:
    """``g1 = m**alpha`` (kind ``power``) or ``log(m)`` (kind ``log``); ``g2 = theta``."""

    kind: str = "power"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power", "log"):
            raise ConfigurationError(f"unknown coupling kind {self.kind!r}")
        if self.kind == "power" and not self.alpha > 0:
            raise ConfigurationError(f"power coupling needs alpha > 0, got {self.alpha}")

    @classmethod
    def power(cls, alpha: float) -> "CouplingSpec":
        return cls("power", float(alpha))

    @classmethod
    def log(cls) -> "CouplingSpec":
        return cls("log", 1.0)

    @property
    def growth_exponent(self) -> float:
        """Exponent used by the current-integrability estimate (alpha, or 1 for log)."""
        return self.alpha if self.kind == "power" else 1.0

    def _check(self, m: np.ndarray) -> None:
        if self.kind == "log":
            bad = np.flatnonzero(~(m.ravel() > 0))
            if bad.size:
                raise DomainError(f"log coupling needs m > 0; m={m.ravel()[bad[0]]:.3g} at node {bad[0]}",
                                  node=int(bad[0]))
        else:
            bad = np.flatnonzero(m.ravel() < 0)
            if bad.size:
                raise DomainError(f"power coupling needs m >= 0; m={m.ravel()[bad[0]]:.3g} at node {bad[0]}",
                                  node=int(bad[0]))

    def g1(self, m: np.ndarray) -> np.ndarray:
        self._check(m)
        if self.kind == "log":
            return np.log(m)
        return m ** self.alpha

    def dg1(self, m: np.ndarray) -> np.ndarray:
        """Derivative of g1 in m (requires m > 0 unless alpha >= 1)."""
        self._check(m)
        if self.kind == "log":
            return 1.0 / m
        if self.alpha == 1.0:
            return np.ones_like(m)
        with np.errstate(divide="raise"):
            try:
                return self.alpha * m ** (self.alpha - 1.0)
            except FloatingPointError as exc:
                raise DomainError("derivative of m**alpha undefined at m = 0") from exc


def eval_g(spec: CouplingSpec, m: Field, theta: Field) -> tuple:
    """Return ``(g1, g2)`` as fields."""
    return Field(m.grid, spec.g1(m.values)), Field(theta.grid, theta.values)


@dataclass(frozen=True)
class NonlocalSpec:
    """``h(m) = c1 * (k * m) + c2 * k * ((k * m)**alpha_bar)`` with Gaussian kernel k."""

    c1: float
    c2: float
    alpha_bar: float
    kernel_width: float
    kernel: Field

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ConfigurationError("nonlocal weights c1, c2 must be nonnegative")
        if not self.alpha_bar > 0:
            raise ConfigurationError("alpha_bar must be positive")

    @classmethod
    def build(cls, grid: TorusGrid, c1: float = 0.0, c2: float = 0.0,
              alpha_bar: float = 1.0, kernel_width: float = 0.1) -> "NonlocalSpec":
        kernel = wrapped_gaussian_kernel(grid, kernel_width)
        return cls(float(c1), float(c2), float(alpha_bar), float(kernel_width), kernel)

    @classmethod
    def none(cls, grid: TorusGrid) -> "NonlocalSpec":
        return cls.build(grid, 0.0, 0.0)

    @property
    def grid(self) -> TorusGrid:
        return self.kernel.grid

    @property
    def active(self) -> bool:
        return self.c1 != 0 or self.c2 != 0

    def kernel_symbol(self) -> np.ndarray:
        return self.kernel.coefficients()


def eval_h(spec: NonlocalSpec, m: Field) -> Field:
    if m.grid != spec.grid:
        raise GridMismatchError("density and kernel live on different grids")
    bad = np.flatnonzero(m.flat < 0)
    if bad.size:
        raise DomainError(f"nonlocal term needs m >= 0; negative at node {bad[0]}", node=int(bad[0]))
    if not spec.active:
        return Field.constant(m.grid, 0.0)
    smooth = periodic_convolve(m, spec.kernel)
    out = spec.c1 * smooth
    if spec.c2:
        # the smoothed density can dip a few ulps below zero where m vanishes
        inner_vals = np.maximum(smooth.values, 0.0) ** spec.alpha_bar
        out = out + spec.c2 * periodic_convolve(Field(m.grid, inner_vals), spec.kernel)
    return out


def frechet_weight(spec: NonlocalSpec, m0: Field) -> np.ndarray | None:
    """Nodal factor ``alpha_bar * (k * m0)**(alpha_bar - 1)`` of the c2 term, or None."""
    if not spec.c2:
        return None
    smooth = periodic_convolve(m0, spec.kernel).values
    if spec.alpha_bar == 1.0:
        return np.ones_like(smooth)
    if spec.alpha_bar < 1.0 and np.any(smooth <= 0):
        node = int(np.flatnonzero(smooth.ravel() <= 0)[0])
        raise SingularDerivativeError("smoothed density vanishes; derivative of the power is singular",
                                      node=node)
    return spec.alpha_bar * np.maximum(smooth, 0.0) ** (spec.alpha_bar - 1.0)


def frechet_coefficients(spec: NonlocalSpec, weight, dm_coeffs: np.ndarray) -> np.ndarray:
    """Spectral form of the derivative of h; complex-linear in ``dm_coeffs``."""
    zeta = spec.kernel_symbol()
    smooth_dm = zeta * dm_coeffs
    out = spec.c1 * smooth_dm
    if weight is not None:
        nodal = np.fft.ifftn(smooth_dm, norm="forward") * weight
        out = out + spec.c2 * zeta * np.fft.fftn(nodal, norm="forward")
    return out


def h_frechet_apply(spec: NonlocalSpec, m0: Field, dm: Field) -> Field:
    if not (m0.grid == dm.grid == spec.grid):
        raise GridMismatchError("operands live on different grids")
    if np.any(m0.values < 0):
        raise DomainError("base density must be nonnegative")
    weight = frechet_weight(spec, m0)
    return Field.from_coefficients(m0.grid, frechet_coefficients(spec, weight, dm.coefficients()))


@dataclass(frozen=True)
class PotentialSpec:
    """``V(x, m, theta) = V0(x) + g1(m) + theta``."""

    V0: Field
    coupling: CouplingSpec


def eval_V(spec: PotentialSpec, m: Field, theta: Field) -> Field:
    g1, g2 = eval_g(spec.coupling, m, theta)
    return Field(m.grid, spec.V0.values + g1.values + g2.values)
