"""The MFG operator, its regularized version and the Newton linearization.

For a state ``w = (m, u)`` the operator has two rows::

    HJ:  -u - H(x, Du, D2u, m, h(m))
    FP:   m - div(m DpH) + sum_ij d_ij(m DM_ij H) - 1

The regularized operator adds ``eps1 (I + lap^{2p}) + eps2 (I - lap)`` to
both rows (applied to m in the first row and to u in the second) and the
positivity penalty ``beta(m)`` to the first row, with H replaced by the
blend ``(1 - mu) H + mu * H_model``.

Assembly is done on Fourier coefficients. Nodal values are used only for
the pointwise nonlinearities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import eval_h, frechet_coefficients, frechet_weight
from .errors import ConfigurationError, PositivityError
from .grid import Field, TorusGrid, to_coefficients, to_values
from .hamiltonian import HamiltonianSpec, ModelHamiltonianParams, blend_mu


@dataclass(frozen=True)
class MFGState:
    m: Field
    u: Field

    def __post_init__(self):
        if self.m.grid != self.u.grid:
            raise ConfigurationError("m and u live on different grids")

    @property
    def grid(self) -> TorusGrid:
        return self.m.grid

    @classmethod
    def constant(cls, grid: TorusGrid, m: float, u: float) -> "MFGState":
        return cls(Field.constant(grid, m), Field.constant(grid, u))

    @classmethod
    def from_coefficients(cls, grid: TorusGrid, mc, uc) -> "MFGState":
        return cls(Field.from_coefficients(grid, mc), Field.from_coefficients(grid, uc))

    def coefficients(self):
        return self.m.coefficients(), self.u.coefficients()

    def axpy(self, t: float, direction: "MFGState") -> "MFGState":
        """``self + t * direction``."""
        mc, uc = self.coefficients()
        dm, du = direction.coefficients()
        return MFGState.from_coefficients(self.grid, mc + t * dm, uc + t * du)

    def distance(self, other: "MFGState") -> float:
        """Discrete L2 x L2 distance."""
        a, b = self.coefficients()
        c, d = other.coefficients()
        return float(np.sqrt(np.sum(np.abs(a - c) ** 2) + np.sum(np.abs(b - d) ** 2)))


@dataclass(frozen=True)
class RegularizationParams:
    """Regularization weights ``eps1, eps2``, Laplacian power p and penalty exponent q."""

    eps1: float
    eps2: float
    laplacian_order_p: int
    penalty_q: float

    def __post_init__(self):
        for name in ("eps1", "eps2"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1), got {val}")
        if int(self.laplacian_order_p) != self.laplacian_order_p or self.laplacian_order_p < 1:
            raise ConfigurationError("laplacian_order_p must be a positive integer")

    @classmethod
    def for_dimension(cls, d: int, eps1: float, eps2: float, p: int | None = None,
                      q: float | None = None) -> "RegularizationParams":
        p = default_laplacian_order(d) if p is None else p
        q = float(d + 1) if q is None else q
        reg = cls(float(eps1), float(eps2), int(p), float(q))
        reg.validate(d)
        return reg

    def validate(self, d: int) -> None:
        p, q = self.laplacian_order_p, self.penalty_q
        if not 2 * p - 4 > d / 2 + 1:
            raise ConfigurationError(f"laplacian order p={p} violates 2p-4 > d/2+1 for d={d}")
        if not q > d:
            raise ConfigurationError(f"penalty exponent q={q} must exceed d={d}")

    def with_eps(self, eps1: float, eps2: float) -> "RegularizationParams":
        return RegularizationParams(float(eps1), float(eps2), self.laplacian_order_p, self.penalty_q)

    @property
    def total(self) -> float:
        return self.eps1 + self.eps2

    def symbol(self, grid: TorusGrid) -> np.ndarray:
        """Fourier symbol of ``eps1 (I + lap^{2p}) + eps2 (I - lap)``."""
        k2 = grid.wavenumber_sq
        return self.eps1 * (1.0 + k2 ** (2 * self.laplacian_order_p)) + self.eps2 * (1.0 + k2)


def default_laplacian_order(d: int) -> int:
    p = 1
    while not 2 * p - 4 > d / 2 + 1:
        p += 1
    return p


@dataclass(frozen=True)
class ResidualPair:
    r_hj: Field
    r_fp: Field

    def sup_norm(self) -> float:
        return max(self.r_hj.sup_norm(), self.r_fp.sup_norm())

    def l2_norm(self) -> float:
        a, b = self.r_hj.coefficients(), self.r_fp.coefficients()
        return float(np.sqrt(np.sum(np.abs(a) ** 2) + np.sum(np.abs(b) ** 2)))


# penalty --------------------------------------------------------------

def _psi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _dpsi(t):
    out = np.zeros_like(t)
    pos = t > 0
    inv = 1.0 / t[pos]
    out[pos] = np.exp(-inv) * inv**2
    return out


def _cutoff(s, eps1):
    """Smooth step: 1 for s <= eps1/2, 0 for s >= eps1; returns (chi, dchi/ds)."""
    t = (s - 0.5 * eps1) / (0.5 * eps1)
    a, b = _psi(1.0 - t), _psi(t)
    da, db = -_dpsi(1.0 - t), _dpsi(t)
    den = a + b
    chi = a / den
    dchi = (da * b - a * db) / den**2 * (2.0 / eps1)
    return chi, dchi


def _check_positive(s):
    if np.any(~(s > 0)):
        bad = int(np.flatnonzero(~(s.ravel() > 0))[0])
        raise PositivityError(f"penalty queried at nonpositive argument {s.ravel()[bad]:.3g}", node=bad)


def beta(s, eps1: float, q: float):
    """Nondecreasing penalty: 0 above eps1, ``-1/s^q`` below eps1/2."""
    arr = np.asarray(s, dtype=float)
    _check_positive(arr)
    chi, _ = _cutoff(arr, eps1)
    out = np.where(arr >= eps1, 0.0, -chi / arr**q)
    return float(out) if np.ndim(s) == 0 else out


def beta_prime(s, eps1: float, q: float):
    arr = np.asarray(s, dtype=float)
    _check_positive(arr)
    chi, dchi = _cutoff(arr, eps1)
    out = np.where(arr >= eps1, 0.0, -dchi / arr**q + q * chi / arr ** (q + 1))
    return float(out) if np.ndim(s) == 0 else out


# assembly -------------------------------------------------------------

def _derivatives(grid: TorusGrid, uc: np.ndarray):
    p = np.stack([to_values(uc * sym) for sym in grid.odd_symbols])
    lap = to_values(-grid.wavenumber_sq * uc)
    return p, lap


def residual_coefficients(state: MFGState, ham, nonlocal_, reg: RegularizationParams | None = None,
                          shift: float = 0.0, anchor: MFGState | None = None):
    """Fourier coefficients of both operator rows at ``state``.

    ``ham`` is any evaluator with a ``terms`` method. ``shift`` adds
    ``shift * (state - anchor)``, used by the proximal flow.
    """
    g = state.grid
    mc, uc = state.coefficients()
    m = state.m.values
    p, lap = _derivatives(g, uc)
    theta = eval_h(nonlocal_, state.m).values
    t = ham.terms(p, lap, m, theta, order=1)
    r1 = -uc - to_coefficients(t.H)
    r2 = mc + g.wavenumber_sq * to_coefficients(t.diffusion * m)
    for sym, dp in zip(g.odd_symbols, t.Dp):
        r2 = r2 - sym * to_coefficients(m * dp)
    r2.flat[0] -= 1.0
    if reg is not None:
        E = reg.symbol(g)
        r1 = r1 + E * mc + to_coefficients(beta(m, reg.eps1, reg.penalty_q))
        r2 = r2 + E * uc
    if shift:
        am, au = anchor.coefficients()
        r1 = r1 + shift * (mc - am)
        r2 = r2 + shift * (uc - au)
    return r1, r2


def _pair(grid, r1, r2) -> ResidualPair:
    return ResidualPair(Field.from_coefficients(grid, r1), Field.from_coefficients(grid, r2))


def apply_A(state: MFGState, spec: HamiltonianSpec) -> ResidualPair:
    return _pair(state.grid, *residual_coefficients(state, spec, spec.nonlocal_))


def _require_domain(state: MFGState):
    if not state.m.min() > 0:
        node = int(np.argmin(state.m.flat))
        raise PositivityError(f"state outside the regularized domain: min m = {state.m.min():.3g}", node=node)


def apply_A_reg(state: MFGState, mu: float, reg: RegularizationParams, spec: HamiltonianSpec,
                model: ModelHamiltonianParams | None = None) -> ResidualPair:
    reg.validate(state.grid.d)
    _require_domain(state)
    ham = blend_mu(mu, spec, model)
    return _pair(state.grid, *residual_coefficients(state, ham, spec.nonlocal_, reg))


class Linearization:
    """Derivative of the (regularized, blended) operator at a fixed state.

    Acts complex-linearly on coefficient arrays, which lets the Krylov
    solver work directly in Fourier space.
    """

    def __init__(self, state: MFGState, ham, nonlocal_, reg: RegularizationParams | None, shift: float = 0.0):
        g = state.grid
        self.grid = g
        self.shift = shift
        self.nonlocal_ = nonlocal_
        m = state.m.values
        p, lap = _derivatives(g, state.u.coefficients())
        theta = eval_h(nonlocal_, state.m).values
        t = ham.terms(p, lap, m, theta, order=2)
        self.m = m
        self.t = t
        self.weight = frechet_weight(nonlocal_, state.m) if nonlocal_.active else None
        if reg is not None:
            self.E = reg.symbol(g)
            self.beta_p = beta_prime(m, reg.eps1, reg.penalty_q)
        else:
            self.E = np.zeros(g.shape)
            self.beta_p = np.zeros(g.shape)
        self._build_preconditioner()

    def apply_coefficients(self, eta_c, v_c):
        g, t = self.grid, self.t
        ifft = lambda c: np.fft.ifftn(c, norm="forward")
        fft = lambda a: np.fft.fftn(a, norm="forward")
        eta = ifft(eta_c)
        dv = [ifft(sym * v_c) for sym in g.odd_symbols]
        lapv = ifft(-g.wavenumber_sq * v_c)
        l1 = -t.diffusion * lapv + t.Dm * eta
        for i in range(g.d):
            l1 = l1 + t.Dp[i] * dv[i]
        if self.nonlocal_.active:
            h_eta = ifft(frechet_coefficients(self.nonlocal_, self.weight, eta_c))
            l1 = l1 + t.Dtheta * h_eta
        r1 = -v_c - fft(l1) + (self.E + self.shift) * eta_c + fft(self.beta_p * eta)
        r2 = eta_c + (self.E + self.shift) * v_c
        r2 = r2 + g.wavenumber_sq * fft(t.diffusion * eta)
        for i, sym in enumerate(g.odd_symbols):
            l3 = t.Dmp[i] * eta
            for j in range(g.d):
                l3 = l3 + t.Dpp[i, j] * dv[j]
            r2 = r2 - sym * fft(eta * t.Dp[i] + self.m * l3)
        return r1, r2

    def apply(self, direction: MFGState) -> ResidualPair:
        r1, r2 = self.apply_coefficients(*direction.coefficients())
        return _pair(self.grid, r1, r2)

    def _build_preconditioner(self):
        """Frequency-diagonal 2x2 blocks from spatially averaged coefficients."""
        g, t, m = self.grid, self.t, self.m
        E = self.E + self.shift
        k2 = g.wavenumber_sq
        syms = g.odd_symbols
        dh = np.zeros(g.shape)
        if self.nonlocal_.active:
            zeta = self.nonlocal_.kernel_symbol().real
            dh = self.nonlocal_.c1 * zeta
            if self.weight is not None:
                dh = dh + self.nonlocal_.c2 * self.weight.mean() * zeta**2
        s_bar = t.diffusion.mean()
        a11 = -t.Dm.mean() - t.Dtheta.mean() * dh + E + self.beta_p.mean()
        a12 = -1.0 - s_bar * k2 + 0j
        a21 = 1.0 + s_bar * k2 + 0j
        a22 = E + 0j
        for i in range(g.d):
            a12 = a12 - t.Dp[i].mean() * syms[i]
            a21 = a21 - (t.Dp[i] + m * t.Dmp[i]).mean() * syms[i]
            for j in range(g.d):
                a22 = a22 - (m * t.Dpp[i, j]).mean() * syms[i] * syms[j]
        a11 = np.broadcast_to(a11, g.shape)
        det = a11 * a22 - a12 * a21
        small = np.abs(det) < 1e-300
        det = np.where(small, 1.0, det)
        self._blocks = (a11, a12, a21, a22, det)

    def precondition(self, b1, b2):
        a11, a12, a21, a22, det = self._blocks
        return (a22 * b1 - a12 * b2) / det, (a11 * b2 - a21 * b1) / det


def linearize_apply(state: MFGState, mu: float, reg: RegularizationParams, spec: HamiltonianSpec,
                    direction: MFGState, model: ModelHamiltonianParams | None = None) -> ResidualPair:
    reg.validate(state.grid.d)
    _require_domain(state)
    lin = Linearization(state, blend_mu(mu, spec, model), spec.nonlocal_, reg)
    return lin.apply(direction)


def _coeff_pairing(a, b) -> float:
    return float(np.sum(a * np.conj(b)).real)


def monotonicity_pairing(w1: MFGState, w2: MFGState, spec: HamiltonianSpec, mu: float | None = None,
                         reg: RegularizationParams | None = None,
                         model: ModelHamiltonianParams | None = None) -> float:
    """``<A(w1) - A(w2), w1 - w2>`` in L2 x L2 (regularized version if ``reg``)."""
    if reg is None:
        a1 = residual_coefficients(w1, spec, spec.nonlocal_)
        a2 = residual_coefficients(w2, spec, spec.nonlocal_)
    else:
        ham = blend_mu(0.0 if mu is None else mu, spec, model)
        _require_domain(w1)
        _require_domain(w2)
        a1 = residual_coefficients(w1, ham, spec.nonlocal_, reg)
        a2 = residual_coefficients(w2, ham, spec.nonlocal_, reg)
    m1, u1 = w1.coefficients()
    m2, u2 = w2.coefficients()
    return _coeff_pairing(a1[0] - a2[0], m1 - m2) + _coeff_pairing(a1[1] - a2[1], u1 - u2)
