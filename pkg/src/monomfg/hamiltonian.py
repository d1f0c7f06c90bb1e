"""Hamiltonian families, the model Hamiltonian and their derivatives.

Every family has the form ``H = H0(x, p, m, theta) - s(x) * tr M`` with a
scalar diffusion coefficient ``s >= 0``; derivatives are closed forms.

Internally everything works on plain arrays: ``p`` has shape
``(d, *S)`` and the scalars have shape ``S``. The spatial coefficients
``a``, ``sigma`` and ``V0`` are looked up either on the whole grid
(``at=None``) or at a list of flat node indices.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .coupling import CouplingSpec, NonlocalSpec, PotentialSpec
from .errors import CongestionSingularityError, ConfigurationError, DomainError
from .grid import Field, MatrixField, TorusGrid, VectorField


@dataclass
class HTerms:
    """Pointwise values of H and its partial derivatives.

    ``diffusion`` is ``s`` in ``D_M H = -s * I``. Second-order entries are
    None unless requested.
    """

    H: np.ndarray
    Dp: np.ndarray | None = None
    Dm: np.ndarray | None = None
    Dtheta: np.ndarray | None = None
    diffusion: np.ndarray | None = None
    Dpp: np.ndarray | None = None
    Dmp: np.ndarray | None = None

    def combine(self, w: float, other: "HTerms", v: float) -> "HTerms":
        def mix(a, b):
            if a is None or b is None:
                return None
            return w * a + v * b
        return HTerms(*(mix(getattr(self, f), getattr(other, f))
                        for f in ("H", "Dp", "Dm", "Dtheta", "diffusion", "Dpp", "Dmp")))


def _eye_like(p):
    d = p.shape[0]
    return np.eye(d).reshape((d, d) + (1,) * (p.ndim - 1))


def _outer(p):
    return p[:, None] * p[None, :]


def _radial_terms(coef, gamma, p, order):
    """``coef * (1+|p|^2)^(gamma/2)`` with its p-gradient and p-Hessian."""
    w = 1.0 + np.sum(p * p, axis=0)
    val = coef * w ** (gamma / 2)
    if order < 1:
        return val, None, None
    grad = coef * gamma * w ** (gamma / 2 - 1) * p
    if order < 2:
        return val, grad, None
    hess = coef * gamma * w ** (gamma / 2 - 2) * (w * _eye_like(p) + (gamma - 2) * _outer(p))
    return val, grad, hess


def _positive(m, what, cls=DomainError):
    bad = np.flatnonzero(~(np.asarray(m).ravel() > 0))
    if bad.size:
        raise cls(f"{what} needs m > 0; m={np.asarray(m).ravel()[bad[0]]:.3g} at node {bad[0]}",
                  node=int(bad[0]))


# families -------------------------------------------------------------

@dataclass(frozen=True)
class PowerGrowth:
    """Kinetic part ``a(x) (1+|p|^2)^(gamma/2)``, diffusion ``sigma(x)``."""

    a: Field
    gamma: float
    sigma: Field

    def __post_init__(self):
        if not self.gamma > 1:
            raise ConfigurationError(f"gamma must exceed 1, got {self.gamma}")
        if not self.a.min() > 0:
            raise ConfigurationError("coefficient a must be positive")
        if self.sigma.min() < 0:
            raise ConfigurationError("diffusion sigma must be nonnegative")

    tau = 0.0

    def kinetic(self, a, p, m, order):
        val, grad, hess = _radial_terms(a, self.gamma, p, order)
        zero = np.zeros_like(m)
        return val, grad, hess, zero, (None if order < 2 else np.zeros_like(p))


@dataclass(frozen=True)
class Congestion:
    """Kinetic part ``a(x) |p|^2 / (2 m^tau)``, diffusion ``sigma(x)``."""

    a: Field
    tau: float
    sigma: Field

    def __post_init__(self):
        if not 0 <= self.tau < 1:
            raise ConfigurationError(f"tau must lie in [0, 1), got {self.tau}")
        if not self.a.min() > 0:
            raise ConfigurationError("coefficient a must be positive")
        if self.sigma.min() < 0:
            raise ConfigurationError("diffusion sigma must be nonnegative")

    gamma = 2.0

    def kinetic(self, a, p, m, order):
        if self.tau > 0:
            _positive(m, "congestion term", CongestionSingularityError)
            crowd = m ** (-self.tau)
        else:
            crowd = np.ones_like(m)
        p2 = np.sum(p * p, axis=0)
        val = 0.5 * a * p2 * crowd
        if order < 1:
            return val, None, None, None, None
        grad = a * crowd * p
        dm = -self.tau * val / m if self.tau > 0 else np.zeros_like(m)
        if order < 2:
            return val, grad, None, dm, None
        hess = (a * crowd) * _eye_like(p) * np.ones_like(p[:1])
        dmp = -self.tau * grad / m if self.tau > 0 else np.zeros_like(p)
        return val, grad, hess, dm, dmp


@dataclass(frozen=True)
class QuadraticSeparable:
    """``|p|^2/2 - V(x, m, theta) - sigma0^2 tr M``."""

    sigma0: float = 0.0

    gamma = 2.0
    tau = 0.0

    def kinetic(self, a, p, m, order):
        val = 0.5 * np.sum(p * p, axis=0)
        if order < 1:
            return val, None, None, None, None
        dm = np.zeros_like(m)
        if order < 2:
            return val, p.copy(), None, dm, None
        return val, p.copy(), _eye_like(p) * np.ones_like(p[:1]), dm, np.zeros_like(p)


FAMILY_NAMES = {PowerGrowth: "power", Congestion: "congestion", QuadraticSeparable: "quadratic"}


@dataclass(frozen=True)
class ModelHamiltonianParams:
    """Model Hamiltonian ``(1+|p|^2)^(gamma/2) / (gamma m^tau) - m``."""

    gamma: float = 2.0
    tau: float = 0.0

    def __post_init__(self):
        if not self.gamma > 1:
            raise ConfigurationError(f"gamma must exceed 1, got {self.gamma}")
        if not 0 <= self.tau < 1:
            raise ConfigurationError(f"tau must lie in [0, 1), got {self.tau}")

    def terms(self, p, trM, m, theta, order=1, at=None) -> HTerms:
        m = np.asarray(m, dtype=float)
        _positive(m, "model Hamiltonian")
        crowd = m ** (-self.tau)
        val, grad, hess = _radial_terms(1.0 / self.gamma, self.gamma, p, order)
        out = HTerms(H=val * crowd - m)
        if order < 1:
            return out
        out.Dp = grad * crowd
        out.Dm = -self.tau * val * crowd / m - 1.0
        out.Dtheta = np.zeros_like(m)
        out.diffusion = np.zeros_like(m)
        if order >= 2:
            out.Dpp = hess * crowd
            out.Dmp = -self.tau * out.Dp / m
        return out

    def coupling_value(self, m, theta, at=None):
        return np.asarray(m, dtype=float)


@dataclass(frozen=True)
class HamiltonianSpec:
    """A family together with its coupling, nonlocal term and potential ``V0``."""

    family: object
    coupling: CouplingSpec
    nonlocal_: NonlocalSpec
    V0: Field

    def __post_init__(self):
        if type(self.family) not in FAMILY_NAMES:
            raise ConfigurationError(f"unsupported Hamiltonian family {type(self.family).__name__}")
        for f in self._spatial():
            if f.grid != self.V0.grid:
                raise ConfigurationError("spatial coefficients live on different grids")
        if self.nonlocal_.grid != self.V0.grid:
            raise ConfigurationError("nonlocal kernel lives on a different grid")

    # builders
    @classmethod
    def quadratic(cls, grid: TorusGrid, sigma0=0.0, V0=None, coupling=None, nonlocal_=None):
        return cls(QuadraticSeparable(float(sigma0)), coupling or CouplingSpec.power(1.0),
                   nonlocal_ or NonlocalSpec.none(grid), V0 if V0 is not None else Field.constant(grid, 0.0))

    @classmethod
    def power_growth(cls, grid: TorusGrid, gamma, a=None, sigma=None, V0=None, coupling=None, nonlocal_=None):
        a = a if a is not None else Field.constant(grid, 1.0)
        sigma = sigma if sigma is not None else Field.constant(grid, 0.0)
        return cls(PowerGrowth(a, float(gamma), sigma), coupling or CouplingSpec.power(1.0),
                   nonlocal_ or NonlocalSpec.none(grid), V0 if V0 is not None else Field.constant(grid, 0.0))

    @classmethod
    def congestion(cls, grid: TorusGrid, tau, a=None, sigma=None, V0=None, coupling=None, nonlocal_=None):
        a = a if a is not None else Field.constant(grid, 1.0)
        sigma = sigma if sigma is not None else Field.constant(grid, 0.0)
        return cls(Congestion(a, float(tau), sigma), coupling or CouplingSpec.power(1.0),
                   nonlocal_ or NonlocalSpec.none(grid), V0 if V0 is not None else Field.constant(grid, 0.0))

    def _spatial(self):
        fam = self.family
        return [fam.a, fam.sigma] if hasattr(fam, "a") else []

    @property
    def grid(self) -> TorusGrid:
        return self.V0.grid

    @property
    def name(self) -> str:
        return FAMILY_NAMES[type(self.family)]

    @property
    def gamma(self) -> float:
        return float(self.family.gamma)

    @property
    def tau(self) -> float:
        return float(self.family.tau)

    @property
    def potential(self) -> PotentialSpec:
        return PotentialSpec(self.V0, self.coupling)

    def diffusion_field(self) -> Field:
        fam = self.family
        if isinstance(fam, QuadraticSeparable):
            return Field.constant(self.grid, fam.sigma0 ** 2)
        return fam.sigma

    def model_params(self) -> ModelHamiltonianParams:
        """Default model Hamiltonian matched to the family's growth."""
        return ModelHamiltonianParams(self.gamma, self.tau)

    def _lookup(self, f: Field, at):
        return f.values if at is None else f.flat[at]

    def coupling_value(self, m, theta, at=None):
        return self.coupling.g1(np.asarray(m, dtype=float)) + theta

    def terms(self, p, trM, m, theta, order=1, at=None) -> HTerms:
        """Evaluate H and derivatives up to ``order`` (0, 1 or 2)."""
        m = np.asarray(m, dtype=float)
        fam = self.family
        a = self._lookup(fam.a, at) if hasattr(fam, "a") else None
        s = self._lookup(self.diffusion_field(), at)
        V0 = self._lookup(self.V0, at)
        kin, grad, hess, kin_dm, kin_dmp = fam.kinetic(a, p, m, order)
        g1 = self.coupling.g1(m)
        out = HTerms(H=kin - V0 - g1 - theta - s * trM)
        if order < 1:
            return out
        out.Dp = grad
        out.Dm = kin_dm - self.coupling.dg1(m)
        out.Dtheta = -np.ones_like(m)
        out.diffusion = np.broadcast_to(s, m.shape).copy()
        if order >= 2:
            out.Dpp = hess
            out.Dmp = kin_dmp
        return out


@dataclass(frozen=True)
class BlendedHamiltonian:
    """``(1 - mu) H + mu * H_model``."""

    mu: float
    spec: HamiltonianSpec
    model: ModelHamiltonianParams

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigurationError(f"mu must lie in [0, 1], got {self.mu}")

    @property
    def grid(self) -> TorusGrid:
        return self.spec.grid

    @property
    def nonlocal_(self) -> NonlocalSpec:
        return self.spec.nonlocal_

    def terms(self, p, trM, m, theta, order=1, at=None) -> HTerms:
        if self.mu == 0.0:
            return self.spec.terms(p, trM, m, theta, order, at)
        if self.mu == 1.0:
            return self.model.terms(p, trM, m, theta, order, at)
        base = self.spec.terms(p, trM, m, theta, order, at)
        mod = self.model.terms(p, trM, m, theta, order, at)
        return base.combine(1.0 - self.mu, mod, self.mu)


def blend_mu(mu: float, spec: HamiltonianSpec, params: ModelHamiltonianParams | None = None) -> BlendedHamiltonian:
    return BlendedHamiltonian(float(mu), spec, params or spec.model_params())


# Field-level API ------------------------------------------------------

def _args(Du: VectorField, D2u: MatrixField | None, m: Field, theta: Field | None):
    p = Du.array
    trM = D2u.trace().values if D2u is not None else np.zeros(m.grid.shape)
    th = theta.values if theta is not None else np.zeros(m.grid.shape)
    return p, trM, m.values, th


def evaluate_terms(ham, Du, D2u, m, theta, order=1) -> HTerms:
    return ham.terms(*_args(Du, D2u, m, theta), order=order)


def eval_H(spec, Du: VectorField, D2u: MatrixField, m: Field, theta: Field) -> Field:
    return Field(m.grid, evaluate_terms(spec, Du, D2u, m, theta, order=0).H)


def grad_p_H(spec, Du, D2u, m, theta) -> VectorField:
    return VectorField.from_array(m.grid, evaluate_terms(spec, Du, D2u, m, theta).Dp)


def grad_M_H(spec, Du, D2u, m, theta) -> MatrixField:
    s = evaluate_terms(spec, Du, D2u, m, theta).diffusion
    return MatrixField.diagonal(Field(m.grid, -s))


def d_m_H(spec, Du, D2u, m, theta) -> Field:
    return Field(m.grid, evaluate_terms(spec, Du, D2u, m, theta).Dm)


def d_theta_H(spec, Du, D2u, m, theta) -> Field:
    return Field(m.grid, evaluate_terms(spec, Du, D2u, m, theta).Dtheta)


def hess_pp_H(spec, Du, D2u, m, theta) -> MatrixField:
    return MatrixField.from_array(m.grid, evaluate_terms(spec, Du, D2u, m, theta, order=2).Dpp)


def d_mp_H(spec, Du, D2u, m, theta) -> VectorField:
    return VectorField.from_array(m.grid, evaluate_terms(spec, Du, D2u, m, theta, order=2).Dmp)


def eval_model_H(params: ModelHamiltonianParams, Du: VectorField, m: Field) -> Field:
    return Field(m.grid, params.terms(Du.array, None, m.values, None, order=0).H)


def model_grad_p_H(params: ModelHamiltonianParams, Du: VectorField, m: Field) -> VectorField:
    return VectorField.from_array(m.grid, params.terms(Du.array, None, m.values, None).Dp)


def model_d_m_H(params: ModelHamiltonianParams, Du: VectorField, m: Field) -> Field:
    return Field(m.grid, params.terms(Du.array, None, m.values, None).Dm)


def eval_H0(spec: HamiltonianSpec, p: np.ndarray, m: np.ndarray, theta: np.ndarray, at=None) -> np.ndarray:
    """H without its second-order part, on raw arrays."""
    return spec.terms(p, 0.0, m, theta, order=0, at=at).H


# Legendre transform ---------------------------------------------------

def _radial_dual(speed, a, gamma, tol=1e-12):
    """Maximize ``r*speed - a*(1+r^2)^(gamma/2)`` over r >= 0, vectorized."""
    speed = np.asarray(speed, dtype=float)
    a = np.broadcast_to(a, speed.shape).astype(float)

    def slope(r):
        return a * gamma * r * (1.0 + r * r) ** (gamma / 2 - 1)

    lo = np.zeros_like(speed)
    hi = np.ones_like(speed)
    while np.any(slope(hi) < speed):
        hi = np.where(slope(hi) < speed, 2 * hi, hi)
    for _ in range(200):
        if np.all(hi - lo <= tol * (1.0 + hi)):
            break
        mid = 0.5 * (lo + hi)
        below = slope(mid) < speed
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    r = 0.5 * (lo + hi)
    return r * speed - a * (1.0 + r * r) ** (gamma / 2)


def legendre_L0(spec: HamiltonianSpec, v: VectorField, m: Field, theta: Field) -> Field:
    """``sup_p { -p.v - H0(x, p, m, theta) }``."""
    vv = v.array
    speed2 = np.sum(vv * vv, axis=0)
    mv, th = m.values, theta.values
    coupling = spec.V0.values + spec.coupling.g1(mv) + th
    fam = spec.family
    if isinstance(fam, QuadraticSeparable):
        kin = 0.5 * speed2
    elif isinstance(fam, Congestion):
        if fam.tau > 0:
            _positive(mv, "congestion Legendre transform", CongestionSingularityError)
        kin = (mv ** fam.tau) * speed2 / (2 * fam.a.values)
    elif isinstance(fam, PowerGrowth):
        kin = _radial_dual(np.sqrt(speed2), fam.a.values, fam.gamma)
    else:  # pragma: no cover - guarded by HamiltonianSpec
        raise NotImplementedError(f"no Legendre transform for {type(fam).__name__}")
    return Field(m.grid, kin + coupling)


# structural check -----------------------------------------------------

@dataclass
class CoercivityReport:
    passed: bool
    min_margin: float
    samples: int
    C1: float
    C2: float
    worst: int | None = None


def random_samples(grid: TorusGrid, rng: np.random.Generator, n: int = 100,
                   p_scale: float = 2.0, m_range=(0.1, 3.0), theta_range=(0.0, 2.0)) -> list:
    """Random ``(node, p, M, m, theta)`` tuples with m > 0 and symmetric M."""
    out = []
    d = grid.d
    for _ in range(n):
        node = int(rng.integers(grid.size))
        p = p_scale * rng.standard_normal(d)
        A = rng.standard_normal((d, d))
        out.append((node, p, 0.5 * (A + A.T), float(rng.uniform(*m_range)), float(rng.uniform(*theta_range))))
    return out


def _stack_samples(samples):
    nodes = np.array([s[0] for s in samples], dtype=int)
    p = np.array([np.atleast_1d(s[1]) for s in samples], dtype=float).T
    M = np.array([np.atleast_2d(s[2]) for s in samples], dtype=float)
    m = np.array([s[3] for s in samples], dtype=float)
    th = np.array([s[4] for s in samples], dtype=float)
    return nodes, p, M, m, th


def check_coercivity_identity(ham, samples, C1: float = 1.0, C2: float = 1.0) -> CoercivityReport:
    """Margin of ``-H + DpH.p + DMH:M >= m^-tau |p|^gamma / C1 + C2 g - C1``.

    ``ham`` is a :class:`HamiltonianSpec` or :class:`ModelHamiltonianParams`.
    """
    if len(samples) == 0:
        return CoercivityReport(True, float("inf"), 0, C1, C2)
    nodes, p, M, m, th = _stack_samples(samples)
    trM = np.trace(M, axis1=1, axis2=2)
    t = ham.terms(p, trM, m, th, order=1, at=nodes)
    lhs = -t.H + np.sum(t.Dp * p, axis=0) - t.diffusion * trM
    gamma, tau = ham.gamma, ham.tau
    rhs = m ** (-tau) * np.sum(p * p, axis=0) ** (gamma / 2) / C1 + C2 * ham.coupling_value(m, th, at=nodes) - C1
    margin = lhs - rhs
    worst = int(np.argmin(margin))
    return CoercivityReport(bool(margin.min() >= -1e-12), float(margin.min()), len(samples), C1, C2, worst)
