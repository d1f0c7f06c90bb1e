"""Executable checks on computed solutions.

Every check returns a :class:`CheckResult`; a :class:`DiagnosticsReport`
collects them and serializes to JSON.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .coupling import eval_h
from .errors import ConfigurationError, DomainError
from .grid import (Field, VectorField, gradient, integrate, laplacian_power, random_fourier_field,
                   random_positive_field)
from .hamiltonian import HamiltonianSpec, QuadraticSeparable, legendre_L0, random_samples, check_coercivity_identity
from .operator import MFGState, RegularizationParams, beta, residual_coefficients

SCHEMA_VERSION = 1
NEGATIVE_ROUNDOFF = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    context: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"check": self.name, "pass": bool(self.passed), "value": _num(self.value),
                "tol": _num(self.tol), "context": {k: _num(v) for k, v in self.context.items()}}


def _num(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


@dataclass
class DiagnosticsReport:
    checks: list = field(default_factory=list)
    context: dict = field(default_factory=dict)

    def add(self, result: CheckResult) -> CheckResult:
        if any(c.name == result.name for c in self.checks):
            raise ConfigurationError(f"check {result.name!r} already recorded")
        self.checks.append(result)
        return result

    def extend(self, results):
        for r in results:
            self.add(r)

    def __getitem__(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "passed": self.passed,
                "context": {k: _num(v) for k, v in self.context.items()},
                "checks": [c.to_dict() for c in self.checks]}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# helpers --------------------------------------------------------------

def _density(m: Field) -> np.ndarray:
    """Nodal density with round-off negatives mapped to zero."""
    if m.min() < -NEGATIVE_ROUNDOFF:
        node = int(np.argmin(m.flat))
        raise DomainError(f"density is negative ({m.min():.3e}) at node {node}", node=node)
    return np.maximum(m.values, 0.0)


def _mean(a) -> float:
    return float(np.mean(a))


def positive_test_functions(grid, rng, n: int, modes: int = 4) -> list:
    """The constant 1 followed by ``delta + (random sum)^2`` fields."""
    out = [Field.constant(grid, 1.0)]
    while len(out) < n:
        delta = float(rng.uniform(0.0, 0.5))
        out.append(random_positive_field(grid, rng, modes=modes // 2 or 1, floor=delta))
    return out[:n]


def signed_test_functions(grid, rng, n: int, modes: int = 4) -> list:
    return [random_fourier_field(grid, rng, modes=modes) for _ in range(n)]


def _coupling_arg(state: MFGState, spec: HamiltonianSpec):
    m = _density(state.m)
    theta = eval_h(spec.nonlocal_, Field(state.grid, m)).values
    return m, theta


# a-priori quantities --------------------------------------------------

@dataclass
class AprioriQuantities:
    int_Du_gamma: float
    mean_u_abs: float
    int_abs_beta: float
    int_m_g1: float
    int_neg_g1: float
    int_Du_gamma_m: float
    int_Du_gamma_m_tau: float
    mass: float
    eps1_highorder_energy: float = 0.0


def compute_apriori(state: MFGState, reg: RegularizationParams | None, spec: HamiltonianSpec) -> AprioriQuantities:
    g = state.grid
    m = state.m.values
    p = gradient(state.u).array
    speed = np.sum(p * p, axis=0) ** (spec.gamma / 2)
    tau = spec.tau
    g1 = spec.coupling.g1(np.maximum(m, 0.0) if spec.coupling.kind == "power" else m)
    if reg is not None:
        b = beta(m, reg.eps1, reg.penalty_q)
        sym = g.wavenumber_sq ** (2 * reg.laplacian_order_p)
        mc, uc = state.coefficients()
        energy = reg.eps1 * float(np.sum(sym * (np.abs(mc) ** 2 + np.abs(uc) ** 2)))
    else:
        b = np.zeros_like(m)
        energy = 0.0
    weight = m ** (-tau) if tau > 0 else np.ones_like(m)
    return AprioriQuantities(
        int_Du_gamma=_mean(speed),
        mean_u_abs=abs(integrate(state.u)),
        int_abs_beta=_mean(np.abs(b)),
        int_m_g1=_mean(m * g1),
        int_neg_g1=_mean(-g1),
        int_Du_gamma_m=_mean(speed * m * weight),
        int_Du_gamma_m_tau=_mean(speed * weight),
        mass=integrate(state.m),
        eps1_highorder_energy=energy,
    )


# weak-solution inequality ---------------------------------------------

def _operator_pairing(state: MFGState, test: MFGState, spec: HamiltonianSpec, sign: float) -> float:
    """``<test - state, sign * A(test)>``."""
    r1, r2 = residual_coefficients(test, spec, spec.nonlocal_)
    tm, tu = test.coefficients()
    sm, su = state.coefficients()
    val = np.sum(r1 * np.conj(tm - sm)).real + np.sum(r2 * np.conj(tu - su)).real
    return float(sign * val)


def check_variational_inequality(limit: MFGState, spec: HamiltonianSpec, trials: int = 100,
                                 tol: float = 1e-6, rng=None, sign: float = 1.0,
                                 local_scale: float = 1e-2, name: str = "variational_inequality") -> CheckResult:
    """Minimum over random positive test pairs of ``<(eta,v) - (m,u), A(eta,v)>``.

    Half of the pairs are global (``eta = delta + s^2``, ``v`` a random sum);
    the other half are small positive perturbations of the candidate,
    ``(m + t psi, u + t phi)`` with ``psi >= delta > 0``, which probe the
    first-order part of the inequality. ``sign=-1`` flips the operator
    (negative control).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    g = limit.grid
    _density(limit.m)
    mc, uc = limit.coefficients()
    values = []
    for k in range(trials):
        if k % 2 == 0:
            eta = random_positive_field(g, rng, modes=2, floor=float(rng.uniform(0.05, 0.5)))
            v = random_fourier_field(g, rng, modes=4)
        else:
            psi = random_positive_field(g, rng, modes=2, floor=float(rng.uniform(0.05, 0.5)))
            phi = random_fourier_field(g, rng, modes=4)
            t = local_scale * float(rng.uniform(0.1, 1.0))
            eta = Field.from_coefficients(g, mc + t * psi.coefficients())
            v = Field.from_coefficients(g, uc + t * phi.coefficients())
            if not eta.min() > 0:
                continue
        values.append(_operator_pairing(limit, MFGState(eta, v), spec, sign))
    worst = min(values)
    violations = sum(1 for x in values if x < -tol)
    return CheckResult(name, worst >= -tol, worst, tol, {"trials": len(values), "violations": violations})


# degenerate-elliptic checks -------------------------------------------

def _require_split(spec: HamiltonianSpec):
    if not hasattr(spec, "diffusion_field"):
        raise ConfigurationError("Hamiltonian is not of the form H0 - s(x) tr M")


def check_subsolution(limit: MFGState, spec: HamiltonianSpec, test_functions, tol: float = 1e-6,
                      name: str = "subsolution") -> CheckResult:
    """max over phi >= 0 of ``int phi (u + H0(Du, m, h(m))) - lap(phi s) u``."""
    _require_split(spec)
    m, theta = _coupling_arg(limit, spec)
    p = gradient(limit.u).array
    H0 = spec.terms(p, 0.0, m, theta, order=0).H
    s = spec.diffusion_field()
    base = limit.u.values + H0
    vals = []
    for phi in test_functions:
        if phi.min() < 0:
            raise ConfigurationError("subsolution test functions must be nonnegative")
        second = laplacian_power(phi * s, 1)
        vals.append(_mean(phi.values * base) - _mean(second.values * limit.u.values))
    worst = max(vals) if vals else 0.0
    return CheckResult(name, worst <= tol, worst, tol, {"tests": len(vals)})


def compute_current(state: MFGState, spec: HamiltonianSpec) -> VectorField:
    """``m * DpH(x, Du, m, h(m))``."""
    m, theta = _coupling_arg(state, spec)
    p = gradient(state.u).array
    t = spec.terms(p, 0.0, m, theta, order=1)
    return VectorField.from_array(state.grid, m * t.Dp)


def current_integrability_exponent(spec: HamiltonianSpec) -> float:
    a = spec.coupling.growth_exponent
    g = spec.gamma
    return (a + 1) * g / ((a + 1) * g - a)


def current_lq_norm(J: VectorField, q: float) -> float:
    mag = np.sqrt(np.sum(J.array ** 2, axis=0))
    return float(np.mean(mag ** q) ** (1.0 / q))


def check_fp_distributional(limit: MFGState, J: VectorField, spec: HamiltonianSpec, test_functions,
                            tol: float = 1e-5, name: str = "fp_distributional") -> CheckResult:
    """max over phi of ``|int m phi + J.Dphi - m s lap(phi) - phi|``."""
    _require_split(spec)
    m = limit.m.values
    s = spec.diffusion_field().values
    vals = []
    for phi in test_functions:
        dphi = gradient(phi).array
        lap = laplacian_power(phi, 1).values
        integrand = m * phi.values + np.sum(J.array * dphi, axis=0) - m * s * lap - phi.values
        vals.append(abs(_mean(integrand)))
    worst = max(vals) if vals else 0.0
    return CheckResult(name, worst <= tol, worst, tol, {"tests": len(vals)})


def check_supersolution(limit: MFGState, J: VectorField, spec: HamiltonianSpec, test_functions,
                        tol: float = 1e-6, delta: float | None = None) -> list:
    """Two results: the display ``int J.Dphi - H0(Dphi) m - u <= 0`` over the
    tests (plus ``phi = u``), and the Legendre form on ``{m > delta}``."""
    _require_split(spec)
    m, theta = _coupling_arg(limit, spec)
    u = limit.u.values
    tests = list(test_functions) + [limit.u]
    vals = []
    for phi in tests:
        dphi = gradient(phi).array
        H0 = spec.terms(dphi, 0.0, m, theta, order=0).H
        vals.append(_mean(np.sum(J.array * dphi, axis=0) - H0 * m - u))
    worst = max(vals)
    display = CheckResult("supersolution", worst <= tol, worst, tol,
                          {"tests": len(tests), "value_at_u": vals[-1]})
    delta = 1e-6 * float(m.max()) if delta is None else delta
    mask = m > delta
    safe = np.where(mask, m, 1.0)
    v = VectorField.from_array(limit.grid, -J.array / safe)
    L0 = legendre_L0(spec, v, Field(limit.grid, m), Field(limit.grid, theta)).values
    lhs = _mean(np.where(mask, m * L0, 0.0))
    gap = lhs - _mean(u)
    legendre = CheckResult("supersolution_legendre", gap <= tol, gap, tol,
                           {"delta": delta, "lhs": lhs, "int_u": _mean(u)})
    return [display, legendre]


# quadratic case -------------------------------------------------------

def check_quadratic_pointwise(limit: MFGState, spec: HamiltonianSpec, delta: float | None = None,
                              tol: float = 1e-4) -> list:
    """Pointwise Fokker-Planck residual, HJ inequality and complementarity."""
    if not isinstance(spec.family, QuadraticSeparable):
        raise ConfigurationError("pointwise checks need the quadratic separable family")
    sig2 = spec.family.sigma0 ** 2
    m_field = limit.m
    m, theta = _coupling_arg(limit, spec)
    Du = gradient(limit.u)
    p = Du.array
    # FP row: m - div(m Du) - sig2 lap m - 1
    flux = VectorField.from_array(limit.grid, m_field.values * p)
    from .grid import divergence
    fp = m_field.values - divergence(flux).values - sig2 * laplacian_power(m_field, 1).values - 1.0
    V = spec.V0.values + spec.coupling.g1(m) + theta
    kinetic = 0.5 * np.sum(p * p, axis=0)
    hj = -limit.u.values - kinetic + V + sig2 * laplacian_power(limit.u, 1).values
    out = [
        CheckResult("quadratic_fp_pointwise", float(np.abs(fp).max()) <= tol, float(np.abs(fp).max()), tol),
        CheckResult("quadratic_hj_inequality", float(hj.min()) >= -tol, float(hj.min()), tol),
    ]
    if sig2 == 0.0:
        delta = 1e-6 * float(m.max()) if delta is None else delta
        prod = np.abs((-limit.u.values - kinetic + V) * m)
        on_support = float(prod[m > delta].max()) if np.any(m > delta) else 0.0
        everywhere = float(prod.max())
        worst = max(on_support, everywhere)
        out.append(CheckResult("quadratic_complementarity", worst <= tol, worst, tol,
                               {"delta": delta, "on_support": on_support, "everywhere": everywhere}))
    return out


# structural assumptions -----------------------------------------------

DEFAULT_CONSTANTS = {"c": 1.0, "C1": 1.0, "C2": 1.0, "c1": 1.0, "c2": 1.0, "c3": 1.0,
                     "kappa1": 10.0, "delta": 0.5}


def check_assumption_suite(spec: HamiltonianSpec, samples=None, rng=None, n: int = 20,
                           constants: dict | None = None) -> DiagnosticsReport:
    """Evaluate the structural inequalities on random smooth densities.

    ``samples`` is a list of positive density fields; margins are reported
    as ``rhs - lhs`` style quantities that are nonnegative when the
    inequality holds for the configured constants. Existential constants
    are reported as implied values rather than tested.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    k = dict(DEFAULT_CONSTANTS, **(constants or {}))
    g = spec.grid
    if samples is None:
        samples = [random_positive_field(g, rng, modes=2, floor=0.05) for _ in range(n)]
    report = DiagnosticsReport(context={"samples": len(samples)})
    g2_min, g1b, g1c, g1d = [], [], [], []
    for m in samples:
        th = eval_h(spec.nonlocal_, m).values
        g1 = spec.coupling.g1(m.values)
        g2_min.append(float(th.min()))
        g1b.append(k["c"] * (1 + integrate(m)) - _mean(th))
        g1c.append(max(_mean(g1), integrate(m)) - k["delta"] * _mean(m.values * g1))
        g1d.append(_mean(m.values * g1))
    report.add(CheckResult("g2_nonnegative", min(g2_min) >= -1e-14, min(g2_min), 0.0))
    report.add(CheckResult("g2_integral_bound", min(g1b) >= -1e-12, min(g1b), 0.0, {"c": k["c"]}))
    report.add(CheckResult("g1_implied_constant", bool(np.isfinite(max(g1c))), max(g1c), float("inf"),
                           {"delta": k["delta"]}))
    report.add(CheckResult("g1_lower_bound_implied", bool(np.isfinite(min(g1d))), -min(g1d), float("inf")))

    pts = random_samples(g, rng, n=100)
    coer = check_coercivity_identity(spec, pts, k["C1"], k["C2"])
    report.add(CheckResult("coercivity", coer.passed, coer.min_margin, 0.0, {"C1": k["C1"], "C2": k["C2"]}))

    if isinstance(spec.family, QuadraticSeparable):
        pot = []
        upper = []
        growth = []
        lower = []
        mono = []
        for i, m in enumerate(samples):
            th = eval_h(spec.nonlocal_, m).values
            g1 = spec.coupling.g1(m.values)
            V = spec.V0.values + g1 + th
            gsum = g1 + th
            pot.append(float((V - k["c1"] * gsum + 1.0 / k["c2"]).min()))
            upper.append(k["c2"] + k["c3"] * _mean(gsum) - _mean(V))
            alpha = spec.coupling.growth_exponent
            if spec.coupling.kind == "power":
                lower.append(float((g1 - m.values ** alpha / k["kappa1"] + k["kappa1"]).min()))
                dV = gradient(Field(g, V)).array
                dm = gradient(m).array
                lhs = _mean(np.sum(dV * dm, axis=0))
                rhs = _mean(m.values ** (alpha - 1) * np.sum(dm * dm, axis=0)) / k["kappa1"] - k["kappa1"]
                growth.append(lhs - rhs)
            other = samples[(i + 1) % len(samples)]
            th2 = eval_h(spec.nonlocal_, other).values
            V2 = spec.V0.values + spec.coupling.g1(other.values) + th2
            mono.append(_mean((V - V2) * (m.values - other.values)))
        report.add(CheckResult("potential_lower_bound", min(pot) >= -1e-12, min(pot), 0.0))
        report.add(CheckResult("potential_integral_bound", min(upper) >= -1e-12, min(upper), 0.0))
        report.add(CheckResult("potential_monotone", min(mono) >= -1e-10, min(mono), 1e-10))
        if lower:
            report.add(CheckResult("coupling_power_lower_bound", min(lower) >= -1e-12, min(lower), 0.0,
                                   {"kappa1": k["kappa1"]}))
            report.add(CheckResult("potential_gradient_growth", min(growth) >= -1e-12, min(growth), 0.0,
                                   {"kappa1": k["kappa1"]}))
    return report


# combined suite -------------------------------------------------------

DEFAULT_TOLERANCES = {"mass": 1e-6, "vi": 1e-6, "subsolution": 1e-6, "fp": 1e-5,
                      "supersolution": 1e-6, "pointwise": 1e-4, "negative": NEGATIVE_ROUNDOFF}


def run_verification(limit: MFGState, spec: HamiltonianSpec, seed: int = 0, trials: int = 100,
                     n_tests: int = 50, tolerances: dict | None = None, context: dict | None = None,
                     current_bound: float | None = None) -> DiagnosticsReport:
    """All checks appropriate to ``spec``'s family, with one seeded generator."""
    tol = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
    rng = np.random.default_rng(seed)
    report = DiagnosticsReport(context=dict(context or {}, seed=seed, family=spec.name))
    g = limit.grid
    report.add(CheckResult("density_nonnegative", limit.m.min() >= -tol["negative"], limit.m.min(),
                           tol["negative"]))
    try:
        _density(limit.m)
    except DomainError:
        return report
    mass_err = abs(integrate(limit.m) - 1.0)
    report.add(CheckResult("mass", mass_err <= tol["mass"], mass_err, tol["mass"]))
    report.add(check_variational_inequality(limit, spec, trials, tol["vi"], rng))
    positives = positive_test_functions(g, rng, n_tests)
    signed = signed_test_functions(g, rng, n_tests)
    report.add(check_subsolution(limit, spec, positives, tol["subsolution"]))
    J = compute_current(limit, spec)
    report.add(check_fp_distributional(limit, J, spec, signed, tol["fp"]))
    report.extend(check_supersolution(limit, J, spec, signed, tol["supersolution"]))
    q = current_integrability_exponent(spec)
    norm = current_lq_norm(J, q)
    bound = np.inf if current_bound is None else current_bound
    report.add(CheckResult("current_lq_norm", bool(np.isfinite(norm) and norm <= bound), norm, bound, {"q": q}))
    if isinstance(spec.family, QuadraticSeparable):
        report.extend(check_quadratic_pointwise(limit, spec, tol=tol["pointwise"]))
    return report
