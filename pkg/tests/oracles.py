"""Independent finite-difference and sampling oracles shared by the tests."""
import numpy as np

from monomfg.coupling import CouplingSpec, NonlocalSpec
from monomfg.grid import Field, make_grid, profile_field, random_fourier_field, random_positive_field
from monomfg.hamiltonian import HamiltonianSpec, ModelHamiltonianParams, random_samples
from monomfg.operator import Linearization, MFGState, residual_coefficients
from monomfg.hamiltonian import blend_mu


def scaled_error(fd, exact):
    """Relative error with a unit floor on the scale (exact values may vanish)."""
    fd, exact = np.asarray(fd), np.asarray(exact)
    return float(np.max(np.abs(fd - exact) / np.maximum(np.abs(exact), 1.0)))


def hamiltonian_fd_errors(ham, samples, h=1e-6):
    """Max scaled error of every analytic derivative against central differences."""
    nodes = np.array([s[0] for s in samples])
    p = np.array([np.atleast_1d(s[1]) for s in samples], dtype=float).T
    trM = np.array([np.trace(np.atleast_2d(s[2])) for s in samples])
    m = np.array([s[3] for s in samples])
    th = np.array([s[4] for s in samples])
    d = p.shape[0]
    t = ham.terms(p, trM, m, th, order=2, at=nodes)

    def H(p_, trM_, m_, th_, field="H"):
        return getattr(ham.terms(p_, trM_, m_, th_, order=1, at=nodes), field)

    errs = {}
    for i in range(d):
        e = np.zeros((d, 1))
        e[i] = h
        fd = (H(p + e, trM, m, th) - H(p - e, trM, m, th)) / (2 * h)
        errs[f"Dp{i}"] = scaled_error(fd, t.Dp[i])
        fd_p = (H(p + e, trM, m, th, "Dp") - H(p - e, trM, m, th, "Dp")) / (2 * h)
        for j in range(d):
            errs[f"Dpp{j}{i}"] = scaled_error(fd_p[j], t.Dpp[j, i])
    errs["Dm"] = scaled_error((H(p, trM, m + h, th) - H(p, trM, m - h, th)) / (2 * h), t.Dm)
    errs["Dtheta"] = scaled_error((H(p, trM, m, th + h) - H(p, trM, m, th - h)) / (2 * h), t.Dtheta)
    errs["DM"] = scaled_error((H(p, trM + h, m, th) - H(p, trM - h, m, th)) / (2 * h), -t.diffusion)
    fd_m = (H(p, trM, m + h, th, "Dp") - H(p, trM, m - h, th, "Dp")) / (2 * h)
    for i in range(d):
        errs[f"Dmp{i}"] = scaled_error(fd_m[i], t.Dmp[i])
    return errs


def family_zoo(grid, rng):
    """Every shipped family with monotone couplings, with spatially varying data."""
    a = 1.0 + 0.3 * random_positive_field(grid, rng, floor=0.0, amplitude=0.5)
    sigma = random_positive_field(grid, rng, floor=0.0, amplitude=0.2)
    V0 = random_fourier_field(grid, rng)
    nl = NonlocalSpec.build(grid, c1=0.4, c2=0.3, alpha_bar=1.4, kernel_width=0.1)
    zoo = {
        "quadratic": HamiltonianSpec.quadratic(grid, 0.3, V0),
        "quadratic-log-nonlocal": HamiltonianSpec.quadratic(grid, 0.0, V0, CouplingSpec.log(), nl),
        "power-1.5": HamiltonianSpec.power_growth(grid, 1.5, a, sigma, V0),
        "power-2-log": HamiltonianSpec.power_growth(grid, 2.0, a, sigma, V0, CouplingSpec.log()),
        "power-3-nonlocal": HamiltonianSpec.power_growth(grid, 3.0, a, sigma, V0, CouplingSpec.power(2.0), nl),
        "congestion-0": HamiltonianSpec.congestion(grid, 0.0, a, sigma, V0),
        "congestion-0.3": HamiltonianSpec.congestion(grid, 0.3, a, sigma, V0, CouplingSpec.power(1.5)),
        "congestion-0.5-nonlocal": HamiltonianSpec.congestion(grid, 0.5, a, sigma, V0, CouplingSpec.power(1.0), nl),
    }
    return zoo


def derivative_samples(grid, rng, n=100):
    return random_samples(grid, rng, n)


def random_state(grid, rng, floor=0.2, amplitude=1.0):
    return MFGState(random_positive_field(grid, rng, floor=floor, amplitude=amplitude),
                    random_fourier_field(grid, rng))


def random_pair(grid, rng, k, floor=0.01):
    """Even k: two independent states. Odd k: a state and a nearby one, which
    makes the monotonicity pairing a quadratic form in the small difference."""
    w1 = random_state(grid, rng, floor=floor)
    if k % 2 == 0:
        return w1, random_state(grid, rng, floor=floor)
    return w1, w1.axpy(1e-3 * floor, random_direction(grid, rng))


def random_direction(grid, rng):
    return MFGState(random_fourier_field(grid, rng), random_fourier_field(grid, rng))


def linearization_fd_error(state, direction, ham, nonlocal_, reg, t=1e-6):
    """Discrete L2 relative error of the linearization against a forward difference."""
    plus = residual_coefficients(state.axpy(t, direction), ham, nonlocal_, reg)
    base = residual_coefficients(state, ham, nonlocal_, reg)
    lin = Linearization(state, ham, nonlocal_, reg).apply_coefficients(*direction.coefficients())
    num = sum(np.sum(np.abs((a - b) / t - c) ** 2) for a, b, c in zip(plus, base, lin))
    den = sum(np.sum(np.abs(c) ** 2) for c in lin)
    return float(np.sqrt(num / den))
