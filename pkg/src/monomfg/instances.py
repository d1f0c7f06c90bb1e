"""Built-in problem instances used by the demos and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

from .coupling import CouplingSpec, NonlocalSpec
from .grid import make_grid, profile_field
from .hamiltonian import HamiltonianSpec
from .solver import ContinuationSchedule, EpsilonSchedule


@dataclass(frozen=True)
class Instance:
    name: str
    spec: HamiltonianSpec
    eps_schedule: EpsilonSchedule
    schedule: ContinuationSchedule
    extrapolation_order: int = 2


def reference_instance(N: int = 64, d: int = 1) -> Instance:
    """Quadratic Hamiltonian with ``V = m`` and no diffusion.

    Its unregularized solution is ``(m, u) = (1, 1)``; every regularized
    solution is constant as well.
    """
    grid = make_grid(d, N)
    spec = HamiltonianSpec.quadratic(grid, sigma0=0.0, coupling=CouplingSpec.power(1.0))
    eps = EpsilonSchedule.geometric(0.1, levels=8, stop=1e-4)
    return Instance("reference", spec, eps, ContinuationSchedule(), extrapolation_order=2)


def degenerate_instance(N: int = 64) -> Instance:
    """Congestion family (tau = 0) with diffusion ``0.1 sin^2(pi x)``.

    The diffusion vanishes at ``x = 0``, the potential is ``0.5 sin(2 pi x)``
    and the coupling is ``g = m + theta`` without nonlocal part. The
    regularization is driven down to 1e-22 so that the high order terms
    no longer affect the resolved modes; the last level is used as is.
    """
    grid = make_grid(1, N)
    spec = HamiltonianSpec.congestion(
        grid, 0.0,
        sigma=profile_field(grid, "sine-squared", 0.1),
        V0=profile_field(grid, "sine", 0.5),
        coupling=CouplingSpec.power(1.0),
    )
    eps = EpsilonSchedule(tuple((10.0 ** -k, 10.0 ** -k) for k in range(1, 23)))
    return Instance("degenerate", spec, eps, ContinuationSchedule(), extrapolation_order=0)


def planar_instance(N: int = 32) -> Instance:
    """Two-dimensional power-growth Hamiltonian with a smoothing coupling."""
    grid = make_grid(2, N)
    spec = HamiltonianSpec.power_growth(
        grid, 1.5,
        a=profile_field(grid, "cosine-sum", 0.1, offset=1.0),
        sigma=profile_field(grid, "constant", 0.05),
        V0=profile_field(grid, "cosine-sum", 0.3),
        coupling=CouplingSpec.power(1.0),
        nonlocal_=NonlocalSpec.build(grid, 0.5, 0.0, 1.0, 0.1),
    )
    eps = EpsilonSchedule(tuple((10.0 ** -k, 10.0 ** -k) for k in range(1, 23)))
    return Instance("planar", spec, eps, ContinuationSchedule(), extrapolation_order=0)


INSTANCES = {"reference": reference_instance, "degenerate": degenerate_instance, "planar": planar_instance}
