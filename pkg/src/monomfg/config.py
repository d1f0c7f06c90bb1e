"""Sectioned ``key = value`` run configuration.

Grammar (INI style, parsed with :mod:`configparser`)::

    [grid]            d, N
    [hamiltonian]     family = quadratic | power | congestion
                      gamma, tau, sigma0,
                      sigma = <profile>, sigma_amplitude,
                      a = <profile>, a_amplitude, a_offset,
                      V0 = <profile> | file:<path>, V0_amplitude
    [coupling]        kind = power | log, alpha
    [nonlocal]        c1, c2, alpha_bar, kernel_width
    [regularization]  eps1, eps2, p, q        (first eps level; p, q optional)
    [schedule]        mu = comma list, eps_levels, eps_ratio | eps_stop,
                      eps = explicit comma list of eps1 (eps2 follows the eps2/eps1 ratio),
                      max_newton_iters, newton_tol, step_halving_limit,
                      extrapolation_order
    [verify]          seed, trials, test_functions, tol_mass, tol_vi,
                      tol_subsolution, tol_fp, tol_supersolution, tol_pointwise
    [output]          dir

``<profile>`` is one of zero, constant, sine, cosine-sum, sine-squared.
Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

from .coupling import CouplingSpec, NonlocalSpec
from .errors import ConfigurationError
from .grid import make_grid, profile_field, read_field_csv
from .hamiltonian import HamiltonianSpec
from .operator import RegularizationParams, default_laplacian_order
from .solver import ContinuationSchedule, EpsilonSchedule

PROFILES = ("zero", "constant", "sine", "cosine-sum", "sine-squared")


@dataclass(frozen=True)
class RunConfig:
    # grid
    d: int = 1
    N: int = 64
    # hamiltonian
    family: str = "quadratic"
    gamma: float = 2.0
    tau: float = 0.0
    sigma0: float = 0.0
    sigma: str = "zero"
    sigma_amplitude: float = 0.0
    a: str = "constant"
    a_amplitude: float = 1.0
    a_offset: float = 0.0
    V0: str = "zero"
    V0_amplitude: float = 0.0
    # coupling
    coupling: str = "power"
    alpha: float = 1.0
    # nonlocal
    c1: float = 0.0
    c2: float = 0.0
    alpha_bar: float = 1.0
    kernel_width: float = 0.1
    # regularization
    eps1: float = 0.1
    eps2: float = 0.1
    p: int | None = None
    q: float | None = None
    # schedule
    mu: tuple = (1.0, 0.75, 0.5, 0.25, 0.1, 0.0)
    eps_levels: int = 8
    eps_ratio: float | None = None
    eps_stop: float | None = None
    eps: tuple | None = None
    max_newton_iters: int = 25
    newton_tol: float = 1e-10
    step_halving_limit: int = 10
    extrapolation_order: int = 2
    # verify
    seed: int = 0
    trials: int = 100
    test_functions: int = 50
    tol_mass: float = 1e-6
    tol_vi: float = 1e-6
    tol_subsolution: float = 1e-6
    tol_fp: float = 1e-5
    tol_supersolution: float = 1e-6
    tol_pointwise: float = 1e-4
    # output
    dir: str = "out"
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        validate(self)

    # derived objects
    def grid(self):
        return make_grid(self.d, self.N)

    def regularization(self) -> RegularizationParams:
        return RegularizationParams.for_dimension(self.d, self.eps1, self.eps2, self.p, self.q)

    def continuation(self) -> ContinuationSchedule:
        return ContinuationSchedule(self.mu, self.max_newton_iters, self.newton_tol, self.step_halving_limit)

    def eps_schedule(self) -> EpsilonSchedule:
        factor = self.eps2 / self.eps1
        if self.eps is not None:
            return EpsilonSchedule(tuple((e, e * factor) for e in self.eps))
        return EpsilonSchedule.geometric(self.eps1, self.eps_levels, self.eps_ratio, self.eps_stop, factor)

    def tolerances(self) -> dict:
        return {"mass": self.tol_mass, "vi": self.tol_vi, "subsolution": self.tol_subsolution,
                "fp": self.tol_fp, "supersolution": self.tol_supersolution, "pointwise": self.tol_pointwise}

    def spec(self) -> HamiltonianSpec:
        g = self.grid()
        coupling = CouplingSpec.power(self.alpha) if self.coupling == "power" else CouplingSpec.log()
        nl = NonlocalSpec.build(g, self.c1, self.c2, self.alpha_bar, self.kernel_width)
        if self.V0.startswith("file:"):
            path = self.V0[5:]
            if not os.path.isabs(path):
                path = os.path.join(self.base_dir, path)
            V0 = read_field_csv(path, g)
        else:
            V0 = profile_field(g, self.V0, self.V0_amplitude)
        if self.family == "quadratic":
            return HamiltonianSpec.quadratic(g, self.sigma0, V0, coupling, nl)
        a = profile_field(g, self.a, self.a_amplitude, self.a_offset)
        sigma = profile_field(g, self.sigma, self.sigma_amplitude)
        if self.family == "power":
            return HamiltonianSpec.power_growth(g, self.gamma, a, sigma, V0, coupling, nl)
        return HamiltonianSpec.congestion(g, self.tau, a, sigma, V0, coupling, nl)


SECTIONS = {
    "grid": ("d", "N"),
    "hamiltonian": ("family", "gamma", "tau", "sigma0", "sigma", "sigma_amplitude", "a", "a_amplitude",
                    "a_offset", "V0", "V0_amplitude"),
    "coupling": ("kind", "alpha"),
    "nonlocal": ("c1", "c2", "alpha_bar", "kernel_width"),
    "regularization": ("eps1", "eps2", "p", "q"),
    "schedule": ("mu", "eps_levels", "eps_ratio", "eps_stop", "eps", "max_newton_iters", "newton_tol",
                 "step_halving_limit", "extrapolation_order"),
    "verify": ("seed", "trials", "test_functions", "tol_mass", "tol_vi", "tol_subsolution", "tol_fp",
               "tol_supersolution", "tol_pointwise"),
    "output": ("dir",),
}
# config key -> RunConfig attribute where they differ
RENAMED = {("coupling", "kind"): "coupling"}


def _fail(key, rule):
    raise ConfigurationError(f"{key}: {rule}")


def validate(cfg: RunConfig) -> None:
    """Re-check every parameter constraint, naming the offending key."""
    if cfg.d not in (1, 2):
        _fail("grid.d", "must be 1 or 2")
    if cfg.N < 8 or cfg.N & (cfg.N - 1):
        _fail("grid.N", "must be a power of two >= 8")
    if cfg.family not in ("quadratic", "power", "congestion"):
        _fail("hamiltonian.family", "must be quadratic, power or congestion")
    if not cfg.gamma > 1:
        _fail("hamiltonian.gamma", "must exceed 1")
    if not 0 <= cfg.tau < 1:
        _fail("hamiltonian.tau", "must lie in [0, 1)")
    for key in ("sigma", "a"):
        if getattr(cfg, key) not in PROFILES:
            _fail(f"hamiltonian.{key}", f"must be one of {', '.join(PROFILES)}")
    if cfg.V0 not in PROFILES and not cfg.V0.startswith("file:"):
        _fail("hamiltonian.V0", f"must be one of {', '.join(PROFILES)} or file:<path>")
    if cfg.coupling not in ("power", "log"):
        _fail("coupling.kind", "must be power or log")
    if cfg.coupling == "power" and not cfg.alpha > 0:
        _fail("coupling.alpha", "must be positive")
    if cfg.c1 < 0 or cfg.c2 < 0:
        _fail("nonlocal.c1/c2", "must be nonnegative")
    if not cfg.alpha_bar > 0:
        _fail("nonlocal.alpha_bar", "must be positive")
    if not cfg.kernel_width > 0:
        _fail("nonlocal.kernel_width", "must be positive")
    for key in ("eps1", "eps2"):
        if not 0 < getattr(cfg, key) < 1:
            _fail(f"regularization.{key}", "must lie in (0, 1)")
    p = default_laplacian_order(cfg.d) if cfg.p is None else cfg.p
    if not 2 * p - 4 > cfg.d / 2 + 1:
        _fail("regularization.p", f"2p-4 > d/2+1 fails for p={p}, d={cfg.d}")
    q = cfg.d + 1 if cfg.q is None else cfg.q
    if not q > cfg.d:
        _fail("regularization.q", f"q > d fails for q={q}, d={cfg.d}")
    if cfg.eps_ratio is not None and cfg.eps_stop is not None:
        _fail("schedule.eps_ratio", "give either eps_ratio or eps_stop, not both")
    if cfg.eps_ratio is not None and not 0 < cfg.eps_ratio < 1:
        _fail("schedule.eps_ratio", "must lie in (0, 1)")
    if cfg.eps_levels < 1:
        _fail("schedule.eps_levels", "must be at least 1")
    if cfg.extrapolation_order < 0:
        _fail("schedule.extrapolation_order", "must be nonnegative")
    try:
        cfg.continuation()
    except ConfigurationError as exc:
        _fail("schedule.mu", str(exc))
    try:
        cfg.eps_schedule()
    except ConfigurationError as exc:
        _fail("schedule.eps", str(exc))
    for f in fields(cfg):
        if f.name.startswith("tol_") and not getattr(cfg, f.name) > 0:
            _fail(f"verify.{f.name}", "must be positive")


def _convert(name: str, raw: str):
    default_type = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    try:
        if name in ("mu", "eps"):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if name in ("p",):
            return None if raw.lower() == "default" else int(raw)
        if name in ("q", "eps_ratio", "eps_stop"):
            return None if raw.lower() in ("default", "none") else float(raw)
        if default_type in ("int",):
            return int(raw)
        if default_type in ("float",):
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{name}: cannot parse {raw!r}") from exc
    return raw


def parse_text(text: str, base_dir: str = ".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigurationError(f"unknown key {section}.{key}")
            name = RENAMED.get((section, key), key)
            values[name] = _convert(name, raw)
    return RunConfig(base_dir=base_dir, **values)


def parse_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
    return parse_text(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _format(v):
    if v is None:
        return "default"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(cfg: RunConfig) -> str:
    """Text form accepted by :func:`parse_text`; optional unset keys are omitted."""
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            name = RENAMED.get((section, key), key)
            v = getattr(cfg, name)
            if v is None and name in ("eps", "eps_ratio", "eps_stop"):
                continue
            lines.append(f"{key} = {_format(v)}")
        lines.append("")
    return "\n".join(lines)
