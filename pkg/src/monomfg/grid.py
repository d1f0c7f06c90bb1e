"""Periodic calculus on the unit torus in one or two dimensions.

Fields are stored as nodal samples on a uniform grid. Derivatives are
Fourier multipliers. A field may additionally carry its (forward
normalized) Fourier coefficients; when present those coefficients are
treated as the authoritative representation, so that chains of linear
spectral operations never re-transform rounded nodal data. This matters
for the very high order operators used by the regularization, whose
symbols reach 1e26 at N = 64.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, GridMismatchError, NonFiniteError


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with nodes ``j / N`` along each of ``dimension`` axes."""

    dimension: int
    points_per_axis: int

    @property
    def d(self) -> int:
        return self.dimension

    @property
    def n(self) -> int:
        return self.points_per_axis

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dimension

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dimension

    @property
    def spacing(self) -> float:
        return 1.0 / self.points_per_axis

    @cached_property
    def axis_coordinates(self) -> np.ndarray:
        return np.arange(self.points_per_axis) / self.points_per_axis

    @cached_property
    def mesh(self) -> tuple:
        """Coordinate arrays with the grid shape, ``indexing='ij'``."""
        x = self.axis_coordinates
        return tuple(np.meshgrid(*([x] * self.dimension), indexing="ij"))

    @cached_property
    def frequencies(self) -> tuple:
        """Integer frequencies per axis, broadcastable to the grid shape."""
        k = np.fft.fftfreq(self.points_per_axis, 1.0 / self.points_per_axis)
        out = []
        for axis in range(self.dimension):
            shape = [1] * self.dimension
            shape[axis] = self.points_per_axis
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def angular(self) -> tuple:
        """Angular wavenumbers 2*pi*k per axis."""
        return tuple(2.0 * np.pi * k for k in self.frequencies)

    @cached_property
    def odd_symbols(self) -> tuple:
        """Symbols i*kappa of first derivatives, Nyquist mode zeroed."""
        nyq = self.points_per_axis // 2
        out = []
        for k, kappa in zip(self.frequencies, self.angular):
            out.append(np.where(np.abs(k) == nyq, 0.0, 1j * kappa))
        return tuple(out)

    @cached_property
    def wavenumber_sq(self) -> np.ndarray:
        """|2*pi*k|^2 on the full grid shape (Nyquist kept)."""
        total = np.zeros(self.shape)
        for kappa in self.angular:
            total = total + kappa**2
        return total

    def second_symbol(self, i: int, j: int) -> np.ndarray:
        """Symbol of d^2/dx_i dx_j."""
        if i == j:
            return -np.broadcast_to(self.angular[i] ** 2, self.shape)
        return np.broadcast_to(self.odd_symbols[i] * self.odd_symbols[j], self.shape)


def make_grid(d: int, N: int) -> TorusGrid:
    if int(d) != d or d not in (1, 2):
        raise ConfigurationError(f"dimension must be 1 or 2, got {d}")
    if int(N) != N or N < 8 or (int(N) & (int(N) - 1)) != 0:
        raise ConfigurationError(f"points per axis must be a power of two >= 8, got {N}")
    return TorusGrid(int(d), int(N))


CHOP_LEVEL = 1e-14


def hermitian_part(coeffs: np.ndarray) -> np.ndarray:
    """Project a coefficient array onto spectra of real fields.

    Uses ``(c_k + conj(c_{-k})) / 2`` so that the inverse transform is real
    up to the last bit.
    """
    rev = np.flip(coeffs)
    rev = np.roll(rev, 1, axis=tuple(range(coeffs.ndim)))
    return 0.5 * (coeffs + np.conj(rev))


def to_coefficients(values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values, norm="forward")


def to_values(coeffs: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(coeffs, norm="forward").real


class Field:
    """Real scalar function sampled on a :class:`TorusGrid`.

    Treat instances as immutable: ``values`` is marked read-only.
    """

    __slots__ = ("grid", "values", "_coeffs")
    __array_priority__ = 100

    def __init__(self, grid: TorusGrid, values, *, _coeffs=None):
        arr = np.array(values, dtype=float)
        if arr.ndim == 0:
            arr = np.full(grid.shape, float(arr))
        if arr.size != grid.size:
            raise ConfigurationError(
                f"field has {arr.size} values, grid needs {grid.size}"
            )
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
            raise NonFiniteError(f"non-finite field value at node {bad}")
        arr.flags.writeable = False
        self.grid = grid
        self.values = arr
        if _coeffs is not None:
            _coeffs.flags.writeable = False
        self._coeffs = _coeffs

    # construction -----------------------------------------------------
    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "Field":
        coeffs = np.zeros(grid.shape, dtype=complex)
        coeffs.flat[0] = c
        return cls(grid, np.full(grid.shape, float(c)), _coeffs=coeffs)

    @classmethod
    def from_coefficients(cls, grid: TorusGrid, coeffs) -> "Field":
        c = hermitian_part(np.asarray(coeffs, dtype=complex).reshape(grid.shape))
        return cls(grid, to_values(c), _coeffs=c)

    @classmethod
    def from_function(cls, grid: TorusGrid, func) -> "Field":
        """Sample ``func(x)`` (d=1) or ``func(x, y)`` (d=2) at the nodes."""
        return cls(grid, func(*grid.mesh))

    def coefficients(self) -> np.ndarray:
        """Fourier coefficients (forward normalized).

        For fields built from nodal samples, coefficients below the
        transform round-off level are set to zero; otherwise the noise
        floor would be amplified by high order multipliers.
        """
        if self._coeffs is None:
            c = hermitian_part(to_coefficients(self.values))
            c[np.abs(c) < CHOP_LEVEL * np.abs(c).max()] = 0.0
            c.flags.writeable = False
            self._coeffs = c
        return self._coeffs

    @property
    def has_coefficients(self) -> bool:
        return self._coeffs is not None

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def map(self, func) -> "Field":
        return Field(self.grid, func(self.values))

    def __repr__(self) -> str:
        return f"Field(d={self.grid.d}, N={self.grid.n}, min={self.min():.6g}, max={self.max():.6g})"

    # arithmetic -------------------------------------------------------
    def _check(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise GridMismatchError("fields live on different grids")
            return other
        return None

    def __add__(self, other):
        o = self._check(other)
        if o is not None:
            if self._coeffs is not None or o._coeffs is not None:
                return Field.from_coefficients(self.grid, self.coefficients() + o.coefficients())
            return Field(self.grid, self.values + o.values)
        c = float(other)
        if self._coeffs is not None:
            coeffs = self._coeffs.copy()
            coeffs.flat[0] += c
            return Field.from_coefficients(self.grid, coeffs)
        return Field(self.grid, self.values + c)

    __radd__ = __add__

    def __neg__(self):
        coeffs = None if self._coeffs is None else -self._coeffs
        return Field(self.grid, -self.values, _coeffs=coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._check(other)
        if o is not None:
            return Field(self.grid, self.values * o.values)
        c = float(other)
        if self._coeffs is not None:
            return Field(self.grid, self.values * c, _coeffs=self._coeffs * c)
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._check(other)
        if o is not None:
            return Field(self.grid, self.values / o.values)
        return self * (1.0 / float(other))

    def __pow__(self, exponent):
        return Field(self.grid, self.values ** exponent)


class VectorField:
    """One :class:`Field` per spatial axis."""

    __slots__ = ("components",)

    def __init__(self, components):
        comps = tuple(components)
        if not comps:
            raise ConfigurationError("vector field needs at least one component")
        g = comps[0].grid
        if any(c.grid != g for c in comps):
            raise GridMismatchError("vector components live on different grids")
        if len(comps) != g.d:
            raise ConfigurationError(f"expected {g.d} components, got {len(comps)}")
        self.components = comps

    @property
    def grid(self) -> TorusGrid:
        return self.components[0].grid

    def __getitem__(self, i) -> Field:
        return self.components[i]

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def array(self) -> np.ndarray:
        """Stacked values with shape ``(d, *grid.shape)``."""
        return np.stack([c.values for c in self.components])

    @classmethod
    def from_array(cls, grid: TorusGrid, arr) -> "VectorField":
        return cls(Field(grid, a) for a in arr)

    def dot(self, other: "VectorField") -> Field:
        return Field(self.grid, np.sum(self.array * other.array, axis=0))

    def norm_sq(self) -> Field:
        return self.dot(self)

    def scale(self, f) -> "VectorField":
        return VectorField(c * f for c in self.components)


class MatrixField:
    """Symmetric matrix of fields; only ``i <= j`` entries are stored."""

    __slots__ = ("grid", "_entries")

    def __init__(self, grid: TorusGrid, entries: dict):
        self.grid = grid
        store = {}
        for i in range(grid.d):
            for j in range(i, grid.d):
                f = entries.get((i, j), entries.get((j, i)))
                if f is None:
                    raise ConfigurationError(f"missing matrix entry {(i, j)}")
                if f.grid != grid:
                    raise GridMismatchError("matrix entries live on different grids")
                store[(i, j)] = f
        self._entries = store

    def __getitem__(self, ij) -> Field:
        i, j = ij
        return self._entries[(min(i, j), max(i, j))]

    def trace(self) -> Field:
        out = self[0, 0]
        for i in range(1, self.grid.d):
            out = out + self[i, i]
        return out

    @property
    def array(self) -> np.ndarray:
        d = self.grid.d
        return np.stack([np.stack([self[i, j].values for j in range(d)]) for i in range(d)])

    @classmethod
    def from_array(cls, grid: TorusGrid, arr) -> "MatrixField":
        arr = np.asarray(arr, dtype=float)
        if not np.allclose(arr, np.swapaxes(arr, 0, 1), rtol=0, atol=1e-12 * (1 + np.abs(arr).max())):
            raise ConfigurationError("matrix field is not symmetric")
        return cls(grid, {(i, j): Field(grid, arr[i, j]) for i in range(grid.d) for j in range(i, grid.d)})

    @classmethod
    def diagonal(cls, f: Field) -> "MatrixField":
        g = f.grid
        zero = Field.constant(g, 0.0)
        return cls(g, {(i, j): (f if i == j else zero) for i in range(g.d) for j in range(i, g.d)})

    def contract(self, other: "MatrixField") -> Field:
        """Frobenius product ``A : B`` pointwise."""
        return Field(self.grid, np.sum(self.array * other.array, axis=(0, 1)))


# spectral operators ---------------------------------------------------

def _apply_symbol(f: Field, symbol) -> Field:
    return Field.from_coefficients(f.grid, f.coefficients() * symbol)


def gradient(f: Field) -> VectorField:
    return VectorField(_apply_symbol(f, s) for s in f.grid.odd_symbols)


def hessian(f: Field) -> MatrixField:
    g = f.grid
    return MatrixField(g, {(i, j): _apply_symbol(f, g.second_symbol(i, j))
                           for i in range(g.d) for j in range(i, g.d)})


def divergence(V: VectorField) -> Field:
    g = V.grid
    total = np.zeros(g.shape, dtype=complex)
    for comp, sym in zip(V.components, g.odd_symbols):
        total = total + comp.coefficients() * sym
    return Field.from_coefficients(g, total)


def laplacian_power(f: Field, order: int) -> Field:
    """Apply the r-th power of the Laplacian, symbol ``(-|2 pi k|^2)^r``."""
    if int(order) != order or order < 1:
        raise ConfigurationError(f"laplacian order must be a positive integer, got {order}")
    return _apply_symbol(f, (-f.grid.wavenumber_sq) ** int(order))


def integrate(f: Field) -> float:
    """Integral over the unit torus (rectangle rule, i.e. the mean)."""
    return float(f.coefficients().flat[0].real)


def inner(f: Field, g: Field) -> float:
    return integrate(f * g)


def spectral_inner(f: Field, g: Field) -> float:
    """Parseval form of :func:`inner`."""
    return float(np.sum(f.coefficients() * np.conj(g.coefficients())).real)


def periodic_convolve(f: Field, kernel: Field) -> Field:
    """Circular convolution weighted by the cell volume ``h^d``."""
    if f.grid != kernel.grid:
        raise GridMismatchError("convolution operands live on different grids")
    # forward-normalized transforms: the h^d weight cancels the N^d factor
    return Field.from_coefficients(f.grid, f.coefficients() * kernel.coefficients())


def wrapped_gaussian_kernel(grid: TorusGrid, width: float) -> Field:
    """Periodized Gaussian with standard deviation ``width``, unit integral."""
    if not width > 0:
        raise ConfigurationError(f"kernel width must be positive, got {width}")
    images = max(3, int(np.ceil(8 * width)) + 1)
    shifts = np.arange(-images, images + 1)
    total = np.ones(grid.shape)
    for x in grid.mesh:
        # distance to every periodic image along this axis
        diff = x[..., None] - shifts
        total = total * np.exp(-0.5 * (diff / width) ** 2).sum(axis=-1)
    total = total / total.mean()
    return Field(grid, total)


# helpers --------------------------------------------------------------

def profile_field(grid: TorusGrid, kind: str, amplitude: float = 1.0, offset: float = 0.0) -> Field:
    """Closed-form spatial profiles used by configurations and demos.

    ``zero``, ``constant`` (amplitude), ``sine`` (amplitude*sin 2 pi x),
    ``cosine-sum`` (amplitude * sum_i cos 2 pi x_i), ``sine-squared``
    (amplitude * sin^2 pi x, vanishing at x = 0). ``offset`` is added.
    """
    mesh = grid.mesh
    if kind == "zero":
        vals = np.zeros(grid.shape)
    elif kind == "constant":
        vals = np.full(grid.shape, float(amplitude))
    elif kind == "sine":
        vals = amplitude * np.sin(2 * np.pi * mesh[0])
    elif kind == "cosine-sum":
        vals = amplitude * sum(np.cos(2 * np.pi * x) for x in mesh)
    elif kind == "sine-squared":
        vals = amplitude * np.sin(np.pi * mesh[0]) ** 2
    else:
        raise ConfigurationError(f"unknown profile kind {kind!r}")
    return Field(grid, vals + offset)


def random_fourier_field(grid: TorusGrid, rng: np.random.Generator, modes: int = 4,
                         amplitude: float = 1.0, mean: bool = True) -> Field:
    """Random real trigonometric polynomial with frequencies ``|k_i| <= modes``.

    Coefficients are set exactly, so the field is band-limited to the last
    bit. Coefficients decay like ``1/(1+|k|^2)``.
    """
    coeffs = np.zeros(grid.shape, dtype=complex)
    mask = np.ones(grid.shape, dtype=bool)
    for k in grid.frequencies:
        mask &= np.abs(k) <= modes
    decay = 1.0 / (1.0 + sum(k**2 for k in grid.frequencies))
    decay = np.broadcast_to(decay, grid.shape)
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    coeffs[mask] = amplitude * noise[mask] * decay[mask]
    if not mean:
        coeffs.flat[0] = 0.0
    return Field.from_coefficients(grid, coeffs)


def random_positive_field(grid: TorusGrid, rng: np.random.Generator, modes: int = 2,
                          floor: float = 0.1, amplitude: float = 1.0) -> Field:
    """``floor + s**2`` for a random trigonometric sum ``s``.

    The square doubles the bandwidth, so the result is still band-limited
    and its coefficients are computed exactly by one transform.
    """
    s = random_fourier_field(grid, rng, modes=modes, amplitude=amplitude)
    return Field(grid, floor + s.values**2)


# serialization --------------------------------------------------------

def write_field_csv(path, f: Field) -> None:
    g = f.grid
    coords = [m.ravel() for m in g.mesh]
    vals = f.flat
    with open(path, "w") as fh:
        fh.write(f"# d={g.d} N={g.n}\n")
        for idx in range(g.size):
            row = [repr(float(c[idx])) for c in coords] + [repr(float(vals[idx]))]
            fh.write(",".join(row) + "\n")


def read_field_csv(path, grid: TorusGrid | None = None) -> Field:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ConfigurationError(f"{path}: missing '# d=<d> N=<N>' header")
        try:
            parts = dict(tok.split("=") for tok in header[1:].split())
            d, n = int(parts["d"]), int(parts["N"])
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"{path}: malformed header {header!r}") from exc
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    g = make_grid(d, n)
    if grid is not None and grid != g:
        raise GridMismatchError(f"{path}: file grid (d={d}, N={n}) differs from expected grid")
    if data.shape != (g.size, d + 1):
        raise ConfigurationError(f"{path}: expected {g.size} rows of {d + 1} columns")
    return Field(g, data[:, -1])
