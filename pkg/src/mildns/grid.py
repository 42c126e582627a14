"""Periodic-box discretization and the spectral transform contract.

Every operator in the package is a Fourier multiplier acting on the
half-spectrum produced by a real FFT.  The forward transform carries the
``1/n^d`` factor (``norm="forward"``), so the stored coefficients are the
Fourier-series coefficients of the sampled function and Parseval reads::

    cell_volume * sum_x |f(x)|^2 == L^d * sum_k w_k |c_k|^2

with ``w_k`` the half-spectrum multiplicity returned by
:attr:`SpectralGrid.mode_weights`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.fft

__all__ = [
    "SpectralGrid",
    "Field",
    "Trajectory",
    "make_grid",
    "sample_function",
    "transform_roundtrip_check",
    "random_field",
    "tree_sum",
    "set_workers",
    "get_workers",
    "write_snapshot",
    "read_snapshot",
    "SnapshotError",
    "SNAPSHOT_MAGIC",
]

SNAPSHOT_MAGIC = b"MNSF1"
_HEADER = struct.Struct("<5sIIId")

_WORKERS = 1


def set_workers(n: int) -> None:
    """Cap the number of threads used by the FFT backend."""
    global _WORKERS
    if n < 1:
        raise ValueError("worker count must be >= 1")
    _WORKERS = int(n)


def get_workers() -> int:
    return _WORKERS


def tree_sum(a: np.ndarray) -> float:
    # numpy's add.reduce over a contiguous 1-d buffer is a fixed pairwise tree,
    # so the result depends only on the data, never on scheduling.
    return float(np.add.reduce(np.ascontiguousarray(a, dtype=np.float64).ravel()))


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform periodic grid on ``[0, L)^d`` with ``n`` samples per axis."""

    d: int
    n: int
    L: float

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.d - 1) + (self.n // 2 + 1,)

    @property
    def spacing(self) -> float:
        return self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.d

    @property
    def volume(self) -> float:
        return self.L ** self.d

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Full symmetric truncation of ``(2 pi / L) Z`` along one axis (FFT order)."""
        return 2 * np.pi / self.L * np.fft.fftfreq(self.n, 1.0 / self.n)

    @cached_property
    def mode_indices(self) -> tuple[np.ndarray, ...]:
        """Integer mode numbers per axis, broadcastable to :attr:`spectral_shape`."""
        full = np.fft.fftfreq(self.n, 1.0 / self.n).round().astype(np.int64)
        half = np.arange(self.n // 2 + 1, dtype=np.int64)
        axes = [full] * (self.d - 1) + [half]
        out = []
        for j, a in enumerate(axes):
            shape = [1] * self.d
            shape[j] = a.size
            out.append(a.reshape(shape))
        return tuple(out)

    @cached_property
    def k(self) -> tuple[np.ndarray, ...]:
        """Wave-vector components on the half-spectrum layout."""
        return tuple(2 * np.pi / self.L * m.astype(np.float64) for m in self.mode_indices)

    @cached_property
    def k2(self) -> np.ndarray:
        out = np.zeros(self.spectral_shape)
        for kj in self.k:
            out = out + kj ** 2
        return out

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def kmin(self) -> float:
        return 2 * np.pi / self.L

    @cached_property
    def kmax(self) -> float:
        return float(np.sqrt(self.k2.max()))

    @cached_property
    def nyquist(self) -> np.ndarray:
        """Modes that have a Nyquist component on some axis."""
        half = self.n // 2
        mask = np.zeros(self.spectral_shape, dtype=bool)
        for m in self.mode_indices:
            mask = mask | (np.abs(m) == half)
        return mask

    @cached_property
    def dealias(self) -> np.ndarray:
        """2/3-rule mask: keep modes with every ``|m_j| < n/3``."""
        mask = np.ones(self.spectral_shape, dtype=bool)
        for m in self.mode_indices:
            mask = mask & (3 * np.abs(m) < self.n)
        return mask

    @cached_property
    def mode_weights(self) -> np.ndarray:
        """Multiplicity of each stored mode in the full (Hermitian) spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        shape = [1] * self.d
        shape[-1] = w.size
        return np.broadcast_to(w.reshape(shape), self.spectral_shape)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates ``x = (L/n) j``, broadcastable to :attr:`shape`."""
        x = self.spacing * np.arange(self.n)
        out = []
        for j in range(self.d):
            shape = [1] * self.d
            shape[j] = self.n
            out.append(x.reshape(shape))
        return tuple(out)

    def displacement(self, center: Sequence[float]) -> tuple[np.ndarray, ...]:
        """Minimal-image displacement ``x - center`` on the torus."""
        out = []
        for xj, cj in zip(self.coords(), center):
            r = xj - cj
            out.append(r - self.L * np.round(r / self.L))
        return tuple(out)

    def forward(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return scipy.fft.rfftn(values, axes=axes, norm="forward", workers=_WORKERS)

    def inverse(self, spectrum: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return scipy.fft.irfftn(spectrum, s=self.shape, axes=axes, norm="forward",
                                workers=_WORKERS)

    def describe(self) -> dict:
        return {"d": self.d, "n": self.n, "L": self.L}


def make_grid(d: int, n: int, L: float) -> SpectralGrid:
    if d not in (2, 3):
        raise ValueError(f"dimension d must be 2 or 3, got {d}")
    if int(n) != n or n < 4 or n % 2:
        raise ValueError(f"samples per axis n must be an even integer >= 4, got {n}")
    if not np.isfinite(L) or L <= 0:
        raise ValueError(f"box length L must be positive and finite, got {L}")
    return SpectralGrid(int(d), int(n), float(L))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


class Field:
    """Samples of an ``m``-channel function on a :class:`SpectralGrid`.

    A field is built from physical samples or from spectral coefficients;
    the other representation is computed on first access and cached.  Both
    arrays are read-only, channel axis first.
    """

    __slots__ = ("grid", "_values", "_spectrum")

    def __init__(self, grid: SpectralGrid, values: np.ndarray | None = None,
                 spectrum: np.ndarray | None = None):
        if (values is None) == (spectrum is None):
            raise ValueError("give exactly one of values / spectrum")
        self.grid = grid
        self._values = None
        self._spectrum = None
        if values is not None:
            values = np.asarray(values, dtype=np.float64)
            if values.shape == grid.shape:
                values = values[None]
            if values.shape[1:] != grid.shape:
                raise ValueError(f"sample array shape {values.shape} does not fit grid {grid.shape}")
            if not np.all(np.isfinite(values)):
                raise ValueError("field samples must be finite")
            self._values = _frozen(values)
        else:
            spectrum = np.asarray(spectrum, dtype=np.complex128)
            if spectrum.shape == grid.spectral_shape:
                spectrum = spectrum[None]
            if spectrum.shape[1:] != grid.spectral_shape:
                raise ValueError(f"spectrum shape {spectrum.shape} does not fit grid")
            self._spectrum = _frozen(spectrum)

    @classmethod
    def from_spectrum(cls, grid: SpectralGrid, spectrum: np.ndarray) -> "Field":
        return cls(grid, spectrum=spectrum)

    @classmethod
    def zeros(cls, grid: SpectralGrid, channels: int = 1) -> "Field":
        return cls(grid, spectrum=np.zeros((channels,) + grid.spectral_shape, complex))

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = _frozen(self.grid.inverse(self._spectrum))
        return self._values

    @property
    def spectrum(self) -> np.ndarray:
        if self._spectrum is None:
            self._spectrum = _frozen(self.grid.forward(self._values))
        return self._spectrum

    @property
    def channels(self) -> int:
        arr = self._values if self._values is not None else self._spectrum
        return arr.shape[0]

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean magnitude over channels."""
        v = self.values
        if v.shape[0] == 1:
            return np.abs(v[0])
        return np.sqrt(np.einsum("c...,c...->...", v, v))

    def mean(self) -> np.ndarray:
        return self.spectrum[(slice(None),) + (0,) * self.grid.d].real

    def without_mean(self) -> "Field":
        spec = np.array(self.spectrum)
        spec[(slice(None),) + (0,) * self.grid.d] = 0.0
        return Field.from_spectrum(self.grid, spec)

    def channel(self, c: int) -> "Field":
        return Field.from_spectrum(self.grid, self.spectrum[c:c + 1])

    def _check(self, other: "Field") -> None:
        if other.grid != self.grid or other.channels != self.channels:
            raise ValueError("fields live on different grids or channel counts")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field.from_spectrum(self.grid, self.spectrum + other.spectrum)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field.from_spectrum(self.grid, self.spectrum - other.spectrum)

    def __mul__(self, c: float) -> "Field":
        return Field.from_spectrum(self.grid, self.spectrum * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return self * -1.0

    def __repr__(self) -> str:
        g = self.grid
        return f"Field(d={g.d}, n={g.n}, L={g.L:g}, channels={self.channels})"


def sample_function(grid: SpectralGrid, rule: Callable, zero_mean: bool = False) -> Field:
    """Sample ``rule`` at the grid nodes.

    ``rule`` receives the ``d`` coordinate arrays (broadcastable) and returns
    either one array or a sequence of ``m`` arrays.  With ``zero_mean`` the
    ``k = 0`` coefficient is removed after sampling.
    """
    x = grid.coords()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = rule(*x)
    if isinstance(out, (list, tuple)):
        comps = [np.broadcast_to(np.asarray(c, dtype=np.float64), grid.shape) for c in out]
    else:
        comps = [np.broadcast_to(np.asarray(out, dtype=np.float64), grid.shape)]
    values = np.stack(comps)
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        node = idx[1:]
        pos = tuple(round(grid.spacing * j, 12) for j in node)
        raise ValueError(f"non-finite sample in channel {idx[0]} at node {node} (x = {pos})")
    field = Field(grid, values=values)
    return field.without_mean() if zero_mean else field


def transform_roundtrip_check(field: Field) -> float:
    """Max over channels/nodes of ``|inverse(forward(f)) - f| / (1 + |f|)``."""
    g = field.grid
    f = np.asarray(field.values)
    back = g.inverse(g.forward(f))
    return float(np.max(np.abs(back - f) / (1.0 + np.abs(f))))


def random_field(grid: SpectralGrid, seed: int, channels: int = 1, kmax: int | None = None,
                 solenoidal: bool = False) -> Field:
    """Seeded zero-mean random field band-limited to ``0 < max_j |m_j| <= kmax``.

    The default band excludes Nyquist modes.  With ``solenoidal`` the
    result is Leray-projected (requires ``channels == d``).
    """
    rng = np.random.default_rng(seed)
    kmax = grid.n // 2 - 1 if kmax is None else int(kmax)
    noise = rng.standard_normal((channels,) + grid.shape)
    spec = grid.forward(noise)
    mask = np.ones(grid.spectral_shape, dtype=bool)
    for m in grid.mode_indices:
        mask = mask & (np.abs(m) <= kmax)
    mask = mask & (grid.k2 > 0)
    spec = spec * mask
    if solenoidal:
        if channels != grid.d:
            raise ValueError("solenoidal random field needs d channels")
        from .calculus import project_spectrum
        spec = project_spectrum(grid, spec)
    out = Field.from_spectrum(grid, spec)
    # unit RMS per channel keeps norms O(1) independent of n
    rms = np.sqrt(tree_sum(out.values ** 2) / out.values.size)
    return out * (1.0 / rms) if rms > 0 else out


class Trajectory:
    """Time-indexed sequence of fields ``t_0 = 0 < t_1 < ... < t_N = T``.

    ``fields`` may be any sequence (including a lazily evaluated one); it is
    only indexed and iterated.
    """

    def __init__(self, grid: SpectralGrid, times: Sequence[float], fields: Sequence[Field]):
        times = np.asarray(times, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a trajectory needs at least two time nodes (N >= 1)")
        if not np.all(np.diff(times) > 0):
            raise ValueError("time grid must be strictly increasing")
        if times[0] < 0:
            raise ValueError("time grid must start at t >= 0")
        if len(fields) != times.size:
            raise ValueError("one field per time node required")
        self.grid = grid
        self.times = _frozen(times)
        self.fields = fields
        if isinstance(fields, (list, tuple)):
            for f in fields:
                if f.grid != grid:
                    raise ValueError("all trajectory fields must share one grid")

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self) -> Iterator[tuple[float, Field]]:
        for t, f in zip(self.times, self.fields):
            yield float(t), f

    def __getitem__(self, i: int) -> Field:
        return self.fields[i]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def map(self, fn: Callable[[Field], Field]) -> "Trajectory":
        return Trajectory(self.grid, self.times, [fn(f) for f in self.fields])

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        _same_nodes(self, other)
        return Trajectory(self.grid, self.times, [a - b for a, b in zip(self.fields, other.fields)])

    def __add__(self, other: "Trajectory") -> "Trajectory":
        _same_nodes(self, other)
        return Trajectory(self.grid, self.times, [a + b for a, b in zip(self.fields, other.fields)])

    def scaled(self, c: float) -> "Trajectory":
        return Trajectory(self.grid, self.times, [f * c for f in self.fields])

    def materialize(self) -> "Trajectory":
        return Trajectory(self.grid, self.times, list(self.fields))


def _same_nodes(a: Trajectory, b: Trajectory) -> None:
    if a.grid != b.grid:
        raise ValueError("trajectories live on different grids")
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise ValueError("trajectories have different time grids")


class SnapshotError(ValueError):
    pass


def write_snapshot(path, field: Field) -> None:
    """Write ``field`` in the MNSF1 binary layout."""
    g = field.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, g.d, field.channels, g.n, g.L)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(path) -> Field:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SnapshotError("file too short for an MNSF1 header")
    magic, d, m, n, L = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    try:
        grid = make_grid(d, n, L)
    except ValueError as exc:
        raise SnapshotError(f"invalid header: {exc}") from None
    expected = m * n ** d * 8
    body = raw[_HEADER.size:]
    if m < 1 or len(body) != expected:
        raise SnapshotError(f"payload has {len(body)} bytes, header implies {expected}")
    values = np.frombuffer(body, dtype="<f8").reshape((m,) + grid.shape)
    if not np.all(np.isfinite(values)):
        raise SnapshotError("snapshot contains non-finite samples")
    return Field(grid, values=values)
