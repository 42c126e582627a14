"""Fourier-multiplier operators: fractional Laplacian, Riesz transforms,
Leray projection, heat semigroup and the Oseen operator.

Symbols that are odd in a wave-vector component are ambiguous on Nyquist
modes of a real FFT (the mode is its own conjugate partner), so Riesz
transforms, the Leray projection and the Oseen operator annihilate every
mode that carries a Nyquist component.  Symbols depending on ``|k|`` only
act on all modes.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import Field, SpectralGrid, Trajectory, make_grid

__all__ = [
    "fractional_laplacian",
    "riesz_transform",
    "leray_project",
    "project_spectrum",
    "heat_evolve",
    "heat_trajectory",
    "divergence",
    "gradient",
    "projected_divergence_spectrum",
    "oseen_apply",
    "oseen_kernel_sample",
    "OseenKernelSample",
    "spectral_divergence",
    "evaluate_at",
]

ZERO_MEAN_RTOL = 1e-12


def _require_zero_mean(f: Field, what: str) -> None:
    spec = f.spectrum
    zero = np.abs(spec[(slice(None),) + (0,) * f.grid.d]).max()
    scale = np.abs(spec).max()
    if zero > ZERO_MEAN_RTOL * scale:
        raise ValueError(f"{what} needs a zero-mean field (k = 0 coefficient {zero:.3e})")


def _safe_power(kmag: np.ndarray, s: float) -> np.ndarray:
    out = np.zeros_like(kmag)
    nz = kmag > 0
    out[nz] = kmag[nz] ** s
    return out


def spectral_divergence(u: Field) -> float:
    """``max_k |k . u_hat(k)| / max_k |u_hat(k)|`` (0 for the zero field)."""
    g = u.grid
    if u.channels != g.d:
        raise ValueError(f"divergence needs {g.d} channels, got {u.channels}")
    spec = u.spectrum
    div = sum(kj * spec[j] for j, kj in enumerate(g.k))
    scale = np.abs(spec).max()
    return float(np.abs(div).max() / scale) if scale > 0 else 0.0


def fractional_laplacian(f: Field, s: float) -> Field:
    """``Lambda^s f``: multiply every coefficient by ``|k|^s``; k = 0 maps to 0."""
    g = f.grid
    if not s > -g.d:
        raise ValueError(f"order s must exceed -d = {-g.d}, got {s}")
    _require_zero_mean(f, "fractional_laplacian")
    if s == 0:
        return f
    return Field.from_spectrum(g, f.spectrum * _safe_power(g.kmag, s))


def riesz_transform(f: Field, axis: int) -> Field:
    """``R_j f`` with symbol ``i k_j / |k|``; ``axis`` is 0-based."""
    g = f.grid
    if not 0 <= axis < g.d:
        raise ValueError(f"axis must lie in [0, {g.d}), got {axis}")
    _require_zero_mean(f, "riesz_transform")
    sym = 1j * g.k[axis] * _safe_power(g.kmag, -1.0)
    sym = np.where(np.abs(g.mode_indices[axis]) == g.n // 2, 0.0, sym)
    return Field.from_spectrum(g, f.spectrum * sym)


def project_spectrum(grid: SpectralGrid, spec: np.ndarray) -> np.ndarray:
    """Apply ``I - k k^T / |k|^2`` to a ``(d, ...)`` half-spectrum."""
    k = grid.k
    div = sum(kj * spec[j] for j, kj in enumerate(k))
    inv = _safe_power(grid.kmag, -2.0)
    out = np.empty_like(spec)
    for j, kj in enumerate(k):
        out[j] = spec[j] - kj * div * inv
    keep = (grid.k2 > 0) & ~grid.nyquist
    return out * keep


def leray_project(u: Field) -> Field:
    g = u.grid
    if u.channels != g.d:
        raise ValueError(f"leray_project needs {g.d} channels, got {u.channels}")
    _require_zero_mean(u, "leray_project")
    return Field.from_spectrum(g, project_spectrum(g, u.spectrum))


def heat_evolve(f: Field, t: float) -> Field:
    """``e^{t Delta} f``."""
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return f
    return Field.from_spectrum(f.grid, f.spectrum * np.exp(-f.grid.k2 * t))


class _HeatSequence(Sequence):
    def __init__(self, u0: Field, times: np.ndarray):
        self._u0 = u0
        self._times = times

    def __len__(self) -> int:
        return len(self._times)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return heat_evolve(self._u0, float(self._times[i]))


def heat_trajectory(u0: Field, times) -> Trajectory:
    """Lazily evaluated ``t -> e^{t Delta} u0`` on the given nodes."""
    times = np.asarray(times, dtype=np.float64)
    return Trajectory(u0.grid, times, _HeatSequence(u0, times))


def gradient(phi: Field) -> Field:
    g = phi.grid
    if phi.channels != 1:
        raise ValueError("gradient takes a scalar field")
    spec = phi.spectrum[0]
    keep = ~g.nyquist
    return Field.from_spectrum(g, np.stack([1j * kj * spec * keep for kj in g.k]))


def divergence(F: Field) -> Field:
    """Divergence ``(div F)_l = sum_j d_j F_jl`` of a ``d x d`` tensor field (channel ``j*d + l``)."""
    g = F.grid
    d = g.d
    if F.channels != d * d:
        raise ValueError(f"tensor field needs {d * d} channels, got {F.channels}")
    spec = F.spectrum
    keep = ~g.nyquist
    out = np.stack([sum(1j * g.k[j] * spec[j * d + l] for j in range(d)) * keep
                    for l in range(d)])
    return Field.from_spectrum(g, out)


def projected_divergence_spectrum(grid: SpectralGrid, tensor_spec: np.ndarray) -> np.ndarray:
    """Spectrum of ``P div F`` from the ``(d*d, ...)`` spectrum of ``F``."""
    d = grid.d
    k = grid.k
    w = np.stack([1j * sum(k[j] * tensor_spec[j * d + l] for j in range(d))
                  for l in range(d)])
    return project_spectrum(grid, w)


def oseen_apply(F: Field, t: float, s: float) -> Field:
    """``Lambda^s e^{t Delta} P div F`` in a single multiplier pass."""
    g = F.grid
    if not t > 0:
        raise ValueError(f"Oseen operator needs t > 0, got {t}")
    if not s > -1:
        raise ValueError(f"Oseen operator needs s > -1, got {s}")
    if F.channels != g.d * g.d:
        raise ValueError(f"tensor field needs {g.d * g.d} channels, got {F.channels}")
    # the mean of F is annihilated by the divergence, so it is not rejected
    out = projected_divergence_spectrum(g, F.spectrum)
    out *= np.exp(-g.k2 * t) * (_safe_power(g.kmag, s) if s != 0 else 1.0)
    return Field.from_spectrum(g, out)


def evaluate_at(field: Field, points: np.ndarray) -> np.ndarray:
    """Exact trigonometric interpolant of ``field`` at arbitrary points.

    Returns an array of shape ``(len(points), channels)``.
    """
    g = field.grid
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    spec = field.spectrum
    w = g.mode_weights
    out = np.empty((points.shape[0], spec.shape[0]))
    for p, x in enumerate(points):
        phase = sum(kj * xj for kj, xj in zip(g.k, x))
        e = np.exp(1j * phase) * w
        for c in range(spec.shape[0]):
            out[p, c] = np.add.reduce((spec[c] * e).real.ravel())
    return out


@dataclass
class OseenKernelSample:
    """Physical-space samples of the kernel ``K_t`` of ``Lambda^s e^{t Delta} P div``.

    ``values[p, i, j, l]`` is the response in component ``i`` to a unit
    point source in tensor entry ``F_jl``, at offset ``points[p]``.
    """

    d: int
    s: float
    t: float
    points: np.ndarray
    values: np.ndarray
    bound_ratios: dict = dc_field(default_factory=dict)
    surrogate_discrepancy: float = 0.0
    resolution: dict = dc_field(default_factory=dict)

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    @property
    def magnitude(self) -> np.ndarray:
        """Frobenius norm of the kernel tensor at each point."""
        return np.sqrt((self.values ** 2).reshape(len(self.points), -1).sum(axis=1))

    @property
    def decay_ratio(self) -> np.ndarray:
        """``|K_t(x)| (t^{(d+s+1)/2} + |x|^{d+s+1})``; at t = 1 this is ``|K(x)|(1 + |x|^{d+s+1})``."""
        e = self.d + self.s + 1
        return self.magnitude * (self.t ** (e / 2) + self.radii ** e)

    def rows(self):
        """CSV rows ``(|x|, t, entry, value, bound_ratio)``.

        ``bound_ratio`` uses the first requested (gamma1, gamma2) pair, or the
        decay ratio when none was requested.
        """
        d = self.d
        r = self.radii
        if self.bound_ratios:
            g1, g2 = next(iter(self.bound_ratios))
            factor = self.t ** g2 * r ** g1
        else:
            e = d + self.s + 1
            factor = self.t ** (e / 2) + r ** e
        for p in range(len(r)):
            for i in range(d):
                for j in range(d):
                    for l in range(d):
                        v = float(self.values[p, i, j, l])
                        yield (float(r[p]), self.t, f"{i + 1}{j + 1}{l + 1}", v,
                               abs(v) * float(factor[p]))


def _as_points(points, d: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        direction = np.array([1.0, 0.6, 0.35][:d])
        direction /= np.linalg.norm(direction)
        pts = pts[:, None] * direction[None, :]
    if pts.ndim != 2 or pts.shape[1] != d:
        raise ValueError(f"points must be radii or an array of {d}-vectors")
    if np.any(np.linalg.norm(pts, axis=1) == 0):
        raise ValueError("kernel points must avoid the origin")
    return pts


def _kernel_values(grid: SpectralGrid, s: float, t: float, width: float,
                   points: np.ndarray) -> np.ndarray:
    d = grid.d
    a = width ** 2 / 2.0
    if not t > a:
        raise ValueError(f"t = {t} is not resolved by a surrogate of width {width:g}; refine the grid")
    # normalized bump = e^{a Delta} delta; its smoothing is undone by evolving to t - a
    bump = np.exp(-a * grid.k2) / grid.volume
    values = np.empty((len(points), d, d, d))
    for j in range(d):
        for l in range(d):
            spec = np.zeros((d * d,) + grid.spectral_shape, complex)
            spec[j * d + l] = bump
            K = oseen_apply(Field.from_spectrum(grid, spec), t - a, s)
            values[:, :, j, l] = evaluate_at(K, points)
    return values


_KERNEL_BOX = {2: (512, 128.0), 3: (96, 32.0)}


def oseen_kernel_sample(d: int, s: float, t: float, points, gammas=(), n: int | None = None,
                        L: float | None = None, width: float | None = None) -> OseenKernelSample:
    """Sample ``K_t`` at ``points`` on an ``n``-point box of side ``L``.

    ``gammas`` is a sequence of ``(gamma1, gamma2)`` pairs; each must satisfy
    ``gamma1 > 0``, ``gamma2 > 0`` and ``gamma1 + 2 gamma2 = d + s + 1``, and
    gets a bound-ratio column ``|K_t(x)| t^gamma2 |x|^gamma1``.
    """
    if not t > 0:
        raise ValueError(f"kernel time must be positive, got {t}")
    if not s > -1:
        raise ValueError(f"kernel order must satisfy s > -1, got {s}")
    total = d + s + 1
    for g1, g2 in gammas:
        problems = []
        if not g1 > 0:
            problems.append("gamma1 > 0")
        if not g2 > 0:
            problems.append("gamma2 > 0")
        if not math.isclose(g1 + 2 * g2, total, rel_tol=0, abs_tol=1e-12):
            problems.append(f"gamma1 + 2 gamma2 = d + s + 1 = {total:g}")
        if problems:
            raise ValueError(f"inadmissible (gamma1, gamma2) = ({g1:g}, {g2:g}): violates "
                             + ", ".join(problems))
    n0, L0 = _KERNEL_BOX.get(d, (64, 32.0))
    n = n0 if n is None else n
    L = L0 if L is None else L
    grid = make_grid(d, n, L)
    pts = _as_points(points, d)
    h = grid.spacing
    w1 = 2.0 * h if width is None else float(width)
    values = _kernel_values(grid, s, t, w1, pts)
    try:
        other = _kernel_values(grid, s, t, 1.5 * w1, pts)
        scale = np.abs(values).max()
        discrepancy = float(np.abs(other - values).max() / scale) if scale > 0 else 0.0
    except ValueError:
        discrepancy = float("nan")
    sample = OseenKernelSample(d=d, s=s, t=t, points=pts, values=values,
                               surrogate_discrepancy=discrepancy,
                               resolution={"n": n, "L": L, "surrogate_width": w1})
    r = sample.radii
    mag = sample.magnitude
    for g1, g2 in gammas:
        sample.bound_ratios[(float(g1), float(g2))] = mag * t ** g2 * r ** g1
    return sample
