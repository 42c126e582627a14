"""Bilinear Duhamel operator ``B(u, v)(t) = int_0^t e^{(t-tau) Delta} P div (u (x) v) dtau``.

The time integral is done per Fourier mode by exponential product
integration: the nonlinear term is interpolated linearly in ``tau`` on each
interval and integrated exactly against ``e^{-(t-tau)|k|^2}``.  With
``z = |k|^2 h`` the two endpoint weights are ``h psi(z)`` and
``h (phi1(z) - psi(z))`` where

    phi1(z) = (1 - e^{-z}) / z,    psi(z) = (1 - e^{-z}(1 + z)) / z^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .calculus import heat_trajectory, projected_divergence_spectrum, spectral_divergence
from .grid import Field, SpectralGrid, Trajectory
from .spaces import SpaceParams, caloric_norm, g_norm, h_norm

__all__ = [
    "DuhamelScheme",
    "default_time_grid",
    "refine_time_grid",
    "nonlinear_spectrum",
    "bilinear_apply",
    "beta_time_integral",
    "check_bilinear_indices",
    "check_gg_indices",
    "ScalingProbe",
    "bilinear_scaling_probe",
    "fit_slope",
]

_SERIES_CUTOFF = 0.1


def _phi1(z: np.ndarray) -> np.ndarray:
    out = np.ones_like(z)
    nz = z > 0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def _psi(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    small = z < _SERIES_CUTOFF
    zs = z[small]
    # sum_{m>=2} (-1)^m (m-1) z^{m-2} / m!, Horner from the top
    acc = np.zeros_like(zs)
    for m in range(14, 1, -1):
        acc = acc * zs + (-1) ** m * (m - 1) / math.factorial(m)
    out[small] = acc
    zl = z[~small]
    out[~small] = (-np.expm1(-zl) - zl * np.exp(-zl)) / zl ** 2
    return out


def default_time_grid(T: float, n_geometric: int = 16, n_uniform: int = 64) -> np.ndarray:
    """``0``, geometric nodes on ``[T 1e-4, T/8]``, then steps of ``T/n_uniform`` up to ``T``."""
    if not (T > 0 and math.isfinite(T)):
        raise ValueError(f"time grid needs a finite horizon T > 0, got {T}")
    geo = np.geomspace(T * 1e-4, T / 8, n_geometric)
    step = T / n_uniform
    count = int(round((T - T / 8) / step))
    uni = T / 8 + step * np.arange(1, count + 1)
    uni[-1] = T
    return np.concatenate([[0.0], geo, uni])


def refine_time_grid(times: Sequence[float]) -> np.ndarray:
    """Insert the midpoint of every interval."""
    times = np.asarray(times, dtype=np.float64)
    out = np.empty(2 * times.size - 1)
    out[0::2] = times
    out[1::2] = 0.5 * (times[:-1] + times[1:])
    return out


class DuhamelScheme:
    """Exact per-mode heat weights on a fixed time grid.

    Weights are cached by interval length, so uniform stretches of the grid
    share one set of arrays.
    """

    def __init__(self, grid: SpectralGrid, times: Sequence[float]):
        times = np.asarray(times, dtype=np.float64)
        if times.size < 2 or times[0] != 0.0 or not np.all(np.diff(times) > 0):
            raise ValueError("Duhamel time grid must start at 0 and increase strictly")
        self.grid = grid
        self.times = times
        self._cache: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @classmethod
    def default(cls, grid: SpectralGrid, T: float) -> "DuhamelScheme":
        return cls(grid, default_time_grid(T))

    def refined(self) -> "DuhamelScheme":
        return DuhamelScheme(self.grid, refine_time_grid(self.times))

    def weights(self, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(e^{-|k|^2 h}, W_left, W_right)`` for an interval of length ``h``."""
        key = float(f"{h:.12e}")
        if key not in self._cache:
            z = self.grid.k2 * h
            psi = _psi(z)
            self._cache[key] = (np.exp(-z), h * psi, h * (_phi1(z) - psi))
        return self._cache[key]

    def describe(self) -> dict:
        t = self.times
        return {"time_nodes": int(t.size), "t_first": float(t[1]), "t_last": float(t[-1])}


def nonlinear_spectrum(u: Field, v: Field) -> np.ndarray:
    """Spectrum of ``P div (u (x) v)``, product formed in physical space and dealiased."""
    g = u.grid
    d = g.d
    if u.channels != d or v.channels != d:
        raise ValueError(f"bilinear term needs {d}-component fields")
    uv, vv = u.values, v.values
    tensor = np.stack([uv[j] * vv[l] for j in range(d) for l in range(d)])
    spec = g.forward(tensor) * g.dealias
    return projected_divergence_spectrum(g, spec)


def bilinear_apply(u: Trajectory, v: Trajectory, scheme: DuhamelScheme) -> Trajectory:
    """Discrete ``B(u, v)`` on the scheme's time grid.

    The recurrence ``B_{n+1} = E B_n + W_left N_n + W_right N_{n+1}`` is
    exact for nonlinear terms that are piecewise linear in time.
    """
    g = scheme.grid
    for name, w in (("u", u), ("v", v)):
        if w.grid != g:
            raise ValueError(f"{name} lives on a different grid than the scheme")
        if w.times.shape != scheme.times.shape or not np.array_equal(w.times, scheme.times):
            raise ValueError(f"{name} time grid does not match the scheme")
    times = scheme.times
    current = np.zeros((g.d,) + g.spectral_shape, dtype=np.complex128)
    out = [Field.from_spectrum(g, current)]
    n_prev = nonlinear_spectrum(u[0], v[0])
    for i in range(1, times.size):
        n_next = nonlinear_spectrum(u[i], v[i])
        E, wa, wb = scheme.weights(times[i] - times[i - 1])
        current = E * current + wa * n_prev + wb * n_next
        out.append(Field.from_spectrum(g, current))
        n_prev = n_next
    return Trajectory(g, times, out)


def _beta_half(a: float, b: float) -> float:
    """``int_0^{1/2} w^{-a} (1-w)^{-b} dw`` after removing the endpoint singularity."""
    # w = r^{1/(1-a)} turns w^{-a} dw into dr / (1-a)
    e = 1.0 / (1.0 - a)
    upper = 0.5 ** (1.0 - a)
    val, _ = integrate.quad(lambda r: e * (1.0 - r ** e) ** (-b), 0.0, upper,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def beta_time_integral(gamma: float, theta: float, t: float) -> float:
    """``int_0^t (t - tau)^{-gamma} tau^{-theta} dtau = B(1-gamma, 1-theta) t^{1-gamma-theta}``.

    The Beta constant is obtained by adaptive quadrature on the two halves
    of ``[0, 1]``, each with a power substitution that absorbs its endpoint
    singularity.
    """
    if not gamma < 1:
        raise ValueError(f"time integral diverges for gamma >= 1 (gamma = {gamma})")
    if not theta < 1:
        raise ValueError(f"time integral diverges for theta >= 1 (theta = {theta})")
    if not t > 0:
        raise ValueError(f"time integral needs t > 0, got {t}")
    constant = _beta_half(theta, gamma) + _beta_half(gamma, theta)
    return constant * t ** (1.0 - gamma - theta)


def check_bilinear_indices(params: SpaceParams) -> None:
    """Index window ``q < q_tilde < 2p`` for the G x G -> H estimate."""
    v = []
    if not params.q < params.q_tilde:
        v.append(f"q < q̃ fails (q = {params.q:g}, q̃ = {params.q_tilde:g})")
    if not params.q_tilde < 2 * params.p:
        v.append(f"q̃ < 2p fails (q̃ = {params.q_tilde:g}, 2p = {2 * params.p:g})")
    if v:
        raise ValueError("bilinear G x G -> H estimate: " + "; ".join(v))


def check_gg_indices(d: int, q: float, q1: float, q2: float) -> None:
    """Window for the G x G -> G estimate.

    Needs ``d <= q < q1 < inf`` and ``1/q2`` in ``(0, 1/q]`` intersected with
    the open interval ``(2/q1 - 1/d, 2/q1)``.
    """
    v = []
    eps = 1e-12
    if not (d <= q + eps and q < q1 < math.inf):
        v.append(f"d ≤ q < q1 < ∞ fails (d = {d}, q = {q:g}, q1 = {q1:g})")
    r = 1.0 / q2
    if not 0 < r <= 1.0 / q + eps:
        v.append(f"1/q2 ∉ (0, 1/q] (1/q2 = {r:g}, 1/q = {1 / q:g})")
    lo, hi = 2.0 / q1 - 1.0 / d, 2.0 / q1
    if not lo < r < hi:
        v.append(f"1/q2 ∉ (2/q1 - 1/d, 2/q1) (1/q2 = {r:g}, interval ({lo:g}, {hi:g}))")
    if v:
        raise ValueError("bilinear G x G -> G estimate: " + "; ".join(v))


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


@dataclass
class ScalingProbe:
    kind: str
    expected_slope: float
    T: list
    numerator: list
    g_norm_u: list
    ratio: list
    slope: float
    resolution: dict = dc_field(default_factory=dict)

    header = ("T", "h_norm_B", "g_norm_u", "ratio", "fitted_slope")

    def rows(self):
        for T, nb, gu, r in zip(self.T, self.numerator, self.g_norm_u, self.ratio):
            yield (T, nb, gu, r, self.slope)

    def to_json(self) -> dict:
        return {"kind": self.kind, "expected_slope": self.expected_slope, "fitted_slope": self.slope,
                "T": self.T, "ratio": self.ratio, "resolution": self.resolution}


def bilinear_scaling_probe(family: Callable[[float], Field], params: SpaceParams,
                           T_ladder: Sequence[float], q2: float | None = None,
                           refine: int = 0,
                           time_grid: Callable[[float], np.ndarray] = default_time_grid) -> ScalingProbe:
    """Ratio ``||B(u,u)|| / ||u||_G^2`` for heat trajectories across horizons.

    ``family(T)`` returns the initial datum used at horizon ``T`` (it may
    live on its own grid).  Without ``q2`` the numerator is the H norm and
    the expected log-log slope is ``(1/2)(1 + s - d/p)``; with ``q2`` the
    numerator is the G norm with index ``q2`` (same ``q``, ``q1 = q_tilde``)
    and the expected slope is ``(1/2)(1 - d/q)``.
    """
    if q2 is None:
        check_bilinear_indices(params)
        expected = params.time_exponent
        kind = "H"
    else:
        check_gg_indices(params.d, params.q, params.q_tilde, q2)
        expected = 0.5 * (1.0 - params.d / params.q)
        kind = "G"
    T_ladder = [float(T) for T in T_ladder]
    if len(T_ladder) < 2 or any(b <= a for a, b in zip(T_ladder, T_ladder[1:])):
        raise ValueError("T ladder must hold at least two increasing horizons")
    alpha2 = None if q2 is None else params.d * (1.0 / params.q - 1.0 / q2)
    nums, gus, ratios = [], [], []
    resolution = {}
    for T in T_ladder:
        u0 = family(T)
        if spectral_divergence(u0) > 1e-12:
            raise ValueError("scaling probe needs divergence-free data")
        scheme = DuhamelScheme(u0.grid, time_grid(T))
        for _ in range(refine):
            scheme = scheme.refined()
        u = heat_trajectory(u0, scheme.times).materialize()
        b = bilinear_apply(u, u, scheme)
        gu = g_norm(u, params.with_horizon(T)).value
        if q2 is None:
            nb = h_norm(b, params.s, params.p).value
        else:
            nb = caloric_norm(b, alpha2, q2, kind="G").value
        nums.append(nb)
        gus.append(gu)
        ratios.append(nb / gu ** 2)
        resolution = dict(u0.grid.describe(), **scheme.describe())
    return ScalingProbe(kind=kind, expected_slope=expected, T=T_ladder, numerator=nums,
                        g_norm_u=gus, ratio=ratios, slope=fit_slope(T_ladder, ratios),
                        resolution=resolution)
