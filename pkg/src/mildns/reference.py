"""Classical time stepping and test data, used as an independent oracle.

:func:`rk4_solve` integrates ``d/dt u_hat = -|k|^2 u_hat - P (ik) . (u (x) u)^``
with an integrating factor so the viscous term is exact and only the
nonlinear term is advanced by fourth-order Runge-Kutta (Lawson form).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calculus import leray_project, spectral_divergence
from .duhamel import nonlinear_spectrum
from .grid import Field, SpectralGrid, Trajectory, tree_sum

__all__ = [
    "taylor_green",
    "perturbed_taylor_green",
    "localized_vortex",
    "ReferenceRun",
    "CFLError",
    "rk4_solve",
    "compare",
    "energy",
]

CFL_LIMIT = 0.5


def taylor_green(grid: SpectralGrid, amplitude: float = 1.0) -> Field:
    """Taylor-Green vortex scaled to the box (one period per side).

    2D: ``A (sin x cos y, -cos x sin y)``; 3D: ``A (sin x cos y cos z,
    -cos x sin y cos z, 0)`` with ``x = 2 pi x_1 / L`` and so on.
    """
    c = 2 * math.pi / grid.L
    x = [c * xi for xi in grid.coords()]
    shape = grid.shape
    if grid.d == 2:
        vals = [np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1])]
    else:
        vals = [np.sin(x[0]) * np.cos(x[1]) * np.cos(x[2]),
                -np.cos(x[0]) * np.sin(x[1]) * np.cos(x[2]),
                np.zeros(shape)]
    vals = np.stack([np.broadcast_to(v, shape) for v in vals]) * amplitude
    return Field(grid, values=vals)


def _curl_2d(grid: SpectralGrid, psi: np.ndarray) -> Field:
    """``(d_2 psi, -d_1 psi)`` from a stream-function spectrum."""
    keep = ~grid.nyquist
    k1, k2 = grid.k
    spec = np.stack([1j * k2 * psi, -1j * k1 * psi]) * keep
    return Field.from_spectrum(grid, spec)


def _curl_3d(grid: SpectralGrid, a: np.ndarray) -> Field:
    keep = ~grid.nyquist
    k = grid.k
    spec = np.stack([1j * (k[1] * a[2] - k[2] * a[1]),
                     1j * (k[2] * a[0] - k[0] * a[2]),
                     1j * (k[0] * a[1] - k[1] * a[0])]) * keep
    return Field.from_spectrum(grid, spec)


def perturbed_taylor_green(grid: SpectralGrid, amplitude: float = 1.0,
                           epsilon: float = 0.5) -> Field:
    """Taylor-Green plus a second solenoidal mode so the nonlinearity is not a gradient.

    The plain vortex is an eigenfunction of the Stokes operator whose
    self-advection is a pure pressure gradient, so ``B`` vanishes on it.
    """
    c = 2 * math.pi / grid.L
    x = [c * xi for xi in grid.coords()]
    base = taylor_green(grid, 1.0)
    if grid.d == 2:
        pert = np.stack([np.broadcast_to(v, grid.shape) for v in
                         (np.cos(x[0] + 2 * x[1]) * 2, -np.cos(x[0] + 2 * x[1]))])
    else:
        pert = np.stack([np.broadcast_to(v, grid.shape) for v in
                         (0.0, np.cos(x[0] + x[2]), np.sin(2 * x[0] + x[1]))])
        pert = leray_project(Field(grid, values=pert)).values
    return Field(grid, values=(base.values + epsilon * pert) * amplitude)


def localized_vortex(grid: SpectralGrid, width: float, amplitude: float = 1.0,
                     center: Sequence[float] | None = None) -> Field:
    """Divergence-free Gaussian vortex with an off-center lobe.

    The velocity is the spectral curl of ``exp(-|r|^2 / 2w^2) (1 + r_1/w)``
    (a vector potential along a tilted axis in 3D).  The lobe breaks radial
    symmetry; a radial 2D vortex is a steady Euler flow and has ``B = 0``.
    """
    if not width > 0:
        raise ValueError(f"vortex width must be positive, got {width}")
    center = [grid.L / 2] * grid.d if center is None else center
    r = grid.displacement(center)
    r2 = sum(ri * ri for ri in r)
    profile = np.exp(-r2 / (2 * width ** 2)) * (1 + r[0] / width) * width
    if grid.d == 2:
        out = _curl_2d(grid, grid.forward(profile))
    else:
        pot = np.stack([0.3 * profile, 0.5 * profile, profile])
        out = _curl_3d(grid, grid.forward(pot))
    peak = float(np.max(out.magnitude()))
    return out * (amplitude / peak)


def energy(u: Field) -> float:
    """Kinetic energy ``(1/2) ||u||_2^2``."""
    return 0.5 * u.grid.cell_volume * tree_sum(u.values ** 2)


class CFLError(ValueError):
    def __init__(self, dt: float, number: float, suggested: float):
        self.suggested = suggested
        super().__init__(f"CFL number {number:.3g} exceeds {CFL_LIMIT} at dt = {dt:g}; "
                         f"use dt <= {suggested:.3g}")


@dataclass
class ReferenceRun:
    trajectory: Trajectory
    dt: float
    method: str
    energy: list

    def energy_rows(self):
        yield from self.energy


def _cfl(grid: SpectralGrid, spec: np.ndarray, dt: float) -> None:
    umax = float(np.max(np.sqrt(np.sum(grid.inverse(spec) ** 2, axis=0))))
    number = dt * umax * grid.kmax
    if number > CFL_LIMIT:
        raise CFLError(dt, number, 0.9 * CFL_LIMIT / (umax * grid.kmax))


def rk4_solve(u0: Field, T: float, dt: float, save_times: Sequence[float] | None = None,
              nonlinear: bool = True) -> ReferenceRun:
    """Integrating-factor RK4 up to ``T``.

    Steps never cross a save time: each interval between save times is split
    into equal steps no longer than ``dt``, so the output nodes are hit
    exactly.  The energy series records every step.
    """
    g = u0.grid
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if u0.channels != g.d:
        raise ValueError(f"initial datum needs {g.d} components")
    if spectral_divergence(u0) > 1e-12:
        raise ValueError("initial datum is not divergence-free")
    save = np.array([0.0, T]) if save_times is None else np.asarray(save_times, dtype=np.float64)
    if save[0] != 0.0 or not np.all(np.diff(save) > 0) or not math.isclose(save[-1], T):
        raise ValueError("save times must start at 0, increase strictly and end at T")
    k2 = g.k2

    def rhs(spec):
        if not nonlinear:
            return np.zeros_like(spec)
        return -nonlinear_spectrum(Field.from_spectrum(g, spec), Field.from_spectrum(g, spec))

    spec = u0.spectrum.copy()
    fields = [u0]
    history = [(0.0, energy(u0))]
    t = 0.0
    for target in save[1:]:
        span = target - t
        steps = max(1, int(math.ceil(span / dt * (1 - 1e-12))))
        h = span / steps
        e_half, e_full = np.exp(-k2 * h / 2), np.exp(-k2 * h)
        for i in range(steps):
            if nonlinear:
                _cfl(g, spec, h)
            k1 = rhs(spec)
            k2_ = rhs(e_half * (spec + h / 2 * k1))
            k3 = rhs(e_half * spec + h / 2 * k2_)
            k4 = rhs(e_full * spec + h * e_half * k3)
            spec = e_full * spec + h / 6 * (e_full * k1 + 2 * e_half * (k2_ + k3) + k4)
            t = target if i == steps - 1 else t + h
            history.append((t, energy(Field.from_spectrum(g, spec))))
        fields.append(Field.from_spectrum(g, spec))
    return ReferenceRun(trajectory=Trajectory(g, save, fields), dt=dt,
                        method="integrating-factor RK4", energy=history)


def _trajectory(x) -> Trajectory:
    return x if isinstance(x, Trajectory) else x.trajectory


def compare(mild, ref) -> float:
    """``max_n ||u_mild(t_n) - u_ref(t_n)||_2 / ||u_ref(t_n)||_2`` over the mild nodes.

    Every mild node must be a node of the reference; nodes where the
    reference norm is below 1e-14 are skipped.
    """
    a, b = _trajectory(mild), _trajectory(ref)
    if a.grid != b.grid:
        raise ValueError("compared trajectories live on different grids")
    worst = 0.0
    for t, u in a:
        hit = np.flatnonzero(np.isclose(b.times, t, rtol=1e-12, atol=1e-15))
        if hit.size == 0:
            raise ValueError(f"reference has no node at t = {t:.17g}")
        r = b[int(hit[0])]
        ref_norm = math.sqrt(tree_sum(r.values ** 2) * a.grid.cell_volume)
        if ref_norm < 1e-14:
            continue
        diff = math.sqrt(tree_sum((u.values - r.values) ** 2) * a.grid.cell_volume)
        worst = max(worst, diff / ref_norm)
    return worst
