"""Picard iteration ``u^{n+1} = e^{t Delta} u0 - B(u^n, u^n)`` for mild solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Iterable, Sequence

import numpy as np

from .calculus import heat_trajectory, spectral_divergence
from .duhamel import DuhamelScheme, bilinear_apply, default_time_grid, fit_slope
from .grid import Field, Trajectory, tree_sum
from .spaces import NormReport, SpaceParams, g_norm, h_norm, smallness_lhs

__all__ = [
    "IterationReport",
    "MildSolution",
    "picard_solve",
    "residual",
    "estimate_eta",
    "ScanTable",
    "threshold_scan",
    "horizon_scan",
]

GROWTH_LIMIT = 10.0
DEFAULT_MAX_ITER = 60


@dataclass
class IterationReport:
    iterates: list = dc_field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    iterations: int = 0
    final_residual: float = math.nan
    eta_hat: float = 0.0
    delta_hat: float | None = None
    g_norm_initial: float = 0.0
    resolution: dict = dc_field(default_factory=dict)

    @property
    def contraction_ratios(self) -> list[float]:
        return [it["contraction"] for it in self.iterates if it["contraction"] is not None]

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "diverged": self.diverged,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "eta_hat": self.eta_hat,
            "delta_hat": self.delta_hat,
            "g_norm_initial": self.g_norm_initial,
            "iterates": self.iterates,
            "resolution": self.resolution,
        }


@dataclass
class MildSolution:
    trajectory: Trajectory
    params: SpaceParams
    report: IterationReport


def _l2(f: Field) -> float:
    return math.sqrt(f.grid.cell_volume * tree_sum(f.values ** 2))


def _max_l2_gap(a: Trajectory, b: Trajectory) -> float:
    """``max_n ||a(t_n) - b(t_n)||_2 / (1 + ||a(t_n)||_2)``."""
    return max(_l2(x - y) / (1.0 + _l2(x)) for x, y in zip(a.fields, b.fields))


def residual(u: Trajectory, u0: Field, scheme: DuhamelScheme, nonlinear: bool = True) -> float:
    """Normalized L^2 defect of the integral equation, maximized over nodes."""
    heat = heat_trajectory(u0, scheme.times)
    if not nonlinear:
        return _max_l2_gap(u, heat.materialize())
    b = bilinear_apply(u, u, scheme)
    return _max_l2_gap(u, heat - b)


def picard_solve(u0: Field, params: SpaceParams, scheme: DuhamelScheme, tol: float = 1e-10,
                 max_iter: int = DEFAULT_MAX_ITER, nonlinear: bool = True,
                 initial: Trajectory | None = None) -> MildSolution:
    """Successive substitution started from the heat trajectory (or ``initial``).

    Stops once the G-distance between successive iterates is at most
    ``tol``.  A G norm above ``10 x`` that of the heat trajectory, or a
    non-finite value, marks the run as diverged and returns the last finite
    iterate.  ``nonlinear=False`` drops ``B`` (the linear limit).
    """
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    if u0.grid != scheme.grid:
        raise ValueError("initial datum and scheme use different grids")
    div = spectral_divergence(u0)
    if div > 1e-12:
        raise ValueError(f"initial datum is not divergence-free (relative divergence {div:.2e})")
    params = params.with_horizon(float(scheme.times[-1]))
    heat = heat_trajectory(u0, scheme.times).materialize()
    g0 = g_norm(heat, params).value
    report = IterationReport(g_norm_initial=g0, resolution=dict(u0.grid.describe(), **scheme.describe()))
    u = heat if initial is None else initial
    u_norm = g_norm(u, params).value
    prev_dist = None
    for it in range(1, max_iter + 1):
        if nonlinear:
            b = bilinear_apply(u, u, scheme)
            new = heat - b
            b_norm = g_norm(b, params).value
        else:
            new, b_norm = heat, 0.0
        finite = all(np.all(np.isfinite(f.values)) for f in new.fields)
        new_norm = g_norm(new, params).value if finite else math.inf
        if not finite or new_norm > GROWTH_LIMIT * g0:
            report.diverged = True
            report.iterations = it
            report.iterates.append({"iteration": it, "g_norm": new_norm if finite else None,
                                    "h_norm": None, "distance": None, "residual": None,
                                    "contraction": None, "eta": None})
            break
        dist = g_norm(new - u, params).value
        eta = b_norm / u_norm ** 2 if u_norm > 0 else None
        report.iterates.append({
            "iteration": it,
            "g_norm": new_norm,
            "h_norm": h_norm(new, params.s, params.p).value,
            "distance": dist,
            # residual of the previous iterate: the defect of u is exactly u - new
            "residual": _max_l2_gap(u, new),
            "contraction": dist / prev_dist if prev_dist else None,
            "eta": eta,
        })
        if eta is not None:
            report.eta_hat = max(report.eta_hat, eta)
        u, u_norm, prev_dist = new, new_norm, dist
        report.iterations = it
        if dist <= tol:
            report.converged = True
            break
    if not report.diverged:
        report.final_residual = residual(u, u0, scheme, nonlinear)
    return MildSolution(trajectory=u, params=params, report=report)


def estimate_eta(corpus: Iterable[tuple[Trajectory, Trajectory]], params: SpaceParams,
                 scheme: DuhamelScheme, description: str = "") -> NormReport:
    """``max ||B(u, v)||_G / (||u||_G ||v||_G)`` over the corpus, skipping zero norms."""
    params = params.with_horizon(float(scheme.times[-1]))
    ratios = []
    total = 0
    for u, v in corpus:
        total += 1
        nu, nv = g_norm(u, params).value, g_norm(v, params).value
        if nu == 0.0 or nv == 0.0:
            continue
        ratios.append(g_norm(bilinear_apply(u, v, scheme), params).value / (nu * nv))
    if not ratios:
        raise ValueError("empty effective corpus: every pair has a zero G norm")
    return NormReport(kind="eta", value=max(ratios), params=params.describe(),
                      resolution=dict(scheme.grid.describe(), **scheme.describe()),
                      extra={"pairs": total, "used": len(ratios), "ratios": ratios,
                             "corpus": description})


@dataclass
class ScanTable:
    """Rows of a convergence scan plus the summary quantities."""

    key: str
    rows: list
    delta_hat: float | None
    monotone: bool
    extra: dict = dc_field(default_factory=dict)

    @property
    def header(self) -> tuple[str, ...]:
        return (self.key, "lhs_eq1", "lhs_eq6", "converged", "iters", "final_residual")

    def to_json(self) -> dict:
        out = {"key": self.key, "delta_hat": self.delta_hat, "monotone": self.monotone,
               "rows": [dict(zip(self.header, r)) for r in self.rows]}
        out.update(self.extra)
        return out


def _monotone(flags: Sequence[bool]) -> bool:
    """True when no success follows the first failure."""
    seen_failure = False
    for ok in flags:
        if not ok:
            seen_failure = True
        elif seen_failure:
            return False
    return True


def threshold_scan(profile: Field, params: SpaceParams, amplitudes: Sequence[float],
                   scheme: DuhamelScheme, tol: float = 1e-10,
                   max_iter: int = DEFAULT_MAX_ITER) -> ScanTable:
    """Picard runs on ``A * profile`` for an increasing amplitude ladder.

    The smallness left-hand sides are homogeneous of degree one, so they are
    evaluated once on the profile and scaled by ``|A|``.  ``delta_hat`` is
    the largest variant-1 value among converged runs.
    """
    amplitudes = [float(a) for a in amplitudes]
    if any(b <= a for a, b in zip(amplitudes, amplitudes[1:])):
        raise ValueError("amplitude ladder must be increasing")
    T = float(scheme.times[-1])
    params = params.with_horizon(T)
    lhs1 = smallness_lhs(profile, params, T, variant=1).value
    lhs6 = smallness_lhs(profile, params, T, variant=6).value
    rows, reports = [], []
    for A in amplitudes:
        sol = picard_solve(profile * A, params, scheme, tol, max_iter)
        rep = sol.report
        rows.append((A, abs(A) * lhs1, abs(A) * lhs6, rep.converged, rep.iterations,
                     rep.final_residual if rep.converged else math.nan))
        reports.append(rep)
    good = [r[1] for r in rows if r[3]]
    return ScanTable(key="A", rows=rows, delta_hat=max(good) if good else None,
                     monotone=_monotone([r[3] for r in rows]),
                     extra={"eta_hat": max((r.eta_hat for r in reports), default=0.0)})


def horizon_scan(u0: Field, params: SpaceParams, T_ladder: Sequence[float], tol: float = 1e-10,
                 max_iter: int = DEFAULT_MAX_ITER,
                 time_grid: Callable[[float], np.ndarray] = default_time_grid) -> ScanTable:
    """Picard runs on a fixed datum over increasing horizons.

    Reports ``T_star`` (largest ladder horizon such that every smaller one
    converges) and the log-log slope of the variant-1 left-hand side over
    the ladder.
    """
    T_ladder = [float(T) for T in T_ladder]
    if len(T_ladder) < 2 or any(b <= a for a, b in zip(T_ladder, T_ladder[1:])):
        raise ValueError("T ladder must hold at least two increasing horizons")
    rows = []
    for T in T_ladder:
        p = params.with_horizon(T)
        scheme = DuhamelScheme(u0.grid, time_grid(T))
        lhs1 = smallness_lhs(u0, p, T, variant=1).value
        lhs6 = smallness_lhs(u0, p, T, variant=6).value
        rep = picard_solve(u0, p, scheme, tol, max_iter).report
        rows.append((T, lhs1, lhs6, rep.converged, rep.iterations,
                     rep.final_residual if rep.converged else math.nan))
    T_star = None
    for r in rows:
        if not r[3]:
            break
        T_star = r[0]
    good = [r[1] for r in rows if r[3]]
    return ScanTable(key="T", rows=rows, delta_hat=max(good) if good else None,
                     monotone=_monotone([r[3] for r in rows]),
                     extra={"T_star": T_star, "lhs_eq1_slope": fit_slope(T_ladder, [r[1] for r in rows]),
                            "expected_slope": params.time_exponent})
