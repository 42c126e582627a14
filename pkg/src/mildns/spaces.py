"""Norms and index bookkeeping for the mild-solution theory.

Vector-valued conventions:

* :func:`lebesgue_norm`, :func:`weak_lebesgue_norm` and :func:`sobolev_norm`
  reduce channels as ``(sum_m ||f_m||^2)^{1/2}``.
* Caloric quantities (:func:`caloric_sup_field`, :func:`g_norm`,
  :func:`h_norm`, :func:`triebel_norm_heat`) take the pointwise Euclidean
  magnitude ``|u(t, x)|`` before the supremum in time, and the supremum in
  time before the spatial norm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field as dc_field
from typing import Iterable

import numpy as np

from .calculus import _require_zero_mean, fractional_laplacian, heat_evolve, spectral_divergence
from .grid import Field, SpectralGrid, Trajectory, tree_sum

__all__ = [
    "SpaceParams",
    "AdmissibilityError",
    "NormReport",
    "admissible_params",
    "lebesgue_norm",
    "weak_lebesgue_norm",
    "sobolev_norm",
    "caloric_sup_field",
    "caloric_norm",
    "g_norm",
    "h_norm",
    "geometric_ladder",
    "triebel_norm_heat",
    "triebel_norm_littlewood_paley",
    "heat_caloric_sup",
    "smallness_lhs",
    "LADDER_PER_DECADE",
]

LADDER_PER_DECADE = 64
LADDER_STABILITY = 0.01
TAIL_RTOL = 1e-10
CRITICAL_ATOL = 1e-12
DIVERGENCE_TOL = 1e-12


class AdmissibilityError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("inadmissible indexes: " + "; ".join(violations))


@dataclass(frozen=True)
class SpaceParams:
    """Index tuple ``(d, p, s, q_tilde, T)`` with the derived ``q`` and ``alpha``."""

    d: int
    p: float
    s: float
    q_tilde: float
    T: float = math.inf

    @property
    def q(self) -> float:
        return 1.0 / (1.0 / self.p - self.s / self.d)

    @property
    def alpha(self) -> float:
        return self.d * (1.0 / self.q - 1.0 / self.q_tilde)

    @property
    def time_exponent(self) -> float:
        """``(1/2)(1 + s - d/p)``, the power of ``T`` in the smallness condition."""
        return 0.5 * (1.0 + self.s - self.d / self.p)

    @property
    def critical(self) -> bool:
        return abs(self.time_exponent) <= CRITICAL_ATOL

    @property
    def triebel_order(self) -> float:
        """Regularity ``s - d/p + d/q_tilde`` (equal to ``-alpha``)."""
        return self.s - self.d / self.p + self.d / self.q_tilde

    def with_horizon(self, T: float) -> "SpaceParams":
        return admissible_params(self.d, self.p, self.s, self.q_tilde, T)

    def describe(self) -> dict:
        out = asdict(self)
        out.update(q=self.q, alpha=self.alpha, critical=self.critical,
                   time_exponent=self.time_exponent)
        if math.isinf(self.T):
            out["T"] = "inf"
        return out


def admissible_params(d: int, p: float, s: float, q_tilde: float, T: float = math.inf) -> SpaceParams:
    """Validate ``p > d/2``, ``d/p - 1 <= s < d/(2p)``, ``q_tilde > max{p, q}``.

    Every violated inequality is named in the raised :class:`AdmissibilityError`.
    """
    v = []
    if int(d) != d or d < 2:
        v.append(f"d must be an integer >= 2 (got {d})")
    if not p > 0:
        raise AdmissibilityError(v + [f"p must be positive (got {p})"])
    if not p > d / 2:
        v.append(f"p ≤ d/2 (p = {p:g}, d/2 = {d / 2:g})")
    if s < d / p - 1 - CRITICAL_ATOL:
        v.append(f"s < d/p - 1 (s = {s:g}, d/p - 1 = {d / p - 1:g})")
    if not s < d / (2 * p):
        v.append(f"s ≥ d/(2p) (s = {s:g}, d/(2p) = {d / (2 * p):g})")
    inv_q = 1.0 / p - s / d
    if inv_q <= 0:
        v.append(f"1/q = 1/p - s/d must be positive (got {inv_q:g})")
    else:
        q = 1.0 / inv_q
        if not q_tilde > max(p, q):
            v.append(f"q̃ ≤ max{{p, q}} (q̃ = {q_tilde:g}, p = {p:g}, q = {q:g})")
    if not T > 0:
        v.append(f"T must be positive (got {T})")
    if v:
        raise AdmissibilityError(v)
    return SpaceParams(int(d), float(p), float(s), float(q_tilde), float(T))


@dataclass
class NormReport:
    kind: str
    value: float
    params: dict = dc_field(default_factory=dict)
    resolution: dict = dc_field(default_factory=dict)
    ladder_stability: float | None = None
    extra: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0):
            raise ValueError(f"{self.kind}: norm value must be finite and >= 0, got {self.value}")
        self.value = float(self.value)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "value": self.value, "params": self.params,
               "resolution": self.resolution, "ladder_stability": self.ladder_stability}
        if self.extra:
            out["extra"] = self.extra
        return out


def _resolution(grid: SpectralGrid, times=None, **more) -> dict:
    out = grid.describe()
    if times is not None:
        times = np.asarray(times)
        out["time_nodes"] = int(times.size)
        out["t_first"] = float(times[times > 0][0]) if np.any(times > 0) else 0.0
        out["t_last"] = float(times[-1])
    out.update(more)
    return out


def _lp(a: np.ndarray, p: float, cell_volume: float) -> float:
    """L^p norm of a nonnegative sample array."""
    if p == math.inf:
        return float(a.max()) if a.size else 0.0
    m = float(a.max())
    if m == 0.0:
        return 0.0
    # rescale by the max so large p cannot overflow
    return m * (cell_volume * tree_sum((a / m) ** p)) ** (1.0 / p)


def lebesgue_norm(f: Field, p: float) -> float:
    """``(cell_volume * sum_x |f(x)|^p)^{1/p}``, maximum for ``p = inf``."""
    if not p >= 1:
        raise ValueError(f"Lebesgue index must satisfy p >= 1, got {p}")
    cv = f.grid.cell_volume
    vals = np.abs(f.values)
    if vals.shape[0] == 1:
        return _lp(vals[0], p, cv)
    return math.sqrt(sum(_lp(v, p, cv) ** 2 for v in vals))


def _weak(a: np.ndarray, p: float, cell_volume: float) -> float:
    v = np.sort(a.ravel())[::-1]
    count = np.arange(1, v.size + 1, dtype=np.float64)
    return float(np.max(v * (cell_volume * count) ** (1.0 / p)))


def weak_lebesgue_norm(f: Field, p: float) -> float:
    """Weak-``L^p`` quasi-norm ``sup_lambda lambda |{|f| > lambda}|^{1/p}``.

    Exact on the discrete measure: after sorting the samples in decreasing
    order the supremum is ``max_i v_i (i * cell_volume)^{1/p}``.
    """
    if not 1 < p < math.inf:
        raise ValueError(f"weak Lebesgue index must lie in (1, inf), got {p}")
    cv = f.grid.cell_volume
    vals = np.abs(f.values)
    if vals.shape[0] == 1:
        return _weak(vals[0], p, cv)
    return math.sqrt(sum(_weak(v, p, cv) ** 2 for v in vals))


def sobolev_norm(f: Field, s: float, p: float) -> float:
    """Homogeneous Sobolev norm ``||Lambda^s f||_p``."""
    return lebesgue_norm(fractional_laplacian(f, s), p)


def caloric_sup_field(traj: Trajectory, alpha: float) -> Field:
    """Pointwise ``sup_t t^{alpha/2} |u(t, x)|`` over the trajectory nodes.

    The ``t = 0`` node only enters when ``alpha == 0``.
    """
    if not alpha >= 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    sup = None
    for t, u in traj:
        if t == 0 and alpha > 0:
            continue
        w = u.magnitude() * (t ** (alpha / 2) if alpha else 1.0)
        sup = w if sup is None else np.maximum(sup, w)
    if sup is None:
        raise ValueError("trajectory has no node with t > 0")
    return Field(traj.grid, values=sup)


def _dyadic_checkpoints(times: np.ndarray) -> list[float]:
    T = float(times[-1])
    first = float(times[times > 0][0])
    out = []
    tau = T
    while tau >= first and len(out) < 60:
        out.append(tau)
        tau /= 2
    return sorted(out)


def caloric_norm(traj: Trajectory, alpha: float, r: float, kind: str = "G",
                 params: dict | None = None) -> NormReport:
    """``|| sup_t t^{alpha/2} |u(t, .)| ||_{L^r}`` with a vanishing diagnostic.

    ``extra["vanishing"]`` lists ``[tau, value restricted to t <= tau]`` on a
    dyadic ladder ``tau = T / 2^j``, and ``extra["slice_max"]`` is the larger
    quantity-free bound ``max_t t^{alpha/2} ||u(t)||_r``.
    """
    if not alpha >= 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    cv = traj.grid.cell_volume
    checkpoints = _dyadic_checkpoints(traj.times)
    vanishing = []
    sup = None
    slice_max = 0.0
    ci = 0
    for t, u in traj:
        if t == 0 and alpha > 0:
            continue
        while ci < len(checkpoints) and t > checkpoints[ci] and sup is not None:
            vanishing.append([checkpoints[ci], _lp(sup, r, cv)])
            ci += 1
        w = u.magnitude() * (t ** (alpha / 2) if alpha else 1.0)
        slice_max = max(slice_max, _lp(w, r, cv))
        sup = w if sup is None else np.maximum(sup, w)
    if sup is None:
        raise ValueError("trajectory has no node with t > 0")
    value = _lp(sup, r, cv)
    while ci < len(checkpoints):
        vanishing.append([checkpoints[ci], value])
        ci += 1
    return NormReport(kind=kind, value=value, params=params or {"alpha": alpha, "r": r},
                      resolution=_resolution(traj.grid, traj.times),
                      extra={"vanishing": vanishing, "slice_max": slice_max})


def g_norm(traj: Trajectory, params: SpaceParams) -> NormReport:
    """Caloric norm ``||u||_G = || sup_t t^{alpha/2} |u| ||_{L^{q_tilde}}``."""
    return caloric_norm(traj, params.alpha, params.q_tilde, kind="G", params=params.describe())


def h_norm(traj: Trajectory, s: float, p: float) -> NormReport:
    """``|| sup_t |Lambda^s u(t, .)| ||_{L^p}``.

    ``extra["sup_t_sobolev"]`` holds the weaker ``sup_t ||Lambda^s u(t)||_p``
    (computed on the same pointwise magnitude), which never exceeds the value.
    """
    d = traj.grid.d
    if not p > 1:
        raise ValueError(f"H-norm needs p > 1, got {p}")
    if s < d / p - 1 - CRITICAL_ATOL:
        raise ValueError(f"H-norm needs s >= d/p - 1 = {d / p - 1:g}, got {s}")
    cv = traj.grid.cell_volume
    sup = None
    weaker = 0.0
    for t, u in traj:
        m = fractional_laplacian(u, s).magnitude()
        weaker = max(weaker, _lp(m, p, cv))
        sup = m if sup is None else np.maximum(sup, m)
    value = _lp(sup, p, cv)
    # sup of slices is bounded by the norm of the pointwise sup; guard roundoff only
    if weaker > value * (1 + 1e-12):
        raise AssertionError(f"H-norm {value} below L^inf H^s_p value {weaker}")
    return NormReport(kind="H", value=value, params={"s": s, "p": p},
                      resolution=_resolution(traj.grid, traj.times),
                      extra={"sup_t_sobolev": weaker})


def geometric_ladder(t_min: float, t_max: float, per_decade: int = LADDER_PER_DECADE) -> np.ndarray:
    if not 0 < t_min < t_max:
        raise ValueError(f"ladder needs 0 < t_min < t_max, got [{t_min}, {t_max}]")
    num = max(2, int(math.ceil(per_decade * math.log10(t_max / t_min))) + 1)
    return np.geomspace(t_min, t_max, num)


def heat_caloric_sup(u0: Field, exponent: float, times: Iterable[float],
                     include_zero: bool = False) -> np.ndarray:
    """Pointwise ``max_t t^exponent |e^{t Delta} u0|`` over ``times`` (streamed)."""
    sup = u0.magnitude().copy() if include_zero else None
    for t in times:
        w = heat_evolve(u0, float(t)).magnitude()
        if exponent:
            w = w * float(t) ** exponent
        sup = w if sup is None else np.maximum(sup, w)
    return sup


def _spectral_l1(u0: Field) -> float:
    g = u0.grid
    per = [tree_sum(g.mode_weights * np.abs(c)) for c in u0.spectrum]
    return math.sqrt(sum(x * x for x in per))


def _tail_bound(u0: Field, exponent: float, r: float, t: float) -> float:
    """Bound on ``|| sup_{t' >= t} t'^e |e^{t' Delta} u0| ||_r`` for zero-mean data."""
    g = u0.grid
    c = g.kmin ** 2
    t = max(t, exponent / c) if exponent > 0 else t
    vol = g.volume ** (1.0 / r) if r != math.inf else 1.0
    return t ** exponent * math.exp(-c * t) * _spectral_l1(u0) * vol


def _heat_norm(u0: Field, exponent: float, r: float, t_min: float, t_max: float,
               per_decade: int, include_zero: bool) -> float:
    ladder = geometric_ladder(t_min, t_max, per_decade)
    sup = heat_caloric_sup(u0, exponent, ladder, include_zero)
    return _lp(sup, r, u0.grid.cell_volume)


def _stable_heat_norm(u0: Field, exponent: float, r: float, t_min: float, t_max: float,
                      per_decade: int, include_zero: bool):
    """Evaluate on a ladder, doubling its density until two passes agree to 1%."""
    value = _heat_norm(u0, exponent, r, t_min, t_max, per_decade, include_zero)
    stability = math.inf
    for _ in range(4):
        per_decade *= 2
        finer = _heat_norm(u0, exponent, r, t_min, t_max, per_decade, include_zero)
        stability = abs(finer - value) / finer if finer > 0 else 0.0
        value = finer
        if stability <= LADDER_STABILITY:
            break
    return value, stability, per_decade


def _infinite_horizon(u0: Field, exponent: float, r: float, t_min: float, per_decade: int):
    """Horizon beyond which the heat tail contributes below TAIL_RTOL of the value."""
    c = u0.grid.kmin ** 2
    t_max = max(10.0 * t_min, (exponent + 1.0) / c)
    value = 0.0
    for _ in range(64):
        value = _heat_norm(u0, exponent, r, t_min, t_max, per_decade, False)
        if _tail_bound(u0, exponent, r, t_max) <= TAIL_RTOL * value or value == 0.0:
            return t_max, value
        t_max *= 2.0
    raise RuntimeError("heat tail could not be certified")


def triebel_norm_heat(f: Field, s: float, q: float, t_ladder=None,
                      per_decade: int = LADDER_PER_DECADE) -> NormReport:
    """Heat characterization ``|| sup_{t>0} t^{-s/2} |e^{t Delta} f| ||_{L^q}`` for ``s < 0``.

    ``t_ladder`` is ``(t_min, t_max)``; by default ``t_min`` resolves the
    highest grid mode and ``t_max`` is pushed out until the certified tail is
    below 1e-10 of the value.
    """
    if not s < 0:
        raise ValueError(f"heat characterization needs s < 0, got {s}")
    if not q >= 1:
        raise ValueError(f"Lebesgue index must satisfy q >= 1, got {q}")
    g = f.grid
    exponent = -s / 2
    if tree_sum(np.abs(f.spectrum)) == 0.0:
        return NormReport(kind="F_heat", value=0.0, params={"s": s, "q": q},
                          resolution=_resolution(g), ladder_stability=0.0)
    _require_zero_mean(f, "triebel_norm_heat")
    if t_ladder is None:
        t_min = 1e-4 / g.kmax ** 2
        t_max, _ = _infinite_horizon(f, exponent, q, t_min, per_decade)
    else:
        t_min, t_max = t_ladder
    value, stability, used = _stable_heat_norm(f, exponent, q, t_min, t_max, per_decade, False)
    return NormReport(kind="F_heat", value=value, params={"s": s, "q": q},
                      resolution=_resolution(g, ladder=[t_min, t_max], per_decade=used),
                      ladder_stability=stability)


def _lp_cutoff(r: np.ndarray) -> np.ndarray:
    """Smooth radial cutoff: 1 on [0, 1], 0 on [2, inf)."""
    def h(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out
    x = np.clip(2.0 - r, 0.0, 1.0)
    return h(x) / (h(x) + h(1.0 - x))


def triebel_norm_littlewood_paley(f: Field, s: float, q: float) -> float:
    """``|| sup_j 2^{js} |Delta_j f| ||_{L^q}`` with smooth dyadic blocks.

    Independent of the heat semigroup; used to probe the equivalence of the
    two characterizations.
    """
    _require_zero_mean(f, "triebel_norm_littlewood_paley")
    g = f.grid
    kmag = g.kmag
    j_lo = int(math.floor(math.log2(g.kmin))) - 1
    j_hi = int(math.ceil(math.log2(g.kmax))) + 1
    sup = np.zeros(g.shape)
    for j in range(j_lo, j_hi + 1):
        block = _lp_cutoff(kmag / 2.0 ** j) - _lp_cutoff(kmag / 2.0 ** (j - 1))
        if not np.any(block):
            continue
        piece = Field.from_spectrum(g, f.spectrum * block).magnitude()
        sup = np.maximum(sup, 2.0 ** (j * s) * piece)
    return _lp(sup, q, g.cell_volume)


def smallness_lhs(u0: Field, params: SpaceParams, T: float | None = None, variant: int = 1,
                  per_decade: int = LADDER_PER_DECADE) -> NormReport:
    """Left-hand side of a smallness condition for the heat flow of ``u0``.

    variant 1: ``T^kappa || sup_{0<t<T} t^{alpha/2} |e^{t Delta} u0| ||_{q_tilde}``
    variant 2: ``|| sup_{0<t<T} t^{(1 - d/q_tilde)/2} |e^{t Delta} u0| ||_{q_tilde}``
    variant 6: ``T^kappa ||u0||_F`` with ``F`` of order ``s - d/p + d/q_tilde``
    (heat characterized), where ``kappa = (1/2)(1 + s - d/p)``.
    """
    if variant not in (1, 2, 6):
        raise ValueError(f"unknown smallness variant {variant}")
    if u0.channels != u0.grid.d:
        raise ValueError("initial datum must be a d-component vector field")
    T = params.T if T is None else T
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    div = spectral_divergence(u0)
    if div > DIVERGENCE_TOL:
        raise ValueError(f"initial datum is not divergence-free (relative divergence {div:.2e})")
    kappa = params.time_exponent
    if math.isinf(T) and kappa > CRITICAL_ATOL:
        raise ValueError("T = inf is only meaningful at critical indexes")
    prefactor = 1.0 if (math.isinf(T) or kappa == 0) else T ** kappa
    g = u0.grid
    resolution = _resolution(g)
    info = dict(params.describe(), T="inf" if math.isinf(T) else T, variant=variant)
    if tree_sum(np.abs(u0.spectrum)) == 0.0:
        return NormReport(kind=f"smallness_{variant}", value=0.0, params=info,
                          resolution=resolution, ladder_stability=0.0)
    if variant == 6:
        rep = triebel_norm_heat(u0, params.triebel_order, params.q_tilde, per_decade=per_decade)
        return NormReport(kind="smallness_6", value=prefactor * rep.value, params=info,
                          resolution=rep.resolution, ladder_stability=rep.ladder_stability,
                          extra={"triebel_norm": rep.value})
    if variant == 1:
        exponent = params.alpha / 2
    else:
        exponent = 0.5 * (1.0 - g.d / params.q_tilde)
        prefactor = 1.0
    r = params.q_tilde
    if math.isinf(T):
        t_min = 1e-4 / g.kmax ** 2
        t_max, _ = _infinite_horizon(u0, exponent, r, t_min, per_decade)
    else:
        t_min, t_max = T * 1e-6, T
    include_zero = exponent == 0
    value, stability, used = _stable_heat_norm(u0, exponent, r, t_min, t_max, per_decade,
                                               include_zero)
    resolution.update(ladder=[t_min, t_max], per_decade=used)
    return NormReport(kind=f"smallness_{variant}", value=prefactor * value, params=info,
                      resolution=resolution, ladder_stability=stability,
                      extra={"caloric_norm": value, "prefactor": prefactor})
