"""``mildns`` command line: batch scenarios, scenario listing and snapshot checks.

Exit codes: 0 success (a diverged iteration is a finding, not a failure),
2 invalid configuration, 3 input/output error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import plotting
from .calculus import oseen_kernel_sample, spectral_divergence
from .duhamel import DuhamelScheme, bilinear_scaling_probe, default_time_grid, refine_time_grid
from .grid import Field, SnapshotError, make_grid, random_field, read_snapshot, set_workers, write_snapshot
from .picard import horizon_scan, picard_solve, threshold_scan
from .reference import compare, localized_vortex, perturbed_taylor_green, rk4_solve, taylor_green
from .spaces import AdmissibilityError, admissible_params, smallness_lhs, triebel_norm_littlewood_paley

log = logging.getLogger("mildns")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

REQUIRED = object()

# dotted key -> (type, default)
SCHEMA = {
    "scenario": (str, REQUIRED),
    "seed": (int, 0),
    "grid.d": (int, 2),
    "grid.n": (int, REQUIRED),
    "grid.L": (float, 2 * math.pi),
    "params.p": (float, 2.0),
    "params.s": (float, 0.0),
    "params.q_tilde": (float, 3.0),
    "time.T": (float, 1.0),
    "time.n_geometric": (int, 16),
    "time.n_uniform": (int, 64),
    "time.refine": (int, 0),
    "datum.profile": (str, "taylor-green"),
    "datum.amplitude": (float, 1.0),
    "datum.width": (float, 1.0),
    "datum.epsilon": (float, 0.5),
    "datum.kmax": (int, 4),
    "datum.path": (str, None),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (int, 60),
    "reference.dt": (float, 1e-3),
    "kernel.s": (float, 0.0),
    "kernel.t": (float, 1.0),
    "kernel.radii": (list, [1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
    "kernel.gammas": (list, []),
    "kernel.coarse_n": (int, None),
    "scaling.T_ladder": (list, [0.125, 0.25, 0.5, 1.0]),
    "scaling.q2": (float, None),
    "scan.amplitudes": (list, [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]),
    "scan.T_ladder": (list, None),
    "scan.amplitude": (float, None),
    "equivalence.seeds": (int, 20),
    "output.dir": (str, "mildns-out"),
    "output.figures": (bool, True),
}

PROFILES = ("taylor-green", "perturbed-taylor-green", "localized-vortex", "random", "snapshot")


class ConfigError(Exception):
    pass


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def _coerce(key: str, kind: type, value):
    if value is None:
        return None
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind in (str, bool, list) and isinstance(value, kind):
        return value
    raise ConfigError(f"{key} must be {kind.__name__}, got {value!r}")


def load_config(path: Path | None, overrides=()) -> dict:
    """Merge the TOML file and ``--set`` overrides into a validated flat dict."""
    raw = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                raw = _flatten(tomllib.load(fh))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        key, value = _parse_override(item)
        raw[key] = value
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]}")
    cfg = {}
    for key, (kind, default) in SCHEMA.items():
        if key in raw:
            cfg[key] = _coerce(key, kind, raw[key])
        elif default is REQUIRED:
            raise ConfigError(f"{key} required")
        else:
            cfg[key] = default
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError(f"scenario {cfg['scenario']!r} unknown (see `mildns list`)")
    if cfg["datum.profile"] not in PROFILES:
        raise ConfigError(f"datum.profile must be one of {', '.join(PROFILES)}")
    if cfg["datum.profile"] == "snapshot":
        p = cfg["datum.path"]
        if not p:
            raise ConfigError("datum.path required for a snapshot datum")
        if not Path(p).is_file():
            raise ConfigError(f"datum.path {p} does not exist")
    return cfg


def _grid(cfg):
    try:
        return make_grid(cfg["grid.d"], cfg["grid.n"], cfg["grid.L"])
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _params(cfg, T=math.inf):
    try:
        return admissible_params(cfg["grid.d"], cfg["params.p"], cfg["params.s"],
                                 cfg["params.q_tilde"], T)
    except AdmissibilityError as exc:
        raise ConfigError(f"params: {exc}") from None


def _times(cfg, T=None):
    T = cfg["time.T"] if T is None else T
    times = default_time_grid(T, cfg["time.n_geometric"], cfg["time.n_uniform"])
    for _ in range(cfg["time.refine"]):
        times = refine_time_grid(times)
    return times


def _datum(cfg, grid, amplitude=None, width=None) -> Field:
    A = cfg["datum.amplitude"] if amplitude is None else amplitude
    kind = cfg["datum.profile"]
    if kind == "taylor-green":
        return taylor_green(grid, A)
    if kind == "perturbed-taylor-green":
        return perturbed_taylor_green(grid, A, cfg["datum.epsilon"])
    if kind == "localized-vortex":
        return localized_vortex(grid, cfg["datum.width"] if width is None else width, A)
    if kind == "random":
        u = random_field(grid, cfg["seed"], channels=grid.d, kmax=cfg["datum.kmax"], solenoidal=True)
        return u * A
    u = read_snapshot(cfg["datum.path"])
    if u.grid != grid or u.channels != grid.d:
        raise ConfigError("datum.path snapshot does not match grid.d/grid.n/grid.L")
    return u * A


class Output:
    """Collects tables, snapshots and figures under one directory."""

    def __init__(self, root: Path, figures: bool):
        self.root = root
        self.figures = figures
        self.files: list[str] = []

    def _path(self, sub: str, name: str) -> Path:
        p = self.root / sub / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(str(p.relative_to(self.root)))
        return p

    def table(self, name: str, header, rows) -> None:
        with open(self._path("tables", name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(x) for x in row])

    def snapshot(self, name: str, field: Field) -> None:
        write_snapshot(self._path("snapshots", name), field)

    def figure(self, name: str, fn, *args) -> None:
        if self.figures:
            fn(self._path("figures", name), *args)

    def report(self, payload: dict) -> None:
        payload = dict(payload, files=sorted(self.files))
        with open(self.root / "report.json", "w") as fh:
            json.dump(_clean(payload), fh, sort_keys=True, indent=2)
            fh.write("\n")


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, tuples become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def scenario_kernel_decay(cfg, out: Output) -> dict:
    d, s, t = cfg["grid.d"], cfg["kernel.s"], cfg["kernel.t"]
    n, L = cfg["grid.n"], cfg["grid.L"]
    radii = np.asarray(cfg["kernel.radii"], dtype=float)
    gammas = [tuple(g) for g in cfg["kernel.gammas"]] or [(d - 1 + s, 1.0)]
    try:
        fine = oseen_kernel_sample(d, s, t, radii, gammas, n=n, L=L)
        coarse_n = cfg["kernel.coarse_n"] or n // 2
        coarse = oseen_kernel_sample(d, s, t, radii, n=coarse_n, L=L)
        # self-similarity: K_t(x) = t^{-(d+s+1)/2} K(x / sqrt t), probed with t = 4
        late = oseen_kernel_sample(d, s, 4.0 * t, 2.0 * fine.points, n=n, L=L)
    except ValueError as exc:
        raise ConfigError(f"kernel: {exc}") from None
    e = d + s + 1
    scaled = 2.0 ** e * late.values
    selfsim = float(np.max(np.abs(fine.values - scaled)) / np.max(np.abs(fine.values)))
    refine_change = float(abs(fine.decay_ratio.max() / coarse.decay_ratio.max() - 1))
    out.table("kernel.csv", ("abs_x", "t", "entry_ijl", "value", "bound_ratio"), fine.rows())
    out.table("kernel_decay.csv", ("abs_x", "decay_ratio", "decay_ratio_coarse"),
              zip(fine.radii, fine.decay_ratio, coarse.decay_ratio))
    out.figure("kernel_decay.png", plotting.kernel_decay, fine.radii, fine.decay_ratio,
               f"d={d}, s={s:g}, t={t:g}")
    return {
        "decay_ratio_max": float(fine.decay_ratio.max()),
        "decay_ratio_refinement_change": refine_change,
        "self_similarity_deviation": selfsim,
        "surrogate_discrepancy": fine.surrogate_discrepancy,
        "bound_ratio_max": {f"{g1:g},{g2:g}": float(v.max()) for (g1, g2), v in fine.bound_ratios.items()},
        "resolution": dict(fine.resolution, coarse_n=coarse_n),
    }


def scenario_bilinear_scaling(cfg, out: Output) -> dict:
    grid = _grid(cfg)
    params = _params(cfg)
    ladder = [float(T) for T in cfg["scaling.T_ladder"]]
    width = cfg["datum.width"]
    if cfg["datum.profile"] == "localized-vortex":
        def family(T):
            return localized_vortex(grid, width * math.sqrt(T), cfg["datum.amplitude"])
    else:
        def family(T):
            return _datum(cfg, grid)

    def time_grid(T):
        return _times(cfg, T)
    probes = []
    try:
        probes.append(bilinear_scaling_probe(family, params, ladder, time_grid=time_grid))
        if cfg["scaling.q2"] is not None:
            probes.append(bilinear_scaling_probe(family, params, ladder, q2=cfg["scaling.q2"],
                                                 time_grid=time_grid))
    except ValueError as exc:
        raise ConfigError(f"scaling: {exc}") from None
    for pr in probes:
        out.table(f"scaling_{pr.kind}.csv", pr.header, pr.rows())
    out.figure("scaling.png", plotting.scaling, probes)
    return {"params": params.describe(), "probes": [pr.to_json() for pr in probes]}


def scenario_threshold_scan(cfg, out: Output) -> dict:
    grid = _grid(cfg)
    T = cfg["time.T"]
    params = _params(cfg, T)
    profile = _datum(cfg, grid, amplitude=1.0)
    scheme = DuhamelScheme(grid, _times(cfg))
    try:
        table = threshold_scan(profile, params, cfg["scan.amplitudes"], scheme,
                               cfg["solver.tol"], cfg["solver.max_iter"])
    except ValueError as exc:
        raise ConfigError(f"scan: {exc}") from None
    out.table("threshold.csv", table.header, table.rows)
    out.figure("threshold.png", plotting.threshold, table)
    result = {"params": params.describe(), "threshold": table.to_json(),
              "resolution": dict(grid.describe(), **scheme.describe())}
    if cfg["scan.T_ladder"]:
        A = cfg["scan.amplitude"] if cfg["scan.amplitude"] is not None else cfg["datum.amplitude"]
        hs = horizon_scan(profile * A, params, cfg["scan.T_ladder"], cfg["solver.tol"],
                          cfg["solver.max_iter"], time_grid=lambda t: _times(cfg, t))
        out.table("horizon.csv", hs.header, hs.rows)
        out.figure("horizon.png", plotting.threshold, hs)
        result["horizon"] = dict(hs.to_json(), amplitude=A)
    return result


def scenario_picard_taylor_green(cfg, out: Output) -> dict:
    grid = _grid(cfg)
    T = cfg["time.T"]
    params = _params(cfg, T)
    u0 = _datum(cfg, grid)
    scheme = DuhamelScheme(grid, _times(cfg))
    sol = picard_solve(u0, params, scheme, cfg["solver.tol"], cfg["solver.max_iter"])
    rep = sol.report
    out.snapshot("initial.mnsf", u0)
    out.snapshot("final.mnsf", sol.trajectory[-1])
    keys = ("iteration", "g_norm", "h_norm", "distance", "residual", "contraction", "eta")
    out.table("iterates.csv", keys, ([it[k] for k in keys] for it in rep.iterates))
    out.figure("contraction.png", plotting.contraction, rep)
    result = {"params": params.describe(), "converged": rep.converged, "diverged": rep.diverged,
              "report": rep.to_json(),
              "smallness_lhs_eq1": smallness_lhs(u0, params, T, 1).to_json()}
    if rep.converged:
        try:
            ref = rk4_solve(u0, T, cfg["reference.dt"], save_times=scheme.times)
        except ValueError as exc:
            raise ConfigError(f"reference.dt: {exc}") from None
        result["comparison"] = compare(sol, ref)
        result["reference"] = {"method": ref.method, "dt": ref.dt}
        out.table("energy.csv", ("t", "energy"), ref.energy_rows())
    return result


def scenario_norm_equivalence(cfg, out: Output) -> dict:
    grid = _grid(cfg)
    params = _params(cfg)
    if not params.critical:
        raise ConfigError("params: norm-equivalence runs at critical indexes (s = d/p - 1)")
    order = params.triebel_order
    rows = []
    for k in range(cfg["equivalence.seeds"]):
        seed = cfg["seed"] + k
        u = random_field(grid, seed, channels=grid.d, kmax=cfg["datum.kmax"], solenoidal=True)
        lhs1 = smallness_lhs(u, params, variant=1)
        lhs6 = smallness_lhs(u, params, variant=6)
        lp = triebel_norm_littlewood_paley(u, order, params.q_tilde)
        rows.append((seed, lhs1.value, lhs6.value, lp, lhs6.value / lhs1.value, lp / lhs6.value))
    heat_ratio = [r[4] for r in rows]
    lp_ratio = [r[5] for r in rows]
    out.table("equivalence.csv", ("seed", "lhs_eq1", "lhs_eq6", "triebel_lp", "ratio_eq6_eq1",
                                  "ratio_lp_heat"), rows)
    out.figure("equivalence.png", plotting.equivalence, [r[0] for r in rows], lp_ratio,
               "Littlewood-Paley / heat")
    return {
        "params": params.describe(),
        "ratio_eq6_eq1": {"min": min(heat_ratio), "max": max(heat_ratio)},
        "ratio_lp_heat": {"min": min(lp_ratio), "max": max(lp_ratio),
                          "spread": max(lp_ratio) / min(lp_ratio)},
        "resolution": grid.describe(),
    }


SCENARIOS = {
    "kernel-decay": (scenario_kernel_decay, "sample the Oseen kernel and tabulate its decay ratios"),
    "bilinear-scaling": (scenario_bilinear_scaling,
                         "fit the horizon scaling of the bilinear estimate"),
    "threshold-scan": (scenario_threshold_scan,
                       "Picard convergence over an amplitude (and optional horizon) ladder"),
    "picard-taylor-green": (scenario_picard_taylor_green,
                            "solve by Picard iteration and compare with the RK4 reference"),
    "norm-equivalence": (scenario_norm_equivalence,
                         "compare heat and Littlewood-Paley Triebel norms over seeded data"),
}


def run_scenario(cfg: dict, threads: int | None = None) -> dict:
    root = Path(os.environ.get("MILDNS_OUT") or cfg["output.dir"])
    root.mkdir(parents=True, exist_ok=True)
    if threads:
        set_workers(threads)
    out = Output(root, cfg["output.figures"])
    fn, _ = SCENARIOS[cfg["scenario"]]
    result = fn(cfg, out)
    payload = {"scenario": cfg["scenario"], "config": cfg, "threads": threads or 1,
               "result": result}
    out.report(payload)
    return payload


def list_scenarios() -> str:
    return "\n".join(f"{name:22s}{desc}" for name, (_, desc) in SCENARIOS.items())


def check_snapshot(path: str) -> str:
    u = read_snapshot(path)
    g = u.grid
    lines = [f"format: MNSF1 ok (d={g.d}, m={u.channels}, n={g.n}, L={g.L!r})"]
    if u.channels == g.d:
        div = spectral_divergence(u)
        status = "yes" if div <= 1e-12 else "no"
        lines.append(f"divergence-free: {status} (relative spectral divergence {div:.3e})")
    else:
        lines.append("divergence-free: n/a (not a vector field)")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mildns", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario from a TOML config")
    run.add_argument("config", type=Path)
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a dotted config key (repeatable)")
    run.add_argument("--threads", type=int, default=None, help="cap FFT worker threads")
    sub.add_parser("list", help="list scenarios")
    check = sub.add_parser("check", help="validate a snapshot file")
    check.add_argument("snapshot")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print(list_scenarios())
        return EXIT_OK
    if args.command == "check":
        try:
            print(check_snapshot(args.snapshot))
        except (OSError, SnapshotError) as exc:
            print(f"mildns: {exc}", file=sys.stderr)
            return EXIT_IO
        return EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("mildns: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.overrides)
        payload = run_scenario(cfg, args.threads)
    except ConfigError as exc:
        print(f"mildns: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, SnapshotError) as exc:
        print(f"mildns: {exc}", file=sys.stderr)
        return EXIT_IO
    result = payload["result"]
    if result.get("diverged"):
        log.warning("iteration diverged (recorded in report.json)")
    print(f"{cfg['scenario']}: report written to "
          f"{os.environ.get('MILDNS_OUT') or cfg['output.dir']}/report.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
