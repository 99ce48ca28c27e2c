"""Experiment harness: read a YAML config, run placement schemes over an M grid, emit CSV."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import yaml

from .errors import CodedCacheError, ConfigError, NeedTwoSchemes
from .gp import SolverConfig, Target, best_of_starts, successive_gp
from .model import FileCatalog, UserPopulation, build_catalog, zipf_popularity
from .rate import Scheme, average_rate
from .simulate import empirical_rate
from .strategies import pf_baseline, pfsa_search, sf_baseline

log = logging.getLogger("codedcache")

SCHEMES = ("gp_dmccs", "gp_lb", "gp_dccs", "pfsa", "pf", "sf")
UNITS = {"bit": 1.0, "kbit": 1000.0}
SANDWICH_TOL = 1e-6
LOWER_BOUND = "gp_lb"


@dataclass(frozen=True)
class SimulationSpec:
    F_scale: float = 1.0
    trials: int = 1000
    seeds: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything in bits; kbit inputs are converted when the file is read."""

    catalog: FileCatalog
    users: UserPopulation
    M: tuple[float, ...]
    schemes: tuple[str, ...]
    solver: SolverConfig = SolverConfig()
    simulation: SimulationSpec | None = None
    seed: int = 0
    units: str = "bit"


def _get(node: Mapping, key: str, path: str, default: Any = ..., kind=None):
    if not isinstance(node, Mapping):
        raise ConfigError(path, "expected a mapping")
    if key not in node:
        if default is ...:
            raise ConfigError(f"{path}.{key}".lstrip("."), "missing")
        return default
    value = node[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}".lstrip("."), f"expected {kind.__name__ if isinstance(kind, type) else kind}")
    return value


def _numbers(value, path: str) -> list[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ConfigError(path, "expected a number or a list of numbers")
    return [float(v) for v in value]


def _catalog(node, scale: float) -> FileCatalog:
    if "zipf" in node:
        z = _get(node, "zipf", "catalog", kind=dict)
        N = _get(z, "N", "catalog.zipf", kind=int)
        theta = float(_get(z, "theta", "catalog.zipf", kind=(int, float)))
        p = zipf_popularity(N, theta)
        sizes = _numbers(_get(z, "sizes", "catalog.zipf", default=_get(node, "sizes", "catalog", default=1)),
                         "catalog.zipf.sizes")
    else:
        p = _numbers(_get(node, "popularity", "catalog"), "catalog.popularity")
        sizes = _numbers(_get(node, "sizes", "catalog"), "catalog.sizes")
        N = len(p)
    if len(sizes) == 1:
        sizes = sizes * N
    if len(sizes) != N:
        raise ConfigError("catalog.sizes", f"{len(sizes)} sizes for {N} files")
    try:
        catalog, _ = build_catalog(p, [f * scale for f in sizes])
    except CodedCacheError as exc:
        raise ConfigError("catalog", str(exc)) from exc
    return catalog


def parse_config(raw: Mapping) -> ExperimentConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("", "config must be a mapping")
    units = _get(raw, "units", "", default="bit", kind=str)
    if units not in UNITS:
        raise ConfigError("units", f"expected one of {sorted(UNITS)}")
    scale = UNITS[units]
    catalog = _catalog(_get(raw, "catalog", "", kind=dict), scale)

    unode = _get(raw, "users", "", kind=dict)
    K = _get(unode, "K", "users", kind=int)
    pa = _numbers(_get(unode, "p_a", "users", default=1.0), "users.p_a")
    if len(pa) == 1:
        pa = pa * K
    if len(pa) != K:
        raise ConfigError("users.p_a", f"{len(pa)} probabilities for K={K}")
    try:
        users = UserPopulation(tuple(pa))
    except CodedCacheError as exc:
        raise ConfigError("users.p_a", str(exc)) from exc

    grid = _get(raw, "M", "", default=[])
    M = [] if grid == [] else _numbers(grid, "M")
    if any(m < 0 for m in M):
        raise ConfigError("M", "cache sizes must be nonnegative")

    schemes = _get(raw, "schemes", "", kind=list)
    if not schemes:
        raise ConfigError("schemes", "need at least one scheme")
    for i, s in enumerate(schemes):
        if s not in SCHEMES:
            raise ConfigError(f"schemes[{i}]", f"unknown scheme {s!r}; expected one of {', '.join(SCHEMES)}")

    snode = _get(raw, "solver", "", default={}, kind=dict)
    unknown = set(snode) - {"outer_tol", "inner_tol", "max_outer", "max_inner"}
    if unknown:
        raise ConfigError(f"solver.{sorted(unknown)[0]}", "unknown solver option")
    try:
        solver = SolverConfig(**snode)
    except (TypeError, ValueError) as exc:
        raise ConfigError("solver", str(exc)) from exc

    simulation = None
    if "simulation" in raw:
        sim = _get(raw, "simulation", "", kind=dict)
        seeds = sim.get("seeds", [_get(raw, "seed", "", default=0, kind=int)])
        seeds = [seeds] if isinstance(seeds, int) else seeds
        simulation = SimulationSpec(float(sim.get("F_scale", 1.0)), int(sim.get("trials", 1000)), tuple(seeds))
        if simulation.trials < 1 or simulation.F_scale <= 0:
            raise ConfigError("simulation", "trials must be >= 1 and F_scale > 0")
    seed = _get(raw, "seed", "", default=0, kind=int)
    return ExperimentConfig(catalog, users, tuple(m * scale for m in M), tuple(schemes), solver, simulation, seed,
                            units)


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(yaml.safe_load(fh) or {})


@dataclass(frozen=True)
class ResultRow:
    M: float
    scheme: str
    avg_rate: float
    n1: int | None
    iters: int
    seconds: float
    q: tuple[float, ...] = field(default_factory=tuple)


def run_scheme(scheme: str, M: float, config: ExperimentConfig) -> ResultRow:
    cat, users = config.catalog, config.users
    t0 = time.perf_counter()
    n1 = None
    try:
        if scheme in ("pfsa", "pf", "sf"):
            if scheme == "pfsa":
                n1, placement, rate = pfsa_search(cat, users, M)
            else:
                n1, placement = (pf_baseline if scheme == "pf" else sf_baseline)(cat, M, users)
                rate = average_rate(Scheme.DMCCS, placement.fractions, cat, users).average_rate
            q, iters = placement.fractions, cat.n_files
        else:
            if scheme == "gp_lb":
                # the bound's GP also starts from the PF-SA placement, whose
                # D-MCCS rate it must not exceed
                _, seed_placement, _ = pfsa_search(cat, users, M)
                result = best_of_starts(Target.P3_LOWER_BOUND, cat, users, M,
                                        [None, seed_placement.fractions], config.solver)
            else:
                target = Target.P0_DMCCS if scheme == "gp_dmccs" else Target.P0_DCCS
                result = successive_gp(target, cat, users, M, config.solver)
            q, rate, iters = result.q, result.rate, result.iterations
    except CodedCacheError as exc:
        raise CodedCacheError(f"{scheme} at M={M!r}: {exc}") from exc
    return ResultRow(M, scheme, rate, n1, iters, time.perf_counter() - t0, tuple(q))


def _run_job(args):
    scheme, M, config = args
    return run_scheme(scheme, M, config)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """One row per (M, scheme), sorted by M and then by the config's scheme order."""
    jobs = [(s, M, config) for M in config.M for s in config.schemes]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    order = {s: i for i, s in enumerate(config.schemes)}
    return sorted(rows, key=lambda r: (r.M, order[r.scheme]))


def emit_csv(rows: Sequence[ResultRow]) -> str:
    N = max((len(r.q) for r in rows), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["M", "scheme", "avg_rate", "n1", "iters", "seconds"] + [f"q{n + 1}" for n in range(N)])
    for r in rows:
        w.writerow([repr(r.M), r.scheme, repr(r.avg_rate), "" if r.n1 is None else r.n1, r.iters, repr(r.seconds)]
                   + [repr(v) for v in r.q])
    return buf.getvalue()


def parse_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if header[:6] != ["M", "scheme", "avg_rate", "n1", "iters", "seconds"]:
        raise ValueError("not a result table: unexpected header")
    rows = []
    for rec in reader:
        if not rec:
            continue
        rows.append(ResultRow(float(rec[0]), rec[1], float(rec[2]), int(rec[3]) if rec[3] else None, int(rec[4]),
                              float(rec[5]), tuple(float(v) for v in rec[6:] if v != "")))
    return rows


@dataclass(frozen=True)
class Gap:
    M: float
    scheme: str
    absolute: float
    relative: float
    below_bound: bool


@dataclass(frozen=True)
class CompareSummary:
    reference: str
    gaps: tuple[Gap, ...]

    @property
    def violations(self) -> tuple[Gap, ...]:
        return tuple(g for g in self.gaps if g.below_bound)

    def text(self) -> str:
        lines = [f"reference: {self.reference}", "M,scheme,gap,relative_gap,below_bound"]
        lines += [f"{g.M!r},{g.scheme},{g.absolute!r},{g.relative!r},{int(g.below_bound)}" for g in self.gaps]
        return "\n".join(lines) + "\n"


def compare_report(rows: Sequence[ResultRow]) -> CompareSummary:
    """Gaps of every scheme to the lower bound (or, without one, to the first scheme listed)."""
    schemes = list(dict.fromkeys(r.scheme for r in rows))
    if len(schemes) < 2:
        raise NeedTwoSchemes(f"need at least two schemes to compare, got {schemes}")
    reference = LOWER_BOUND if LOWER_BOUND in schemes else schemes[0]
    ref = {r.M: r.avg_rate for r in rows if r.scheme == reference}
    gaps = []
    for r in rows:
        if r.scheme == reference or r.M not in ref:
            continue
        base = ref[r.M]
        diff = r.avg_rate - base
        rel = diff / base if base > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
        below = reference == LOWER_BOUND and diff < -SANDWICH_TOL * abs(base)
        gaps.append(Gap(r.M, r.scheme, diff, rel, below))
    return CompareSummary(reference, tuple(gaps))


def simulate_experiment(config: ExperimentConfig, rows: Sequence[ResultRow]) -> str:
    """Empirical D-MCCS rate of each row's placement next to its analytic value.

    Files and cache are scaled by F_scale so subfiles are large; rates are
    reported back in unscaled bits.
    """
    spec = config.simulation or SimulationSpec()
    scaled, _ = build_catalog(config.catalog.popularity, [f * spec.F_scale for f in config.catalog.sizes])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["M", "scheme", "seed", "analytic", "empirical", "stderr", "z"])
    for r in rows:
        analytic = average_rate(Scheme.DMCCS, r.q, config.catalog, config.users).average_rate
        for seed in spec.seeds:
            mean, se = empirical_rate(r.q, scaled, config.users, spec.trials, seed=seed)
            mean, se = mean / spec.F_scale, se / spec.F_scale
            z = (mean - analytic) / se if se > 0 else 0.0
            w.writerow([repr(r.M), r.scheme, seed, repr(analytic), repr(mean), repr(se), repr(z)])
    return buf.getvalue()


def _write(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="codedcache", description=__doc__)
    parser.add_argument("--out", help="write output here instead of stdout")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for the (M, scheme) grid")
    parser.add_argument("-v", "--verbose", action="store_true", help="per-round solver progress on stderr")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", help="optimize/evaluate every scheme over the M grid").add_argument("config")
    sub.add_parser("compare", help="gaps to the lower bound from a result CSV").add_argument("csv")
    sub.add_parser("simulate", help="Monte Carlo check of each scheme's placement").add_argument("config")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    try:
        if args.verb == "compare":
            with open(args.csv, encoding="utf-8") as fh:
                summary = compare_report(parse_csv(fh.read()))
            _write(summary.text(), args.out)
            for g in summary.violations:
                print(f"warning: {g.scheme} is below the lower bound at M={g.M!r}", file=sys.stderr)
            return 0
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
            if config.simulation is not None:
                config = replace(config, simulation=replace(config.simulation, seeds=(args.seed,)))
        rows = run_experiment(config, args.threads)
        _write(emit_csv(rows) if args.verb == "run" else simulate_experiment(config, rows), args.out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (CodedCacheError, OSError, ValueError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
