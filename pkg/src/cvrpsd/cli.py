"""Command-line entry point: ``cvrpsd <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 resource error.
Options may also come from ``--config FILE`` (TOML, keys named like the
long flags with dashes or underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import tomli

from cvrpsd.bench import (bench_budget, bench_scaling, budget_summary, resolve_workers, scaling_ratios,
                          trace_to_rows, unique_workers, version_string)
from cvrpsd.instance import (InstanceError, TourError, identity_tour, load_instance, make_tour,
                             random_instance, read_tour)
from cvrpsd.saa import SaaError, bias_experiment, estimate
from cvrpsd.scenarios import (ScenarioError, load_scenarios, parse_model, sample_scenarios,
                              save_scenarios)
from cvrpsd.search import SearchConfig, solve
from cvrpsd.split import (DEFAULT_TILE, STRICT, ResourceError, SplitMode, brute_force_split,
                          split_batch)

log = logging.getLogger("cvrpsd")

EXIT_USAGE, EXIT_DATA, EXIT_RESOURCE = 2, 3, 4


# --- argument helpers ----------------------------------------------------------

def positive_int(text: str) -> int:
    try:
        value = int(float(text)) if "e" in text.lower() else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def int_list(text: str) -> list[int]:
    return [positive_int(t) for t in text.split(",") if t.strip()]


def workers_list(text: str) -> list:
    return [t.strip() if t.strip() == "max" else positive_int(t) for t in text.split(",") if t.strip()]


def parse_mode(text: str) -> SplitMode:
    if text == "strict":
        return STRICT
    kind, _, lam = text.partition(":")
    if kind != "penalized" or not lam:
        raise argparse.ArgumentTypeError("mode must be 'strict' or 'penalized:LAMBDA'")
    return SplitMode.penalty(float(lam))


def open_instance(spec: str, rounding: str):
    """A TSPLIB path or ``synthetic:n=N[,seed=S][,capacity=Q]``."""
    if spec.startswith("synthetic"):
        _, _, args = spec.partition(":")
        kw = dict(kv.split("=", 1) for kv in args.split(",") if kv)
        try:
            n = int(kw.pop("n"))
            seed = int(kw.pop("seed", 0))
            capacity = int(kw.pop("capacity")) if "capacity" in kw else None
        except (KeyError, ValueError):
            raise InstanceError(f"bad synthetic instance spec {spec!r}") from None
        if kw:
            raise InstanceError(f"unknown synthetic instance keys {sorted(kw)}")
        return random_instance(n, seed=seed, capacity=capacity, rounding=rounding)
    return load_instance(spec, rounding=rounding)


def open_tour(spec: str, instance):
    if spec == "identity":
        return identity_tour(instance)
    if spec.startswith("random"):
        seed = int(spec.partition(":")[2] or 0)
        return make_tour(instance, np.random.default_rng(seed).permutation(np.arange(1, instance.n + 1)))
    return make_tour(instance, read_tour(spec))


def open_scenarios(args, instance, seed=None):
    if getattr(args, "scenarios", None):
        sc = load_scenarios(args.scenarios)
        if sc.n != instance.n:
            raise ScenarioError(f"scenario file has n={sc.n}, instance has n={instance.n}")
        return sc
    model = parse_model(args.model, instance.demands, args.seed if seed is None else seed)
    return sample_scenarios(model, args.m)


def metadata(args, command: str, **extra) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    return {"version": version_string(), "command": command,
            "config": json.loads(json.dumps(config, default=str)), **extra}


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_default)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def write_csv(path, rows: list[dict], header: dict) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True, default=_default)}\n")
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def search_config(args, **override) -> SearchConfig:
    budget = args.budget
    if budget is None and args.generations is None:
        budget = SearchConfig.time_budget
    kw = dict(seed=args.seed, workers=resolve_workers(args.workers), tile_size=args.tile_size,
              time_budget=budget, generations=args.generations, lam=args.lam)
    for name in ("population_size", "offspring", "granular", "screen_size"):
        value = getattr(args, name, None)
        if value is not None:
            kw["offspring_per_generation" if name == "offspring" else name] = value
    kw.update(override)
    return SearchConfig(**kw)


# --- commands -------------------------------------------------------------------

def cmd_gen_scenarios(args) -> int:
    if args.instance:
        nominal = open_instance(args.instance, args.rounding).demands
    elif args.n:
        nominal = np.random.default_rng(args.seed).integers(1, 31, size=args.n)
    else:
        raise argparse.ArgumentTypeError("give --instance or --n")
    model = parse_model(args.model, nominal, args.seed)
    sc = sample_scenarios(model, args.m)
    save_scenarios(sc, args.out)
    digest = file_digest(args.out)
    print(f"{args.out}  m={sc.m} n={sc.n} seed={args.seed}  sha256={digest}")
    return 0


def cmd_eval(args) -> int:
    instance = open_instance(args.instance, args.rounding)
    tour = open_tour(args.tour, instance)
    sc = open_scenarios(args, instance)
    workers = resolve_workers(args.workers)
    t0 = time.perf_counter()
    est = estimate(instance, tour, sc, mode=args.mode, workers=workers, tile_size=args.tile_size)
    wall = (time.perf_counter() - t0) * 1e3
    est.provenance.pop("wall_ms", None)
    payload = {
        "meta": metadata(args, "eval", seeds={"scenarios": sc.seed}, workers=workers,
                         tile_size=args.tile_size),
        "instance": {"name": instance.name, "n": instance.n, "capacity": instance.capacity},
        "tour": tour.order.tolist(),
        "estimate": est.to_dict(),
        "timing": {"wall_ms": wall, "scenarios_per_sec": sc.m / max(wall / 1e3, 1e-12)},
    }
    if args.oracle_check:
        payload["oracle"] = oracle_check(instance, tour, sc, args.mode, limit=args.oracle_limit)
        print(f"oracle: {payload['oracle']['status']}", file=sys.stderr)
    write_json(args.out, payload)
    if args.oracle_check and payload["oracle"]["status"] != "PASS":
        return EXIT_DATA
    return 0


def oracle_check(instance, tour, sc, mode, limit: int = 200) -> dict:
    if instance.n > 12:
        return {"status": "SKIPPED", "reason": f"n={instance.n} > 12"}
    k = min(limit, sc.m)
    batch = split_batch(instance, tour, sc.demands[:k], mode=mode)
    tour_rows = sc.demands[:k][:, tour.order - 1]
    bad = 0
    for w in range(k):
        ref = brute_force_split(instance, tour, tour_rows[w], mode=mode).cost
        if batch.cost[w] != ref:
            bad += 1
    return {"status": "PASS" if bad == 0 else "FAIL", "checked": k, "mismatches": bad}


def cmd_solve(args) -> int:
    instance = open_instance(args.instance, args.rounding)
    train = open_scenarios(args, instance)
    config = search_config(args)
    best, trace = solve(instance, train, config)
    strict = estimate(instance, best.tour, train, mode=STRICT, workers=config.workers)
    strict_ms = strict.provenance.pop("wall_ms", None)
    meta = metadata(args, "solve", seeds={"search": config.seed, "scenarios": train.seed},
                    workers=config.workers, tile_size=config.tile_size)
    if args.trace:
        trace.write_csv(args.trace, header=meta)
    write_json(args.out, {
        "meta": meta, "tour": best.tour.order.tolist(), "fitness": best.fitness, "eval_m": best.eval_m,
        "lambda": config.resolve_lambda(instance), "strict": strict.to_dict(),
        "search": {"generations": trace.generations, "evaluations": trace.evaluations},
        "timing": {"elapsed_ms": trace.elapsed_ms, "strict_eval_ms": strict_ms},
    })
    return 0


def cmd_bench_scaling(args) -> int:
    instance = open_instance(args.instance, args.rounding)
    model = parse_model(args.model, instance.demands, args.seed)
    raw, summary = bench_scaling(instance, model, args.m_grid, args.workers_list, args.reps, args.tile_size)
    meta = metadata(args, "bench-scaling", seeds={"scenarios": args.seed}, tile_size=args.tile_size,
                    workers=unique_workers(args.workers_list))
    write_csv(args.out, summary, meta)
    if args.raw:
        write_csv(args.raw, raw, meta)
    for lo, hi, ratio in scaling_ratios(summary, 1):
        print(f"workers=1  m {lo} -> {hi}: wall ratio {ratio:.2f}")
    return 0


def cmd_experiment_trainsize(args) -> int:
    instance = open_instance(args.instance, args.rounding)
    model = parse_model(args.model, instance.demands, args.seed)
    config = search_config(args)
    report = bias_experiment(instance, model, args.m_list, args.replicates, args.test_m, config,
                             base_seed=args.seed, workers=resolve_workers(args.workers),
                             progress=lambda r: log.info("m=%s rep=%s oos=%.3f", r["m"], r["replicate"],
                                                         r["oos_mean"]))
    meta = metadata(args, "experiment-trainsize", seeds={"base": args.seed, "test": args.seed,
                    "train": sorted({r["train_seed"] for r in report.rows})},
                    workers=resolve_workers(args.workers), tile_size=args.tile_size)
    prefix = Path(args.out)
    report.write_csv(prefix.with_suffix(".csv"), header=meta)
    report.write_json(prefix.with_suffix(".json"), header={"meta": meta})
    for agg in report.aggregates:
        print(f"m={agg['m']:>7}  oos={agg['oos_mean']:.3f} +- {agg['oos_se']:.3f}  "
              f"in-sample={agg['in_sample_mean']:.3f}")
    return 0


def cmd_bench_budget(args) -> int:
    instance = open_instance(args.instance, args.rounding)
    model = parse_model(args.model, instance.demands, args.seed)
    config = search_config(args)
    traces = bench_budget(instance, model, args.m, args.budget, args.seeds, args.workers_list, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (w, seed), trace in sorted(traces.items()):
        meta = metadata(args, "bench-budget", seeds={"search": seed, "scenarios": args.seed}, workers=w,
                        tile_size=args.tile_size)
        write_csv(out / f"trace_w{w}_s{seed}.csv", trace_to_rows(trace), meta)
    summary = budget_summary(traces, args.budget)
    write_csv(out / "summary.csv", summary, metadata(args, "bench-budget", seeds={"search": args.seeds},
                                                     tile_size=args.tile_size))
    print(f"wrote {len(traces)} traces to {out}")
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvrpsd", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="TOML file with option defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenarios=True):
        sp.add_argument("--instance", default="synthetic:n=20,seed=0",
                        help="TSPLIB file or synthetic:n=N,seed=S[,capacity=Q]")
        sp.add_argument("--rounding", choices=("exact-float", "nearest-integer"), default="exact-float")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", default="1", help="thread count or 'max'")
        sp.add_argument("--tile-size", type=positive_int, default=DEFAULT_TILE)
        if scenarios:
            sp.add_argument("--scenarios", help="scenario file (overrides --model/--m)")
            sp.add_argument("--model", default="uniform:0.5,1.5")
            sp.add_argument("--m", type=positive_int, default=1000)

    def search_opts(sp):
        sp.add_argument("--budget", type=float, default=None, help="wall-clock seconds")
        sp.add_argument("--generations", type=positive_int, default=None)
        sp.add_argument("--lam", type=float, default=None, help="overload penalty per demand unit")
        sp.add_argument("--population-size", type=positive_int)
        sp.add_argument("--offspring", type=positive_int)
        sp.add_argument("--granular", type=positive_int)
        sp.add_argument("--screen-size", type=positive_int)

    sp = sub.add_parser("gen-scenarios", help="sample and save a scenario file")
    common(sp)
    sp.set_defaults(instance=None)
    sp.add_argument("--n", type=positive_int, help="customer count when no instance is given")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_scenarios)

    sp = sub.add_parser("eval", help="SAA estimate of one giant tour")
    common(sp)
    sp.add_argument("--tour", default="identity", help="file, 'identity' or 'random:SEED'")
    sp.add_argument("--mode", type=parse_mode, default=STRICT)
    sp.add_argument("--oracle-check", action="store_true", help="compare with brute force (n <= 12)")
    sp.add_argument("--oracle-limit", type=positive_int, default=200)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("solve", help="search a giant tour on training scenarios")
    common(sp)
    search_opts(sp)
    sp.add_argument("--trace", help="anytime trace CSV")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("bench-scaling", help="split_batch wall time versus scenario count")
    common(sp, scenarios=False)
    sp.set_defaults(instance="synthetic:n=128,seed=0")
    sp.add_argument("--model", default="uniform:0.5,1.5")
    sp.add_argument("--m-grid", type=int_list, default=[10_000, 100_000, 1_000_000])
    sp.add_argument("--workers-list", type=workers_list, default=[1, "max"])
    sp.add_argument("--reps", type=positive_int, default=5)
    sp.add_argument("--raw", help="per-repetition CSV")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench_scaling)

    sp = sub.add_parser("experiment-trainsize", help="out-of-sample cost versus training size")
    common(sp, scenarios=False)
    search_opts(sp)
    sp.add_argument("--model", default="uniform:0.5,1.5")
    sp.add_argument("--m-list", type=int_list, default=[1, 100, 1000])
    sp.add_argument("--replicates", type=positive_int, default=10)
    sp.add_argument("--test-m", type=positive_int, default=100_000)
    sp.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv and PREFIX.json")
    sp.set_defaults(func=cmd_experiment_trainsize)

    sp = sub.add_parser("bench-budget", help="anytime traces under equal wall-clock budgets")
    common(sp, scenarios=False)
    search_opts(sp)
    sp.set_defaults(budget=10.0)
    sp.add_argument("--model", default="uniform:0.5,1.5")
    sp.add_argument("--m", type=positive_int, default=10_000)
    sp.add_argument("--seeds", type=int_list, default=[1, 2, 3, 4, 5])
    sp.add_argument("--workers-list", type=workers_list, default=[1, "max"])
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_bench_budget)
    return p


def _apply_config_file(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config, "rb") as fh:
        data = tomli.load(fh)
    command = next((a for a in rest if not a.startswith("-")), None)
    section = dict(data)
    if command and isinstance(data.get(command), dict):
        section.update(data[command])
    defaults = {k.replace("-", "_"): v for k, v in section.items() if not isinstance(v, dict)}
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in subparsers.choices.items():
        if name != command:
            continue
        for action in sp._actions:
            if action.dest in defaults and action.type is not None and isinstance(defaults[action.dest], str):
                defaults[action.dest] = action.type(defaults[action.dest])
        sp.set_defaults(**{k: v for k, v in defaults.items()
                           if any(a.dest == k for a in sp._actions)})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
    except (OSError, tomli.TOMLDecodeError) as exc:
        print(f"cvrpsd: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        print(f"cvrpsd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ResourceError, MemoryError) as exc:
        print(f"cvrpsd: resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (InstanceError, TourError, ScenarioError, SaaError, ValueError) as exc:
        print(f"cvrpsd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"cvrpsd: I/O error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
