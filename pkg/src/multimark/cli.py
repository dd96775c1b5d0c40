"""Command-line interface: ``multimark {fit,simulate,score,diagnose}``."""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import re
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .baselines import Side, collapse_one_sided, combine_chain_sets, fit_one_sided, fit_two_sided
from .diagnostics import score_models, summarize
from .sampler import KERNELS, SamplerConfig
from .simulator import load_scenario, read_key_values, simulate_dataset, truth_values
from .study import replicate_seeds

log = logging.getLogger("multimark")

FIT_MODELS = ("two-sided", "one-sided-left", "one-sided-right", "combined")


def _flag(raw: str) -> bool:
    if raw.strip().lower() in ("1", "true", "yes", "on"):
        return True
    if raw.strip().lower() in ("0", "false", "no", "off"):
        return False
    raise CLIError(f"expected a boolean, got {raw!r}")


# config-file key -> (SamplerConfig field, type)
FIT_KEYS = {
    "chains": ("n_chains", int), "burnin": ("burn_in", int), "iters": ("n_iterations", int),
    "thin": ("thin", int), "seed": ("seed", int), "kernel": ("kernel", str),
    "nullspace_d": ("nullspace_d", int), "step_phi": ("step_phi", float), "step_p": ("step_p", float),
    "step_gamma": ("step_gamma", float), "step_sigma": ("step_sigma", float),
    "adapt_window": ("adapt_window", int), "scale_moves": ("scale_moves", _flag),
}


class CLIError(Exception):
    pass


def _sampler_config(args) -> tuple[SamplerConfig, int | None]:
    values, T = {}, None
    if args.config:
        cfg_file = read_key_values(args.config)
        for key, raw in cfg_file.items():
            if key == "T":
                T = int(raw)
            elif key in FIT_KEYS:
                name, typ = FIT_KEYS[key]
                values[name] = typ(raw)
            else:
                raise CLIError(f"unknown config key {key!r} in {args.config}")
    for key, (name, _) in FIT_KEYS.items():
        v = getattr(args, key, None)
        if v is not None:
            values[name] = v
    if args.debug:
        values["debug"] = True
    return SamplerConfig(**values), T


def _fit(data, model: str, cfg: SamplerConfig, workers: int) -> dict[str, list]:
    """Chains per output label for one model choice."""
    if model == "two-sided":
        return {"two-sided": fit_two_sided(data, cfg, workers)}
    if model in ("one-sided-left", "one-sided-right"):
        side = Side.LEFT if model.endswith("left") else Side.RIGHT
        return {model: fit_one_sided(collapse_one_sided(data, side), cfg, workers)}
    seqs = np.random.SeedSequence(cfg.seed).spawn(2)
    seeds = [int(s.generate_state(1, np.uint64)[0]) for s in seqs]
    left = fit_one_sided(collapse_one_sided(data, Side.LEFT), replace(cfg, seed=seeds[0]), workers)
    right = fit_one_sided(collapse_one_sided(data, Side.RIGHT), replace(cfg, seed=seeds[1]), workers)
    return {"one-sided-left": left, "one-sided-right": right, "combined": combine_chain_sets(left, right)}


def cmd_fit(args) -> int:
    started = _dt.datetime.now()
    if args.model not in FIT_MODELS:
        raise CLIError(f"unknown model {args.model!r}; choose from {', '.join(FIT_MODELS)}")
    cfg, T = _sampler_config(args)
    data = io.read_histories(args.data)
    if T is not None and T != data.T:
        raise CLIError(f"config expects T={T} occasions but {args.data} has T={data.T}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for label, chains in _fit(data, args.model, cfg, args.workers).items():
        for i, ch in enumerate(chains):
            p = out / f"chain_{label}_{i}.csv"
            io.write_chain_csv(p, ch)
            written.append(p)
        p = out / f"summary_{label}.csv"
        io.write_summary_csv(p, summarize(chains))
        written.append(p)
        log.info("%s: %d chains x %d draws", label, len(chains), len(chains[0]))
    io.write_manifest(out / "manifest.json", "fit", {"argv": sys.argv[1:], "model": args.model, **asdict(cfg)},
                      cfg.seed, [args.data] + ([args.config] if args.config else []), started, written)
    return 0


def cmd_simulate(args) -> int:
    started = _dt.datetime.now()
    try:
        scenario = load_scenario(args.scenario)
    except (ValueError, OSError) as exc:
        raise CLIError(f"invalid scenario {args.scenario!r}: {exc}") from None
    seed = scenario.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for r, seq in enumerate(replicate_seeds(seed, args.replicates)):
        data_seq = seq.spawn(4)[0]
        sim = simulate_dataset(scenario, np.random.default_rng(data_seq))
        hp = out / f"rep_{r:03d}.hist"
        tp = out / f"rep_{r:03d}_truth.csv"
        io.write_histories(hp, sim.observed, f"scenario {scenario.name} replicate {r} seed {seed}")
        io.write_truth_csv(tp, truth_values(sim.theta, sim.true_N))
        written += [hp, tp]
    io.write_manifest(out / "manifest.json", "simulate",
                      {"argv": sys.argv[1:], "scenario": scenario.to_config(), "replicates": args.replicates},
                      seed, [args.scenario] if Path(args.scenario).exists() else [], started, written)
    return 0


_REP = re.compile(r"rep_(\d+)_truth\.csv$")


def cmd_score(args) -> int:
    truth = {m.group(1): io.read_truth_csv(p) for p in sorted(Path(args.sim_dir).glob("rep_*_truth.csv"))
             if (m := _REP.search(p.name))}
    if not truth:
        raise CLIError(f"no truth files in {args.sim_dir}")
    models = [m.strip() for m in args.models.split(",")]
    if args.reference not in models:
        models.append(args.reference)
    fit_dir = Path(args.fit_dir)
    fitted = {d.name[4:] for d in fit_dir.glob("rep_*") if d.is_dir()}
    if fitted != set(truth):
        missing = sorted(set(truth) ^ fitted)
        raise CLIError(f"replicate mismatch between truth and fits: {', '.join(missing)}")
    results = {m: [] for m in models}
    for rep in sorted(truth):
        for m in models:
            p = fit_dir / f"rep_{rep}" / f"summary_{m}.csv"
            if not p.exists():
                raise CLIError(f"missing summary {p}")
            results[m].append((truth[rep], io.read_summary_csv(p)))
    scores = score_models(results, args.reference)
    io.write_study_csv(args.out, scores)
    return 0


def cmd_diagnose(args) -> int:
    chains = [io.read_chain_csv(p) for p in args.chains]
    if any(c.columns != chains[0].columns for c in chains):
        raise CLIError("chain files have different columns")
    if len(chains) < 2:
        print("warning: a single chain gives MC error only; PSRF needs two or more chains", file=sys.stderr)
    summary = summarize(chains)
    if args.out:
        io.write_summary_csv(args.out, summary)
    else:
        print(f"{'parameter':<16}{'mean':>12}{'psrf':>9}{'mcse':>12}{'mcse/sd':>9}")
        for s in summary:
            ratio = s.mcse / s.sd if s.sd > 0 else 0.0
            flag = " (degenerate)" if s.psrf_degenerate else ""
            print(f"{s.name:<16}{s.mean:>12.4g}{s.psrf:>9.4f}{s.mcse:>12.4g}{ratio:>9.3f}{flag}")
    bad = [s.name for s in summary if np.isfinite(s.psrf) and s.psrf > args.psrf_max]
    if bad:
        print(f"PSRF above {args.psrf_max}: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multimark", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a history file")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default="two-sided")
    p.add_argument("--config", help="flat key = value sampler config")
    p.add_argument("--chains", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--kernel", choices=KERNELS)
    p.add_argument("--nullspace-d", dest="nullspace_d", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--debug", action="store_true", help="check constraints and cached density every sweep")
    p.add_argument("--out", default="fit_out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate replicate datasets with known truth")
    p.add_argument("--scenario", required=True, help="sim1, sim2 or a scenario config file")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="sim_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score", help="score fitted replicates against truth")
    p.add_argument("--sim-dir", required=True)
    p.add_argument("--fit-dir", required=True, help="directory holding rep_XXX/summary_<model>.csv")
    p.add_argument("--models", default="one-sided-left,two-sided,combined")
    p.add_argument("--reference", default="one-sided-left")
    p.add_argument("--out", default="study_score.csv")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("diagnose", help="convergence report for chain CSV files")
    p.add_argument("chains", nargs="+")
    p.add_argument("--psrf-max", type=float, default=1.02)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CLIError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
