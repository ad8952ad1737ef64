"""Command line interface.

Exit codes: 0 success (or feasible), 2 infeasible, 1 error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .diagnostics import FiniteJoint, evaluate, grid_search_counterexamples, impossibility_check, write_calibration_csv
from .geometry import DecisionPolicy, achievable_set, feasibility, roc_from_distribution, write_point_csv
from .ingest import DatasetSchema, EmptyDatasetError, SchemaError, SyntheticSpec, generate_synthetic, load_compas, load_csv, write_samples_csv
from .pipeline import PipelineError, choose_targets, postprocess_pipeline
from .rates import InfeasibleRegionError, PenaltySpec
from .scores import calibrate_bins

SEED_ENV = "CALIBFAIR_SEED"
EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

DEFAULTS = {
    "input": None,
    "compas": None,
    "synthetic": None,
    "score_column": "score",
    "outcome_column": "outcome",
    "group_column": "group",
    "weight_column": None,
    "positive_value": "1",
    "races": ["African-American", "Caucasian"],
    "n_bins": 50,
    "k": None,
    "cutoff": None,
    "epsilon": 0.0,
    "mode": "basic",
    "penalty": "equal-odds",
    "lambda_matrix": None,
    "gamma": None,
    "seed": None,
    "out": None,
    "support_aware": False,
}
DEFAULT_K = 10.0


class CliError(Exception):
    pass


def _add_input(p):
    g = p.add_argument_group("input")
    g.add_argument("--input", help="CSV with score, outcome and group columns")
    g.add_argument("--compas", help="COMPAS-format CSV (decile_score, race, two_year_recid)")
    g.add_argument("--synthetic", help="JSON synthetic-data spec")
    g.add_argument("--score-column", dest="score_column")
    g.add_argument("--outcome-column", dest="outcome_column")
    g.add_argument("--group-column", dest="group_column")
    g.add_argument("--weight-column", dest="weight_column")
    g.add_argument("--positive-value", dest="positive_value", help="outcome token counted as Y=1")
    g.add_argument("--races", nargs=2, metavar=("RACE_A", "RACE_B"))


def _add_policy(p):
    g = p.add_argument_group("policy")
    g.add_argument("--n-bins", dest="n_bins", type=int)
    g.add_argument("--k", type=float, help="false-positive cost (default 10)")
    g.add_argument("--cutoff", type=float, help="cutoff in (0, 1); overrides --k")
    g.add_argument("--epsilon", type=float)


def _add_mode(p):
    g = p.add_argument_group("optimisation")
    g.add_argument("--mode", choices=("basic", "flexible"))
    g.add_argument("--penalty", choices=("equal-odds", "equal-tpr", "none"))
    g.add_argument("--lambda", dest="lambda_matrix", type=float, nargs=4, metavar=("L11", "L12", "L21", "L22"))
    g.add_argument("--gamma", type=float)


def _add_common(p):
    p.add_argument("--config", help="JSON config; command-line flags take precedence")
    p.add_argument("--seed", type=int, help=f"random seed (default ${SEED_ENV} or 0)")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calibfair", description="Calibrated, equal-error-rate post-processing of risk scores.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("feascheck", help="decide feasibility of equal error rates with a calibrated score")
    _add_common(p), _add_input(p), _add_policy(p)
    p.add_argument("--support-aware", dest="support_aware", action="store_true", default=None,
                   help="use cutoffs snapped to attainable score values")

    p = sub.add_parser("optimize", help="choose target error rates")
    _add_common(p), _add_input(p), _add_policy(p), _add_mode(p)

    p = sub.add_parser("fit-apply", help="solve kernels and post-process the dataset")
    _add_common(p), _add_input(p), _add_policy(p), _add_mode(p)

    p = sub.add_parser("evaluate", help="metrics of a scored CSV")
    _add_common(p), _add_input(p), _add_policy(p)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("spec", help="JSON synthetic-data spec")
    p.add_argument("--count", type=int, help="override the sample count in the synthetic spec")

    p = sub.add_parser("impossibility", help="calibration / error-rate / independence gaps of a finite joint")
    _add_common(p)
    p.add_argument("--pmf", help="JSON array of shape (2, |Z|, 2): [group][signal][outcome]")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--strictly-positive", action="store_true")
    p.add_argument("--grid", action="store_true", help="exhaustive search over the 2x2x2 grid")
    p.add_argument("--step", type=float, default=0.01)
    return parser


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CliError(f"unknown config key(s): {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    if cfg["seed"] is None:
        cfg["seed"] = int(os.environ.get(SEED_ENV, "0"))
    return cfg


def config_hash(cfg: dict) -> str:
    items = {k: v for k, v in cfg.items() if k != "out"}
    for key in ("input", "compas", "synthetic"):
        if cfg.get(key) and Path(cfg[key]).is_file():
            items[key + "_sha256"] = hashlib.sha256(Path(cfg[key]).read_bytes()).hexdigest()
    blob = json.dumps(items, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_policy(cfg: dict, default: DecisionPolicy | None = None) -> DecisionPolicy:
    eps = float(cfg["epsilon"] or 0.0)
    if cfg["cutoff"] is not None:
        return DecisionPolicy(float(cfg["cutoff"]), eps)
    if cfg["k"] is not None:
        return DecisionPolicy.from_k(float(cfg["k"]), eps)
    if default is not None:
        return DecisionPolicy(default.cutoff, eps)
    return DecisionPolicy.from_k(DEFAULT_K, eps)


def make_penalty(cfg: dict) -> PenaltySpec:
    if cfg["lambda_matrix"] is not None:
        return PenaltySpec(np.asarray(cfg["lambda_matrix"], dtype=float).reshape(2, 2), cfg["gamma"])
    return PenaltySpec.preset(cfg["penalty"], cfg["gamma"])


def load_input(cfg: dict):
    """Returns ``(samples, default policy or None, notes)``."""
    sources = [s for s in ("input", "compas", "synthetic") if cfg[s]]
    if len(sources) != 1:
        raise CliError("give exactly one of --input, --compas, --synthetic")
    notes = {}
    if cfg["input"]:
        schema = DatasetSchema(cfg["score_column"], cfg["outcome_column"], cfg["group_column"], cfg["weight_column"], str(cfg["positive_value"]))
        res = load_csv(cfg["input"], schema)
        if res.rejected:
            notes["rejected_rows"] = [str(e) for e in res.rejected]
            for e in res.rejected[:20]:
                print(f"warning: rejected {e}", file=sys.stderr)
        return res.samples, None, notes
    if cfg["compas"]:
        data = load_compas(cfg["compas"], tuple(cfg["races"]), cfg["cutoff"])
        notes["cutoff_source"] = data.cutoff_source
        notes["cutoff"] = data.policy.cutoff
        return data.samples, data.policy, notes
    spec = SyntheticSpec.from_json(cfg["synthetic"])
    return generate_synthetic(spec), None, notes


def _out_dir(cfg):
    if not cfg["out"]:
        return None
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(payload: dict, cfg: dict, name: str):
    payload = {"config_hash": config_hash(cfg), **payload}
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    d = _out_dir(cfg)
    if d is not None:
        (d / name).write_text(text + "\n")
    print(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def cmd_feascheck(cfg) -> int:
    samples, default_policy, notes = load_input(cfg)
    policy = make_policy(cfg, default_policy)
    dists = calibrate_bins(samples, cfg["n_bins"])
    rep = feasibility(list(dists.values()), policy, samples.shares(), support_aware=bool(cfg["support_aware"]))
    d = _out_dir(cfg)
    if d is not None:
        series = {f"roc:{g}": roc_from_distribution(x).points for g, x in dists.items()}
        series |= {f"achievable:{g}": achievable_set(roc_from_distribution(x)).vertices for g, x in dists.items()}
        series["feasible_region"] = rep.feasible_region.vertices
        write_point_csv(d / "polygons.csv", series)
    _emit({"feasibility": rep.to_dict(), "cutoff": policy.cutoff, "epsilon": policy.epsilon, **notes}, cfg, "feasibility.json")
    return EXIT_OK if rep.verdict.feasible else EXIT_INFEASIBLE


def cmd_optimize(cfg) -> int:
    samples, default_policy, notes = load_input(cfg)
    policy = make_policy(cfg, default_policy)
    dists = calibrate_bins(samples, cfg["n_bins"])
    try:
        target, rep, loss = choose_targets(dists, policy, cfg["mode"], make_penalty(cfg), samples.shares())
    except InfeasibleRegionError as exc:
        print(f"infeasible: {exc} (try --mode flexible)", file=sys.stderr)
        return EXIT_INFEASIBLE
    payload = {"target": target.to_dict(), "predicted_loss": loss, "cutoff": policy.cutoff, **notes}
    if rep is not None:
        payload["feasibility"] = rep.to_dict()
    _emit(payload, cfg, "target.json")
    return EXIT_OK


def cmd_fit_apply(cfg) -> int:
    samples, default_policy, notes = load_input(cfg)
    policy = make_policy(cfg, default_policy)
    try:
        res = postprocess_pipeline(samples, policy, cfg["mode"], make_penalty(cfg), cfg["n_bins"], cfg["seed"])
    except PipelineError as exc:
        if isinstance(exc.error, InfeasibleRegionError):
            print(f"infeasible at stage {exc.stage}: {exc.error} (try --mode flexible)", file=sys.stderr)
            return EXIT_INFEASIBLE
        raise
    d = _out_dir(cfg)
    if d is not None:
        res.scored.to_csv(d / "scored.csv")
        for g, kern in res.kernels.items():
            safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in g)
            kern.save(d / f"kernel_{safe}.csv", d / f"kernel_{safe}.json", {"config_hash": config_hash(cfg)})
        write_calibration_csv(d / "calibration_after.csv", res.after.calibration)
    report = res.report()
    report["disparities"] = {
        "before": {"tpr_gap": res.before.tpr_gap, "fpr_gap": res.before.fpr_gap},
        "after": {"tpr_gap": res.after.tpr_gap, "fpr_gap": res.after.fpr_gap},
    }
    _emit({"report": report, "cutoff": policy.cutoff, **notes}, cfg, "report.json")
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    samples, default_policy, notes = load_input(cfg)
    policy = make_policy(cfg, default_policy)
    rep = evaluate(samples.scores, samples.outcomes, samples.groups, policy, samples.weights, calibration_bins=cfg["n_bins"])
    d = _out_dir(cfg)
    if d is not None:
        write_calibration_csv(d / "calibration.csv", rep.calibration)
    _emit({"evaluation": rep.to_dict(), **notes}, cfg, "evaluation.json")
    return EXIT_OK


def cmd_synth(cfg, args) -> int:
    spec = SyntheticSpec.from_json(args.spec)
    if args.seed is not None or os.environ.get(SEED_ENV):
        spec = spec.with_seed(cfg["seed"])
    if args.count is not None:
        spec = spec.with_count(args.count)
    samples = generate_synthetic(spec)
    d = _out_dir(cfg)
    if d is None:
        write_samples_csv(sys.stdout, samples)
        return EXIT_OK
    write_samples_csv(d / "synthetic.csv", samples)
    cfg = dict(cfg, synthetic=args.spec)
    _emit({"spec": spec.to_dict(), "rows": len(samples), "path": str(d / "synthetic.csv")}, cfg, "synthetic.json")
    return EXIT_OK


def cmd_impossibility(cfg, args) -> int:
    if args.grid:
        res = grid_search_counterexamples(args.step, args.tol)
        _emit({"grid_search": res.to_dict()}, cfg, "impossibility.json")
        return EXIT_OK
    if not args.pmf:
        raise CliError("give --pmf or --grid")
    pmf = np.asarray(json.loads(Path(args.pmf).read_text()), dtype=float)
    res = impossibility_check(FiniteJoint(pmf, args.strictly_positive), args.tol)
    _emit({"impossibility": res.to_dict(), "tol": args.tol}, cfg, "impossibility.json")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg, args)
        if args.command == "impossibility":
            return cmd_impossibility(cfg, args)
        return {
            "feascheck": cmd_feascheck,
            "optimize": cmd_optimize,
            "fit-apply": cmd_fit_apply,
            "evaluate": cmd_evaluate,
        }[args.command](cfg)
    except (CliError, SchemaError, EmptyDatasetError, PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
