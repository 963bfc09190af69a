"""Command-line front end: simulate, split, fit, evaluate, predict, residuals, recover.

Every subcommand takes a required ``--seed`` and writes a ``*.manifest.json``
next to its main output recording how the output was produced.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, data_io, evaluation
from .errors import BadgeppError, DataFormatError, ZeroLikelihoodError
from .inference import fit
from .model import KINDS, QUESTION, answer_parent_pmf, dataset_log_likelihood
from .simulate import SyntheticConfig, sample_synthetic_params, simulate

log = logging.getLogger("badgepp")


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int
    config_path: str | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    git_describe: str = ""
    package_version: str = __version__
    wall_time: float = 0.0

    def write(self, main_output):
        path = Path(str(main_output) + ".manifest.json")
        path.write_text(json.dumps(self.__dict__, indent=2) + "\n")
        return path


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args, man: RunManifest):
    if args.config:
        cfg = SyntheticConfig.from_dict(json.loads(Path(args.config).read_text()))
        man.config_path = str(args.config)
    else:
        cfg = SyntheticConfig.desk() if args.preset == "desk" else SyntheticConfig()
    overrides = {"seed": args.seed}
    if args.events_per_user is not None:
        overrides.update(events_per_user=args.events_per_user, horizon=None)
    cfg = SyntheticConfig.from_dict({**cfg.to_dict(), **overrides})
    rng = np.random.default_rng(cfg.seed)
    params, model_cfg = sample_synthetic_params(cfg, rng)
    ds = simulate(params, model_cfg, rng, num_tags=cfg.K, horizon=cfg.horizon, events_per_user=cfg.events_per_user)
    data_io.save_events(ds, args.out)
    man.outputs["events"] = str(args.out)
    if args.params_out:
        data_io.save_params(params, model_cfg, args.params_out, extra={"synthetic_config": cfg.to_dict()})
        man.outputs["params"] = str(args.params_out)
    if args.badges_out:
        data_io.save_model_config(model_cfg, args.badges_out)
        man.outputs["badges"] = str(args.badges_out)
    log.info("simulated %d events over [0, %.6g]", len(ds), ds.horizon)
    return {"events": len(ds), "horizon": ds.horizon}


def cmd_split(args, man: RunManifest):
    ds = data_io.load_events(args.events)
    man.inputs["events"] = str(args.events)
    split = data_io.split_train_test(ds, args.fraction)
    data_io.save_events(split.train, args.out)
    man.outputs["events"] = str(args.out)
    return {"train_events": len(ds) - len(split.test), "test_events": len(split.test),
            "flagged": [list(f) for f in split.flagged]}


def cmd_fit(args, man: RunManifest):
    ds = data_io.load_events(args.events)
    cfg = data_io.load_model_config(args.badges)
    man.inputs.update(events=str(args.events), badges=str(args.badges))
    rep = fit(ds, cfg, max_iters=args.max_iters, tol=args.tol, seed=args.seed)
    extra = {"lower_bound_trace": rep.lower_bound_trace, "iterations": rep.iterations,
             "converged": rep.converged, "users_without_questions": rep.users_without_questions,
             "users_without_answers": rep.users_without_answers}
    data_io.save_params(rep.params, cfg, args.out, extra=extra)
    man.outputs["params"] = str(args.out)
    trace = args.trace or Path(str(args.out) + ".trace.csv")
    data_io.save_trace_csv(rep.lower_bound_trace, trace)
    man.outputs["trace"] = str(trace)
    return {"iterations": rep.iterations, "converged": rep.converged,
            "lower_bound": rep.lower_bound_trace[-1]}


def cmd_evaluate(args, man: RunManifest):
    params, cfg = data_io.load_params(args.params)
    ds = data_io.load_events(args.events)
    man.inputs.update(params=str(args.params), events=str(args.events))
    _check_dims(params, ds)
    payload = {"log_likelihood": dataset_log_likelihood(ds, params, cfg)}
    if np.any(~ds.in_window()):
        reports = evaluation.evaluate(ds, params, cfg, methods=tuple(args.methods), n_samples=args.samples,
                                      seed=args.seed, parent_window=args.parent_window,
                                      predict_times=not args.no_time_prediction)
        payload["parent_window"] = args.parent_window if args.parent_window is not None else cfg.max_lag
        payload["reports"] = {m: r.to_dict() for m, r in reports.items()}
        if args.csv:
            data_io.save_eval_csv(reports, args.csv)
            man.outputs["csv"] = str(args.csv)
    data_io.save_report_json(payload, args.out)
    man.outputs["report"] = str(args.out)
    return {"log_likelihood": payload["log_likelihood"]}


def cmd_predict(args, man: RunManifest):
    params, cfg = data_io.load_params(args.params)
    ds = data_io.load_events(args.events)
    man.inputs.update(params=str(args.params), events=str(args.events))
    _check_dims(params, ds)
    t = ds.horizon if args.at is None else args.at
    proc = evaluation.UserProcess(ds, params, cfg, args.user, args.kind)
    rng = np.random.default_rng(args.seed)
    next_time = evaluation.predict_next_time(proc.frozen_after(t), t, args.samples, rng)
    if args.kind == QUESTION:
        alpha = params.alpha[args.user]
        order = np.lexsort((np.arange(alpha.size), -alpha))[: args.top_k]
        ranking = [{"tag": int(k), "prob": float(alpha[k] / alpha.sum())} for k in order]
    else:
        cand, probs = answer_parent_pmf(args.user, t, ds, params[args.user], cfg)
        order = np.lexsort((cand, -probs))[: args.top_k]
        ranking = [{"question": int(cand[i]), "prob": float(probs[i])} for i in order]
    payload = {"user": args.user, "kind": args.kind, "t_now": t, "expected_next_time": next_time,
               "samples": args.samples, "ranking": ranking}
    data_io.save_report_json(payload, args.out, kind="prediction")
    man.outputs["prediction"] = str(args.out)
    return {"expected_next_time": next_time}


def cmd_residuals(args, man: RunManifest):
    params, cfg = data_io.load_params(args.params)
    ds = data_io.load_events(args.events)
    man.inputs.update(params=str(args.params), events=str(args.events))
    _check_dims(params, ds)
    users = range(ds.num_users) if args.user is None else [args.user]
    pooled, rows = [], []
    for u in users:
        for kind in KINDS:
            times = ds.times[ds.user_event_indices(u, kind)]
            if times.size < 2:
                continue
            proc = evaluation.UserProcess(ds, params, cfg, u, kind)
            res = evaluation.rescaled_residuals(times, proc.compensator)
            pooled.append(res.residuals)
            rows.append({"user": u, "kind": kind, "n": int(res.residuals.size),
                         "ks_statistic": res.ks_statistic, "p_value": res.p_value, "low_power": res.low_power})
    if not pooled:
        raise BadgeppError("no user/kind has two or more events")
    summary = evaluation.ks_residuals(np.concatenate(pooled))
    data_io.save_qq_csv(summary.qq_points, args.out)
    man.outputs["qq"] = str(args.out)
    stats_path = Path(str(args.out) + ".json")
    data_io.save_report_json({"pooled": {"n": int(summary.residuals.size), "ks_statistic": summary.ks_statistic,
                                         "p_value": summary.p_value}, "per_process": rows},
                             stats_path, kind="residuals")
    man.outputs["summary"] = str(stats_path)
    return {"ks_statistic": summary.ks_statistic, "p_value": summary.p_value}


def cmd_recover(args, man: RunManifest):
    true, _ = data_io.load_params(args.true)
    fitted, _ = data_io.load_params(args.fitted)
    man.inputs.update(true=str(args.true), fitted=str(args.fitted))
    rep = evaluation.recovery_report(true, fitted)
    data_io.save_report_json(rep.to_dict(), args.out, kind="recovery")
    man.outputs["report"] = str(args.out)
    return {"temporal_mre": rep.temporal.mre, "temporal_tau": rep.temporal.tau,
            "content_mre": rep.content.mre, "content_tau": rep.content.tau}


def _check_dims(params, ds):
    if params.num_users != ds.num_users or params.num_tags != ds.num_tags:
        raise DataFormatError(f"parameters are for {params.num_users} users/{params.num_tags} tags, "
                              f"events have {ds.num_users}/{ds.num_tags}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="root seed for all randomness")
    common.add_argument("--threads", type=int, default=None,
                        help="accepted for compatibility; computations are vectorized and single-threaded")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = argparse.ArgumentParser(prog="badgepp", description="Badge-aware point processes for Q&A activity")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="sample a synthetic event log")
    s.add_argument("--config", type=Path, help="SyntheticConfig JSON")
    s.add_argument("--preset", choices=["desk", "paper"], default="desk")
    s.add_argument("--events-per-user", type=int)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--params-out", type=Path, help="write the generating parameters here")
    s.add_argument("--badges-out", type=Path, help="write the generated badge file here")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("split", parents=[common], help="per-user temporal train/test split")
    s.add_argument("--events", type=Path, required=True)
    s.add_argument("--fraction", type=float, default=0.8)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("fit", parents=[common], help="fit parameters by variational EM")
    s.add_argument("--events", type=Path, required=True)
    s.add_argument("--badges", type=Path, required=True)
    s.add_argument("--max-iters", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--trace", type=Path, help="trace CSV (default: <out>.trace.csv)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("evaluate", parents=[common], help="held-out metrics against the baselines")
    s.add_argument("--params", type=Path, required=True)
    s.add_argument("--events", type=Path, required=True, help="log whose out-of-window events are the test set")
    s.add_argument("--methods", nargs="+", default=["model", "poisson", "hawkes", "popular", "recent"],
                   choices=["model", "poisson", "hawkes", "popular", "recent"])
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--parent-window", type=float, default=None,
                   help="only questions this recent are parent candidates (default: decay cutoff lag)")
    s.add_argument("--no-time-prediction", action="store_true")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--csv", type=Path)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", parents=[common], help="next event time and mark ranking for one user")
    s.add_argument("--params", type=Path, required=True)
    s.add_argument("--events", type=Path, required=True)
    s.add_argument("--user", type=int, required=True)
    s.add_argument("--kind", choices=list(KINDS), required=True)
    s.add_argument("--at", type=float, help="prediction time (default: horizon)")
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--top-k", type=int, default=10)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("residuals", parents=[common], help="time-rescaling QQ table")
    s.add_argument("--params", type=Path, required=True)
    s.add_argument("--events", type=Path, required=True)
    s.add_argument("--user", type=int)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_residuals)

    s = sub.add_parser("recover", parents=[common], help="compare fitted with true parameters")
    s.add_argument("--true", type=Path, required=True)
    s.add_argument("--fitted", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_recover)
    return p


def _error_payload(exc):
    d = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("line", "field", "event_index"):
        v = getattr(exc, attr, None)
        if v is not None:
            d[attr] = v
    return d


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    man = RunManifest(command=args.command, argv=argv, seed=args.seed, git_describe=git_describe())
    start = time.perf_counter()
    try:
        summary = args.func(args, man)
    except (BadgeppError, OSError, ValueError, KeyError, ZeroLikelihoodError) as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return 1
    man.wall_time = time.perf_counter() - start
    man.write(args.out)
    print(json.dumps({k: (v if not isinstance(v, float) or math.isfinite(v) else str(v))
                      for k, v in summary.items()}))
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
