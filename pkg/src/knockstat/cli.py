"""``knock`` command-line entry point.

Exit codes: 0 ok, 2 usage, 3 file format, 4 numeric / degeneracy.  Errors
are reported on stderr as a single ``knock: error code=<code> ...`` line.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import deque
from pathlib import Path

import numpy as np

from knockstat import distfit, gof, knockctl, simloop, trace
from knockstat.errors import FormatError, KnockError

DEFAULT_SEED = 0


def _pair(text: str, kind=float) -> tuple:
    try:
        lo, hi = text.split(":")
        return kind(lo), kind(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW:HIGH, got {text!r}")


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _write_rows(path, header, rows) -> None:
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _announce_seed(seed: int) -> None:
    print(f"seed={seed}", file=sys.stderr)


def _em_config(args) -> distfit.EMConfig:
    return distfit.EMConfig(max_iters=args.em_max_iters, rel_tol=args.em_tol, restarts=args.em_restarts,
                            seed=args.seed)


# ---------------------------------------------------------------- subcommands

def cmd_extract(args) -> int:
    traces = trace.load_traces(args.input)
    spec = trace.FilterSpec(args.band[0], args.band[1], args.attenuation, args.transition)
    data = trace.extract_dataset(traces, spec, args.window[0], args.window[1], label=Path(args.input).stem)
    trace.write_ki_csv(data, args.out)
    return 0


def cmd_acf(args) -> int:
    data = trace.read_ki_csv(args.input)
    r = gof.acf(data, args.max_lag)
    bound = gof.acf_bounds(len(data), args.alpha)
    _write_rows(args.out, ["lag", "acf", "lower", "upper", "inside"],
                [(k, float(v), -bound, bound, int(k == 0 or abs(v) <= bound)) for k, v in enumerate(r)])
    return 0


def cmd_thresholds(args) -> int:
    _announce_seed(args.seed)
    truth = distfit.load_model(args.truth) if args.truth else None
    if truth is not None and truth.to_dict()["family"] != args.family:
        raise KnockError("--truth model family does not match --family")
    th = gof.mc_thresholds(args.family, truth, args.n, args.reps, args.seed, _em_config(args))
    if th.redraws:
        print(f"redrawn replicates={th.redraws}", file=sys.stderr)
    th.save(args.out) if args.out not in (None, "-") else _write_json(th.to_dict(), None)
    return 0


def cmd_fit(args) -> int:
    cfg = _em_config(args)
    reports = []
    for path in args.input:
        data = trace.read_ki_csv(path)
        if args.thresholds:
            th = gof.Thresholds.load(args.thresholds)
        else:
            _announce_seed(args.seed)
            th = gof.bootstrap_thresholds(data, args.family, reps=args.reps, seed=args.seed, cfg=cfg)
        reports.append(gof.fit_report(data, args.family, th, cfg))
    out = [r.to_dict() for r in reports]
    _write_json(out[0] if len(out) == 1 else out, args.out)
    if args.csv:
        _write_rows(args.csv, ["label", "family", "r2", "ks", "r2_threshold", "ks_threshold", "verdict"],
                    [(r.label, r.family, r.scores.r2, r.scores.ks, r.thresholds.r2_5th,
                      r.thresholds.ks_95th, "accept" if r.accepted else "reject") for r in reports])
    if args.model_out:
        distfit.save_model(reports[0].model, args.model_out)
    return 0


def cmd_classify(args) -> int:
    bank = knockctl.StateBank.load(args.bank)
    data = trace.read_ki_csv(args.input)
    n = len(bank)
    prior = knockctl.Posterior.uniform(n)
    window: deque = deque(maxlen=args.window)
    rows = []
    for i, ki in enumerate(data.ki):
        window.append(float(ki))
        post = knockctl.posterior_update(bank, prior, window)
        blended = args.forgetting * post.probs + (1.0 - args.forgetting) / n
        prior = knockctl.Posterior(blended / blended.sum())
        rows.append([i, float(ki), knockctl.spark_delta(post, bank), *map(float, post.probs)])
    _write_rows(args.out, ["cycle", "ki_bar", "delta_deg"] + [f"p{k + 1}" for k in range(n)], rows)
    return 0


def cmd_simulate(args) -> int:
    _announce_seed(args.seed)
    engine = simloop.EngineModel.load(args.engine) if args.engine else simloop.demo_engine()
    engine = simloop.EngineModel(engine.anchors, args.seed)
    bank = knockctl.StateBank.load(args.bank) if args.bank else simloop.bank_from_engine(engine)
    if args.export_engine:
        engine.save(args.export_engine)
    if args.export_bank:
        bank.save(args.export_bank)
    start = args.start_spark
    if start is None:
        start = bank.states[len(bank) // 2].spark_anchor - 10.0
    ctrl = knockctl.ControllerState.initial(len(bank), start, args.window, tuple(args.limits), args.forgetting)
    traj = simloop.run_closed_loop(engine, bank, ctrl, args.cycles)
    traj.write_csv(args.out)
    if args.summary and len(traj):
        s = simloop.trajectory_summary(simloop.tail(traj, min(args.tail, len(traj))))
        _write_json(s.__dict__, args.summary)
    return 0


def _plot_ki_vs_spark(args):
    rows = []
    for item in args.input:
        path, _, spark = item.rpartition(":")
        if not path:
            raise KnockError("ki-vs-spark inputs are PATH:SPARK_BTDC")
        ki = trace.read_ki_csv(path).ki
        rows.append((float(spark), float(ki.mean()), gof.nearest_rank(ki, 5), gof.nearest_rank(ki, 95)))
    rows.sort()
    return ["spark_btdc", "mean_ki", "p5_ki", "p95_ki"], rows


def _plot_acf(args):
    sets = [trace.read_ki_csv(p) for p in args.input]
    r = np.vstack([gof.acf(d, args.max_lag) for d in sets])
    bound = gof.acf_bounds(min(len(d) for d in sets), 0.05)
    return (["lag", "mean", "p5", "p95", "lower", "upper"],
            [(k, float(r[:, k].mean()), gof.nearest_rank(r[:, k], 5), gof.nearest_rank(r[:, k], 95),
              -bound, bound) for k in range(r.shape[1])])


def _plot_ecdf(args):
    data = trace.read_ki_csv(args.input[0])
    model = distfit.load_model(args.model) if args.model else distfit.fit(data, args.family)
    e = gof.empirical_cdf(data)
    cdf = np.asarray(model.cdf(e.points))
    pdf = np.asarray(model.pdf(e.points))
    return (["ki_bar", "ln_ki", "ecdf", "model_cdf", "model_pdf"],
            [(float(x), float(np.log(x)), float(y), float(c), float(p))
             for x, y, c, p in zip(e.points, e.steps, cdf, pdf)])


def _plot_scores(args):
    recs = []
    for path in args.input:
        obj = json.loads(Path(path).read_text())
        recs.extend(obj if isinstance(obj, list) else [obj])
    try:
        return (["index", "label", "r2", "ks", "r2_threshold", "ks_threshold"],
                [(i, r["label"], float(r["r2"]), float(r["ks"]), float(r["r2_threshold"]),
                  float(r["ks_threshold"])) for i, r in enumerate(recs)])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"not a fit report: {exc}") from exc


def _plot_states(args):
    bank = knockctl.StateBank.load(args.bank)
    lo = min(min(s.model.comp1.mu - 4 * s.model.comp1.sigma, s.model.comp2.mu - 4 * s.model.comp2.sigma)
             for s in bank.states)
    hi = max(max(s.model.comp1.mu + 4 * s.model.comp1.sigma, s.model.comp2.mu + 4 * s.model.comp2.sigma)
             for s in bank.states)
    y = np.linspace(lo, hi, args.points)
    # density of ln KI = x * f(x)
    dens = [np.exp(y) * np.asarray(s.model.pdf(np.exp(y))) for s in bank.states]
    header = ["ln_ki"] + [f"pdf_{s.label.replace(' ', '_')}" for s in bank.states]
    return header, [(float(v), *map(float, col)) for v, *col in zip(y, *dens)]


PLOTS = {"ki-vs-spark": _plot_ki_vs_spark, "acf": _plot_acf, "ecdf": _plot_ecdf,
         "scores": _plot_scores, "states": _plot_states}


def cmd_plotdata(args) -> int:
    if args.kind != "states" and not args.input:
        raise KnockError(f"plotdata {args.kind} needs --in")
    if args.kind == "states" and not args.bank:
        raise KnockError("plotdata states needs --bank")
    header, rows = PLOTS[args.kind](args)
    _write_rows(args.out, header, rows)
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"knock: error code=usage message={message!r}", file=sys.stderr)
        sys.exit(2)


def _em_options(p) -> None:
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--em-max-iters", type=int, default=500)
    p.add_argument("--em-tol", type=float, default=1e-8)
    p.add_argument("--em-restarts", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knock", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="pressure traces -> per-cycle KI")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--band", type=_pair, default=(3000.0, 25000.0), metavar="LOW:HIGH")
    p.add_argument("--window", type=_pair, default=(20.0, 110.0), metavar="START:END",
                   help="knock window offsets after spark, deg CA")
    p.add_argument("--attenuation", type=float, default=40.0)
    p.add_argument("--transition", type=float, default=0.15)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("acf", help="autocorrelation with confidence bounds")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--max-lag", type=int, default=20)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_acf)

    p = sub.add_parser("thresholds", help="Monte Carlo 95%% acceptance thresholds")
    p.add_argument("--family", choices=["lognormal", "mixture"], required=True)
    p.add_argument("--n", type=int, default=1116)
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--truth", help="model JSON to sample from (default: canonical parameters)")
    p.add_argument("--out", default="-")
    _em_options(p)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("fit", help="fit a KI set and judge it against thresholds")
    p.add_argument("--in", dest="input", required=True, action="append")
    p.add_argument("--family", choices=["lognormal", "mixture"], required=True)
    p.add_argument("--thresholds", help="thresholds JSON; default: parametric bootstrap at the fit")
    p.add_argument("--reps", type=int, default=1000, help="bootstrap replicates without --thresholds")
    p.add_argument("--out", default="-")
    p.add_argument("--csv")
    p.add_argument("--model-out")
    _em_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("classify", help="posterior knock-state probabilities for a KI sequence")
    p.add_argument("--bank", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--lambda", dest="forgetting", type=float, default=0.9)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("simulate", help="closed-loop run on the synthetic engine")
    p.add_argument("--engine")
    p.add_argument("--bank")
    p.add_argument("--cycles", type=int, default=2000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--start-spark", type=float)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--lambda", dest="forgetting", type=float, default=0.9)
    p.add_argument("--limits", type=_pair, default=(0.0, 40.0), metavar="MIN:MAX")
    p.add_argument("--out", default="-")
    p.add_argument("--summary", help="write a tail summary JSON here")
    p.add_argument("--tail", type=int, default=500)
    p.add_argument("--export-engine")
    p.add_argument("--export-bank")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plotdata", help="CSV series for external plotting")
    p.add_argument("kind", choices=sorted(PLOTS))
    p.add_argument("--in", dest="input", action="append", default=[])
    p.add_argument("--model")
    p.add_argument("--family", choices=["lognormal", "mixture"], default="mixture")
    p.add_argument("--bank")
    p.add_argument("--max-lag", type=int, default=20)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KnockError as exc:
        print(f"knock: error code={exc.code} message={str(exc)!r}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"knock: error code=format message={str(exc)!r}", file=sys.stderr)
        return FormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
