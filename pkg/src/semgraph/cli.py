"""Command line interface.

Exit codes: 0 success, 2 input error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import numpy as np

from . import confusion, core, fileio
from . import hmm as hmm_mod
from . import integrator as integ_mod
from . import pipeline as pipe_mod
from . import simkit
from . import subspace as subspace_mod
from .errors import InputError, StageError
from .ged import EditCostTable, build_costs
from .ged import ged as ged_distance
from .ged import smooth as smooth_graph_stream


def _read_samples(path):
    """Sample JSONL: {"truth": label, "scores": {label: value, ...}} per line."""
    labels = None
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                truth = obj["truth"]
                scores = obj["scores"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: bad sample record: {exc}") from exc
            if labels is None:
                labels = tuple(sorted(scores))
            if truth not in labels:
                raise InputError(f"{path}:{lineno}: truth {truth!r} not among score labels")
            samples.append((labels.index(truth), np.array([float(scores[l]) for l in labels])))
    if not samples:
        raise InputError(f"no samples in {path}")
    return samples, labels


def _load_catalog(path) -> core.ClassCatalog:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        return core.ClassCatalog(tuple(obj["components"]), tuple(obj["predicates"]))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed catalog {path}: {exc}") from exc


def _load_goal(path) -> core.Goal:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        return core.Goal(frozenset(obj["components"]), frozenset(obj["predicates"]),
                         int(obj.get("max_level", 3)))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed goal {path}: {exc}") from exc


def _parse_taus(spec: str) -> list[float]:
    if ":" in spec:
        try:
            lo, hi, step = (float(v) for v in spec.split(":"))
        except ValueError:
            raise InputError(f"bad tau range {spec!r}, expected lo:hi:step") from None
        taus = list(np.round(np.arange(lo, hi + step / 2, step), 12))
    else:
        taus = [float(v) for v in spec.split(",")]
    return taus


# ---------------------------------------------------------------------------
# subcommand handlers

def cmd_cm_estimate(args):
    samples, labels = _read_samples(args.infile)
    cm = confusion.estimate_cm(samples, args.tau, labels)
    cm.save(args.out)
    print(f"wrote {args.out} ({cm.total} samples, K={cm.n_patterns})")


def cmd_cm_roc(args):
    samples, labels = _read_samples(args.infile)
    curves = confusion.roc_sweep(samples, _parse_taus(args.taus), labels)
    fileio.write_roc(args.out, curves, labels)
    print(f"wrote {args.out}")
    if args.plot:
        from . import plots
        print(f"wrote {plots.roc_figure(curves, labels, args.plot)}")


def cmd_integrate(args):
    streams = fileio.read_scores(args.infile)
    integrated = {label: integ_mod.integrate(s, args.window) for label, s in streams.items()}
    flags = {label: integ_mod.detect(s, args.tau) for label, s in integrated.items()}
    fileio.write_detections(integrated, flags, args.out)
    print(f"wrote {args.out}")
    if args.plot:
        from . import plots
        print(f"wrote {plots.score_figure(streams, integrated, args.tau, args.plot)}")


def cmd_tune(args):
    model = integ_mod.ScoreModel(mu0=args.mu0, sigma0=args.sigma0,
                                 mu1=args.mu1, sigma1=args.sigma1, rho=args.rho)
    rows = integ_mod.tuning_report(model, args.target_fpr, args.max_window)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "tau", "tpr"])
        for t, tau, tpr in rows:
            w.writerow([t, repr(tau), repr(tpr)])
    t_star, tau_star, tpr_star = integ_mod.tune_window(model, args.target_fpr, args.max_window)
    print(f"wrote {args.out}; best window T={t_star} tau={tau_star:.4f} tpr={tpr_star:.4f}")


def cmd_pcp(args):
    tracks = fileio.read_features(args.infile)
    lam = None if args.lam in (None, "auto") else float(args.lam)
    rank = args.rank if args.rank == "auto" else int(args.rank)
    rows = []
    for tid in sorted(tracks):
        frames, mat = tracks[tid]
        series = subspace_mod.windowed_innovation(mat, args.buffer, lam=lam,
                                                  threshold=args.threshold,
                                                  rank_policy=rank)
        peaks = set(series.detected_peaks)
        for i, (t, l1) in enumerate(zip(frames, series.masses)):
            rows.append((t, tid, l1, int(i in peaks)))
    fileio.write_innovation(args.out, rows)
    print(f"wrote {args.out}")
    if args.plot:
        from . import plots
        print(f"wrote {plots.innovation_figure(rows, args.threshold, args.plot)}")


def cmd_ged(args):
    catalog = _load_catalog(args.catalog)
    costs = EditCostTable.load(args.costs)
    frames = core.read_jsonl(args.infile, catalog)
    stream = [core.union_graph(mg) for mg in frames]
    times = [mg.time_index for mg in frames]
    filtered, events = smooth_graph_stream(stream, costs, catalog, args.threshold,
                                           required_streak=args.streak, times=times)
    with open(args.out, "w") as fh:
        for ev in events:
            fh.write(core.canonical_dumps({
                "t": ev.t, "ged": ev.distance,
                "from": core.atom_to_obj(ev.before, catalog),
                "to": core.atom_to_obj(ev.after, catalog),
            }) + "\n")
    print(f"wrote {args.out} ({len(events)} innovation events)")
    if args.plot:
        from . import plots
        dists = [ged_distance(f, g, costs, catalog).distance for f, g in zip(filtered, stream)]
        print(f"wrote {plots.ged_timeline_figure(times, dists, [e.t for e in events], args.threshold, args.plot)}")


def cmd_costs(args):
    cm = confusion.ConfusionMatrix.load(args.cm)
    prev = None
    if args.prevalence:
        with open(args.prevalence) as fh:
            obj = json.load(fh)
        try:
            prev = [float(obj[label]) for label in cm.pattern_labels]
        except KeyError as exc:
            raise InputError(f"prevalence file missing class {exc}") from exc
    table = build_costs(cm, prev)
    table.save(args.out)
    print(f"wrote {args.out} ({table.basis} costs)")


def cmd_viterbi(args):
    model = hmm_mod.HmmModel.load(args.model)
    times, obs = fileio.read_observations(args.infile, model.state_labels)
    states, log_prob = hmm_mod.viterbi(model, obs) if args.beam is None else \
        hmm_mod.m_viterbi(model, obs, args.beam)
    fileio.write_states(args.out, times, states, model.state_labels)
    print(f"wrote {args.out} (log probability {log_prob:.4f})")


def cmd_fit(args):
    init = hmm_mod.HmmModel.load(args.init)
    _, obs = fileio.read_observations(args.infile, init.state_labels)
    result = hmm_mod.baum_welch(obs, init, max_iter=args.iters, tol=args.tol)
    result.model.save(args.out)
    status = "converged" if result.converged else "max iterations"
    print(f"wrote {args.out} ({status}, {len(result.log_likelihoods)} iterations, "
          f"final log likelihood {result.log_likelihoods[-1]:.4f})")


def cmd_sim_extractor(args):
    model = simkit.gen_extractor(args.patterns, args.separability, args.rho, args.seed)
    obj = {"labels": list(model.pattern_labels),
           "models": [{"mu0": m.mu0, "sigma0": m.sigma0, "mu1": m.mu1,
                       "sigma1": m.sigma1, "rho": m.rho} for m in model.score_models]}
    with open(args.out, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out}")


def _load_extractor(path) -> simkit.ExtractorModel:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        models = tuple(integ_mod.ScoreModel(**m) for m in obj["models"])
        return simkit.ExtractorModel(tuple(obj["labels"]), models)
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed extractor {path}: {exc}") from exc


def cmd_sim_timeline(args):
    tl = simkit.gen_timeline(args.patterns, args.frames, args.dwell_on, args.dwell_off, args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "pattern", "present"])
        for i in range(tl.n_patterns):
            for t in range(tl.n_frames):
                w.writerow([t, f"pattern{i}", int(tl.presence[i, t])])
    print(f"wrote {args.out}")


def _load_timeline(path, labels) -> simkit.Timeline:
    per = {label: {} for label in labels}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            if rec["pattern"] in per:
                per[rec["pattern"]][int(rec["t"])] = bool(int(rec["present"]))
    n = max((max(d) for d in per.values() if d), default=-1) + 1
    if n == 0:
        raise InputError(f"timeline {path} has no rows matching the extractor patterns")
    presence = np.zeros((len(labels), n), dtype=bool)
    for i, label in enumerate(labels):
        for t, v in per[label].items():
            presence[i, t] = v
    return simkit.Timeline(presence)


def cmd_sim_scores(args):
    extractor = _load_extractor(args.extractor)
    tl = _load_timeline(args.timeline, extractor.pattern_labels)
    streams = simkit.emit_scores(tl, extractor, args.seed)
    fileio.write_scores({s.pattern_id: s for s in streams}, args.out)
    print(f"wrote {args.out}")


def _load_scenario(path) -> simkit.ScenarioSpec:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        catalog = core.ClassCatalog(tuple(obj["catalog"]["components"]),
                                    tuple(obj["catalog"]["predicates"]))
        segments = tuple(simkit.TruthSegment(int(s["start"]),
                                             tuple((n[0], n[1], int(n[2])) for n in s["nodes"]),
                                             tuple((int(e[0]), int(e[1])) for e in s.get("edges", [])))
                         for s in obj["segments"])
        return simkit.ScenarioSpec(catalog, int(obj["n_frames"]), segments,
                                   error_rate=float(obj.get("error_rate", 0.0)),
                                   error_mode=obj.get("error_mode", "iid"),
                                   min_error_gap=int(obj.get("min_error_gap", 6)),
                                   seed=int(obj.get("seed", 0)))
    except (KeyError, TypeError, IndexError) as exc:
        raise InputError(f"malformed scenario {path}: {exc}") from exc


def cmd_sim_graphs(args):
    scenario = _load_scenario(args.scenario)
    if args.seed is not None:
        scenario = simkit.ScenarioSpec(scenario.catalog, scenario.n_frames, scenario.segments,
                                       scenario.error_rate, scenario.error_mode,
                                       scenario.min_error_gap, args.seed)
    cm = confusion.ConfusionMatrix.load(args.cm) if args.cm else None
    truth, observed = simkit.emit_graph_stream(scenario, cm)

    def to_frames(graphs):
        return [core.split_atoms(g.nodes, g.edges, dict(g.attributes), t)
                for t, g in enumerate(graphs)]

    core.write_jsonl(to_frames(observed), scenario.catalog, args.out)
    if args.out_truth:
        core.write_jsonl(to_frames(truth), scenario.catalog, args.out_truth)
    print(f"wrote {args.out}" + (f" and {args.out_truth}" if args.out_truth else ""))


def cmd_run(args):
    config = pipe_mod.PipelineConfig.load(args.config)
    frames, ledger, report, events = pipe_mod.run(config)
    print(f"processed {len(frames)} frames: "
          f"{sum(len(b.events) for b in ledger.graph_banks)} graph events, "
          f"{sum(len(a.events) for a in ledger.attr_tracks)} attribute events")
    print(json.dumps(report.to_obj(), indent=2, sort_keys=True))
    if config.output_dir:
        print(f"outputs in {config.output_dir}")


def cmd_rate(args):
    ledger = pipe_mod.InnovationLedger.load(args.ledger)
    goal = _load_goal(args.goal) if args.goal else None
    duration = ledger.n_frames / ledger.frame_rate
    report = pipe_mod.rate(ledger, duration, goal)
    out = json.dumps(report.to_obj(), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
        print(f"wrote {args.out}")
    else:
        print(out)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semgraph",
                                description="Semantic graph stream smoothing, tracking, and "
                                            "innovation rate estimation")
    sub = p.add_subparsers(dest="command", required=True)

    cm = sub.add_parser("cm", help="confusion matrix tools")
    cm_sub = cm.add_subparsers(dest="subcommand", required=True)
    est = cm_sub.add_parser("estimate", help="count detections into a confusion matrix")
    est.add_argument("--tau", type=float, required=True)
    est.add_argument("--in", dest="infile", required=True)
    est.add_argument("--out", required=True)
    est.set_defaults(func=cmd_cm_estimate)
    roc = cm_sub.add_parser("roc", help="sweep thresholds into per-pattern ROC curves")
    roc.add_argument("--taus", default="0.05:0.95:0.05", help="lo:hi:step or comma list")
    roc.add_argument("--in", dest="infile", required=True)
    roc.add_argument("--out", required=True)
    roc.add_argument("--plot", help="also render the ROC figure to this file")
    roc.set_defaults(func=cmd_cm_roc)

    integ = sub.add_parser("integrate", help="window-average scores and detect")
    integ.add_argument("--window", type=int, default=1)
    integ.add_argument("--tau", type=float, default=0.5)
    integ.add_argument("--in", dest="infile", required=True)
    integ.add_argument("--out", required=True)
    integ.add_argument("--plot", help="also render the score figure to this file")
    integ.set_defaults(func=cmd_integrate)

    tune = sub.add_parser("tune", help="window tuning report for a Gaussian score model")
    tune.add_argument("--mu0", type=float, required=True)
    tune.add_argument("--sigma0", type=float, required=True)
    tune.add_argument("--mu1", type=float, required=True)
    tune.add_argument("--sigma1", type=float, required=True)
    tune.add_argument("--rho", type=float, default=0.0)
    tune.add_argument("--target-fpr", type=float, default=0.1)
    tune.add_argument("--max-window", type=int, default=10)
    tune.add_argument("--out", required=True)
    tune.set_defaults(func=cmd_tune)

    pcp = sub.add_parser("pcp", help="windowed innovation over feature streams")
    pcp.add_argument("--buffer", type=int, default=32)
    pcp.add_argument("--lambda", dest="lam", default="auto")
    pcp.add_argument("--threshold", type=float, default=2.0)
    pcp.add_argument("--rank", default="auto", help="fixed rank or 'auto'")
    pcp.add_argument("--in", dest="infile", required=True)
    pcp.add_argument("--out", required=True)
    pcp.add_argument("--plot", help="also render the innovation figure to this file")
    pcp.set_defaults(func=cmd_pcp)

    ged = sub.add_parser("ged", help="baseline smoothing over a graph stream")
    ged.add_argument("--costs", required=True)
    ged.add_argument("--catalog", required=True)
    ged.add_argument("--threshold", type=float, default=0.2)
    ged.add_argument("--streak", type=int, default=5)
    ged.add_argument("--in", dest="infile", required=True)
    ged.add_argument("--out", required=True)
    ged.add_argument("--plot", help="also render the distance timeline to this file")
    ged.set_defaults(func=cmd_ged)

    costs = sub.add_parser("costs", help="edit cost table from a confusion matrix")
    costs.add_argument("--cm", required=True)
    costs.add_argument("--prevalence", help="JSON {class: probability} for posterior costs")
    costs.add_argument("--out", required=True)
    costs.set_defaults(func=cmd_costs)

    vit = sub.add_parser("viterbi", help="decode the most likely state sequence")
    vit.add_argument("--model", required=True)
    vit.add_argument("--beam", type=int, help="beam width for the approximate decoder")
    vit.add_argument("--in", dest="infile", required=True)
    vit.add_argument("--out", required=True)
    vit.set_defaults(func=cmd_viterbi)

    fit = sub.add_parser("fit", help="estimate model parameters from observations")
    fit.add_argument("--init", required=True)
    fit.add_argument("--iters", type=int, default=50)
    fit.add_argument("--tol", type=float, default=1e-6)
    fit.add_argument("--in", dest="infile", required=True)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("sim", help="seeded synthesis of inputs with known truth")
    sim_sub = sim.add_subparsers(dest="subcommand", required=True)
    se = sim_sub.add_parser("extractor")
    se.add_argument("--patterns", type=int, default=5)
    se.add_argument("--separability", type=float, default=3.0)
    se.add_argument("--rho", type=float, default=0.0)
    se.add_argument("--seed", type=int, default=42)
    se.add_argument("--out", required=True)
    se.set_defaults(func=cmd_sim_extractor)
    st = sim_sub.add_parser("timeline")
    st.add_argument("--patterns", type=int, default=5)
    st.add_argument("--frames", type=int, default=10000)
    st.add_argument("--dwell-on", type=float, default=200.0)
    st.add_argument("--dwell-off", type=float, default=600.0)
    st.add_argument("--seed", type=int, default=42)
    st.add_argument("--out", required=True)
    st.set_defaults(func=cmd_sim_timeline)
    ss = sim_sub.add_parser("scores")
    ss.add_argument("--extractor", required=True)
    ss.add_argument("--timeline", required=True)
    ss.add_argument("--seed", type=int, default=42)
    ss.add_argument("--out", required=True)
    ss.set_defaults(func=cmd_sim_scores)
    sg = sim_sub.add_parser("graphs")
    sg.add_argument("--scenario", required=True)
    sg.add_argument("--cm", help="confusion matrix for iid per-node noise")
    sg.add_argument("--seed", type=int)
    sg.add_argument("--out", required=True, help="observed stream JSONL")
    sg.add_argument("--out-truth", help="also write the true stream JSONL")
    sg.set_defaults(func=cmd_sim_graphs)

    run = sub.add_parser("run", help="run the configured pipeline")
    run.add_argument("--config", required=True)
    run.set_defaults(func=cmd_run)

    rate = sub.add_parser("rate", help="innovation rate from a ledger")
    rate.add_argument("--ledger", required=True)
    rate.add_argument("--goal")
    rate.add_argument("--out")
    rate.set_defaults(func=cmd_rate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
