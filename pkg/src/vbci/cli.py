"""Command line toolkit for auditory yes/no decoding sessions.

Subcommands cover the full workflow: synthesize sessions against a virtual
clock (``simulate``), fit a decoder from offline recordings (``train``),
recompute decisions from a saved run (``replay``), score an event log
(``evaluate``), run per-channel class statistics (``permtest``, ``topo``),
and expose the operator service over HTTP (``serve``).

Conventions shared by every subcommand: the effective configuration is
echoed to stderr as a single JSON line before any work starts, the primary
report is JSON on stdout, and ``--csv PATH`` writes a flat secondary table.
Exit codes: 0 on success, 1 on a usage error, 2 on a data or validation
error. Given the same ``--seed`` a subcommand's outputs are deterministic.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .dataset import (
    BaselineMode,
    EpochingConfig,
    Recording,
    RunManifest,
    epoch_trials,
    read_decoder,
    read_jsonl,
    read_manifest,
    read_recording,
    write_decoder,
)
from .dataset import TrialClass
from .errors import FormatError, VbciError
from .forest import EnsembleConfig
from .metrics import (
    CHANNEL_TEST_SHUFFLES,
    DEFAULT_HIT_THRESHOLD,
    assistive_truth,
    channel_difference_test,
    class_band_samples,
    summarize_traces,
    topo_class_difference,
)
from .online import DecisionConfig, Outcome
from .protocol import default_assistive_tree
from .service import DEFAULT_PORT, ServiceConfig, serve
from .session import (
    RunLogView,
    SessionConfig,
    SessionPlan,
    SyntheticSubjectSource,
    VirtualClock,
    assistive_run_plan,
    offline_run_plan,
    replay_run,
    run_session,
    run_views_from_records,
    standard_run_plan,
    subject_source_from_spec,
)
from .signals import FilterSpec
from .training import train_decoder_reported

_EPOCH_DEFAULTS = EpochingConfig()


# --- shared plumbing ----------------------------------------------------------


def _config_value(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_config_value(v) for v in value]
    return value


def _echo_config(args: argparse.Namespace) -> None:
    """Print the effective configuration as one JSON line on stderr."""
    doc = {"command": args.command}
    for key, value in vars(args).items():
        if key not in ("command", "handler"):
            doc[key] = _config_value(value)
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def _write_csv(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)


def _emit(doc: dict, csv_path: Optional[Path], rows: Sequence[dict]) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))
    if csv_path is not None:
        _write_csv(csv_path, rows)


def _load_runs(paths: Sequence[str]) -> list[tuple[Recording, RunManifest]]:
    """Read manifest files and the recordings they point at.

    A relative recording path that does not resolve from the working
    directory is retried next to its manifest, so a copied session folder
    stays loadable.
    """
    runs = []
    for raw in paths:
        manifest_path = Path(raw)
        manifest = read_manifest(manifest_path)
        recording_path = Path(manifest.recording_path)
        if not recording_path.is_absolute() and not recording_path.exists():
            recording_path = manifest_path.parent / recording_path.name
        runs.append((read_recording(recording_path), manifest))
    return runs


def _epoching_from(args: argparse.Namespace) -> EpochingConfig:
    alpha = (
        FilterSpec(args.alpha[0], args.alpha[1])
        if args.alpha
        else _EPOCH_DEFAULTS.alpha_filter
    )
    beta = (
        FilterSpec(args.beta[0], args.beta[1])
        if args.beta
        else _EPOCH_DEFAULTS.beta_filter
    )
    return EpochingConfig(
        alpha_filter=alpha,
        beta_filter=beta,
        window_s=args.window,
        step_s=args.step,
        baseline_mode=BaselineMode(args.baseline),
    )


def _add_epoching_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--alpha",
        nargs=2,
        type=float,
        metavar=("LOW_HZ", "HIGH_HZ"),
        help="alpha band edges (default 7 12)",
    )
    sub.add_argument(
        "--beta",
        nargs=2,
        type=float,
        metavar=("LOW_HZ", "HIGH_HZ"),
        help="beta band edges (default 12 30)",
    )
    sub.add_argument("--window", type=float, default=_EPOCH_DEFAULTS.window_s)
    sub.add_argument("--step", type=float, default=_EPOCH_DEFAULTS.step_s)
    _add_baseline_flag(sub)


def _add_baseline_flag(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--baseline",
        choices=[m.value for m in BaselineMode],
        default=BaselineMode.PRE_FEEDBACK.value,
        help="which one-second window normalizes each trial",
    )


def _parse_answers(raw: Optional[str]) -> tuple[Outcome, ...]:
    if not raw:
        return ()
    answers = []
    for token in raw.split(","):
        token = token.strip().lower()
        if token == "yes":
            answers.append(Outcome.YES)
        elif token == "no":
            answers.append(Outcome.NO)
        else:
            raise FormatError(f"answers must be yes or no, got {token!r}")
    return tuple(answers)


# --- simulate -----------------------------------------------------------------


def _cmd_simulate(args: argparse.Namespace) -> int:
    if args.run_type != "offline" and args.decoder is None:
        print(
            "error: --decoder is required for online run types",
            file=sys.stderr,
        )
        return 1
    out = Path(args.out)
    decoder = read_decoder(args.decoder) if args.decoder else None
    plans = []
    for i in range(args.runs):
        run_id = f"{args.session_id}-r{i + 1}"
        seed = args.seed + i
        if args.run_type == "offline":
            n = args.trials if args.trials is not None else 16
            plans.append(
                offline_run_plan(run_id, n, args.modulated_fraction, seed)
            )
        elif args.run_type == "standard":
            n = args.trials if args.trials is not None else 10
            plans.append(
                standard_run_plan(run_id, n, args.modulated_fraction, seed)
            )
        else:
            plans.append(assistive_run_plan(run_id, default_assistive_tree()))
    plan = SessionPlan(args.session_id, tuple(plans))
    subject = subject_source_from_spec(args.subject)
    if isinstance(subject, SyntheticSubjectSource):
        subject = SyntheticSubjectSource(
            replace(subject.profile, seed=args.seed),
            assistive_answers=_parse_answers(args.answers),
        )
    result = run_session(
        plan, subject, decoder=decoder, clock=VirtualClock(), data_dir=out
    )
    runs_doc = []
    rows = []
    for run in result.runs:
        trials_doc = []
        for record in run.trials:
            entry = {
                "trial_index": record.trial_index,
                "true_class": record.true_class.value,
                "outcome": (
                    record.decision.outcome.value if record.decision else None
                ),
                "decision_time_s": (
                    record.decision.decision_time_s if record.decision else None
                ),
            }
            trials_doc.append(entry)
            rows.append({"run_id": run.plan.run_id, **entry})
        runs_doc.append(
            {
                "run_id": run.plan.run_id,
                "run_type": run.plan.run_type.value,
                "n_trials": len(run.trials),
                "recording": (
                    str(run.recording_path) if run.recording_path else None
                ),
                "manifest": (
                    str(run.manifest_path) if run.manifest_path else None
                ),
                "trials": trials_doc,
            }
        )
    doc = {
        "session_id": args.session_id,
        "log": str(out / f"{args.session_id}.log.jsonl"),
        "runs": runs_doc,
    }
    _emit(doc, args.csv, rows)
    return 0


# --- train --------------------------------------------------------------------


def _cmd_train(args: argparse.Namespace) -> int:
    runs = _load_runs(args.manifests)
    epoching = _epoching_from(args)
    frames = [epoch_trials(rec, man, epoching) for rec, man in runs]
    ensemble = EnsembleConfig(
        n_trees=args.trees, n_iterations=args.iterations, seed=args.seed
    )
    decoder, report = train_decoder_reported(
        frames,
        ensemble=ensemble,
        regularization_c=args.svm_c,
        epoching=epoching,
    )
    write_decoder(decoder, args.out)
    doc = {"decoder": str(args.out), **report}
    cv = report["cross_validation"]
    rows = [
        {"fold": i, "accuracy": acc}
        for i, acc in enumerate(cv["per_fold_accuracy"])
    ]
    rows.append({"fold": "pooled", "accuracy": cv["held_out_accuracy"]})
    _emit(doc, args.csv, rows)
    return 0


# --- replay -------------------------------------------------------------------


def _cmd_replay(args: argparse.Namespace) -> int:
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    if args.recording:
        recording_path = Path(args.recording)
    else:
        recording_path = Path(manifest.recording_path)
        if not recording_path.is_absolute() and not recording_path.exists():
            recording_path = manifest_path.parent / recording_path.name
    recording = read_recording(recording_path)
    decoder = read_decoder(args.decoder)
    decision_config = DecisionConfig()
    overrides = {
        key: value
        for key, value in (
            ("yes_threshold", args.yes_threshold),
            ("no_threshold", args.no_threshold),
            ("timeout_s", args.timeout_s),
        )
        if value is not None
    }
    if overrides:
        decision_config = replace(decision_config, **overrides)
    config = SessionConfig(baseline_mode=BaselineMode(args.baseline))
    trials = replay_run(recording, manifest, decoder, decision_config, config)
    recorded = {}
    if args.log:
        for view in run_views_from_records(read_jsonl(args.log)):
            if view.run_id == manifest.run_id:
                recorded = {t.trial_index: t.decision for t in view.traces}
    rows = []
    for trial in trials:
        row = {
            "trial_index": trial.trial_index,
            "true_class": trial.true_class.value,
            "outcome": (
                trial.decision.outcome.value if trial.decision else None
            ),
            "decision_time_s": (
                trial.decision.decision_time_s if trial.decision else None
            ),
        }
        if args.log:
            previous = recorded.get(trial.trial_index)
            row["recorded_outcome"] = (
                previous.outcome.value if previous else None
            )
            row["recorded_decision_time_s"] = (
                previous.decision_time_s if previous else None
            )
            row["matches"] = (
                previous is not None
                and trial.decision is not None
                and previous.outcome is trial.decision.outcome
                and previous.decision_time_s == trial.decision.decision_time_s
            )
        rows.append(row)
    doc = {
        "run_id": manifest.run_id,
        "n_trials": len(trials),
        "trials": rows,
    }
    if args.log:
        doc["identical"] = all(row["matches"] for row in rows)
    _emit(doc, args.csv, rows)
    return 0


# --- evaluate -----------------------------------------------------------------


def _view_metrics(
    view: RunLogView, threshold: float
) -> tuple[Optional[dict], bool, int]:
    """Score one logged run; assistive truth comes from caretaker ratings."""
    traces = view.traces
    if not traces:
        return None, False, 0
    if all(t.true_class is not TrialClass.UNKNOWN for t in traces):
        return summarize_traces(traces, threshold).as_dict(), False, 0
    relabeled = []
    for trace in traces:
        rating = view.ratings.get(trace.trial_index)
        if rating is None or trace.decision is None:
            continue
        truth = assistive_truth(trace.decision, rating)
        if truth is None:
            continue
        relabeled.append(replace(trace, true_class=truth))
    if not relabeled:
        return None, True, 0
    metrics = summarize_traces(relabeled, threshold).as_dict()
    return metrics, True, len(relabeled)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    views = run_views_from_records(read_jsonl(args.log))
    runs_doc = []
    rows = []
    for view in views:
        metrics, from_ratings, n_rated = _view_metrics(view, args.threshold)
        entry = {
            "run_id": view.run_id,
            "n_traces": len(view.traces),
            "summary": view.summary,
            "metrics": metrics,
            "truth_from_ratings": from_ratings,
        }
        if from_ratings:
            entry["n_rated"] = n_rated
        runs_doc.append(entry)
        if metrics is not None:
            rows.append(
                {
                    "run_id": view.run_id,
                    "truth_from_ratings": from_ratings,
                    **metrics,
                }
            )
    doc = {"log": str(args.log), "n_runs": len(views), "runs": runs_doc}
    _emit(doc, args.csv, rows)
    return 0


# --- channel statistics -------------------------------------------------------


def _bands_from(args: argparse.Namespace) -> tuple[str, ...]:
    return ("alpha", "beta") if args.band == "both" else (args.band,)


def _cmd_permtest(args: argparse.Namespace) -> int:
    runs = _load_runs(args.manifests)
    epoching = _epoching_from(args)
    frames = [epoch_trials(rec, man, epoching) for rec, man in runs]
    bands_doc = []
    rows = []
    for band in _bands_from(args):
        modulated, baseline = class_band_samples(frames, band)
        result = channel_difference_test(
            modulated, baseline, n_shuffles=args.shuffles, seed=args.seed
        )
        channels = []
        for i, name in enumerate(result.channel_names):
            entry = {
                "channel": name,
                "difference": float(result.observed_difference[i]),
                "p_raw": float(result.raw_p[i]),
                "p_adjusted": float(result.adjusted_p[i]),
                "significant": bool(
                    result.adjusted_p[i] <= args.significance
                ),
            }
            channels.append(entry)
            rows.append({"band": band, **entry})
        bands_doc.append(
            {
                "band": band,
                "n_shuffles": args.shuffles,
                "significance_level": args.significance,
                "n_significant": sum(c["significant"] for c in channels),
                "channels": channels,
            }
        )
    _emit({"bands": bands_doc}, args.csv, rows)
    return 0


def _cmd_topo(args: argparse.Namespace) -> int:
    runs = _load_runs(args.manifests)
    epoching = _epoching_from(args)
    frames = [epoch_trials(rec, man, epoching) for rec, man in runs]
    bands_doc = []
    rows = []
    for band in _bands_from(args):
        table = topo_class_difference(frames, band)
        difference = [float(d) for d in table["difference"]]
        bands_doc.append(
            {
                "band": table["band"],
                "channels": list(table["channels"]),
                "difference": difference,
            }
        )
        for name, value in zip(table["channels"], difference):
            rows.append({"band": table["band"], "channel": name, "difference": value})
    _emit({"bands": bands_doc}, args.csv, rows)
    return 0


# --- serve --------------------------------------------------------------------


def _cmd_serve(args: argparse.Namespace) -> int:
    config = ServiceConfig(
        data_dir=args.data_dir,
        host=args.host,
        port=args.port,
        decoder_path=args.decoder,
        subject=args.subject,
        clock=args.clock,
        session_id=args.session_id,
        rating_timeout_s=args.rating_timeout_s,
        baseline_mode=BaselineMode(args.baseline),
    )
    serve(config)
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vbci",
        description=(
            "Synthesize, train, replay, evaluate, and serve auditory"
            " yes/no decoding sessions."
        ),
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    sim = subparsers.add_parser(
        "simulate", help="run synthetic sessions against a virtual clock"
    )
    sim.add_argument("--out", type=Path, required=True, help="session data directory")
    sim.add_argument("--session-id", default="sim")
    sim.add_argument(
        "--run-type",
        choices=["offline", "standard", "assistive"],
        default="offline",
    )
    sim.add_argument("--runs", type=int, default=1)
    sim.add_argument(
        "--trials",
        type=int,
        default=None,
        help="trials per run (default 16 offline, 10 standard)",
    )
    sim.add_argument(
        "--subject",
        default="synthetic:strong",
        help="replay:PATH, synthetic:PROFILE, synthetic:PATH, or stub",
    )
    sim.add_argument(
        "--decoder", type=Path, default=None, help="required for online runs"
    )
    sim.add_argument(
        "--answers",
        default=None,
        help="comma-separated yes/no intents for assistive trials",
    )
    sim.add_argument("--modulated-fraction", type=float, default=0.5)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--csv", type=Path, default=None)
    sim.set_defaults(handler=_cmd_simulate)

    train = subparsers.add_parser(
        "train", help="fit a decoder from offline recordings"
    )
    train.add_argument("manifests", nargs="+", help="trial manifest files")
    train.add_argument("--out", type=Path, required=True, help="decoder file")
    train.add_argument("--trees", type=int, default=EnsembleConfig().n_trees)
    train.add_argument(
        "--iterations", type=int, default=EnsembleConfig().n_iterations
    )
    train.add_argument("--seed", type=int, default=0)
    train.add_argument(
        "--svm-c", type=float, default=1.0, help="margin regularization"
    )
    _add_epoching_flags(train)
    train.add_argument("--csv", type=Path, default=None)
    train.set_defaults(handler=_cmd_train)

    rep = subparsers.add_parser(
        "replay", help="recompute decisions from a saved run"
    )
    rep.add_argument("--manifest", type=Path, required=True)
    rep.add_argument("--decoder", type=Path, required=True)
    rep.add_argument(
        "--recording",
        type=Path,
        default=None,
        help="override the manifest's recording path",
    )
    rep.add_argument(
        "--log",
        type=Path,
        default=None,
        help="event log to diff the recomputed decisions against",
    )
    rep.add_argument("--yes-threshold", type=float, default=None)
    rep.add_argument("--no-threshold", type=float, default=None)
    rep.add_argument("--timeout-s", type=float, default=None)
    _add_baseline_flag(rep)
    rep.add_argument("--csv", type=Path, default=None)
    rep.set_defaults(handler=_cmd_replay)

    ev = subparsers.add_parser(
        "evaluate", help="score the runs recorded in an event log"
    )
    ev.add_argument("log", type=Path, help="event log (JSON lines)")
    ev.add_argument(
        "--threshold",
        type=float,
        default=DEFAULT_HIT_THRESHOLD,
        help="evidence level a correct trial should reach",
    )
    ev.add_argument("--csv", type=Path, default=None)
    ev.set_defaults(handler=_cmd_evaluate)

    perm = subparsers.add_parser(
        "permtest",
        help="per-channel label-shuffle tests of the class difference",
    )
    perm.add_argument("manifests", nargs="+", help="trial manifest files")
    perm.add_argument(
        "--band", choices=["alpha", "beta", "both"], default="both"
    )
    perm.add_argument(
        "--shuffles", type=int, default=CHANNEL_TEST_SHUFFLES
    )
    perm.add_argument("--seed", type=int, default=0)
    perm.add_argument(
        "--significance",
        type=float,
        default=0.05,
        help="level applied to the adjusted p-values",
    )
    _add_epoching_flags(perm)
    perm.add_argument("--csv", type=Path, default=None)
    perm.set_defaults(handler=_cmd_permtest)

    topo = subparsers.add_parser(
        "topo", help="per-channel mean class difference tables"
    )
    topo.add_argument("manifests", nargs="+", help="trial manifest files")
    topo.add_argument(
        "--band", choices=["alpha", "beta", "both"], default="both"
    )
    _add_epoching_flags(topo)
    topo.add_argument("--csv", type=Path, default=None)
    topo.set_defaults(handler=_cmd_topo)

    srv = subparsers.add_parser(
        "serve", help="run the operator service over HTTP"
    )
    srv.add_argument("--data-dir", type=Path, required=True)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=DEFAULT_PORT)
    srv.add_argument("--decoder", type=Path, default=None)
    srv.add_argument("--clock", choices=["real", "virtual"], default="real")
    srv.add_argument("--subject", default="synthetic:strong")
    srv.add_argument("--session-id", default="session")
    srv.add_argument("--rating-timeout-s", type=float, default=None)
    _add_baseline_flag(srv)
    srv.set_defaults(handler=_cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    _echo_config(args)
    try:
        return args.handler(args)
    except (VbciError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
