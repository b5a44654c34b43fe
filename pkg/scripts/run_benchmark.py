#!/usr/bin/env python3
"""End-to-end closed-loop benchmark on a synthetic subject.

Synthesizes offline training sessions, trains a subject-specific decoder,
runs online feedback sessions against the same subject profile, and prints
the decoding metrics as JSON. With --null-control the subject carries no
class-dependent modulation, so kappa should sit near zero and the channel
permutation tests should stay quiet.

Example:
    python scripts/run_benchmark.py --out /tmp/bench --seed 7
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from vbci.dataset import EpochingConfig, epoch_trials, write_decoder
from vbci.metrics import (
    class_band_samples,
    channel_difference_test,
    summarize_traces,
)
from vbci.session import (
    SessionPlan,
    SyntheticSubjectSource,
    VirtualClock,
    offline_run_plan,
    run_session,
    standard_run_plan,
)
from vbci.synth import null_profile, strong_profile
from vbci.training import train_decoder


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True, help="artifact directory")
    parser.add_argument("--seed", type=int, default=7, help="master seed")
    parser.add_argument("--sessions", type=int, default=3, help="offline training sessions")
    parser.add_argument("--runs-per-session", type=int, default=3)
    parser.add_argument("--offline-trials", type=int, default=16, help="trials per offline run")
    parser.add_argument("--online-runs", type=int, default=2)
    parser.add_argument("--online-trials", type=int, default=10, help="trials per online run")
    parser.add_argument("--beta-gain", type=float, default=2.0)
    parser.add_argument("--alpha-gain", type=float, default=1.5)
    parser.add_argument(
        "--null-control",
        action="store_true",
        help="use an unmodulated subject (decoding should hover at chance)",
    )
    parser.add_argument(
        "--channel-shuffles",
        type=int,
        default=1_000,
        help="label shuffles for the per-channel permutation test",
    )
    return parser.parse_args(argv)


def make_profile(args: argparse.Namespace, seed: int):
    if args.null_control:
        return null_profile(seed=seed)
    return strong_profile(
        beta_gain=args.beta_gain, alpha_gain=args.alpha_gain, seed=seed
    )


def record_offline(args: argparse.Namespace) -> list:
    """Simulate the offline training sessions and return (recording, manifest) pairs."""
    pairs = []
    for s in range(args.sessions):
        plan = SessionPlan(
            f"bench-off{s}",
            tuple(
                offline_run_plan(
                    f"off{s}-r{r}",
                    n_trials=args.offline_trials,
                    seed=args.sessions * s + r,
                )
                for r in range(args.runs_per_session)
            ),
        )
        subject = SyntheticSubjectSource(make_profile(args, args.seed + s))
        result = run_session(
            plan, subject, clock=VirtualClock(), data_dir=args.out / f"off{s}"
        )
        pairs.extend((run.recording, run.manifest) for run in result.runs)
    return pairs


def record_online(args: argparse.Namespace, decoder) -> list:
    plan = SessionPlan(
        "bench-on",
        tuple(
            standard_run_plan(f"on-r{r}", n_trials=args.online_trials, seed=50 + r)
            for r in range(args.online_runs)
        ),
    )
    subject = SyntheticSubjectSource(make_profile(args, args.seed + 1000))
    result = run_session(
        plan,
        subject,
        decoder=decoder,
        clock=VirtualClock(),
        data_dir=args.out / "online",
    )
    return [trial.trace for run in result.runs for trial in run.trials]


def channel_report(pairs: list, shuffles: int) -> dict:
    """Per-band counts of channels whose class difference survives correction."""
    frames = [epoch_trials(rec, man, EpochingConfig()) for rec, man in pairs]
    report = {}
    for band in ("alpha", "beta"):
        modulated, baseline = class_band_samples(frames, band)
        result = channel_difference_test(
            modulated, baseline, n_shuffles=shuffles, seed=0
        )
        flagged = [
            name
            for name, p in zip(result.channel_names, result.adjusted_p)
            if p <= 0.05
        ]
        report[band] = {"n_significant": len(flagged), "channels": flagged}
    return report


def main(argv: list[str]) -> int:
    args = parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    pairs = record_offline(args)
    decoder = train_decoder(pairs)
    decoder_path = args.out / "decoder.json"
    write_decoder(decoder, decoder_path)

    traces = record_online(args, decoder)
    summary = summarize_traces(traces)

    doc = {
        "subject": "null" if args.null_control else "strong",
        "n_offline_runs": len(pairs),
        "n_online_trials": summary.n_trials,
        "n_timeouts": summary.n_timeouts,
        "kappa": summary.kappa.kappa,
        "bar_dynamics_mean_percent": summary.bar_dynamics_mean,
        "hits_percent": summary.hits_percent,
        "mean_latency_s": summary.mean_latency_s,
        "channel_tests": channel_report(pairs, args.channel_shuffles),
        "decoder": str(decoder_path),
        "elapsed_s": round(time.perf_counter() - started, 2),
    }
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
