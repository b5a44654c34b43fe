#!/usr/bin/env python3
"""Produce a ready-to-browse assistive session with caretaker ratings.

Builds a demo directory containing offline training data, a trained decoder,
and one assistive run in which a scripted synthetic subject answers the
default question tree while preloaded caretaker confidence ratings are
recorded into the event log. The resulting log exercises every event kind
the service streams, so it doubles as fixture data for console development.

Example:
    python scripts/make_assistive_demo.py --out /tmp/demo
    vbci evaluate /tmp/demo/assistive/demo.log.jsonl
    vbci serve --data-dir /tmp/demo/live --decoder /tmp/demo/decoder.json \\
        --subject synthetic:strong --clock virtual
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from vbci.dataset import write_decoder
from vbci.online import Outcome
from vbci.protocol import ConfidenceRating, default_assistive_tree
from vbci.session import (
    OperatorQueue,
    SessionPlan,
    SyntheticSubjectSource,
    VirtualClock,
    assistive_run_plan,
    offline_run_plan,
    run_session,
)
from vbci.synth import strong_profile
from vbci.training import train_decoder

ANSWER_SCRIPT = (Outcome.YES, Outcome.YES, Outcome.NO, Outcome.NO)
RATING_SCRIPT = (5, 4, 2, 5)


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True, help="demo directory")
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--offline-runs", type=int, default=3)
    parser.add_argument("--offline-trials", type=int, default=16)
    return parser.parse_args(argv)


def main(argv: list[str]) -> int:
    args = parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    offline_plan = SessionPlan(
        "demo-off",
        tuple(
            offline_run_plan(
                f"demo-off-r{r}", n_trials=args.offline_trials, seed=args.seed + r
            )
            for r in range(args.offline_runs)
        ),
    )
    offline = run_session(
        offline_plan,
        SyntheticSubjectSource(strong_profile(seed=args.seed)),
        clock=VirtualClock(),
        data_dir=args.out / "offline",
    )
    decoder = train_decoder(
        [(run.recording, run.manifest) for run in offline.runs]
    )
    decoder_path = args.out / "decoder.json"
    write_decoder(decoder, decoder_path)

    operator = OperatorQueue()
    for trial_index, score in enumerate(RATING_SCRIPT):
        operator.submit_rating(ConfidenceRating(trial_index, score))
    assistive_plan = SessionPlan(
        "demo", (assistive_run_plan("demo-r1", default_assistive_tree()),)
    )
    subject = SyntheticSubjectSource(
        strong_profile(seed=args.seed + 100), assistive_answers=ANSWER_SCRIPT
    )
    result = run_session(
        assistive_plan,
        subject,
        decoder=decoder,
        operator=operator,
        clock=VirtualClock(),
        data_dir=args.out / "assistive",
    )

    run = result.runs[0]
    doc = {
        "decoder": str(decoder_path),
        "event_log": str(args.out / "assistive" / "demo.log.jsonl"),
        "recording": str(run.recording_path),
        "manifest": str(run.manifest_path),
        "trials": [
            {
                "trial_index": trial.trial_index,
                "question": trial.question.text,
                "decoded": trial.decision.outcome.value,
                "decision_time_s": trial.decision.decision_time_s,
                "rating": None if trial.rating is None else trial.rating.score,
            }
            for trial in run.trials
        ],
    }
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
