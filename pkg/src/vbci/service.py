"""Operator-facing service around the session engine.

Exposes three HTTP surfaces: a command endpoint accepting operator commands
as JSON, a newline-delimited JSON event stream with resume-from-seq, and
report retrieval for finished runs. Every event goes to the session log
file and to every stream subscriber in the same sequence order.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional, Union

from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse, StreamingResponse

from .dataset import (
    SCHEMA_VERSION,
    BaselineMode,
    TrainedDecoder,
    TrialClass,
    read_decoder,
)
from .errors import (
    AbortRequested,
    DecoderLoadError,
    FormatError,
    PortUnavailable,
    VbciError,
)
from .metrics import assistive_truth, summarize_traces
from .online import DecisionConfig, Outcome
from .protocol import ConfidenceRating
from .session import (
    Clock,
    EventKind,
    EventLog,
    OperatorQueue,
    RealClock,
    RunPlan,
    RunResult,
    SessionConfig,
    SessionEngine,
    SessionEvent,
    SessionPlan,
    VirtualClock,
    plan_from_doc,
    plan_to_doc,
    read_plan,
    subject_source_from_spec,
)

DEFAULT_PORT = 8765
EVENT_BUFFER_SIZE = 1024
_POLL_S = 0.25
_HEARTBEAT_POLLS = 20

CLOCK_MODES = ("real", "virtual")


@dataclass(frozen=True)
class ServiceConfig:
    """Startup configuration; the clock mode is fixed for the lifetime."""

    data_dir: Union[str, Path]
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    decoder_path: Optional[Union[str, Path]] = None
    subject: str = "synthetic:strong"
    clock: str = "virtual"
    session_id: str = "session"
    rating_timeout_s: Optional[float] = None
    baseline_mode: BaselineMode = BaselineMode.PRE_FEEDBACK

    def __post_init__(self) -> None:
        if self.clock not in CLOCK_MODES:
            raise FormatError(
                f"clock mode {self.clock!r} not one of {CLOCK_MODES}"
            )

    def as_doc(self) -> dict:
        return {
            "data_dir": str(self.data_dir),
            "host": self.host,
            "port": self.port,
            "decoder_path": (
                str(self.decoder_path) if self.decoder_path is not None else None
            ),
            "subject": self.subject,
            "clock": self.clock,
            "session_id": self.session_id,
            "rating_timeout_s": self.rating_timeout_s,
            "baseline_mode": self.baseline_mode.value,
        }


class _Subscriber:
    """Bounded event buffer for one stream client.

    The session loop never blocks on a slow client: when the buffer fills,
    the subscriber is marked dead, delivery stops, and its stream closes.
    """

    def __init__(self, maxsize: int = EVENT_BUFFER_SIZE) -> None:
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self.dead = False

    def deliver(self, event: SessionEvent) -> None:
        if self.dead:
            return
        try:
            self.queue.put_nowait(event)
        except queue.Full:
            self.dead = True


class SessionService:
    """Single-session command processor and event fan-out.

    Commands are applied one at a time under a lock (arrival order); the
    session loop runs in a background thread per started run; subscribers
    receive events in seq order through bounded queues.
    """

    def __init__(self, config: ServiceConfig) -> None:
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.decoder: Optional[TrainedDecoder] = None
        if config.decoder_path is not None:
            try:
                self.decoder = read_decoder(config.decoder_path)
            except (OSError, VbciError) as exc:
                raise DecoderLoadError(
                    f"cannot load decoder {config.decoder_path}: {exc}"
                ) from exc
        self.clock: Clock = (
            VirtualClock() if config.clock == "virtual" else RealClock()
        )
        self.subject_spec = config.subject
        subject_source_from_spec(self.subject_spec)
        self.log = EventLog(self.data_dir / f"{config.session_id}.log.jsonl")
        self.session_config = SessionConfig(
            baseline_mode=config.baseline_mode,
            rating_timeout_s=config.rating_timeout_s,
        )
        self._lock = threading.Lock()
        self._plan: Optional[SessionPlan] = None
        self._states: dict[str, str] = {}
        self._results: dict[str, RunResult] = {}
        self._thresholds: dict = {}
        self._engine: Optional[SessionEngine] = None
        self._operator: Optional[OperatorQueue] = None
        self._thread: Optional[threading.Thread] = None
        self._active_run_id: Optional[str] = None
        self._closing = False
        self._handlers = {
            "LoadPlan": self._cmd_load_plan,
            "StartRun": self._cmd_start_run,
            "Abort": self._cmd_abort,
            "SubmitRating": self._cmd_submit_rating,
            "SetThresholds": self._cmd_set_thresholds,
            "SelectSubjectSource": self._cmd_select_subject_source,
        }

    # -- commands --

    def handle(self, command: dict) -> tuple[int, dict]:
        """Apply one operator command; returns (http status, response body)."""
        if not isinstance(command, dict):
            return 400, {"accepted": False, "message": "command must be an object"}
        kind = command.get("kind")
        handler = self._handlers.get(kind)
        if handler is None:
            return 400, {
                "accepted": False,
                "message": f"unknown command kind {kind!r}",
            }
        payload = command.get("payload", {})
        if not isinstance(payload, dict):
            return 400, {"accepted": False, "message": "payload must be an object"}
        with self._lock:
            return handler(payload)

    def _error_event(self, message: str, **extra) -> None:
        self.log.emit(
            EventKind.ERROR, self.clock.now(), {"message": message, **extra}
        )

    def _cmd_load_plan(self, payload: dict) -> tuple[int, dict]:
        if self._run_active():
            return 409, {
                "accepted": False,
                "message": "cannot load a plan while a run is active",
            }
        try:
            if "plan" in payload:
                plan = plan_from_doc(payload["plan"])
            elif "path" in payload:
                plan = read_plan(payload["path"])
            else:
                raise FormatError("LoadPlan needs a 'plan' document or a 'path'")
        except (OSError, VbciError) as exc:
            return 400, {"accepted": False, "message": str(exc)}
        self._plan = plan
        self._states = {run.run_id: "pending" for run in plan.runs}
        self._results.clear()
        return 200, {
            "accepted": True,
            "session_id": plan.session_id,
            "runs": [run.run_id for run in plan.runs],
        }

    def _resolve_run(self, payload: dict) -> RunPlan:
        if self._plan is None:
            raise FormatError("no plan loaded")
        run_id = payload.get("run_id")
        if run_id is None:
            for run in self._plan.runs:
                if self._states.get(run.run_id) == "pending":
                    return run
            raise FormatError("no pending runs left in the plan")
        for run in self._plan.runs:
            if run.run_id == run_id:
                return run
        raise FormatError(f"plan has no run {run_id!r}")

    def _cmd_start_run(self, payload: dict) -> tuple[int, dict]:
        if self._run_active():
            message = (
                f"run {self._active_run_id!r} is active; StartRun rejected"
            )
            self._error_event(message)
            return 409, {"accepted": False, "message": message}
        try:
            run = self._resolve_run(payload)
        except FormatError as exc:
            self._error_event(str(exc))
            return 409, {"accepted": False, "message": str(exc)}
        if self._thresholds:
            run = replace(run, decision=replace(run.decision, **self._thresholds))
        try:
            subject = subject_source_from_spec(self.subject_spec)
            engine = SessionEngine(
                SessionPlan(self.config.session_id, (run,)),
                subject,
                decoder=self.decoder,
                clock=self.clock,
                log=self.log,
                operator=OperatorQueue(),
                config=self.session_config,
                data_dir=self.data_dir,
            )
        except (OSError, VbciError) as exc:
            self._error_event(str(exc), run_id=run.run_id)
            return 409, {"accepted": False, "message": str(exc)}
        self._engine = engine
        self._operator = engine.operator
        self._active_run_id = run.run_id
        self._states[run.run_id] = "active"
        self._thread = threading.Thread(
            target=self._run_to_completion,
            args=(engine, run.run_id),
            name=f"vbci-run-{run.run_id}",
            daemon=True,
        )
        self._thread.start()
        return 200, {"accepted": True, "run_id": run.run_id}

    def _run_to_completion(self, engine: SessionEngine, run_id: str) -> None:
        state = "completed"
        result: Optional[RunResult] = None
        try:
            result = engine.run().runs[0]
        except AbortRequested:
            state = "aborted"
        except VbciError as exc:
            state = "failed"
            self._error_event(str(exc), run_id=run_id)
        except Exception as exc:  # engine bugs must not die silently
            state = "failed"
            self._error_event(f"{type(exc).__name__}: {exc}", run_id=run_id)
        finally:
            with self._lock:
                if result is not None:
                    self._results[run_id] = result
                self._states[run_id] = state
                if self._active_run_id == run_id:
                    self._active_run_id = None
                    self._engine = None
                    self._operator = None

    def _cmd_abort(self, payload: dict) -> tuple[int, dict]:
        operator = self._operator
        if operator is None:
            return 409, {"accepted": False, "message": "no active run to abort"}
        operator.submit_abort(payload.get("reason", "operator abort"))
        return 200, {"accepted": True, "run_id": self._active_run_id}

    def _cmd_submit_rating(self, payload: dict) -> tuple[int, dict]:
        engine = self._engine
        operator = self._operator
        pending = engine.rating_pending_trial if engine is not None else None
        try:
            rating = ConfidenceRating(
                trial_index=int(payload["trial_index"]),
                score=int(payload["score"]),
                rater_note=str(payload.get("rater_note", "")),
            )
        except (KeyError, TypeError, ValueError, VbciError) as exc:
            return 400, {"accepted": False, "message": f"bad rating: {exc}"}
        if operator is None or pending is None or pending != rating.trial_index:
            message = (
                f"rating for trial {rating.trial_index} rejected: "
                + ("no rating is pending" if pending is None else f"trial {pending} is pending")
            )
            self._error_event(message)
            return 409, {"accepted": False, "message": message}
        operator.submit_rating(rating)
        return 200, {"accepted": True, "trial_index": rating.trial_index}

    def _cmd_set_thresholds(self, payload: dict) -> tuple[int, dict]:
        allowed = {"yes_threshold", "no_threshold", "timeout_s"}
        unknown = set(payload) - allowed
        if unknown:
            return 400, {
                "accepted": False,
                "message": f"unknown threshold fields {sorted(unknown)}",
            }
        merged = {**self._thresholds, **{k: float(v) for k, v in payload.items()}}
        try:
            effective = replace(DecisionConfig(), **merged)
        except VbciError as exc:
            return 400, {"accepted": False, "message": str(exc)}
        self._thresholds = merged
        return 200, {
            "accepted": True,
            "yes_threshold": effective.yes_threshold,
            "no_threshold": effective.no_threshold,
            "timeout_s": effective.timeout_s,
        }

    def _cmd_select_subject_source(self, payload: dict) -> tuple[int, dict]:
        if self._run_active():
            return 409, {
                "accepted": False,
                "message": "cannot switch subject source while a run is active",
            }
        spec = payload.get("source")
        if not isinstance(spec, str):
            return 400, {"accepted": False, "message": "payload needs 'source'"}
        try:
            subject_source_from_spec(spec)
        except (OSError, VbciError) as exc:
            return 400, {"accepted": False, "message": str(exc)}
        self.subject_spec = spec
        return 200, {"accepted": True, "source": spec}

    def _run_active(self) -> bool:
        return self._active_run_id is not None

    # -- event stream --

    def subscribe(
        self, from_seq: int = 0, maxsize: int = EVENT_BUFFER_SIZE
    ) -> _Subscriber:
        subscriber = _Subscriber(maxsize)
        self.log.attach(subscriber.deliver, from_seq=from_seq)
        return subscriber

    def unsubscribe(self, subscriber: _Subscriber) -> None:
        self.log.detach(subscriber.deliver)

    def stream_lines(self, from_seq: int = 0) -> Iterator[str]:
        """Newline-delimited JSON event records from ``from_seq`` onward.

        Blank lines are keepalive heartbeats and carry no event.
        """
        subscriber = self.subscribe(from_seq)
        idle_polls = 0
        try:
            while True:
                if subscriber.dead:
                    break
                try:
                    event = subscriber.queue.get(timeout=_POLL_S)
                except queue.Empty:
                    if self._closing:
                        break
                    idle_polls += 1
                    if idle_polls >= _HEARTBEAT_POLLS:
                        idle_polls = 0
                        yield "\n"
                    continue
                idle_polls = 0
                yield json.dumps(event.as_record(), sort_keys=True) + "\n"
        finally:
            self.unsubscribe(subscriber)

    # -- reports --

    def session_report(self) -> dict:
        with self._lock:
            engine = self._engine
            runs = []
            if self._plan is not None:
                for run in self._plan.runs:
                    runs.append(
                        {
                            "run_id": run.run_id,
                            "run_type": run.run_type.value,
                            "n_trials": run.n_trials,
                            "state": self._states.get(run.run_id, "pending"),
                        }
                    )
            return {
                "schema_version": SCHEMA_VERSION,
                "session_id": self.config.session_id,
                "clock": self.config.clock,
                "subject_source": self.subject_spec,
                "decoder_loaded": self.decoder is not None,
                "thresholds": dict(self._thresholds),
                "active_run_id": self._active_run_id,
                "rating_pending_trial": (
                    engine.rating_pending_trial if engine is not None else None
                ),
                "n_events": len(self.log.events),
                "plan": plan_to_doc(self._plan) if self._plan is not None else None,
                "runs": runs,
            }

    def run_report(self, run_id: str) -> Optional[dict]:
        with self._lock:
            state = self._states.get(run_id)
            result = self._results.get(run_id)
        if state is None:
            return None
        report: dict = {"run_id": run_id, "state": state}
        if result is None:
            return report
        report["run_type"] = result.plan.run_type.value
        report["decision_config"] = {
            "yes_threshold": result.plan.decision.yes_threshold,
            "no_threshold": result.plan.decision.no_threshold,
            "timeout_s": result.plan.decision.timeout_s,
        }
        report["artifacts"] = {
            "recording": (
                str(result.recording_path) if result.recording_path else None
            ),
            "manifest": str(result.manifest_path) if result.manifest_path else None,
            "log": str(self.log.path),
        }
        trials = []
        for trial in result.trials:
            entry: dict = {
                "trial_index": trial.trial_index,
                "true_class": trial.true_class.value,
            }
            if trial.question is not None:
                entry["question"] = trial.question.text
            if trial.node_id is not None:
                entry["node_id"] = trial.node_id
            if trial.decision is not None:
                entry["outcome"] = trial.decision.outcome.value
                entry["decision_time_s"] = trial.decision.decision_time_s
            if trial.rating is not None:
                entry["rating_score"] = trial.rating.score
            trials.append(entry)
        report["trials"] = trials
        report.update(_run_metrics(result))
        return report

    # -- lifecycle --

    def join_active(self, timeout_s: Optional[float] = None) -> bool:
        """Wait for the active run thread; True when no run is running."""
        thread = self._thread
        if thread is None:
            return True
        thread.join(timeout_s)
        return not thread.is_alive()

    def close(self) -> None:
        self._closing = True
        operator = self._operator
        if operator is not None:
            operator.submit_abort("service shutting down")
        self.join_active(5.0)
        self.log.close()


def _run_metrics(result: RunResult) -> dict:
    """Headline metrics for a finished run, when they are well defined."""
    out: dict = {}
    traces = result.traces
    if not traces:
        return out
    known = [t for t in traces if t.true_class is not TrialClass.UNKNOWN]
    if len(known) == len(traces):
        out["metrics"] = summarize_traces(traces).as_dict()
        return out
    relabeled = []
    for record in result.trials:
        if record.trace is None or record.rating is None:
            continue
        if record.decision is None or record.decision.outcome is Outcome.TIMEOUT:
            continue
        truth = assistive_truth(record.decision, record.rating)
        if truth is None:
            continue
        relabeled.append(replace(record.trace, true_class=truth))
    if relabeled:
        metrics = summarize_traces(tuple(relabeled)).as_dict()
        metrics["truth_from_ratings"] = True
        metrics["n_rated"] = len(relabeled)
        out["metrics"] = metrics
    return out


def build_app(service: SessionService) -> FastAPI:
    app = FastAPI(title="vbci session service")

    @app.post("/command")
    def command(body: dict = Body(...)):
        status, payload = service.handle(body)
        return JSONResponse(payload, status_code=status)

    @app.get("/events")
    def events(from_seq: int = 0):
        return StreamingResponse(
            service.stream_lines(from_seq),
            media_type="application/x-ndjson",
        )

    @app.get("/reports")
    def reports():
        return JSONResponse(service.session_report())

    @app.get("/reports/{run_id}")
    def run_report(run_id: str):
        payload = service.run_report(run_id)
        if payload is None:
            return JSONResponse(
                {"message": f"unknown run {run_id!r}"}, status_code=404
            )
        return JSONResponse(payload)

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service until interrupted; raises PortUnavailable on a busy port."""
    import uvicorn

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((config.host, config.port))
    except OSError as exc:
        raise PortUnavailable(f"{config.host}:{config.port}: {exc}") from None
    finally:
        probe.close()
    service = SessionService(config)
    app = build_app(service)
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    finally:
        service.close()
