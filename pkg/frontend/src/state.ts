/**
 * Console view state as a pure fold over event records.
 *
 * The console is stateless beyond the stream: every field below is computed
 * only from the records seen so far, so replaying the same records from seq
 * 0 rebuilds the identical view. Connection status lives next to the fold
 * (it describes the transport, not the session).
 */

import {
  DecisionPayload,
  ErrorPayload,
  EventRecord,
  EvidencePayload,
  Outcome,
  PhaseChangePayload,
  QuestionShownPayload,
  RatingRecordedPayload,
  RunSummaryPayload,
  TonePayload,
  PosteriorPayload,
  TreeMovePayload,
  TrialPhase,
  decisionMessage,
} from "./protocol.js";

export interface EvidencePoint {
  timeInTrialS: number;
  value: number;
}

export interface ToneIndicator {
  frequencyHz: number;
  volume: number;
}

export interface DecisionModal {
  runId: string;
  trialIndex: number;
  outcome: Outcome;
  message: string;
  decisionTimeS: number;
}

export interface TreeStep {
  fromNode: string;
  answer: Outcome;
  toNode: string | null;
  toQuestion: string | null;
}

export interface RatingEntry {
  enabled: boolean;
  runId: string | null;
  trialIndex: number | null;
}

export interface RatingBadge {
  trialIndex: number;
  score: number;
  classification: "Correct" | "Incorrect";
}

export interface ConsoleState {
  lastSeq: number;
  runId: string | null;
  trialIndex: number | null;
  phase: TrialPhase | null;
  phaseAudioText: string | null;
  question: { id: string; text: string } | null;
  /** Latest accumulated probability, exactly as streamed. */
  evidence: EvidencePoint | null;
  /** Every evidence output of the current trial, oldest first. */
  evidenceTrace: EvidencePoint[];
  posterior: number | null;
  tone: ToneIndicator | null;
  decision: DecisionModal | null;
  treePath: TreeStep[];
  currentNode: string | null;
  ratingEntry: RatingEntry;
  lastRating: RatingBadge | null;
  runSummaries: Record<string, RunSummaryPayload>;
  errors: string[];
}

export function initialState(): ConsoleState {
  return {
    lastSeq: -1,
    runId: null,
    trialIndex: null,
    phase: null,
    phaseAudioText: null,
    question: null,
    evidence: null,
    evidenceTrace: [],
    posterior: null,
    tone: null,
    decision: null,
    treePath: [],
    currentNode: null,
    ratingEntry: { enabled: false, runId: null, trialIndex: null },
    lastRating: null,
    runSummaries: {},
    errors: [],
  };
}

const MAX_ERRORS = 20;

/** Fold one event record into the view state (pure; returns a new state). */
export function reduce(state: ConsoleState, record: EventRecord): ConsoleState {
  const next: ConsoleState = { ...state, lastSeq: record.seq };
  switch (record.kind) {
    case "PhaseChange": {
      const p = record.payload as unknown as PhaseChangePayload;
      next.runId = p.run_id;
      next.trialIndex = p.trial_index;
      next.phase = p.phase;
      next.phaseAudioText = p.audio_text ?? null;
      if (p.phase === "InterTrial") {
        next.evidenceTrace = [];
        next.posterior = null;
        next.tone = null;
      }
      break;
    }
    case "QuestionShown": {
      const p = record.payload as unknown as QuestionShownPayload;
      next.question = { id: p.question_id, text: p.text };
      next.currentNode = p.question_id;
      next.decision = null;
      break;
    }
    case "Posterior": {
      const p = record.payload as unknown as PosteriorPayload;
      next.posterior = p.value;
      break;
    }
    case "Evidence": {
      const p = record.payload as unknown as EvidencePayload;
      const point = { timeInTrialS: p.time_in_trial_s, value: p.prob_modulated };
      next.evidence = point;
      next.evidenceTrace = trialChanged(state, p.run_id, p.trial_index)
        ? [point]
        : [...state.evidenceTrace, point];
      next.runId = p.run_id;
      next.trialIndex = p.trial_index;
      break;
    }
    case "Tone": {
      const p = record.payload as unknown as TonePayload;
      next.tone = { frequencyHz: p.frequency_hz, volume: p.volume };
      break;
    }
    case "Decision": {
      const p = record.payload as unknown as DecisionPayload;
      next.decision = {
        runId: p.run_id,
        trialIndex: p.trial_index,
        outcome: p.outcome,
        message: decisionMessage(p.outcome),
        decisionTimeS: p.decision_time_s,
      };
      // Ground truth for assistive trials only exists as the caretaker's
      // later rating, which is exactly when the service accepts one.
      if (p.true_class === "Unknown" && p.outcome !== "Timeout") {
        next.ratingEntry = {
          enabled: true,
          runId: p.run_id,
          trialIndex: p.trial_index,
        };
      }
      break;
    }
    case "TreeMove": {
      const p = record.payload as unknown as TreeMovePayload;
      next.treePath = [
        ...state.treePath,
        {
          fromNode: p.from_node,
          answer: p.answer,
          toNode: p.to_node,
          toQuestion: p.to_question ?? null,
        },
      ];
      next.currentNode = p.to_node;
      if (state.ratingEntry.trialIndex === p.trial_index) {
        next.ratingEntry = { enabled: false, runId: null, trialIndex: null };
      }
      break;
    }
    case "RatingRecorded": {
      const p = record.payload as unknown as RatingRecordedPayload;
      next.lastRating = {
        trialIndex: p.trial_index,
        score: p.score,
        classification: p.classification,
      };
      if (state.ratingEntry.trialIndex === p.trial_index) {
        next.ratingEntry = { enabled: false, runId: null, trialIndex: null };
      }
      break;
    }
    case "RunSummary": {
      const p = record.payload as unknown as RunSummaryPayload;
      next.runSummaries = { ...state.runSummaries, [p.run_id]: p };
      next.ratingEntry = { enabled: false, runId: null, trialIndex: null };
      break;
    }
    case "Error": {
      const p = record.payload as unknown as ErrorPayload;
      next.errors = [...state.errors, p.message].slice(-MAX_ERRORS);
      break;
    }
  }
  return next;
}

function trialChanged(
  state: ConsoleState,
  runId: string,
  trialIndex: number,
): boolean {
  return state.runId !== runId || state.trialIndex !== trialIndex;
}

/** Rebuild the view from scratch, as a page reload resuming at seq 0 would. */
export function replay(records: Iterable<EventRecord>): ConsoleState {
  let state = initialState();
  for (const record of records) {
    state = reduce(state, record);
  }
  return state;
}
