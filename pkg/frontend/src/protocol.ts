/**
 * Wire contract with the session service.
 *
 * Everything here mirrors docs/protocol.md: one JSON object per event-log
 * record, commands as {kind, payload} posted to /command, reports as plain
 * JSON documents. The console never invents state; it only re-renders what
 * these records say.
 */

export const SCHEMA_VERSION = 1;

/** Tone frequency announced while the evidence leans toward Yes. */
export const TONE_YES_HZ = 370;
/** Tone frequency announced while the evidence leans toward No. */
export const TONE_NO_HZ = 200;

export type EventKind =
  | "PhaseChange"
  | "QuestionShown"
  | "Posterior"
  | "Evidence"
  | "Tone"
  | "Decision"
  | "TreeMove"
  | "RatingRecorded"
  | "RunSummary"
  | "Error";

export type TrialPhase =
  | "InterTrial"
  | "Rest"
  | "Announce"
  | "PreCueGap"
  | "Cue"
  | "PostQuestionGap"
  | "Bell"
  | "PreFeedbackGap"
  | "Feedback"
  | "Decoding"
  | "Ended";

export type Outcome = "Yes" | "No" | "Timeout";
export type TrialClass = "Modulated" | "Baseline" | "Unknown";
export type RatingClassification = "Correct" | "Incorrect";

export interface PhaseChangePayload {
  run_id: string;
  trial_index: number;
  phase: TrialPhase;
  onset_in_run_s: number;
  audio_text: string | null;
  tone_hz: number | null;
}

export interface QuestionShownPayload {
  run_id: string;
  trial_index: number;
  question_id: string;
  text: string;
}

export interface PosteriorPayload {
  run_id: string;
  trial_index: number;
  time_in_trial_s: number;
  value: number;
}

export interface EvidencePayload {
  run_id: string;
  trial_index: number;
  time_in_trial_s: number;
  prob_modulated: number;
}

export interface TonePayload {
  run_id: string;
  trial_index: number;
  frequency_hz: number;
  volume: number;
}

export interface DecisionPayload {
  run_id: string;
  trial_index: number;
  outcome: Outcome;
  decision_time_s: number;
  true_class: TrialClass;
}

export interface TreeMovePayload {
  run_id: string;
  trial_index: number;
  from_node: string;
  answer: Outcome;
  to_node: string | null;
  to_question: string | null;
}

export interface RatingRecordedPayload {
  run_id: string;
  trial_index: number;
  score: number;
  classification: RatingClassification;
  rater_note?: string | null;
}

export interface RunSummaryPayload {
  run_id: string;
  run_type: string;
  completed_trials: number;
  aborted: boolean;
  outcome_counts: Record<string, number>;
  reason?: string;
  path?: string[];
}

export interface ErrorPayload {
  message: string;
}

export interface EventRecord {
  schema_version: number;
  seq: number;
  timestamp_s: number;
  kind: EventKind;
  payload: Record<string, unknown>;
}

export type CommandKind =
  | "LoadPlan"
  | "StartRun"
  | "Abort"
  | "SubmitRating"
  | "SetThresholds"
  | "SelectSubjectSource";

export interface CommandResponse {
  accepted: boolean;
  message?: string;
  [extra: string]: unknown;
}

/** A caretaker score above 3 endorses the decoded answer. */
export function scoreClassification(score: number): RatingClassification {
  return score > 3 ? "Correct" : "Incorrect";
}

/** The spoken result message for a decision outcome. */
export function decisionMessage(outcome: Outcome): string {
  if (outcome === "Yes") return "You selected Yes";
  if (outcome === "No") return "You selected No";
  return "Time out";
}

export function parseEventRecord(line: string): EventRecord {
  const doc = JSON.parse(line) as EventRecord;
  if (typeof doc.seq !== "number" || typeof doc.kind !== "string") {
    throw new Error(`not an event record: ${line.slice(0, 80)}`);
  }
  return doc;
}
