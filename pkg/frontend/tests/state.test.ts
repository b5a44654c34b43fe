import { beforeEach, describe, expect, it } from "vitest";

import { EventRecord } from "../src/protocol.js";
import { initialState, reduce, replay } from "../src/state.js";
import { evidence, phase, record, resetSeq } from "./records.js";

beforeEach(resetSeq);

function fold(records: EventRecord[]) {
  return records.reduce(reduce, initialState());
}

describe("evidence", () => {
  it("rendered value always equals the latest evidence record exactly", () => {
    const values = [0.5, 0.5123456789012345, 0.73, 0.6000000001];
    let state = initialState();
    values.forEach((v, i) => {
      state = reduce(state, evidence(v, 2 + i));
      expect(state.evidence?.value).toBe(v);
    });
  });

  it("keeps the full trial trace oldest first", () => {
    const state = fold([evidence(0.52, 2), evidence(0.55, 3), evidence(0.61, 4)]);
    expect(state.evidenceTrace.map((p) => p.value)).toEqual([0.52, 0.55, 0.61]);
    expect(state.evidenceTrace.map((p) => p.timeInTrialS)).toEqual([2, 3, 4]);
  });

  it("starts a fresh trace when the trial changes", () => {
    const state = fold([
      evidence(0.52, 2),
      evidence(0.61, 3),
      evidence(0.48, 2, { trial_index: 1 }),
    ]);
    expect(state.evidenceTrace.map((p) => p.value)).toEqual([0.48]);
    expect(state.trialIndex).toBe(1);
  });

  it("clears the trace at the next trial's start", () => {
    const state = fold([
      evidence(0.61, 3),
      phase("InterTrial", { trial_index: 1 }),
    ]);
    expect(state.evidenceTrace).toEqual([]);
    expect(state.evidence?.value).toBe(0.61);
  });
});

describe("phases and questions", () => {
  it("tracks the current phase with its announcement text", () => {
    const state = fold([
      phase("Cue", { audio_text: "Is Berlin the capital of Germany?" }),
    ]);
    expect(state.phase).toBe("Cue");
    expect(state.phaseAudioText).toBe("Is Berlin the capital of Germany?");
    expect(state.runId).toBe("r1");
  });

  it("shows the question and clears the previous decision", () => {
    const state = fold([
      record("Decision", {
        run_id: "r1",
        trial_index: 0,
        outcome: "Yes",
        decision_time_s: 6.0,
        true_class: "Modulated",
      }),
      record("QuestionShown", {
        run_id: "r1",
        trial_index: 1,
        question_id: "q2",
        text: "Is two plus two five?",
      }),
    ]);
    expect(state.question).toEqual({ id: "q2", text: "Is two plus two five?" });
    expect(state.decision).toBeNull();
  });
});

describe("decisions", () => {
  it.each([
    ["Yes", "You selected Yes"],
    ["No", "You selected No"],
    ["Timeout", "Time out"],
  ] as const)("outcome %s renders the audio message %s", (outcome, message) => {
    const state = fold([
      record("Decision", {
        run_id: "r1",
        trial_index: 0,
        outcome,
        decision_time_s: 6.0,
        true_class: "Modulated",
      }),
    ]);
    expect(state.decision?.message).toBe(message);
  });
});

describe("rating entry", () => {
  const assistiveDecision = (outcome: string, trial = 0) =>
    record("Decision", {
      run_id: "a1",
      trial_index: trial,
      outcome,
      decision_time_s: 6.0,
      true_class: "Unknown",
    });

  it("opens only after a decided assistive trial", () => {
    expect(fold([assistiveDecision("Yes")]).ratingEntry).toEqual({
      enabled: true,
      runId: "a1",
      trialIndex: 0,
    });
  });

  it("stays closed for standard trials, which carry their own truth", () => {
    const state = fold([
      record("Decision", {
        run_id: "r1",
        trial_index: 0,
        outcome: "Yes",
        decision_time_s: 6.0,
        true_class: "Modulated",
      }),
    ]);
    expect(state.ratingEntry.enabled).toBe(false);
  });

  it("stays closed after a timeout, which the service never rates", () => {
    expect(fold([assistiveDecision("Timeout")]).ratingEntry.enabled).toBe(false);
  });

  it("closes once the rating is recorded and shows the badge", () => {
    const state = fold([
      assistiveDecision("Yes"),
      record("RatingRecorded", {
        run_id: "a1",
        trial_index: 0,
        score: 4,
        classification: "Correct",
        rater_note: "",
      }),
    ]);
    expect(state.ratingEntry.enabled).toBe(false);
    expect(state.lastRating).toEqual({
      trialIndex: 0,
      score: 4,
      classification: "Correct",
    });
  });

  it("score 3 shows the Incorrect badge", () => {
    const state = fold([
      assistiveDecision("Yes"),
      record("RatingRecorded", {
        run_id: "a1",
        trial_index: 0,
        score: 3,
        classification: "Incorrect",
        rater_note: "",
      }),
    ]);
    expect(state.lastRating?.classification).toBe("Incorrect");
  });

  it("closes when the run ends without one", () => {
    const state = fold([
      assistiveDecision("Yes"),
      record("RunSummary", {
        run_id: "a1",
        run_type: "assistive",
        completed_trials: 1,
        aborted: true,
        outcome_counts: { Yes: 1 },
        reason: "no confidence rating arrived within 30s",
      }),
    ]);
    expect(state.ratingEntry.enabled).toBe(false);
  });
});

describe("tree navigation", () => {
  it("appends each move and tracks the current node", () => {
    const state = fold([
      record("QuestionShown", {
        run_id: "a1",
        trial_index: 0,
        question_id: "root",
        text: "Are you comfortable?",
      }),
      record("TreeMove", {
        run_id: "a1",
        trial_index: 0,
        from_node: "root",
        answer: "Yes",
        to_node: "music",
        to_question: "Would you like to listen to music?",
      }),
      record("TreeMove", {
        run_id: "a1",
        trial_index: 1,
        from_node: "music",
        answer: "No",
        to_node: "rest",
        to_question: "Would you like to rest?",
      }),
    ]);
    expect(state.treePath.map((s) => `${s.fromNode}:${s.answer}`)).toEqual([
      "root:Yes",
      "music:No",
    ]);
    expect(state.currentNode).toBe("rest");
  });

  it("a leaf move ends the path with no next node", () => {
    const state = fold([
      record("TreeMove", {
        run_id: "a1",
        trial_index: 0,
        from_node: "leaf",
        answer: "No",
        to_node: null,
        to_question: null,
      }),
    ]);
    expect(state.currentNode).toBeNull();
  });
});

describe("errors and summaries", () => {
  it("surfaces service errors verbatim", () => {
    const message = "rating for trial 2 rejected: no rating is pending";
    const state = fold([record("Error", { message })]);
    expect(state.errors).toEqual([message]);
  });

  it("collects per-run summaries", () => {
    const state = fold([
      record("RunSummary", {
        run_id: "r1",
        run_type: "standard",
        completed_trials: 10,
        aborted: false,
        outcome_counts: { Yes: 5, No: 5 },
      }),
    ]);
    expect(state.runSummaries["r1"]?.completed_trials).toBe(10);
  });
});

describe("statelessness", () => {
  it("replaying the same records from seq 0 rebuilds the identical view", () => {
    const records = [
      phase("InterTrial"),
      record("QuestionShown", {
        run_id: "r1",
        trial_index: 0,
        question_id: "q1",
        text: "Is water wet?",
      }),
      phase("Decoding"),
      record("Posterior", {
        run_id: "r1",
        trial_index: 0,
        time_in_trial_s: 2,
        value: 0.9,
      }),
      evidence(0.52, 2),
      record("Tone", {
        run_id: "r1",
        trial_index: 0,
        frequency_hz: 370,
        volume: 0.04,
      }),
      evidence(0.73, 3),
      record("Decision", {
        run_id: "r1",
        trial_index: 0,
        outcome: "Yes",
        decision_time_s: 6.0,
        true_class: "Unknown",
      }),
      record("RatingRecorded", {
        run_id: "r1",
        trial_index: 0,
        score: 5,
        classification: "Correct",
        rater_note: "",
      }),
      record("TreeMove", {
        run_id: "r1",
        trial_index: 0,
        from_node: "q1",
        answer: "Yes",
        to_node: null,
        to_question: null,
      }),
      record("RunSummary", {
        run_id: "r1",
        run_type: "assistive",
        completed_trials: 1,
        aborted: false,
        outcome_counts: { Yes: 1 },
        path: ["q1"],
      }),
    ];
    const live = fold(records);
    const reloaded = replay(records);
    expect(reloaded).toEqual(live);
  });

  it("the fold never produces commands, only view state", () => {
    // Reducing any record sequence touches no network and returns plain data.
    const state = fold([phase("Cue"), evidence(0.7, 2)]);
    expect(Object.getOwnPropertyNames(state)).not.toContain("fetch");
    expect(typeof state).toBe("object");
  });
});
