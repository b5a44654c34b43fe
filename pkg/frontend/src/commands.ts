/**
 * Operator command client: thin typed wrappers over POST /command and the
 * report endpoints. Every method is triggered by an explicit operator
 * action; nothing here fires on its own.
 */

import { CommandKind, CommandResponse } from "./protocol.js";

export class CommandClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async post(
    kind: CommandKind,
    payload: Record<string, unknown>,
  ): Promise<CommandResponse> {
    const res = await this.fetchImpl(`${this.baseUrl}/command`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ kind, payload }),
    });
    const body = (await res.json()) as CommandResponse;
    return body;
  }

  loadPlanFromPath(path: string): Promise<CommandResponse> {
    return this.post("LoadPlan", { path });
  }

  loadPlan(plan: Record<string, unknown>): Promise<CommandResponse> {
    return this.post("LoadPlan", { plan });
  }

  /** Start the next pending run, or a specific one when runId is given. */
  startRun(runId?: string): Promise<CommandResponse> {
    return this.post("StartRun", runId === undefined ? {} : { run_id: runId });
  }

  abort(reason?: string): Promise<CommandResponse> {
    return this.post("Abort", reason === undefined ? {} : { reason });
  }

  submitRating(
    trialIndex: number,
    score: number,
    raterNote = "",
  ): Promise<CommandResponse> {
    return this.post("SubmitRating", {
      trial_index: trialIndex,
      score,
      rater_note: raterNote,
    });
  }

  setThresholds(values: {
    yes_threshold?: number;
    no_threshold?: number;
    timeout_s?: number;
  }): Promise<CommandResponse> {
    return this.post("SetThresholds", values);
  }

  selectSubjectSource(subject: string): Promise<CommandResponse> {
    return this.post("SelectSubjectSource", { subject });
  }

  async sessionReport(): Promise<Record<string, unknown>> {
    const res = await this.fetchImpl(`${this.baseUrl}/reports`);
    return (await res.json()) as Record<string, unknown>;
  }

  async runReport(runId: string): Promise<Record<string, unknown> | null> {
    const res = await this.fetchImpl(`${this.baseUrl}/reports/${runId}`);
    if (res.status === 404) return null;
    return (await res.json()) as Record<string, unknown>;
  }
}
