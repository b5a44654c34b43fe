/**
 * DOM rendering of the console state.
 *
 * The page splits into static chrome (operator controls, created once so
 * listeners survive) and a dynamic region re-rendered from each new state.
 * Rendering is a pure function of (state, connection); no view-local session
 * state exists, so a reload that replays the stream paints the same screen.
 */

import { ConnectionState } from "./stream.js";
import { ConsoleState, EvidencePoint } from "./state.js";

export interface ViewActions {
  startRun(): void;
  abort(): void;
  submitRating(score: number): void;
  loadPlan(path: string): void;
  setAudify(enabled: boolean): void;
}

const RATING_SCORES = [1, 2, 3, 4, 5];

export class ConsoleView {
  private readonly banner: HTMLElement;
  private readonly dynamic: HTMLElement;
  private readonly ratingButtons: HTMLButtonElement[] = [];
  private ratingTrial: number | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly actions: ViewActions,
  ) {
    root.innerHTML = "";
    this.banner = el("div", { id: "connection-banner", class: "banner" });
    root.appendChild(this.banner);

    const controls = el("div", { id: "controls", class: "controls" });
    const planInput = el("input", {
      id: "plan-path",
      type: "text",
      placeholder: "session plan path on the service host",
    }) as HTMLInputElement;
    controls.appendChild(planInput);
    controls.appendChild(
      button("load-plan", "Load plan", () =>
        actions.loadPlan(planInput.value.trim()),
      ),
    );
    controls.appendChild(button("start-run", "Start run", () => actions.startRun()));
    controls.appendChild(button("abort-run", "Abort", () => actions.abort()));
    const audify = el("input", { id: "audify", type: "checkbox" }) as HTMLInputElement;
    audify.addEventListener("change", () => actions.setAudify(audify.checked));
    const audifyLabel = el("label", { class: "audify" });
    audifyLabel.appendChild(audify);
    audifyLabel.appendChild(text(" play feedback tone"));
    controls.appendChild(audifyLabel);
    root.appendChild(controls);

    this.dynamic = el("div", { id: "session" });
    root.appendChild(this.dynamic);

    const ratingPanel = el("div", { id: "rating-panel", class: "rating" });
    ratingPanel.appendChild(el("span", { class: "label" }, "Caretaker confidence:"));
    for (const score of RATING_SCORES) {
      const b = button(`rate-${score}`, String(score), () => {
        if (this.ratingTrial !== null) {
          actions.submitRating(score);
        }
      });
      b.classList.add("rating-button");
      b.disabled = true;
      this.ratingButtons.push(b);
      ratingPanel.appendChild(b);
    }
    root.appendChild(ratingPanel);
  }

  render(state: ConsoleState, connection: ConnectionState, detail?: string): void {
    this.renderBanner(connection, detail);
    this.ratingTrial = state.ratingEntry.enabled
      ? state.ratingEntry.trialIndex
      : null;
    for (const b of this.ratingButtons) {
      b.disabled = !state.ratingEntry.enabled;
    }
    this.dynamic.innerHTML = [
      this.statusSection(state),
      this.evidenceSection(state),
      this.toneSection(state),
      this.questionSection(state),
      this.decisionSection(state),
      this.ratingBadgeSection(state),
      this.summariesSection(state),
      this.errorsSection(state),
    ].join("");
  }

  private renderBanner(connection: ConnectionState, detail?: string): void {
    this.banner.dataset.state = connection;
    this.banner.textContent =
      connection === "live"
        ? "connected"
        : `connection ${connection}${detail ? `: ${detail}` : ""}`;
    this.banner.classList.toggle("banner-bad", connection !== "live");
  }

  private statusSection(s: ConsoleState): string {
    return `<div id="status">
      <span id="run-id">${esc(s.runId ?? "-")}</span>
      <span id="trial-index">trial ${s.trialIndex ?? "-"}</span>
      <span id="phase" data-phase="${esc(s.phase ?? "")}">${esc(s.phase ?? "idle")}</span>
      <span id="phase-audio">${esc(s.phaseAudioText ?? "")}</span>
    </div>`;
  }

  private evidenceSection(s: ConsoleState): string {
    const value = s.evidence?.value ?? 0.5;
    const pct = value * 100;
    return `<div id="evidence">
      <div class="bar-track">
        <div id="evidence-bar" class="bar-fill" data-evidence="${s.evidence ? String(s.evidence.value) : ""}" style="width: ${pct}%"></div>
        <div class="bar-midline"></div>
      </div>
      <div class="bar-caption">
        <span>No</span>
        <span id="evidence-value">${s.evidence ? value.toFixed(3) : "-"}</span>
        <span>Yes</span>
      </div>
      ${sparkline(s.evidenceTrace)}
      <div id="posterior">window posterior: ${s.posterior === null ? "-" : s.posterior.toFixed(3)}</div>
    </div>`;
  }

  private toneSection(s: ConsoleState): string {
    if (s.tone === null) {
      return `<div id="tone" data-hz="" data-volume="">tone: silent</div>`;
    }
    const volPct = Math.round(s.tone.volume * 100);
    return `<div id="tone" data-hz="${s.tone.frequencyHz}" data-volume="${s.tone.volume}">
      tone: ${s.tone.frequencyHz} Hz
      <span class="vol-track"><span class="vol-fill" style="width: ${volPct}%"></span></span>
      volume ${s.tone.volume.toFixed(2)}
    </div>`;
  }

  private questionSection(s: ConsoleState): string {
    const steps = s.treePath
      .map(
        (step) => `<li data-from="${esc(step.fromNode)}" data-answer="${esc(step.answer)}">
          ${esc(step.fromNode)} &rarr; ${esc(step.answer)}${step.toQuestion ? `: ${esc(step.toQuestion)}` : ""}
        </li>`,
      )
      .join("");
    return `<div id="question-panel">
      <div id="question" data-node="${esc(s.currentNode ?? "")}">${esc(s.question?.text ?? "")}</div>
      <ol id="tree-path">${steps}</ol>
    </div>`;
  }

  private decisionSection(s: ConsoleState): string {
    if (s.decision === null) return `<div id="decision" hidden></div>`;
    return `<div id="decision" class="modal" data-outcome="${esc(s.decision.outcome)}">
      <strong id="decision-message">${esc(s.decision.message)}</strong>
      <span id="decision-time">${s.decision.decisionTimeS.toFixed(1)} s</span>
    </div>`;
  }

  private ratingBadgeSection(s: ConsoleState): string {
    if (s.lastRating === null) return `<div id="rating-badge" hidden></div>`;
    const r = s.lastRating;
    return `<div id="rating-badge" class="badge badge-${r.classification.toLowerCase()}">
      trial ${r.trialIndex}: score ${r.score} &mdash; ${esc(r.classification)}
    </div>`;
  }

  private summariesSection(s: ConsoleState): string {
    const rows = Object.values(s.runSummaries)
      .map((p) => {
        const counts = Object.entries(p.outcome_counts)
          .map(([k, v]) => `${esc(k)} ${v}`)
          .join(", ");
        return `<tr data-run="${esc(p.run_id)}">
          <td>${esc(p.run_id)}</td><td>${esc(p.run_type)}</td>
          <td>${p.completed_trials}</td><td>${p.aborted ? "aborted" : "completed"}</td>
          <td>${counts}</td>
        </tr>`;
      })
      .join("");
    return `<table id="run-summaries">
      <thead><tr><th>run</th><th>type</th><th>trials</th><th>state</th><th>outcomes</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
  }

  private errorsSection(s: ConsoleState): string {
    const items = s.errors.map((m) => `<li>${esc(m)}</li>`).join("");
    return `<ul id="errors">${items}</ul>`;
  }
}

/** Inline SVG polyline of the trial's evidence outputs around the 0.5 line. */
export function sparkline(trace: EvidencePoint[], width = 220, height = 60): string {
  if (trace.length === 0) {
    return `<svg id="sparkline" viewBox="0 0 ${width} ${height}" role="img"></svg>`;
  }
  const t0 = trace[0]!.timeInTrialS;
  const t1 = trace[trace.length - 1]!.timeInTrialS;
  const span = t1 - t0 || 1;
  const points = trace
    .map((p) => {
      const x = ((p.timeInTrialS - t0) / span) * (width - 4) + 2;
      const y = (1 - p.value) * (height - 4) + 2;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  const mid = ((1 - 0.5) * (height - 4) + 2).toFixed(1);
  return `<svg id="sparkline" viewBox="0 0 ${width} ${height}" role="img">
    <line x1="0" y1="${mid}" x2="${width}" y2="${mid}" class="spark-midline" />
    <polyline points="${points}" fill="none" class="spark-line" />
  </svg>`;
}

function esc(value: string): string {
  return value
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function el(
  tag: string,
  attrs: Record<string, string> = {},
  textContent?: string,
): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    node.setAttribute(k, v);
  }
  if (textContent !== undefined) node.textContent = textContent;
  return node;
}

function button(id: string, label: string, onClick: () => void): HTMLButtonElement {
  const b = el("button", { id, type: "button" }, label) as HTMLButtonElement;
  b.addEventListener("click", onClick);
  return b;
}

function text(value: string): Text {
  return document.createTextNode(value);
}
