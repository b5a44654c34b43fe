/**
 * Entry point: wires the event stream, the state fold, the DOM view, the
 * command client, and the optional tone audifier together.
 *
 * The service address defaults to the page's own origin and can be pointed
 * elsewhere with ?service=http://host:port.
 */

import { CommandClient } from "./commands.js";
import { ToneAudifier } from "./audio.js";
import { ConsoleState, initialState, reduce } from "./state.js";
import { ConnectionState, EventStream } from "./stream.js";
import { ConsoleView } from "./view.js";

function serviceBaseUrl(): string {
  const param = new URLSearchParams(window.location.search).get("service");
  return (param ?? window.location.origin).replace(/\/$/, "");
}

export function boot(root: HTMLElement): void {
  const base = serviceBaseUrl();
  const commands = new CommandClient(base);
  const audifier = new ToneAudifier();

  let state: ConsoleState = initialState();
  let connection: ConnectionState = "connecting";
  let connectionDetail: string | undefined;

  const view = new ConsoleView(root, {
    startRun: () => void commands.startRun(),
    abort: () => void commands.abort(),
    loadPlan: (path) => {
      if (path !== "") void commands.loadPlanFromPath(path);
    },
    submitRating: (score) => {
      const trial = state.ratingEntry.trialIndex;
      if (state.ratingEntry.enabled && trial !== null) {
        void commands.submitRating(trial, score);
      }
    },
    setAudify: (enabled) => {
      audifier.setEnabled(enabled);
      if (enabled && state.tone !== null) {
        audifier.setTone(state.tone.frequencyHz, state.tone.volume);
      }
    },
  });
  view.render(state, connection);

  const stream = new EventStream(base, {
    onRecord: (record) => {
      state = reduce(state, record);
      if (record.kind === "Tone" && state.tone !== null) {
        audifier.setTone(state.tone.frequencyHz, state.tone.volume);
      }
      if (record.kind === "Decision") {
        audifier.silence();
      }
      view.render(state, connection, connectionDetail);
    },
    onState: (s, detail) => {
      connection = s;
      connectionDetail = detail;
      view.render(state, connection, connectionDetail);
    },
  });
  void stream.run();
  window.addEventListener("beforeunload", () => stream.close());
}

const rootElement = document.getElementById("console-root");
if (rootElement !== null) {
  boot(rootElement);
}
