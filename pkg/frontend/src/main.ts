/** Browser bootstrap: remember who is annotating, then run the flow. */

import { AnnotationApi } from "./api.js";
import { AnnotateApp } from "./app.js";

const ANNOTATOR_KEY = "dictex.annotator";
const SESSION_KEY = "dictex.session";

function renderSetupForm(root: HTMLElement, knownSession: string | null): void {
  const sessionField = knownSession
    ? ""
    : `<label>Session id <input name="session" required /></label>`;
  root.innerHTML = `
    <main class="setup-view">
      <h1>Sentence annotation</h1>
      <form class="setup-form">
        <label>Your annotator id <input name="annotator" required autofocus /></label>
        ${sessionField}
        <button type="submit">Start</button>
      </form>
    </main>`;
  const form = root.querySelector<HTMLFormElement>(".setup-form");
  form?.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const annotator = String(data.get("annotator") ?? "").trim();
    const session = knownSession ?? String(data.get("session") ?? "").trim();
    if (!annotator || !session) return;
    window.sessionStorage.setItem(ANNOTATOR_KEY, annotator);
    window.sessionStorage.setItem(SESSION_KEY, session);
    bootstrap();
  });
}

export function bootstrap(): void {
  const root = document.getElementById("app");
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const session =
    params.get("session") ?? window.sessionStorage.getItem(SESSION_KEY);
  const annotator = window.sessionStorage.getItem(ANNOTATOR_KEY);
  if (!session || !annotator) {
    renderSetupForm(root, session);
    return;
  }
  window.sessionStorage.setItem(SESSION_KEY, session);
  const app = new AnnotateApp({
    api: new AnnotationApi(session),
    annotatorId: annotator,
    root,
  });
  void app.start();
}

bootstrap();
