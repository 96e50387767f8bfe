/**
 * End-to-end annotation flow against a live server: two scripted annotators
 * work a 20-pair session through the real DOM, then the stored records,
 * blinding guarantees, and reload-resume behaviour are checked.
 */

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { get } from "node:http";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, beforeEach, describe, expect, it } from "vitest";

import { AnnotationApi, Choice } from "../src/api.js";
import { AnnotateApp } from "../src/app.js";

const PAIRS = 20;
const SESSION_ID = "uitest";

let serverUrl = "";
let serverProcess: ChildProcess | null = null;
let stageDir = "";

interface Fixture {
  word: string;
  definition: string;
}

const fixtures = new Map<string, Fixture>();

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port"));
        return;
      }
      probe.close(() => resolve(address.port));
    });
  });
}

function writeSessionInputs(root: string): void {
  const senses: string[] = [];
  const selections: string[] = [];
  for (let i = 0; i < PAIRS; i += 1) {
    const id = `sense-${String(i).padStart(3, "0")}`;
    const word = `word${i}`;
    const definition = `meaning number ${i}`;
    fixtures.set(word, { word, definition });
    senses.push(
      JSON.stringify({
        id,
        surface_word: word,
        lemma: word,
        pos: "noun",
        definition,
        examples: [`Reference line about ${word}, first of several.`],
      }),
    );
    selections.push(
      JSON.stringify({ word_sense_id: id, sentence: `Generated line about ${word}.` }),
    );
  }
  writeFileSync(join(root, "senses.jsonl"), senses.join("\n") + "\n");
  writeFileSync(join(root, "selections.jsonl"), selections.join("\n") + "\n");
}

function pollOnce(url: string): Promise<boolean> {
  // plain node http keeps startup polling out of the emulated page
  return new Promise((resolve) => {
    const request = get(`${url}/api/sessions`, (response) => {
      response.resume();
      resolve(response.statusCode === 200);
    });
    request.on("error", () => resolve(false));
  });
}

async function waitForServer(url: string): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (!(await pollOnce(url))) {
    if (Date.now() > deadline) throw new Error("annotation server did not start");
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
}

beforeAll(async () => {
  stageDir = mkdtempSync(join(tmpdir(), "dictex-ui-"));
  writeSessionInputs(stageDir);
  const port = await freePort();
  serverUrl = `http://127.0.0.1:${port}`;
  // the bundle is served by the same process in production; make the
  // emulated page share the server origin accordingly
  (window as unknown as { happyDOM: { setURL(url: string): void } }).happyDOM.setURL(
    `${serverUrl}/`,
  );
  serverProcess = spawn(
    "python3",
    ["-m", "dictex.cli", "annotate-serve", "--stage-dir", stageDir, "--port", String(port)],
    { stdio: "ignore" },
  );
  await waitForServer(serverUrl);
  const created = await fetch(`${serverUrl}/api/sessions`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ seed: 77, session_id: SESSION_ID }),
  });
  expect(created.ok).toBe(true);
  expect((await created.json()).pairs).toBe(PAIRS);
});

afterAll(() => {
  serverProcess?.kill();
  if (stageDir) rmSync(stageDir, { recursive: true, force: true });
});

function api(): AnnotationApi {
  return new AnnotationApi(SESSION_ID, serverUrl);
}

function mount(): HTMLElement {
  document.body.innerHTML = '<div id="app"></div>';
  return document.getElementById("app") as HTMLElement;
}

const FORBIDDEN = /flipped|source|candidate|baseline/i;

function assertBlind(root: HTMLElement): void {
  expect(root.innerHTML).not.toMatch(FORBIDDEN);
}

function renderedWord(root: HTMLElement): string {
  const heading = root.querySelector("h1");
  expect(heading).not.toBeNull();
  return (heading as HTMLElement).textContent?.split("(")[0].trim() ?? "";
}

async function clickChoice(root: HTMLElement, app: AnnotateApp, choice: Choice): Promise<void> {
  const button = root.querySelector<HTMLButtonElement>(`.panel[data-choice="${choice}"]`);
  expect(button).not.toBeNull();
  button?.click();
  await app.whenIdle();
}

describe("annotation UI against a live session", () => {
  beforeEach(() => {
    window.sessionStorage.clear();
  });

  it("two scripted annotators complete the session through the UI", async () => {
    // annotator one clicks panels, labelling five pairs, then "reloads"
    const firstRoot = mount();
    const annOne = new AnnotateApp({ api: api(), annotatorId: "ann-one", root: firstRoot });
    await annOne.start();
    for (let i = 0; i < 5; i += 1) {
      assertBlind(firstRoot);
      expect(firstRoot.textContent).toContain(`Pair ${i + 1} of ${PAIRS}`);
      const word = renderedWord(firstRoot);
      expect(firstRoot.textContent).toContain(fixtures.get(word)?.definition);
      expect(firstRoot.textContent).toContain("(noun)"); // POS exactly as served
      await clickChoice(firstRoot, annOne, i % 2 === 0 ? "a" : "b");
    }
    annOne.stop();

    // a fresh page for the same annotator resumes at the sixth pair
    const resumedRoot = mount();
    const resumed = new AnnotateApp({ api: api(), annotatorId: "ann-one", root: resumedRoot });
    await resumed.start();
    expect(resumedRoot.textContent).toContain(`Pair 6 of ${PAIRS}`);

    // double-click protection: the second click cannot queue a second label
    const before = (await api().progress()).by_annotator["ann-one"];
    const panel = resumedRoot.querySelector<HTMLButtonElement>('.panel[data-choice="a"]');
    panel?.click();
    panel?.click();
    await resumed.whenIdle();
    expect((await api().progress()).by_annotator["ann-one"]).toBe(before + 1);

    while (!resumedRoot.textContent?.includes("All pairs labeled")) {
      assertBlind(resumedRoot);
      await clickChoice(resumedRoot, resumed, "a");
    }
    resumed.stop();

    // annotator two works keyboard-first
    const secondRoot = mount();
    const annTwo = new AnnotateApp({ api: api(), annotatorId: "ann-two", root: secondRoot });
    await annTwo.start();
    let guard = 0;
    while (!secondRoot.textContent?.includes("All pairs labeled")) {
      assertBlind(secondRoot);
      const key = guard % 2 === 0 ? "1" : "2";
      document.dispatchEvent(new window.KeyboardEvent("keydown", { key, bubbles: true }));
      await annTwo.whenIdle();
      guard += 1;
      if (guard > PAIRS + 5) throw new Error("keyboard flow did not advance");
    }
    annTwo.stop();

    // the server holds exactly 2 x 20 records
    const progress = await api().progress();
    expect(progress.total).toBe(PAIRS);
    expect(progress.by_annotator).toEqual({ "ann-one": PAIRS, "ann-two": PAIRS });
  });

  it("client storage never holds flip or source information", async () => {
    window.sessionStorage.setItem("dictex.annotator", "storage-probe");
    window.sessionStorage.setItem("dictex.session", SESSION_ID);
    const root = mount();
    const app = new AnnotateApp({ api: api(), annotatorId: "storage-probe", root });
    await app.start();
    await clickChoice(root, app, "a");
    app.stop();
    for (let i = 0; i < window.sessionStorage.length; i += 1) {
      const key = window.sessionStorage.key(i) as string;
      const value = window.sessionStorage.getItem(key) ?? "";
      expect(key).not.toMatch(FORBIDDEN);
      expect(value).not.toMatch(FORBIDDEN);
    }
    expect(window.localStorage.length).toBe(0);
  });

  it("a failed submission raises a retry banner and loses nothing", async () => {
    const root = mount();
    const flaky = new AnnotationApi(SESSION_ID, serverUrl);
    let failNext = true;
    const realSubmit = flaky.submit.bind(flaky);
    flaky.submit = async (pairId, annotatorId, choice) => {
      if (failNext) {
        failNext = false;
        throw new Error("synthetic network failure");
      }
      return realSubmit(pairId, annotatorId, choice);
    };
    const app = new AnnotateApp({ api: flaky, annotatorId: "ann-flaky", root });
    await app.start();
    await clickChoice(root, app, "a");
    expect(root.querySelector(".retry-banner")).not.toBeNull();
    root.querySelector<HTMLButtonElement>(".retry-button")?.click();
    await app.whenIdle();
    expect(root.querySelector(".retry-banner")).toBeNull();
    expect(root.textContent).toContain(`Pair 2 of ${PAIRS}`);
    expect((await api().progress()).by_annotator["ann-flaky"]).toBe(1);
    app.stop();
  });
});
