// @vitest-environment jsdom
import { describe, expect, it } from "vitest";
import { render } from "../src/render.js";
import { attachKeyboard } from "../src/keyboard.js";
import type { LabelTask, Verdict } from "../src/types.js";

const TASK: LabelTask = {
  task_id: "cand-7",
  candidate: { id: "cand-7", features: [0.4, -0.8, 0.2], category: null, display_url: null },
  assigned_category: 1,
  assigned_category_name: "pen<script>",
  confidence: 0.875,
  exemplars: [
    { id: "e1", features: [0.5, -0.7, 0.1], category: 1, display_url: null },
    { id: "e2", features: [0.3, -0.9, 0.2], category: 1, display_url: null },
  ],
  pending: 4,
  labeled: 8,
};

function container(): HTMLElement {
  const el = document.createElement("main");
  document.body.appendChild(el);
  return el;
}

describe("render", () => {
  it("shows the task with both verdict buttons and progress", () => {
    const root = container();
    render(root, { kind: "task", task: TASK });
    expect(root.querySelector('button[data-action="tp"]')).toBeTruthy();
    expect(root.querySelector('button[data-action="fp"]')).toBeTruthy();
    expect(root.textContent).toContain("labeled 8 of 12");
    expect(root.textContent).toContain("87.5%");
    // category name is escaped, not injected
    expect(root.querySelector("script")).toBeNull();
    expect(root.textContent).toContain("pen<script>");
  });

  it("draws the candidate and each exemplar as a glyph", () => {
    const root = container();
    render(root, { kind: "task", task: TASK });
    expect(root.querySelectorAll("svg.glyph")).toHaveLength(3);
    expect(root.querySelectorAll(".candidate svg rect.bar")).toHaveLength(3);
  });

  it("uses an image instead of a glyph when a display payload exists", () => {
    const root = container();
    const withImage = {
      ...TASK,
      candidate: { ...TASK.candidate, display_url: "/img/cand-7.jpg" },
    };
    render(root, { kind: "task", task: withImage });
    const img = root.querySelector(".candidate img") as HTMLImageElement;
    expect(img).toBeTruthy();
    expect(img.getAttribute("src")).toBe("/img/cand-7.jpg");
  });

  it("renders the round-complete state", () => {
    const root = container();
    render(root, { kind: "round-complete", labeled: 12 });
    expect(root.textContent).toContain("Round complete");
    expect(root.textContent).toContain("12 decisions");
    expect(root.querySelector("button")).toBeNull();
  });

  it("renders the no-round state", () => {
    const root = container();
    render(root, { kind: "no-round" });
    expect(root.textContent).toContain("No active round");
  });

  it("renders the retry banner on errors", () => {
    const root = container();
    render(root, { kind: "error", message: "labeling service unreachable" });
    expect(root.textContent).toContain("labeling service unreachable");
    expect(root.querySelector('button[data-action="retry"]')).toBeTruthy();
  });
});

describe("attachKeyboard", () => {
  function press(target: EventTarget, key: string) {
    target.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true }));
  }

  it("maps T and F to verdicts, case-insensitively", () => {
    const seen: Verdict[] = [];
    const detach = attachKeyboard(window, (v) => seen.push(v));
    press(window, "t");
    press(window, "F");
    press(window, "x");
    detach();
    press(window, "t");
    expect(seen).toEqual(["tp", "fp"]);
  });

  it("ignores keys typed into an input", () => {
    const seen: Verdict[] = [];
    attachKeyboard(window, (v) => seen.push(v));
    const input = document.createElement("input");
    document.body.appendChild(input);
    press(input, "t");
    expect(seen).toEqual([]);
  });
});
