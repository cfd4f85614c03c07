import type { Screen } from "./flow.js";
import type { LabelTask, SamplePayload } from "./types.js";
import { barGlyph, glyphSvg, sharedScale } from "./glyph.js";

/** Render the current screen into the app container. */
export function render(root: HTMLElement, screen: Screen): void {
  switch (screen.kind) {
    case "loading":
      root.innerHTML = `<p class="status">loading…</p>`;
      return;
    case "round-complete":
      root.innerHTML =
        `<div class="done"><h2>Round complete</h2>` +
        `<p>${screen.labeled} decision${screen.labeled === 1 ? "" : "s"} recorded. ` +
        `Waiting for the next round…</p></div>`;
      return;
    case "no-round":
      root.innerHTML =
        `<div class="done"><h2>No active round</h2>` +
        `<p>The bootstrap loop has not opened a labeling round yet.</p></div>`;
      return;
    case "error":
      root.innerHTML =
        `<div class="banner" data-role="retry-banner">` +
        `<p>${escapeHtml(screen.message)}</p>` +
        `<button type="button" data-action="retry">Retry</button></div>`;
      return;
    case "task":
      root.innerHTML = taskHtml(screen.task);
      return;
  }
}

function taskHtml(task: LabelTask): string {
  const confidencePct = (task.confidence * 100).toFixed(1);
  const total = task.pending + task.labeled;
  return (
    `<div class="task" data-task-id="${escapeHtml(task.task_id)}">` +
    `<p class="progress">labeled ${task.labeled} of ${total} · ${task.pending} pending</p>` +
    `<div class="card">` +
    `<h2>Is this a <em>${escapeHtml(task.assigned_category_name)}</em>?</h2>` +
    `<p class="confidence">model confidence ${confidencePct}%</p>` +
    `<div class="candidate">${sampleHtml(task.candidate, candidateScale(task), "glyph big")}</div>` +
    `<h3>Exemplars of ${escapeHtml(task.assigned_category_name)}</h3>` +
    `<div class="exemplars">${exemplarsHtml(task)}</div>` +
    `<div class="buttons">` +
    `<button type="button" class="tp" data-action="tp">True positive <kbd>T</kbd></button>` +
    `<button type="button" class="fp" data-action="fp">False positive <kbd>F</kbd></button>` +
    `</div></div></div>`
  );
}

function candidateScale(task: LabelTask): number {
  return sharedScale([
    task.candidate.features,
    ...task.exemplars.map((e) => e.features),
  ]);
}

function exemplarsHtml(task: LabelTask): string {
  if (task.exemplars.length === 0) return `<p class="status">no exemplars provided</p>`;
  const scale = candidateScale(task);
  return task.exemplars.map((e) => sampleHtml(e, scale, "glyph small")).join("");
}

function sampleHtml(sample: SamplePayload, scale: number, cssClass: string): string {
  // vectors get the bar glyph; an image renders only when the service
  // supplies a display payload
  if (sample.display_url) {
    return `<img class="${cssClass}" src="${escapeHtml(sample.display_url)}" alt="${escapeHtml(sample.id)}"/>`;
  }
  return glyphSvg(barGlyph(sample.features, scale), cssClass);
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
