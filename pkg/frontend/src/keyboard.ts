import type { Verdict } from "./types.js";

/**
 * Map T/F keys to verdicts. Returns a detach function. Keystrokes inside
 * text inputs are ignored so a labeler typing their name does not submit.
 */
export function attachKeyboard(
  target: EventTarget,
  onVerdict: (verdict: Verdict) => void,
): () => void {
  const handler = (event: Event) => {
    const e = event as KeyboardEvent;
    const el = e.target as HTMLElement | null;
    if (el && (el.tagName === "INPUT" || el.tagName === "TEXTAREA")) return;
    const key = e.key.toLowerCase();
    if (key === "t") onVerdict("tp");
    else if (key === "f") onVerdict("fp");
  };
  target.addEventListener("keydown", handler);
  return () => target.removeEventListener("keydown", handler);
}
