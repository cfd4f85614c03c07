import { ApiClient } from "./api.js";
import { TaskFlow } from "./flow.js";
import { attachKeyboard } from "./keyboard.js";
import { render } from "./render.js";

const POLL_MS = 3000;

function labelerId(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get("labeler");
  if (fromUrl) {
    window.localStorage.setItem("labeler", fromUrl);
    return fromUrl;
  }
  const stored = window.localStorage.getItem("labeler");
  if (stored) return stored;
  const generated = `labeler-${Math.random().toString(36).slice(2, 8)}`;
  window.localStorage.setItem("labeler", generated);
  return generated;
}

function main(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");

  const flow = new TaskFlow(new ApiClient(), labelerId(), (screen) =>
    render(root, screen),
  );

  root.addEventListener("click", (e) => {
    const button = (e.target as HTMLElement).closest("button[data-action]");
    if (!button) return;
    const action = button.getAttribute("data-action");
    if (action === "tp") void flow.decide("tp");
    else if (action === "fp") void flow.decide("fp");
    else if (action === "retry") void flow.refresh();
  });

  attachKeyboard(window, (verdict) => void flow.decide(verdict));

  // idle screens poll so the page picks up the next round by itself
  setInterval(() => {
    if (flow.screen.kind !== "task") void flow.refresh();
  }, POLL_MS);

  void flow.refresh();
}

main();
