import type { DecisionResult, LabelTask, NextTaskResult, Verdict } from "./types.js";

/** The slice of the service the task loop needs; ApiClient satisfies it. */
export interface LabelApi {
  nextTask(labeler: string): Promise<NextTaskResult>;
  submitDecision(taskId: string, verdict: Verdict, labeler: string): Promise<DecisionResult>;
}

/** What the page should currently show. */
export type Screen =
  | { kind: "loading" }
  | { kind: "task"; task: LabelTask }
  | { kind: "round-complete"; labeled: number }
  | { kind: "no-round" }
  | { kind: "error"; message: string };

/**
 * Client-side task loop. The server owns all state; this object only tracks
 * which task is on screen and keeps at most one decision request in flight.
 * Duplicate verdicts (another labeler got there first) are reconciled by
 * skipping to the next task.
 */
export class TaskFlow {
  screen: Screen = { kind: "loading" };
  labeledSoFar = 0;

  private busy = false;

  constructor(
    private readonly api: LabelApi,
    private readonly labeler: string,
    private readonly onChange: (screen: Screen) => void = () => {},
  ) {}

  private show(screen: Screen): void {
    this.screen = screen;
    this.onChange(screen);
  }

  /** Fetch the next task (or an end state) and put it on screen. */
  async refresh(): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    try {
      const result = await this.api.nextTask(this.labeler);
      switch (result.kind) {
        case "task":
          this.labeledSoFar = result.task.labeled;
          this.show({ kind: "task", task: result.task });
          break;
        case "round-complete":
          this.show({ kind: "round-complete", labeled: this.labeledSoFar });
          break;
        case "no-round":
          this.show({ kind: "no-round" });
          break;
        case "error":
          this.show({ kind: "error", message: result.message });
          break;
      }
    } finally {
      this.busy = false;
    }
  }

  /**
   * Submit a verdict for the task on screen, then advance. No-op unless a
   * task is showing and nothing else is in flight.
   */
  async decide(verdict: Verdict): Promise<void> {
    if (this.busy || this.screen.kind !== "task") return;
    const task = this.screen.task;
    this.busy = true;
    try {
      const result = await this.api.submitDecision(task.task_id, verdict, this.labeler);
      switch (result.kind) {
        case "recorded":
          this.labeledSoFar += 1;
          break;
        case "duplicate":
        case "unknown-task":
          break; // someone else decided it; just move on
        case "error":
          this.show({ kind: "error", message: result.message });
          return;
      }
    } finally {
      this.busy = false;
    }
    await this.refresh();
  }
}
