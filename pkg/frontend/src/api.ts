import type { DecisionResult, LabelTask, NextTaskResult, Verdict } from "./types.js";

/**
 * Thin typed client over the labeling service. All server communication in
 * the app goes through these three calls; nothing else mutates state.
 */
export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  async nextTask(labeler: string): Promise<NextTaskResult> {
    let res: Response;
    try {
      res = await this.fetchFn(
        `${this.base}/api/tasks/next?labeler=${encodeURIComponent(labeler)}`,
      );
    } catch {
      return { kind: "error", message: "labeling service unreachable" };
    }
    if (res.status === 204) return { kind: "round-complete" };
    if (res.status === 409) return { kind: "no-round" };
    if (!res.ok) return { kind: "error", message: `unexpected status ${res.status}` };
    const task = (await res.json()) as LabelTask;
    return { kind: "task", task };
  }

  async submitDecision(
    taskId: string,
    verdict: Verdict,
    labeler: string,
  ): Promise<DecisionResult> {
    let res: Response;
    try {
      res = await this.fetchFn(
        `${this.base}/api/tasks/${encodeURIComponent(taskId)}/decision`,
        {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify({ verdict, labeler }),
        },
      );
    } catch {
      return { kind: "error", message: "labeling service unreachable" };
    }
    if (res.status === 409) {
      const body = (await res.json()) as { recorded: Verdict };
      return { kind: "duplicate", recorded: body.recorded };
    }
    if (res.status === 404) return { kind: "unknown-task" };
    if (!res.ok) return { kind: "error", message: `unexpected status ${res.status}` };
    return { kind: "recorded", verdict };
  }
}
