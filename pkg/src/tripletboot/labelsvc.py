"""HTTP labeling service for human review of filtered candidates.

A LabelQueue holds one round of label tasks ordered by descending confidence.
Labelers lease the next task, look at the candidate beside exemplars of its
assigned category, and post a tp/fp verdict. The first verdict for a task
wins; later submissions get 409 with the recorded verdict. ServiceLabeler
adapts the queue to the bootstrap loop's labeler interface by blocking until
each candidate's verdict arrives.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from .bootstrap import DECISION_FP, DECISION_TP, EXEMPLAR_COUNT, LabelRequest
from .embednet import Sample, forward_batch
from .errors import StateError
from .trainer import TrainedModel

LEASE_SECONDS = 600.0
VERDICT_TP = "tp"
VERDICT_FP = "fp"
VERDICTS = (VERDICT_TP, VERDICT_FP)


@dataclass
class LabelTask:
    task_id: str
    sample: Sample
    assigned: int
    confidence: float
    exemplars: list[Sample] = field(default_factory=list)


class LabelQueue:
    """Thread-safe task queue with confidence ordering and expiring leases."""

    def __init__(self, lease_seconds: float = LEASE_SECONDS, clock=time.monotonic):
        self._lock = threading.Lock()
        self.lease_seconds = lease_seconds
        self.clock = clock
        self.round_index = None
        self.tasks: dict = {}
        self.order: list = []
        self.leases: dict = {}
        self.decisions: dict = {}
        self.decision_order: list = []

    def start_round(self, round_index: int, requests: list[LabelRequest]):
        with self._lock:
            self.round_index = round_index
            self.tasks = {
                r.sample.id: LabelTask(r.sample.id, r.sample, r.assigned, r.confidence, r.exemplars)
                for r in requests
            }
            self.order = sorted(self.tasks, key=lambda t: (-self.tasks[t].confidence, t))
            self.leases = {}
            self.decisions = {}
            self.decision_order = []

    def snapshot(self) -> dict:
        with self._lock:
            pending = sum(1 for t in self.tasks if t not in self.decisions)
            return {
                "round": self.round_index,
                "pending": pending,
                "labeled": len(self.decisions),
            }

    def next_task(self, labeler_id: str) -> LabelTask | None:
        """Lease the best undecided task; a labeler re-polling keeps its lease."""
        with self._lock:
            now = self.clock()
            for tid in self.order:
                if tid in self.decisions:
                    continue
                lease = self.leases.get(tid)
                if lease is not None and lease[1] > now and lease[0] != labeler_id:
                    continue
                self.leases[tid] = (labeler_id, now + self.lease_seconds)
                return self.tasks[tid]
            return None

    def record_decision(self, task_id: str, verdict: str, labeler_id: str):
        """Returns (created, decision); created is False on a duplicate."""
        if verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        with self._lock:
            if task_id not in self.tasks:
                raise KeyError(task_id)
            if task_id in self.decisions:
                return False, self.decisions[task_id]
            decision = {
                "task_id": task_id,
                "verdict": verdict,
                "labeler": labeler_id,
                "timestamp": time.time(),
            }
            self.decisions[task_id] = decision
            self.decision_order.append(task_id)
            return True, decision

    def decision_for(self, task_id: str):
        with self._lock:
            return self.decisions.get(task_id)

    def drained(self) -> bool:
        with self._lock:
            return bool(self.tasks) and len(self.decisions) == len(self.tasks)


class ServiceLabeler:
    """Bootstrap labeler backed by the queue: blocks until humans decide."""

    labeler_id = "service"

    def __init__(self, queue: LabelQueue, poll_interval: float = 0.05, timeout: float | None = None):
        self.queue = queue
        self.poll_interval = poll_interval
        self.timeout = timeout

    def begin_round(self, round_no: int, requests: list[LabelRequest]):
        self.queue.start_round(round_no, requests)

    def label(self, sample: Sample, assigned: int, exemplars: list[Sample]) -> str:
        deadline = None if self.timeout is None else time.monotonic() + self.timeout
        while True:
            decision = self.queue.decision_for(sample.id)
            if decision is not None:
                return DECISION_TP if decision["verdict"] == VERDICT_TP else DECISION_FP
            if deadline is not None and time.monotonic() > deadline:
                raise StateError(f"timed out waiting for a decision on {sample.id!r}")
            time.sleep(self.poll_interval)


def category_exemplars(model: TrainedModel, dataset) -> dict:
    """Representative samples per category: nearest to the category's mean
    embedding, ties by id."""
    out = {}
    for cat in range(dataset.n_categories):
        members = [s for s in dataset.samples if s.label == cat]
        if not members:
            out[cat] = []
            continue
        emb = forward_batch(model.network, np.vstack([s.features for s in members]))
        center = emb.mean(axis=0)
        d = np.sum((emb - center) ** 2, axis=1)
        order = sorted(range(len(members)), key=lambda i: (d[i], members[i].id))
        out[cat] = [members[i] for i in order[:EXEMPLAR_COUNT]]
    return out


def _sample_payload(s: Sample) -> dict:
    return {
        "id": s.id,
        "features": [float(v) for v in s.features],
        "category": s.label,
        "display_url": None,
    }


def create_app(
    queue: LabelQueue,
    categories: list[str],
    exemplars_by_category: dict | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="label service")
    exemplars_by_category = exemplars_by_category or {}

    @app.get("/api/round")
    def round_info():
        snap = queue.snapshot()
        if snap["round"] is None:
            return JSONResponse({"detail": "no active round"}, status_code=409)
        snap["categories"] = categories
        return snap

    @app.get("/api/tasks/next")
    def next_task(labeler: str | None = None):
        if not labeler:
            return JSONResponse({"detail": "labeler id is required"}, status_code=400)
        if queue.snapshot()["round"] is None:
            return JSONResponse({"detail": "no active round"}, status_code=409)
        task = queue.next_task(labeler)
        if task is None:
            return Response(status_code=204)
        snap = queue.snapshot()
        return {
            "task_id": task.task_id,
            "candidate": _sample_payload(task.sample),
            "assigned_category": task.assigned,
            "assigned_category_name": categories[task.assigned],
            "confidence": task.confidence,
            "exemplars": [_sample_payload(e) for e in task.exemplars],
            "pending": snap["pending"],
            "labeled": snap["labeled"],
        }

    @app.post("/api/tasks/{task_id}/decision")
    def post_decision(task_id: str, payload: dict = Body(...)):
        verdict = payload.get("verdict")
        labeler = payload.get("labeler")
        if not labeler:
            return JSONResponse({"detail": "labeler id is required"}, status_code=400)
        if verdict not in VERDICTS:
            return JSONResponse(
                {"detail": f"verdict must be one of {list(VERDICTS)}"}, status_code=400
            )
        try:
            created, decision = queue.record_decision(task_id, verdict, labeler)
        except KeyError:
            return JSONResponse({"detail": f"unknown task {task_id!r}"}, status_code=404)
        if not created:
            return JSONResponse(
                {"detail": "decision already recorded", "recorded": decision["verdict"]},
                status_code=409,
            )
        return {"task_id": task_id, "verdict": verdict, "labeler": labeler}

    @app.get("/api/categories/{index}/exemplars")
    def category_exemplar_view(index: int):
        if not (0 <= index < len(categories)):
            return JSONResponse({"detail": f"no category {index}"}, status_code=404)
        return {
            "category": index,
            "name": categories[index],
            "exemplars": [_sample_payload(s) for s in exemplars_by_category.get(index, [])],
        }

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
