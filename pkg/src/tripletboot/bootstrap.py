"""Iterative dataset growth driven by model filtering and binary labeling.

Each round trains a model on the current dataset (with the hard pool feeding
triplet negatives), scores one pending candidate subset, keeps candidates the
model is confident about, and asks a labeler to accept or reject each one.
Accepted candidates join the dataset under their assigned category; rejected
ones join the hard-negative pool. Every decision goes to an append-only log
that can rebuild the final dataset and pool from scratch, and the whole loop
can resume from a persisted state directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import Dataset, dataset_to_text, load_dataset, save_dataset
from .data import load_checkpoint, save_checkpoint
from .embednet import Sample, forward_batch
from .errors import ConfigError, InputError, StateError
from .trainer import TrainConfig, TrainedModel, evaluate, score_batch, train

DECISION_TP = "true-positive"
DECISION_FP = "false-positive"
DECISIONS = (DECISION_TP, DECISION_FP)

EXEMPLAR_COUNT = 5
# Stride between per-round training seeds (odd, near 2^32 / golden ratio) so
# rounds get well-separated streams while round 1 keeps the configured seed.
ROUND_SEED_STRIDE = 2654435761

STATE_FILE = "state.json"
DATASET_FILE = "dataset.txt"
HARD_POOL_FILE = "hardpool.txt"
CANDIDATES_FILE = "candidates.txt"
DECISION_LOG_FILE = "decisions.jsonl"


@dataclass
class Decision:
    round: int
    candidate_id: str
    assigned: int
    confidence: float
    decision: str
    labeler_id: str
    timestamp: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class RoundRecord:
    round: int
    decisions: list[Decision] = field(default_factory=list)

    @property
    def accepted(self) -> list[Decision]:
        return [d for d in self.decisions if d.decision == DECISION_TP]

    @property
    def rejected(self) -> list[Decision]:
        return [d for d in self.decisions if d.decision == DECISION_FP]


@dataclass
class LabelRequest:
    """One candidate awaiting a binary decision, with display context."""

    sample: Sample
    assigned: int
    confidence: float
    exemplars: list[Sample]


@dataclass
class BootstrapState:
    dataset: Dataset
    hard_pool: Dataset
    candidates: Dataset
    subsets: list[list[str]]
    consumed: list[bool]
    round_index: int = 0
    records: list[RoundRecord] = field(default_factory=list)
    model: TrainedModel | None = None
    evaluations: list[dict] = field(default_factory=list)
    finalized: bool = False


class OracleLabeler:
    """Simulated labeler that checks candidates against hidden ground truth.

    truth_by_id maps candidate id to its true category, or to None for a
    known distractor that matches no category. An optional noise rate flips
    decisions at random.
    """

    def __init__(self, truth_by_id: dict, noise: float = 0.0, seed: int = 0):
        if not (0.0 <= noise <= 1.0):
            raise ConfigError(f"noise rate must be in [0, 1], got {noise}")
        self.truth_by_id = dict(truth_by_id)
        self.noise = noise
        self.rng = np.random.default_rng(seed)
        self.labeler_id = "oracle"

    @classmethod
    def from_datasets(cls, *datasets: Dataset, noise: float = 0.0, seed: int = 0):
        truth = {}
        for ds in datasets:
            for s in ds.samples:
                truth[s.id] = s.label
        return cls(truth, noise=noise, seed=seed)

    def label(self, sample: Sample, assigned: int, exemplars: list[Sample]) -> str:
        if sample.id not in self.truth_by_id:
            raise InputError(f"no ground truth for candidate {sample.id!r}")
        truth = self.truth_by_id[sample.id]
        verdict = DECISION_TP if truth == assigned else DECISION_FP
        if self.noise > 0 and self.rng.random() < self.noise:
            verdict = DECISION_FP if verdict == DECISION_TP else DECISION_TP
        return verdict


def round_seed(base_seed: int, round_no: int) -> int:
    return base_seed + (round_no - 1) * ROUND_SEED_STRIDE


def split_candidates(ids: list[str], k: int) -> list[list[str]]:
    """Split ids into k near-equal chunks, ordered by a stable id hash."""
    if k < 1:
        raise ConfigError(f"need at least 1 subset, got {k}")
    ranked = sorted(ids, key=lambda i: (hashlib.md5(i.encode()).hexdigest(), i))
    bounds = np.linspace(0, len(ranked), k + 1).astype(int)
    return [ranked[bounds[j]:bounds[j + 1]] for j in range(k)]


def filter_candidates(
    model: TrainedModel, candidates: list[Sample], threshold: float
) -> list[tuple[Sample, int, float]]:
    """Keep candidates whose top confidence exceeds the threshold.

    Returns (sample, assigned category, confidence) tuples ordered by
    descending confidence, then id.
    """
    if not candidates:
        return []
    probs = score_batch(model, np.vstack([s.features for s in candidates]))
    kept = []
    for s, p in zip(candidates, probs):
        assigned = int(np.argmax(p))
        conf = float(p[assigned])
        if conf > threshold:
            kept.append((s, assigned, conf))
    kept.sort(key=lambda t: (-t[2], t[0].id))
    return kept


def exemplars_for(
    model: TrainedModel, dataset: Dataset, query: Sample, category: int
) -> list[Sample]:
    members = [s for s in dataset.samples if s.label == category]
    if not members:
        return []
    emb = forward_batch(model.network, np.vstack([s.features for s in members]))
    q = forward_batch(model.network, query.features[None, :])[0]
    d = np.sum((emb - q) ** 2, axis=1)
    order = sorted(range(len(members)), key=lambda i: (d[i], members[i].id))
    return [members[i] for i in order[:EXEMPLAR_COUNT]]


def bootstrap_round(state: BootstrapState, labeler, cfg: TrainConfig) -> BootstrapState:
    """Run one round: train, filter the next subset, label, fold results."""
    if state.round_index >= len(state.subsets):
        raise StateError("all candidate subsets are consumed")
    round_no = state.round_index + 1
    round_cfg = replace(cfg, seed=round_seed(cfg.seed, round_no))
    model = train(state.dataset.samples, state.hard_pool.samples, round_cfg)

    by_id = state.candidates.by_id()
    subset = [by_id[i] for i in state.subsets[round_no - 1]]
    kept = filter_candidates(model, subset, cfg.confidence_threshold)
    requests = [
        LabelRequest(s, assigned, conf, exemplars_for(model, state.dataset, s, assigned))
        for s, assigned, conf in kept
    ]
    if hasattr(labeler, "begin_round"):
        labeler.begin_round(round_no, requests)

    record = RoundRecord(round=round_no)
    accepted, rejected = [], []
    for req in requests:
        verdict = labeler.label(req.sample, req.assigned, req.exemplars)
        if verdict not in DECISIONS:
            raise InputError(f"labeler returned {verdict!r}, expected one of {DECISIONS}")
        record.decisions.append(
            Decision(
                round=round_no,
                candidate_id=req.sample.id,
                assigned=req.assigned,
                confidence=req.confidence,
                decision=verdict,
                labeler_id=getattr(labeler, "labeler_id", "unknown"),
                timestamp=time.time(),
            )
        )
        target = accepted if verdict == DECISION_TP else rejected
        target.append(req)

    decided_ids = {d.candidate_id for d in record.decisions}
    if len(decided_ids) != len(record.decisions) or decided_ids != {s.id for s, _, _ in kept}:
        raise StateError("labeled set does not partition the filtered candidates")

    new_dataset = Dataset(
        state.dataset.name,
        state.dataset.samples + [Sample(r.sample.id, r.sample.features, r.assigned) for r in accepted],
        state.dataset.category_names,
    )
    new_pool = Dataset(
        state.hard_pool.name,
        state.hard_pool.samples + [Sample(r.sample.id, r.sample.features, None) for r in rejected],
        state.hard_pool.category_names,
    )
    consumed = list(state.consumed)
    consumed[round_no - 1] = True
    return BootstrapState(
        dataset=new_dataset,
        hard_pool=new_pool,
        candidates=state.candidates,
        subsets=state.subsets,
        consumed=consumed,
        round_index=round_no,
        records=state.records + [record],
        model=model,
        evaluations=list(state.evaluations),
        finalized=False,
    )


def replay_decisions(
    seed_dataset: Dataset, candidates: Dataset, decisions: list[Decision]
) -> tuple[Dataset, Dataset]:
    """Rebuild (dataset, hard pool) by folding a decision log over the seed."""
    by_id = candidates.by_id()
    samples = list(seed_dataset.samples)
    pool = []
    for d in decisions:
        if d.candidate_id not in by_id:
            raise InputError(f"decision references unknown candidate {d.candidate_id!r}")
        c = by_id[d.candidate_id]
        if d.decision == DECISION_TP:
            samples.append(Sample(c.id, c.features, d.assigned))
        elif d.decision == DECISION_FP:
            pool.append(Sample(c.id, c.features, None))
        else:
            raise InputError(f"unknown decision {d.decision!r} in log")
    return (
        Dataset(seed_dataset.name, samples, seed_dataset.category_names),
        Dataset("hard-pool", pool, seed_dataset.category_names),
    )


def _persist(state_dir: str, state: BootstrapState, cfg: TrainConfig, new_records: list[RoundRecord]):
    if new_records:
        block = "".join(d.to_json() + "\n" for r in new_records for d in r.decisions)
        with open(os.path.join(state_dir, DECISION_LOG_FILE), "a") as f:
            f.write(block)
            f.flush()
    save_dataset(state.dataset, os.path.join(state_dir, DATASET_FILE))
    save_dataset(state.hard_pool, os.path.join(state_dir, HARD_POOL_FILE))
    if state.model is not None:
        name = "final.ckpt" if state.finalized else f"round-{state.round_index}.ckpt"
        save_checkpoint(state.model, os.path.join(state_dir, name))
    doc = {
        "round_index": state.round_index,
        "rounds": len(state.subsets),
        "subsets": state.subsets,
        "consumed": state.consumed,
        "finalized": state.finalized,
        "evaluations": state.evaluations,
        "config": asdict(cfg),
    }
    tmp = os.path.join(state_dir, STATE_FILE + ".tmp")
    with open(tmp, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
    os.replace(tmp, os.path.join(state_dir, STATE_FILE))


def load_decision_log(path: str) -> list[Decision]:
    decisions = []
    if not os.path.exists(path):
        return decisions
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                decisions.append(Decision(**json.loads(line)))
    return decisions


def load_state(state_dir: str, cfg: TrainConfig) -> BootstrapState:
    with open(os.path.join(state_dir, STATE_FILE)) as f:
        doc = json.load(f)
    stored_cfg = dict(doc["config"])
    stored_cfg["hidden_dims"] = tuple(stored_cfg["hidden_dims"])
    if stored_cfg != {**asdict(cfg), "hidden_dims": cfg.hidden_dims}:
        raise StateError("state directory was created with a different configuration")
    dataset = load_dataset(os.path.join(state_dir, DATASET_FILE))
    hard_pool = load_dataset(os.path.join(state_dir, HARD_POOL_FILE))
    candidates = load_dataset(os.path.join(state_dir, CANDIDATES_FILE))
    decisions = load_decision_log(os.path.join(state_dir, DECISION_LOG_FILE))
    records = []
    for d in decisions:
        if d.round > doc["round_index"]:
            continue
        if not records or records[-1].round != d.round:
            records.append(RoundRecord(round=d.round))
        records[-1].decisions.append(d)
    model = None
    final_path = os.path.join(state_dir, "final.ckpt")
    round_path = os.path.join(state_dir, f"round-{doc['round_index']}.ckpt")
    if doc["finalized"] and os.path.exists(final_path):
        model = load_checkpoint(final_path)
    elif os.path.exists(round_path):
        model = load_checkpoint(round_path)
    return BootstrapState(
        dataset=dataset,
        hard_pool=hard_pool,
        candidates=candidates,
        subsets=[list(s) for s in doc["subsets"]],
        consumed=list(doc["consumed"]),
        round_index=int(doc["round_index"]),
        records=records,
        model=model,
        evaluations=list(doc["evaluations"]),
        finalized=bool(doc["finalized"]),
    )


def run_bootstrap(
    seed_dataset: Dataset,
    candidates: Dataset,
    labeler,
    cfg: TrainConfig,
    rounds: int,
    state_dir: str | None = None,
    testset: Dataset | None = None,
) -> tuple[TrainedModel, BootstrapState]:
    """Run (or resume) the full loop: k rounds plus a final retrain.

    The final retrain is skipped when the last round filtered nothing, in
    which case the model trained at the start of that round is already the
    model of the final dataset.
    """
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    state = None
    if state_dir:
        os.makedirs(state_dir, exist_ok=True)
        if os.path.exists(os.path.join(state_dir, STATE_FILE)):
            state = load_state(state_dir, cfg)
            if len(state.subsets) != rounds:
                raise StateError(
                    f"state directory has {len(state.subsets)} rounds, requested {rounds}"
                )
    if state is None:
        state = BootstrapState(
            dataset=seed_dataset,
            hard_pool=Dataset("hard-pool", [], seed_dataset.category_names),
            candidates=candidates,
            subsets=split_candidates([s.id for s in candidates.samples], rounds),
            consumed=[False] * rounds,
        )
        if state_dir:
            save_dataset(candidates, os.path.join(state_dir, CANDIDATES_FILE))
            _persist(state_dir, state, cfg, [])

    while state.round_index < rounds:
        state = bootstrap_round(state, labeler, cfg)
        if testset is not None:
            report = evaluate(state.model, testset.samples)
            state.evaluations.append(
                {"round": state.round_index, "mean_accuracy": report.mean_accuracy}
            )
        if state_dir:
            _persist(state_dir, state, cfg, state.records[-1:])

    if not state.finalized:
        last_round_folded = any(r.round == rounds and r.decisions for r in state.records)
        if last_round_folded:
            final_cfg = replace(cfg, seed=round_seed(cfg.seed, rounds + 1))
            state.model = train(state.dataset.samples, state.hard_pool.samples, final_cfg)
            if testset is not None:
                report = evaluate(state.model, testset.samples)
                state.evaluations.append(
                    {"round": "final", "mean_accuracy": report.mean_accuracy}
                )
        state.finalized = True
        if state_dir:
            _persist(state_dir, state, cfg, [])
    if state.model is None:
        raise StateError("bootstrap finished without a model")
    return state.model, state
