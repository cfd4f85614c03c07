"""Triplet hinge loss, hard-negative predicates and triplet mining.

A triplet (ref, pos, neg) is penalized when the reference is not closer to
the positive than to the negative by the squared-distance margin. Mining
draws positives from a local neighborhood inside the reference's category
and keeps only negatives that violate the constraint, mixing negatives from
other categories with human-marked hard negatives 50/50 when the latter
exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, SamplingError

# Sources a triplet's negative can come from.
NEG_OTHER_CATEGORY = "other-category"
NEG_HUMAN_HARD = "human-hard-negative"

UNIT_NORM_TOL = 1e-6

# Rejection-sampling caps so mining always terminates.
DRAWS_PER_REF = 50
TOTAL_ATTEMPT_FACTOR = 20


@dataclass(frozen=True)
class Triplet:
    ref_id: str
    pos_id: str
    neg_id: str
    neg_source: str = NEG_OTHER_CATEGORY


class EmbeddingIndex:
    """Immutable snapshot of embeddings used for quasi-online mining.

    Holds unit-norm embeddings, optional labels and squared Euclidean
    pairwise distances. Mining only ever reads from the snapshot, so the
    index can be shared freely.
    """

    def __init__(self, ids: list[str], embeddings: np.ndarray, labels: list[int | None]):
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[0] != len(ids):
            raise InputError("embeddings must be one row per id")
        if len(labels) != len(ids):
            raise InputError("labels must be one entry per id")
        norms = np.sqrt(np.sum(embeddings * embeddings, axis=1))
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise InputError("index embeddings must be unit-norm")

        self.ids = list(ids)
        self.embeddings = embeddings
        self.labels = list(labels)
        self.pos_of = {s: i for i, s in enumerate(self.ids)}
        if len(self.pos_of) != len(self.ids):
            raise InputError("duplicate sample ids in index")

        # Squared distances: symmetric by construction, exactly 0 on the diagonal.
        sq = np.sum(embeddings * embeddings, axis=1)
        d = sq[:, None] + sq[None, :] - 2.0 * (embeddings @ embeddings.T)
        np.maximum(d, 0.0, out=d)
        np.fill_diagonal(d, 0.0)
        self._sq_dists = d

        self.members_by_label: dict[int, list[int]] = {}
        for i, lab in enumerate(self.labels):
            if lab is not None:
                self.members_by_label.setdefault(int(lab), []).append(i)
        self._sorted_same_class: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.ids)

    def sq_dist(self, id_a: str, id_b: str) -> float:
        return float(self._sq_dists[self.pos_of[id_a], self.pos_of[id_b]])

    def embedding(self, sample_id: str) -> np.ndarray:
        return self.embeddings[self.pos_of[sample_id]]

    def same_class_sorted(self, ref_pos: int) -> np.ndarray:
        """Positions of the ref's category mates, nearest first (stable ties)."""
        cached = self._sorted_same_class.get(ref_pos)
        if cached is not None:
            return cached
        label = self.labels[ref_pos]
        mates = np.array(
            [i for i in self.members_by_label[int(label)] if i != ref_pos], dtype=np.int64
        )
        order = np.argsort(self._sq_dists[ref_pos, mates], kind="stable")
        result = mates[order]
        self._sorted_same_class[ref_pos] = result
        return result


def _check_unit(name: str, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(v @ v)
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise InputError(f"{name} must be unit-norm, got norm {norm!r}")
    return v


def triplet_loss(fx: np.ndarray, fp: np.ndarray, fn: np.ndarray, m: float) -> float:
    """Hinge loss max{0, ||fx-fp||^2 - ||fx-fn||^2 + m} on unit vectors."""
    if m < 0:
        raise ConfigError(f"margin must be >= 0, got {m}")
    fx = _check_unit("fx", fx)
    fp = _check_unit("fp", fp)
    fn = _check_unit("fn", fn)
    dp = fx - fp
    dn = fx - fn
    return max(0.0, float(dp @ dp - dn @ dn + m))


def triplet_grads(
    fx: np.ndarray, fp: np.ndarray, fn: np.ndarray, m: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the hinge w.r.t. the three embeddings (zero when inactive)."""
    if triplet_loss(fx, fp, fn, m) > 0.0:
        fx = np.asarray(fx, dtype=np.float64)
        fp = np.asarray(fp, dtype=np.float64)
        fn = np.asarray(fn, dtype=np.float64)
        return 2.0 * (fn - fp), 2.0 * (fp - fx), 2.0 * (fx - fn)
    zero = np.zeros_like(np.asarray(fx, dtype=np.float64))
    return zero, zero.copy(), zero.copy()


def is_hard_negative(fx: np.ndarray, fp: np.ndarray, fn: np.ndarray, m: float) -> bool:
    """True iff the triplet violates the constraint (strictly non-zero loss)."""
    return triplet_loss(fx, fp, fn, m) > 0.0


def sample_local_positive(
    index: EmbeddingIndex, ref_id: str, rho: float, rng: np.random.Generator
) -> str:
    """Draw a positive uniformly from the rho-fraction nearest category mates.

    The candidate set is the first ceil(rho * |mates|) entries of the
    distance-sorted list, so even a tiny category yields one candidate.
    """
    if not (0.0 < rho <= 1.0):
        raise ConfigError(f"rho must be in (0, 1], got {rho}")
    ref_pos = index.pos_of[ref_id]
    if index.labels[ref_pos] is None:
        raise SamplingError(f"reference {ref_id!r} has no label")
    mates = index.same_class_sorted(ref_pos)
    if len(mates) == 0:
        raise SamplingError(f"category of {ref_id!r} has a single member")
    k = math.ceil(rho * len(mates))
    choice = mates[rng.integers(k)]
    return index.ids[choice]


def mine_triplets(
    index: EmbeddingIndex,
    hard_pool: list[str],
    cfg,
    rng: np.random.Generator,
) -> list[Triplet]:
    """Mine up to cfg.batch_size triplets from an embedding snapshot.

    Policy comes from the config: cfg.mining_rho bounds the positive
    neighborhood and cfg.mining_filters switches the hardness filter (off for
    naive sampling). Negatives alternate 50/50 in expectation between
    other-category samples and the hard pool whenever the pool is non-empty.
    A returned batch shorter than cfg.batch_size means mining was exhausted.
    """
    if len(index.members_by_label) < 2:
        raise ConfigError("mining needs at least 2 labeled categories")
    for h in hard_pool:
        if h not in index.pos_of:
            raise InputError(f"hard-pool id {h!r} missing from the index")

    filters = bool(getattr(cfg, "mining_filters", True))
    rho = float(getattr(cfg, "mining_rho", 1.0)) if filters else 1.0
    margin = float(cfg.margin)
    batch_size = int(cfg.batch_size)

    # References need a category mate; negatives need a different category.
    eligible_refs = [
        i
        for label, members in sorted(index.members_by_label.items())
        for i in members
        if len(members) >= 2
    ]
    if not eligible_refs:
        return []
    others_by_label = {
        label: np.array(
            [i for lab, mem in index.members_by_label.items() if lab != label for i in mem]
        )
        for label in index.members_by_label
    }
    hard_positions = np.array([index.pos_of[h] for h in hard_pool], dtype=np.int64)

    batch: list[Triplet] = []
    attempts = 0
    max_attempts = TOTAL_ATTEMPT_FACTOR * batch_size
    while len(batch) < batch_size and attempts < max_attempts:
        attempts += 1
        ref_pos = eligible_refs[rng.integers(len(eligible_refs))]
        ref_id = index.ids[ref_pos]
        pos_id = sample_local_positive(index, ref_id, rho, rng)
        label = int(index.labels[ref_pos])

        ex = index.embeddings[ref_pos]
        ep = index.embedding(pos_id)
        others = others_by_label[label]

        if not filters:
            use_hard = len(hard_positions) > 0 and rng.random() < 0.5
            pool = hard_positions if use_hard else others
            neg_pos = int(pool[rng.integers(len(pool))])
            batch.append(
                Triplet(ref_id, pos_id, index.ids[neg_pos],
                        NEG_HUMAN_HARD if use_hard else NEG_OTHER_CATEGORY)
            )
            continue

        # Draw the whole candidate block at once and prefilter against the
        # snapshot distance matrix; the cheap test can disagree with the
        # direct predicate only at rounding knife edges, so each survivor is
        # confirmed with is_hard_negative before being accepted.
        if len(hard_positions) > 0:
            use_hard = rng.random(DRAWS_PER_REF) < 0.5
            from_hard = hard_positions[rng.integers(len(hard_positions), size=DRAWS_PER_REF)]
            from_others = others[rng.integers(len(others), size=DRAWS_PER_REF)]
            neg_candidates = np.where(use_hard, from_hard, from_others)
        else:
            use_hard = np.zeros(DRAWS_PER_REF, dtype=bool)
            neg_candidates = others[rng.integers(len(others), size=DRAWS_PER_REF)]
        dp = index._sq_dists[ref_pos, index.pos_of[pos_id]]
        dn = index._sq_dists[ref_pos, neg_candidates]
        for j in np.flatnonzero(dp - dn + margin > 0.0):
            neg_pos = int(neg_candidates[j])
            if is_hard_negative(ex, ep, index.embeddings[neg_pos], margin):
                batch.append(
                    Triplet(ref_id, pos_id, index.ids[neg_pos],
                            NEG_HUMAN_HARD if use_hard[j] else NEG_OTHER_CATEGORY)
                )
                break
    return batch
