"""Per-category anchor points: K-means fitting, soft voting and learning.

Each category is represented by up to K anchor points in embedding space.
Classification turns the squared distances from a query embedding to every
anchor into a category distribution via exponentially weighted voting, and
the anchors themselves can be refined by gradient descent through a joint
triplet + classification objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .embednet import l2_normalize
from .triplet import triplet_grads, triplet_loss

KMEANS_MAX_ITER = 100
PROB_FLOOR = 1e-300


@dataclass
class AnchorSet:
    """Anchor points grouped by category (category-major).

    points[i] is a (K_i, d) array; K_i may be clamped below the nominal
    anchors_per_category when a category has fewer samples than K.
    """

    anchors_per_category: int
    points: list[np.ndarray]

    def __post_init__(self):
        if not self.points:
            raise InputError("anchor set needs at least one category")
        self.points = [np.asarray(p, dtype=np.float64) for p in self.points]
        for i, p in enumerate(self.points):
            if p.ndim != 2 or p.shape[0] < 1:
                raise InputError(f"category {i} must have at least one anchor point")
            if not np.all(np.isfinite(p)):
                raise InputError(f"category {i} has non-finite anchor points")
        dims = {p.shape[1] for p in self.points}
        if len(dims) > 1:
            raise InputError(f"anchor categories disagree on dimension: {sorted(dims)}")

    @property
    def n_categories(self) -> int:
        return len(self.points)

    @property
    def counts(self) -> list[int]:
        return [p.shape[0] for p in self.points]

    @property
    def dim(self) -> int:
        return self.points[0].shape[1]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All anchors as one (A, d) array plus the category offsets."""
        offsets = np.cumsum([0] + self.counts)
        return np.vstack(self.points), offsets

    def copy(self) -> "AnchorSet":
        return AnchorSet(self.anchors_per_category, [p.copy() for p in self.points])


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    return_objectives: bool = False,
):
    """Lloyd's algorithm from deterministic farthest-point seeding.

    The seed picks the first center; the rest are farthest-point choices
    (ties to the lowest index). Iterates until assignments stabilize or 100
    rounds; an empty cluster is reseeded at the point farthest from its
    center. When there are fewer points than k, returns one center per point.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise InputError("kmeans needs a non-empty (n, d) point set")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    n = points.shape[0]
    k = min(k, n)
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(n))]
    min_dist = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        np.minimum(min_dist, np.sum((points - points[nxt]) ** 2, axis=1), out=min_dist)
    centers = points[chosen].copy()

    objectives: list[float] = []
    assign = None
    for _ in range(KMEANS_MAX_ITER):
        dists = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dists, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            mask = assign == j
            if np.any(mask):
                centers[j] = points[mask].mean(axis=0)
            else:
                far = int(np.argmax(np.sum((points - centers[j]) ** 2, axis=1)))
                centers[j] = points[far]
        objectives.append(
            float(np.sum(np.min(np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2), axis=1)))
        )
    if return_objectives:
        return centers, objectives
    return centers


def fit_anchors(
    embeddings: np.ndarray, labels: np.ndarray, k: int, seed: int
) -> AnchorSet:
    """Run K-means per category; categories smaller than k get clamped."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if embeddings.ndim != 2 or embeddings.shape[0] != labels.shape[0]:
        raise InputError("embeddings and labels must align")
    if k < 1:
        raise ConfigError(f"anchors per category must be >= 1, got {k}")
    n_categories = int(labels.max()) + 1 if labels.size else 0
    if n_categories < 1:
        raise InputError("no labeled samples to fit anchors from")
    child_seeds = np.random.SeedSequence(seed).generate_state(n_categories)
    points = []
    for cat in range(n_categories):
        members = embeddings[labels == cat]
        if members.shape[0] == 0:
            raise InputError(f"category {cat} has no samples")
        points.append(kmeans(members, k, int(child_seeds[cat])))
    return AnchorSet(anchors_per_category=k, points=points)


def _vote_logits(fx: np.ndarray, anchors: AnchorSet, gamma: float):
    u, offsets = anchors.stacked()
    diffs = fx[None, :] - u
    sq_dists = np.sum(diffs * diffs, axis=1)
    return -gamma * sq_dists, diffs, offsets


def _probs_from_logits(logits: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    per_cat = np.add.reduceat(shifted, offsets[:-1])
    return per_cat / per_cat.sum()


def soft_vote(fx: np.ndarray, anchors: AnchorSet, gamma: float) -> np.ndarray:
    """Category probabilities from exponentially weighted anchor votes.

    Evaluated in log space with max subtraction; the result sums to 1. With
    gamma = 0 every anchor votes equally regardless of distance.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    fx = np.asarray(fx, dtype=np.float64)
    if fx.shape != (anchors.dim,):
        raise InputError(f"query has shape {fx.shape}, anchors have dim {anchors.dim}")
    logits, _, offsets = _vote_logits(fx, anchors, gamma)
    return _probs_from_logits(logits, offsets)


def predict(fx: np.ndarray, anchors: AnchorSet, gamma: float) -> int:
    """Category with the highest confidence; ties go to the lowest index."""
    return int(np.argmax(soft_vote(fx, anchors, gamma)))


def classification_loss(
    fx: np.ndarray, anchors: AnchorSet, gamma: float, label: int
) -> float:
    """Logistic loss -log p_label of the soft-vote confidence."""
    if not (0 <= label < anchors.n_categories):
        raise InputError(f"label {label} outside 0..{anchors.n_categories - 1}")
    p = soft_vote(fx, anchors, gamma)
    return float(-np.log(max(float(p[label]), PROB_FLOOR)))


def classification_grads(
    fx: np.ndarray, anchors: AnchorSet, gamma: float, label: int
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Exact gradients of classification_loss w.r.t. fx and every anchor.

    Uses within-class and global responsibilities, each computed with its own
    max shift so the result stays finite for any gamma.
    """
    if not (0 <= label < anchors.n_categories):
        raise InputError(f"label {label} outside 0..{anchors.n_categories - 1}")
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    fx = np.asarray(fx, dtype=np.float64)
    logits, diffs, offsets = _vote_logits(fx, anchors, gamma)

    shifted = np.exp(logits - logits.max())
    global_resp = shifted / shifted.sum()

    lo, hi = offsets[label], offsets[label + 1]
    class_logits = logits[lo:hi]
    class_shifted = np.exp(class_logits - class_logits.max())
    class_resp = np.zeros_like(logits)
    class_resp[lo:hi] = class_shifted / class_shifted.sum()

    # d(-log p_label)/d(sq_dist_a) = gamma * (class_resp_a - global_resp_a)
    coef = 2.0 * gamma * (class_resp - global_resp)
    g_fx = coef @ diffs
    g_flat = -coef[:, None] * diffs
    g_anchors = [g_flat[offsets[i]:offsets[i + 1]].copy() for i in range(anchors.n_categories)]
    return g_fx, g_anchors


def joint_loss_and_grads(
    fx: np.ndarray,
    fp: np.ndarray,
    fn: np.ndarray,
    anchors: AnchorSet,
    label: int,
    margin: float,
    gamma: float,
    omega: float,
):
    """Weighted triplet + classification loss with all gradients.

    Returns (loss, g_fx, g_fp, g_fn, anchor_grads). The classification term
    applies only to the reference embedding and its label; positives and
    negatives carry no classification term. omega = 1 reduces exactly to the
    plain triplet loss with zero anchor gradients.
    """
    if not (0.0 <= omega <= 1.0):
        raise ConfigError(f"omega must be in [0, 1], got {omega}")
    fx = np.asarray(fx, dtype=np.float64)
    d = fx.shape[0]

    if omega > 0.0:
        l_trip = triplet_loss(fx, fp, fn, margin)
        gx_t, gp_t, gn_t = triplet_grads(fx, fp, fn, margin)
    else:
        l_trip = 0.0
        gx_t = gp_t = gn_t = np.zeros(d)

    if omega < 1.0:
        l_cls = classification_loss(fx, anchors, gamma, label)
        gx_c, g_anchors = classification_grads(fx, anchors, gamma, label)
    else:
        l_cls = 0.0
        gx_c = np.zeros(d)
        g_anchors = [np.zeros_like(p) for p in anchors.points]

    loss = omega * l_trip + (1.0 - omega) * l_cls
    g_fx = omega * gx_t + (1.0 - omega) * gx_c
    g_fp = omega * gp_t
    g_fn = omega * gn_t
    anchor_grads = [(1.0 - omega) * g for g in g_anchors]
    return loss, g_fx, g_fp, g_fn, anchor_grads


def anchor_step(
    anchors: AnchorSet,
    grads: list[np.ndarray],
    lr: float,
    renormalize: bool = False,
) -> AnchorSet:
    """SGD step on every anchor; optional re-normalization is off by default."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(grads) != anchors.n_categories:
        raise InputError("anchor gradients do not match the anchor set")
    new_points = []
    for p, g in zip(anchors.points, grads):
        if g.shape != p.shape:
            raise InputError("anchor gradients do not match the anchor set")
        stepped = p - lr * g
        if renormalize:
            stepped = np.vstack([l2_normalize(row) for row in stepped])
        new_points.append(stepped)
    return AnchorSet(anchors.anchors_per_category, new_points)
