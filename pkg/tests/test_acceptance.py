"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line (run with -s to see them) and enforces
explicit numeric tolerances. The heavier scenario tests pin their seeds, so
every run reproduces the same numbers.
"""

import json
import os
import time
from dataclasses import replace

import numpy as np

import tripletboot as tb
from tripletboot import (
    AnchorSet,
    classification_grads,
    classification_loss,
    fit_anchors,
    forward_batch,
    joint_loss_and_grads,
    kmeans,
    predict,
    soft_vote,
    train,
    triplet_grads,
)
from tripletboot.bootstrap import (
    DECISION_FP,
    DECISION_TP,
    DECISION_LOG_FILE,
    OracleLabeler,
    load_decision_log,
    replay_decisions,
    round_seed,
    run_bootstrap,
)
from tripletboot.data import checkpoint_bytes, dataset_to_text, model_from_checkpoint_bytes
from tripletboot.trainer import VARIANT_A, VARIANT_HN, VARIANT_M, VARIANT_NAIVE

from helpers import (
    all_triplets_satisfied,
    exhaustive_kmeans,
    fd_grad,
    hinge_loss_ref,
    rand_unit,
    rel_err,
)

GRAD_TOL = 1e-4
FD_H = 1e-5


def _report(ok: bool, name: str, detail: str = ""):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


# --- criterion 1: gradient correctness ---------------------------------------


def test_gradient_correctness():
    started = time.time()
    rng = np.random.default_rng(1000)
    worst = {"triplet": 0.0, "classification": 0.0, "joint": 0.0, "backward": 0.0}

    # triplet loss: analytic grads against central differences of a local
    # restatement of the same hinge (the library enforces unit norm more
    # tightly than the diff step allows)
    done = 0
    while done < 100:
        d = int(rng.integers(2, 8))
        fx, fp, fn = (rand_unit(rng, d) for _ in range(3))
        if hinge_loss_ref(fx, fp, fn, 0.2) < 1e-3:
            continue  # stay clear of the hinge kink
        done += 1
        gx, gp, gn = triplet_grads(fx, fp, fn, 0.2)
        num = np.concatenate([
            fd_grad(lambda v: hinge_loss_ref(v, fp, fn, 0.2), fx, FD_H),
            fd_grad(lambda v: hinge_loss_ref(fx, v, fn, 0.2), fp, FD_H),
            fd_grad(lambda v: hinge_loss_ref(fx, fp, v, 0.2), fn, FD_H),
        ])
        worst["triplet"] = max(
            worst["triplet"], rel_err(np.concatenate([gx, gp, gn]), num))

    # classification loss: fx gradient and every anchor gradient; saturated
    # instances (gradient below what central differences resolve) are redrawn
    done = 0
    while done < 100:
        n_cat = int(rng.integers(2, 5))
        d = int(rng.integers(2, 6))
        counts = [int(rng.integers(1, 4)) for _ in range(n_cat)]
        anchors = AnchorSet(n_cat, [rng.normal(size=(k, d)) for k in counts])
        # a query near some anchor keeps every responsibility within what
        # central differences can resolve
        fx = anchors.points[int(rng.integers(n_cat))][0] + 0.3 * rng.normal(size=d)
        gamma = float(rng.uniform(0.5, 20.0))
        label = int(rng.integers(n_cat))
        g_fx, g_anchors = classification_grads(fx, anchors, gamma, label)
        nums = [fd_grad(lambda v: classification_loss(v, anchors, gamma, label), fx, FD_H)]
        for ci in range(n_cat):
            def of_anchor(flat, ci=ci):
                trial = anchors.copy()
                trial.points[ci] = flat.reshape(anchors.points[ci].shape)
                return classification_loss(fx, trial, gamma, label)

            nums.append(fd_grad(of_anchor, anchors.points[ci].ravel(), FD_H))
        analytic = np.concatenate([g_fx] + [g.ravel() for g in g_anchors])
        if np.linalg.norm(analytic) < 1e-6:
            continue
        done += 1
        worst["classification"] = max(
            worst["classification"], rel_err(analytic, np.concatenate(nums)))

    # joint loss: weighted sum of both terms, all gradients at once
    done = 0
    while done < 100:
        d = int(rng.integers(2, 6))
        fx, fp, fn = (rand_unit(rng, d) for _ in range(3))
        if hinge_loss_ref(fx, fp, fn, 0.2) < 1e-3:
            continue
        n_cat = int(rng.integers(2, 4))
        anchors = AnchorSet(n_cat, [rng.normal(size=(2, d)) for _ in range(n_cat)])
        label = int(rng.integers(n_cat))
        gamma = float(rng.uniform(0.5, 10.0))
        omega = float(rng.uniform(0.05, 0.95))
        _, g_fx, g_fp, g_fn, g_anchors = joint_loss_and_grads(
            fx, fp, fn, anchors, label, 0.2, gamma, omega
        )

        def joint_ref(v_fx=None, v_fp=None, v_fn=None, anchor_override=None):
            a = anchors if anchor_override is None else anchor_override
            x = fx if v_fx is None else v_fx
            p = fp if v_fp is None else v_fp
            n = fn if v_fn is None else v_fn
            return omega * hinge_loss_ref(x, p, n, 0.2) + (1.0 - omega) * (
                classification_loss(x, a, gamma, label)
            )

        nums = [
            fd_grad(lambda v: joint_ref(v_fx=v), fx, FD_H),
            fd_grad(lambda v: joint_ref(v_fp=v), fp, FD_H),
            fd_grad(lambda v: joint_ref(v_fn=v), fn, FD_H),
        ]
        for ci in range(n_cat):
            def of_anchor(flat, ci=ci):
                trial = anchors.copy()
                trial.points[ci] = flat.reshape(anchors.points[ci].shape)
                return joint_ref(anchor_override=trial)

            nums.append(fd_grad(of_anchor, anchors.points[ci].ravel(), FD_H))
        analytic = np.concatenate(
            [g_fx, g_fp, g_fn] + [g.ravel() for g in g_anchors])
        if np.linalg.norm(analytic) < 1e-6:
            continue
        done += 1
        worst["joint"] = max(
            worst["joint"], rel_err(analytic, np.concatenate(nums)))

    # full-network backward over every weight and bias
    from tripletboot import backward, init_network
    from tripletboot.embednet import GradientSet

    for trial in range(100):
        dims = [3, 4, 2]
        net = init_network(dims, seed=trial)
        xs = rng.normal(size=(3, 3))
        upstream = rng.normal(size=(3, 2))
        grads = backward(net, xs, upstream)

        def phi():
            return float(np.sum(upstream * forward_batch(net, xs)))

        for arrs, ga in ((net.weights, grads.weights), (net.biases, grads.biases)):
            for li in range(len(arrs)):
                flat = arrs[li].ravel()
                ana = ga[li].ravel()
                num = np.zeros_like(ana)
                for idx in range(flat.size):
                    orig = flat[idx]
                    flat[idx] = orig + FD_H
                    up = phi()
                    flat[idx] = orig - FD_H
                    dn = phi()
                    flat[idx] = orig
                    num[idx] = (up - dn) / (2 * FD_H)
                worst["backward"] = max(worst["backward"], rel_err(ana, num))

    elapsed = time.time() - started
    detail = (
        f"worst rel err triplet={worst['triplet']:.2e} "
        f"classification={worst['classification']:.2e} joint={worst['joint']:.2e} "
        f"backward={worst['backward']:.2e} in {elapsed:.1f}s"
    )
    ok = all(w < GRAD_TOL for w in worst.values()) and elapsed < 60.0
    _report(ok, "gradient-correctness", detail)


# --- criterion 2: soft-vote probability contract ------------------------------


def test_soft_vote_contract():
    rng = np.random.default_rng(2000)
    worst_sum = 0.0
    for _ in range(10_000):
        n_cat = int(rng.integers(2, 6))
        d = int(rng.integers(2, 8))
        counts = [int(rng.integers(1, 4)) for _ in range(n_cat)]
        anchors = AnchorSet(n_cat, [rng.normal(size=(k, d)) * 3 for k in counts])
        fx = rng.normal(size=d) * 3
        gamma = float(rng.uniform(0.0, 100.0))
        p = soft_vote(fx, anchors, gamma)
        worst_sum = max(worst_sum, abs(float(p.sum()) - 1.0))
    ok_sum = worst_sum <= 1e-9

    # gamma = 0 with equal per-category counts: exactly uniform
    worst_uniform = 0.0
    for _ in range(200):
        n_cat = int(rng.integers(2, 6))
        anchors = AnchorSet(n_cat, [rng.normal(size=(2, 3)) for _ in range(n_cat)])
        p = soft_vote(rng.normal(size=3), anchors, 0.0)
        worst_uniform = max(worst_uniform, float(np.max(np.abs(p - 1.0 / n_cat))))
    ok_uniform = worst_uniform <= 1e-12

    # gamma = 1e3 with a clearly unique nearest anchor: winner takes all
    checked = mistakes = 0
    while checked < 200:
        n_cat = int(rng.integers(2, 5))
        anchors = AnchorSet(n_cat, [rng.normal(size=(2, 4)) for _ in range(n_cat)])
        fx = rng.normal(size=4)
        stacked, offsets = anchors.stacked()
        sq = np.sum((stacked - fx) ** 2, axis=1)
        top2 = np.sort(sq)[:2]
        if top2[1] - top2[0] < 1e-2:
            continue
        checked += 1
        nearest_cat = int(np.searchsorted(offsets, int(np.argmin(sq)), side="right") - 1)
        if predict(fx, anchors, 1e3) != nearest_cat:
            mistakes += 1
    ok_nearest = mistakes == 0

    detail = (
        f"max |sum-1|={worst_sum:.1e} (tol 1e-9), gamma0 max dev={worst_uniform:.1e} "
        f"(tol 1e-12), nearest-anchor mistakes={mistakes}/200"
    )
    _report(ok_sum and ok_uniform and ok_nearest, "soft-vote-contract", detail)


# --- criterion 3: zero-loss distance bound ------------------------------------


def test_zero_loss_distance_bound():
    rng = np.random.default_rng(3000)
    configs = 0
    worst_slack = -np.inf
    while configs < 50:
        # tight unit-sphere clusters, one per class, far enough apart that a
        # brute-force check confirms every triplet has zero hinge loss
        n_classes = int(rng.integers(2, 4))
        d = int(rng.integers(3, 6))
        centers = [rand_unit(rng, d) for _ in range(n_classes)]
        if min(
            float(np.linalg.norm(a - b))
            for i, a in enumerate(centers)
            for b in centers[i + 1:]
        ) < 1.0:
            continue
        points, labels = [], []
        per = int(rng.integers(3, min(10, 30 // n_classes + 1)))
        for ci, c in enumerate(centers):
            for _ in range(per):
                p = c + rng.normal(size=d) * 0.05
                points.append(p / np.linalg.norm(p))
                labels.append(ci)
        if len(points) > 30 or not all_triplets_satisfied(points, labels, 0.2):
            continue
        configs += 1
        max_within = 0.0
        max_cross_sq = 0.0
        for i in range(len(points)):
            for j in range(len(points)):
                sq = float(np.sum((points[i] - points[j]) ** 2))
                if labels[i] == labels[j]:
                    max_within = max(max_within, sq)
                else:
                    max_cross_sq = max(max_cross_sq, sq)
        bound = 2.0 * (max_cross_sq - 0.2) + 1e-9
        worst_slack = max(worst_slack, max_within - bound)
    ok = worst_slack <= 0.0
    _report(ok, "zero-loss-distance-bound",
            f"{configs} zero-loss configs, worst (max_within - bound) = {worst_slack:.3e}")


# --- criterion 4: k-means ------------------------------------------------------


def test_kmeans_objective_and_fixture():
    rng = np.random.default_rng(4000)
    monotone = True
    for trial in range(50):
        pts = rng.normal(size=(int(rng.integers(4, 50)), int(rng.integers(1, 5))))
        k = int(rng.integers(1, 6))
        _, objectives = kmeans(pts, k, seed=trial, return_objectives=True)
        for a, b in zip(objectives, objectives[1:]):
            if b > a + 1e-12:
                monotone = False

    pts = np.array([[-1.0], [-0.9], [0.9], [1.0]])
    centers = sorted(c[0] for c in kmeans(pts, 2, seed=0))
    oracle_centers, _ = exhaustive_kmeans(pts, 2)
    exact = centers == [-0.95, 0.95] and sorted(oracle_centers.ravel().tolist()) == [-0.95, 0.95]
    _report(monotone and exact, "kmeans",
            f"objective monotone over 50 runs; line fixture centers {centers}")


# --- criterion 5: variant ordering ---------------------------------------------


def _ordering_world(seed):
    spec = tb.SyntheticSpec(
        n_categories=8, modes_per_category=3, input_dim=3, samples_per_mode=20,
        mode_spread=0.5, inter_mode_distance=10.0, overlap=0.3, seed=100 + seed,
        test_samples_per_mode=10,
    )
    return tb.generate_synthetic(spec)


def _ordering_cfg(variant, seed):
    return tb.TrainConfig(
        variant=variant, embed_dim=8, hidden_dims=(16,), batch_size=50,
        refresh_period=100, max_iterations=300, learning_rate=0.05, seed=seed,
    )


def test_variant_ordering():
    started = time.time()
    variants = (VARIANT_A, VARIANT_M, VARIANT_HN, VARIANT_NAIVE)
    accs = {v: [] for v in variants}
    for seed in range(1, 6):
        train_ds, test_ds, _, _ = _ordering_world(seed)
        for variant in variants:
            model = train(train_ds.samples, [], _ordering_cfg(variant, seed))
            accs[variant].append(tb.evaluate(model, test_ds.samples).mean_accuracy)
    means = {v: float(np.mean(accs[v])) for v in variants}
    elapsed = time.time() - started
    gap = means[VARIANT_A] - means[VARIANT_NAIVE]
    ordered = (
        means[VARIANT_A] >= means[VARIANT_M] >= means[VARIANT_HN] > means[VARIANT_NAIVE]
    )
    detail = (
        f"A={means[VARIANT_A]:.3f} M={means[VARIANT_M]:.3f} "
        f"HN={means[VARIANT_HN]:.3f} naive={means[VARIANT_NAIVE]:.3f} "
        f"gap={100 * gap:.1f}pt (need >=5) in {elapsed:.0f}s (limit 600)"
    )
    _report(ordered and gap >= 0.05 and elapsed < 600.0, "variant-ordering", detail)


# --- criterion 6: bootstrapping gain --------------------------------------------


def _bootstrap_world(seed):
    spec = tb.SyntheticSpec(
        n_categories=8, modes_per_category=2, input_dim=3, samples_per_mode=5,
        mode_spread=0.5, inter_mode_distance=10.0, overlap=0.3, seed=200 + seed,
        test_samples_per_mode=10, candidate_samples_per_mode=14, n_distractors=96,
    )
    train_ds, test_ds, cand_ds, dist_ds = tb.generate_synthetic(spec)
    # 224 labeled candidates + 96 distractors = 30% contamination
    pool = tb.Dataset("pool", cand_ds.samples + dist_ds.samples, cand_ds.category_names)
    oracle = OracleLabeler.from_datasets(cand_ds, dist_ds)
    return train_ds, test_ds, pool, oracle


def test_bootstrap_gain(tmp_path):
    started = time.time()
    base_accs, boot_accs, no_pool_accs = [], [], []
    for seed in range(1, 6):
        train_ds, test_ds, pool, oracle = _bootstrap_world(seed)
        cfg = tb.TrainConfig(
            variant=VARIANT_A, embed_dim=8, hidden_dims=(16,), batch_size=50,
            refresh_period=100, max_iterations=300, learning_rate=0.05, seed=seed,
        )
        base = train(train_ds.samples, [], cfg)
        base_accs.append(tb.evaluate(base, test_ds.samples).mean_accuracy)
        model, state = run_bootstrap(
            train_ds, pool, oracle, cfg, rounds=1,
            state_dir=str(tmp_path / f"s{seed}"), testset=test_ds,
        )
        boot_accs.append(tb.evaluate(model, test_ds.samples).mean_accuracy)
        # identical folded dataset and final-retrain seed, hard pool discarded
        cfg_final = replace(cfg, seed=round_seed(cfg.seed, 2))
        stripped = train(state.dataset.samples, [], cfg_final)
        no_pool_accs.append(tb.evaluate(stripped, test_ds.samples).mean_accuracy)
    gain = float(np.mean(boot_accs) - np.mean(base_accs))
    pool_gain = float(np.mean(boot_accs) - np.mean(no_pool_accs))
    elapsed = time.time() - started
    detail = (
        f"no-bootstrap={np.mean(base_accs):.3f} bootstrapped={np.mean(boot_accs):.3f} "
        f"pool-discarded={np.mean(no_pool_accs):.3f}: gain={100 * gain:.1f}pt (need >=3), "
        f"hard-pool edge={100 * pool_gain:.1f}pt (need >=1) in {elapsed:.0f}s (limit 600)"
    )
    _report(gain >= 0.03 and pool_gain >= 0.01 and elapsed < 600.0,
            "bootstrap-gain", detail)


# --- criterion 7: bootstrap invariants -------------------------------------------


def test_bootstrap_invariants(tmp_path):
    spec = tb.SyntheticSpec(
        n_categories=3, modes_per_category=2, input_dim=3, samples_per_mode=4,
        mode_spread=0.5, inter_mode_distance=5.0, overlap=0.2, seed=77,
        candidate_samples_per_mode=6, n_distractors=10,
    )
    train_ds, _, cand_ds, dist_ds = tb.generate_synthetic(spec)
    pool = tb.Dataset("pool", cand_ds.samples + dist_ds.samples, cand_ds.category_names)
    oracle = OracleLabeler.from_datasets(cand_ds, dist_ds)
    cfg = tb.TrainConfig(variant=VARIANT_A, embed_dim=4, hidden_dims=(8,), batch_size=10,
                         refresh_period=20, max_iterations=40, seed=7)
    state_dir = str(tmp_path / "inv")
    _, state = run_bootstrap(train_ds, pool, oracle, cfg, rounds=3, state_dir=state_dir)

    ok = True
    notes = []
    n_S, n_H = len(train_ds.samples), 0
    seen = set()
    for rec in state.records:
        accepted = {d.candidate_id for d in rec.decisions if d.decision == DECISION_TP}
        rejected = {d.candidate_id for d in rec.decisions if d.decision == DECISION_FP}
        decided = {d.candidate_id for d in rec.decisions}
        if accepted | rejected != decided or accepted & rejected:
            ok = False
            notes.append(f"round {rec.round}: accepted/rejected do not partition")
        if decided & seen:
            ok = False
            notes.append(f"round {rec.round}: candidate reused")
        seen |= decided
        n_S += len(accepted)
        n_H += len(rejected)
        if len(accepted) + n_S < n_S:  # pure monotonicity guard
            ok = False
    if len(state.dataset.samples) != n_S or len(state.hard_pool.samples) != n_H:
        ok = False
        notes.append("dataset/hard-pool sizes disagree with decision counts")

    decisions = load_decision_log(os.path.join(state_dir, DECISION_LOG_FILE))
    replay_ds, replay_pool = replay_decisions(train_ds, pool, decisions)
    if dataset_to_text(replay_ds) != dataset_to_text(state.dataset):
        ok = False
        notes.append("decision-log replay diverges on the dataset")
    if dataset_to_text(replay_pool) != dataset_to_text(state.hard_pool):
        ok = False
        notes.append("decision-log replay diverges on the hard pool")
    detail = (
        f"3 rounds, {len(decisions)} decisions, final |S|={n_S} |H|={n_H}, "
        f"replay bit-exact" if ok else "; ".join(notes)
    )
    _report(ok, "bootstrap-invariants", detail)


# --- criterion 8: persistence ------------------------------------------------------


class _CrashOnce:
    def __init__(self, inner, fail_round):
        self.inner = inner
        self.fail_round = fail_round
        self.labeler_id = inner.labeler_id

    def begin_round(self, round_no, requests):
        if round_no == self.fail_round:
            self.fail_round = None
            raise RuntimeError("injected crash")

    def label(self, sample, assigned, exemplars):
        return self.inner.label(sample, assigned, exemplars)


def test_persistence(tmp_path):
    import pytest

    spec = tb.SyntheticSpec(
        n_categories=3, modes_per_category=2, input_dim=3, samples_per_mode=4,
        mode_spread=0.5, inter_mode_distance=5.0, overlap=0.2, seed=88,
        test_samples_per_mode=2, candidate_samples_per_mode=6, n_distractors=8,
    )
    train_ds, test_ds, cand_ds, dist_ds = tb.generate_synthetic(spec)
    pool = tb.Dataset("pool", cand_ds.samples + dist_ds.samples, cand_ds.category_names)
    cfg = tb.TrainConfig(variant=VARIANT_A, embed_dim=4, hidden_dims=(8,), batch_size=10,
                         refresh_period=20, max_iterations=40, seed=8)

    # checkpoint round trip is exact at the byte level
    model = train(train_ds.samples, [], cfg)
    blob = checkpoint_bytes(model)
    ckpt_ok = checkpoint_bytes(model_from_checkpoint_bytes(blob)) == blob

    # dataset text round trip is exact at the byte level
    text = dataset_to_text(train_ds)
    data_ok = dataset_to_text(tb.dataset_from_text(text)) == text

    # an interrupted run, resumed, matches the uninterrupted run byte for byte
    straight_dir = str(tmp_path / "straight")
    straight_model, straight = run_bootstrap(
        train_ds, pool, OracleLabeler.from_datasets(cand_ds, dist_ds), cfg,
        rounds=3, state_dir=straight_dir, testset=test_ds,
    )
    resumed_dir = str(tmp_path / "resumed")
    flaky = _CrashOnce(OracleLabeler.from_datasets(cand_ds, dist_ds), fail_round=2)
    with pytest.raises(RuntimeError):
        run_bootstrap(train_ds, pool, flaky, cfg, rounds=3,
                      state_dir=resumed_dir, testset=test_ds)
    resumed_model, resumed = run_bootstrap(
        train_ds, pool, OracleLabeler.from_datasets(cand_ds, dist_ds), cfg,
        rounds=3, state_dir=resumed_dir, testset=test_ds,
    )
    def decisions_without_timestamps(path):
        with open(path) as f:
            rows = [json.loads(line) for line in f]
        for row in rows:
            row.pop("timestamp")
        return rows

    resume_ok = (
        checkpoint_bytes(resumed_model) == checkpoint_bytes(straight_model)
        and dataset_to_text(resumed.dataset) == dataset_to_text(straight.dataset)
        and dataset_to_text(resumed.hard_pool) == dataset_to_text(straight.hard_pool)
        and decisions_without_timestamps(os.path.join(resumed_dir, DECISION_LOG_FILE))
        == decisions_without_timestamps(os.path.join(straight_dir, DECISION_LOG_FILE))
    )
    detail = (
        f"checkpoint round-trip exact={ckpt_ok}, dataset round-trip exact={data_ok}, "
        f"resumed==uninterrupted={resume_ok}"
    )
    _report(ckpt_ok and data_ok and resume_ok, "persistence", detail)
