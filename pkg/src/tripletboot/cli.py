"""Command-line entry point.

Commands: gen-data, train, eval, bootstrap, score, export-2d, serve.
Every flag has a documented default; a key=value config file supplies
defaults that explicit flags override. Usage errors exit 2, runtime errors
exit 1.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import threading

import numpy as np

from . import __version__
from .bootstrap import (
    EXEMPLAR_COUNT,
    OracleLabeler,
    filter_candidates,
    LabelRequest,
    exemplars_for,
    run_bootstrap,
)
from .data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_checkpoint,
    load_dataset,
    project_2d,
    save_checkpoint,
    save_dataset,
)
from .embednet import forward_batch
from .errors import ConfigError, TripletbootError
from .labelsvc import LabelQueue, ServiceLabeler, category_exemplars, create_app
from .trainer import TrainConfig, VARIANTS, evaluate, format_training_log, score, train

PORT_ENV = "TRIPLETBOOT_PORT"
DEFAULT_PORT = 8512

_TRAIN_KEYS = (
    "variant", "margin", "gamma", "omega", "k", "rho", "embed-dim", "hidden-dims",
    "batch-size", "refresh-period", "iterations", "lr", "seed", "threshold",
    "renormalize-anchors",
)
_GEN_KEYS = (
    "categories", "modes", "dim", "samples-per-mode", "test-samples-per-mode",
    "candidate-samples-per-mode", "distractors", "spread", "inter-mode-distance",
    "overlap", "seed",
)
_MISC_KEYS = ("port", "rounds", "labeler", "noise")
KNOWN_CONFIG_KEYS = set(_TRAIN_KEYS) | set(_GEN_KEYS) | set(_MISC_KEYS)


def _parse_dims(s) -> tuple:
    return tuple(int(x) for x in str(s).split(",") if x.strip())


def _parse_bool(s) -> bool:
    text = str(s).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {s!r}")


def load_config_file(path: str) -> dict:
    config = {}
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {ln}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in KNOWN_CONFIG_KEYS:
                raise ConfigError(f"{path} line {ln}: unknown key {key!r}")
            config[key] = value.strip()
    return config


def _pick(args, config: dict, key: str, cast, fallback):
    v = getattr(args, key.replace("-", "_"), None)
    if v is not None:
        return v
    if key in config:
        return cast(config[key])
    return fallback


def build_train_config(args, config: dict) -> TrainConfig:
    base = TrainConfig()
    return TrainConfig(
        variant=_pick(args, config, "variant", str, base.variant),
        margin=_pick(args, config, "margin", float, base.margin),
        gamma=_pick(args, config, "gamma", float, base.gamma),
        omega=_pick(args, config, "omega", float, base.omega),
        anchors_per_category=_pick(args, config, "k", int, base.anchors_per_category),
        rho=_pick(args, config, "rho", float, base.rho),
        embed_dim=_pick(args, config, "embed-dim", int, base.embed_dim),
        hidden_dims=_pick(args, config, "hidden-dims", _parse_dims, base.hidden_dims),
        batch_size=_pick(args, config, "batch-size", int, base.batch_size),
        refresh_period=_pick(args, config, "refresh-period", int, base.refresh_period),
        max_iterations=_pick(args, config, "iterations", int, base.max_iterations),
        learning_rate=_pick(args, config, "lr", float, base.learning_rate),
        seed=_pick(args, config, "seed", int, base.seed),
        confidence_threshold=_pick(args, config, "threshold", float, base.confidence_threshold),
        renormalize_anchors=_pick(
            args, config, "renormalize-anchors", _parse_bool, base.renormalize_anchors
        ),
    )


def build_synthetic_spec(args, config: dict) -> SyntheticSpec:
    base = SyntheticSpec()
    return SyntheticSpec(
        n_categories=_pick(args, config, "categories", int, base.n_categories),
        modes_per_category=_pick(args, config, "modes", int, base.modes_per_category),
        input_dim=_pick(args, config, "dim", int, base.input_dim),
        samples_per_mode=_pick(args, config, "samples-per-mode", int, base.samples_per_mode),
        mode_spread=_pick(args, config, "spread", float, base.mode_spread),
        inter_mode_distance=_pick(
            args, config, "inter-mode-distance", float, base.inter_mode_distance
        ),
        overlap=_pick(args, config, "overlap", float, base.overlap),
        seed=_pick(args, config, "seed", int, base.seed),
        test_samples_per_mode=_pick(
            args, config, "test-samples-per-mode", int, base.test_samples_per_mode
        ),
        candidate_samples_per_mode=_pick(
            args, config, "candidate-samples-per-mode", int, base.candidate_samples_per_mode
        ),
        n_distractors=_pick(args, config, "distractors", int, base.n_distractors),
    )


def _resolve_port(args, config: dict) -> int:
    if getattr(args, "port", None) is not None:
        return args.port
    if "port" in config:
        return int(config["port"])
    return int(os.environ.get(PORT_ENV, DEFAULT_PORT))


def _print_stanza(command: str, doc: dict):
    digest = hashlib.sha256(
        json.dumps(doc, sort_keys=True, default=str).encode()
    ).hexdigest()[:12]
    print(f"run: {command}")
    print(f"seed: {doc.get('seed', '-')}")
    print(f"config-hash: {digest}")
    print(
        f"versions: tripletboot={__version__} numpy={np.__version__} "
        f"python={platform.python_version()}"
    )


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--variant", choices=VARIANTS, help="model variant")
    p.add_argument("--margin", type=float, help="triplet margin m")
    p.add_argument("--gamma", type=float, help="soft-vote sharpness")
    p.add_argument("--omega", type=float, help="triplet weight in the joint loss")
    p.add_argument("--k", type=int, help="anchor points per category")
    p.add_argument("--rho", type=float, help="local-positive neighborhood fraction")
    p.add_argument("--embed-dim", type=int, help="embedding dimension")
    p.add_argument("--hidden-dims", type=_parse_dims, help="comma-separated hidden sizes")
    p.add_argument("--batch-size", type=int, help="triplets per step")
    p.add_argument("--refresh-period", type=int, help="iterations between snapshot refreshes")
    p.add_argument("--iterations", type=int, help="total training iterations")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--threshold", type=float, help="bootstrap confidence threshold")
    p.add_argument(
        "--renormalize-anchors",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="project learned anchors back to the unit sphere",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletboot",
        description="Triplet-embedding classifier with human-in-the-loop dataset bootstrapping.",
    )
    parser.add_argument("--config", help="key=value config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset family")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--categories", type=int)
    p.add_argument("--modes", type=int, help="modes per category")
    p.add_argument("--dim", type=int, help="input feature dimension")
    p.add_argument("--samples-per-mode", type=int)
    p.add_argument("--test-samples-per-mode", type=int)
    p.add_argument("--candidate-samples-per-mode", type=int)
    p.add_argument("--distractors", type=int, help="off-manifold distractor count")
    p.add_argument("--spread", type=float, help="mode standard deviation")
    p.add_argument("--inter-mode-distance", type=float)
    p.add_argument("--overlap", type=float, help="cross-class overlap factor in [0,1)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--data", required=True, help="labeled training dataset file")
    p.add_argument("--hard-pool", help="optional unlabeled hard-negative dataset file")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="training log output path")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("bootstrap", help="run the iterative labeling loop")
    p.add_argument("--data", required=True, help="seed dataset file")
    p.add_argument("--candidates", required=True, help="candidate dataset file")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--labeler", choices=("oracle", "human"), default=None)
    p.add_argument("--noise", type=float, default=None, help="oracle decision flip rate")
    p.add_argument("--state-dir", help="resumable state directory")
    p.add_argument("--test", help="held-out dataset for per-round evaluation")
    p.add_argument("--out", required=True, help="final checkpoint path")
    p.add_argument("--port", type=int, help="labeling service port (human labeler)")
    p.add_argument("--static-dir", help="UI bundle directory (human labeler)")
    _add_train_flags(p)

    p = sub.add_parser("score", help="score samples with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("export-2d", help="export a 2-D projection of embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("serve", help="serve one labeling round over HTTP")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="labeled dataset for exemplars")
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", help="decision log output file (default stdout)")
    p.add_argument("--port", type=int)
    p.add_argument("--static-dir", help="UI bundle directory")
    p.add_argument("--threshold", type=float)
    return parser


def _cmd_gen_data(args, config) -> int:
    spec = build_synthetic_spec(args, config)
    _print_stanza("gen-data", spec.__dict__)
    train_ds, test_ds, candidates, distractors = generate_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    for ds, name in (
        (train_ds, "train.txt"),
        (test_ds, "test.txt"),
        (candidates, "candidates.txt"),
        (distractors, "distractors.txt"),
    ):
        save_dataset(ds, os.path.join(args.out, name))
        print(f"wrote {os.path.join(args.out, name)} ({len(ds.samples)} samples)")
    return 0


def _cmd_train(args, config) -> int:
    cfg = build_train_config(args, config)
    _print_stanza("train", cfg.__dict__)
    dataset = load_dataset(args.data)
    hard_pool = load_dataset(args.hard_pool).samples if args.hard_pool else []
    model = train(dataset.samples, hard_pool, cfg)
    save_checkpoint(model, args.out)
    print(f"wrote {args.out}")
    if args.log:
        with open(args.log, "w") as f:
            f.write(format_training_log(model))
        print(f"wrote {args.log}")
    report = evaluate(model, dataset.samples)
    print(f"training-set mean accuracy: {report.mean_accuracy:.4f}")
    return 0


def _cmd_eval(args, config) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    _print_stanza("eval", {"seed": model.config.seed, "model": args.model, "data": args.data})
    report = evaluate(model, dataset.samples)
    print(f"mean accuracy: {report.mean_accuracy:.4f}")
    for cat, acc in sorted(report.per_class.items()):
        name = dataset.category_names[cat] if cat < dataset.n_categories else str(cat)
        print(f"  {name}: {acc:.4f}")
    return 0


def _cmd_score(args, config) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    lines = []
    for s in dataset.samples:
        p = score(model, s.features)
        idx = int(np.argmax(p))
        name = dataset.category_names[idx] if idx < dataset.n_categories else str(idx)
        lines.append(f"{s.id},{idx},{name},{p[idx]:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_export_2d(args, config) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    emb = forward_batch(model.network, dataset.features_matrix())
    coords = project_2d(emb)
    lines = [
        f"{s.id},{xy[0]:.17g},{xy[1]:.17g}" for s, xy in zip(dataset.samples, coords)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _start_server(app, port: int):
    import uvicorn

    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started and thread.is_alive():
        import time

        time.sleep(0.02)
    return server, thread


def _cmd_bootstrap(args, config) -> int:
    cfg = build_train_config(args, config)
    rounds = _pick(args, config, "rounds", int, 1)
    labeler_kind = _pick(args, config, "labeler", str, "oracle")
    noise = _pick(args, config, "noise", float, 0.0)
    _print_stanza("bootstrap", {**cfg.__dict__, "rounds": rounds, "labeler": labeler_kind})

    seed_dataset = load_dataset(args.data)
    candidates = load_dataset(args.candidates)
    testset = load_dataset(args.test) if args.test else None

    server = None
    if labeler_kind == "oracle":
        labeler = OracleLabeler.from_datasets(candidates, noise=noise, seed=cfg.seed)
    else:
        port = _resolve_port(args, config)
        queue = LabelQueue()
        exemplars = {
            cat: [s for s in seed_dataset.samples if s.label == cat][:EXEMPLAR_COUNT]
            for cat in range(seed_dataset.n_categories)
        }
        app = create_app(queue, seed_dataset.category_names, exemplars, args.static_dir)
        server, _ = _start_server(app, port)
        print(f"labeling service listening on http://127.0.0.1:{port}")
        labeler = ServiceLabeler(queue)

    try:
        model, state = run_bootstrap(
            seed_dataset, candidates, labeler, cfg, rounds,
            state_dir=args.state_dir, testset=testset,
        )
    finally:
        if server is not None:
            server.should_exit = True
    save_checkpoint(model, args.out)
    print(f"wrote {args.out}")
    for ev in state.evaluations:
        print(f"round {ev['round']}: mean accuracy {ev['mean_accuracy']:.4f}")
    print(f"dataset grew to {len(state.dataset.samples)} samples; hard pool {len(state.hard_pool.samples)}")
    return 0


def _cmd_serve(args, config) -> int:
    import time

    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    candidates = load_dataset(args.candidates)
    threshold = _pick(args, config, "threshold", float, model.config.confidence_threshold)
    port = _resolve_port(args, config)
    _print_stanza("serve", {"seed": model.config.seed, "port": port, "threshold": threshold})

    kept = filter_candidates(model, candidates.samples, threshold)
    requests = [
        LabelRequest(s, assigned, conf, exemplars_for(model, dataset, s, assigned))
        for s, assigned, conf in kept
    ]
    queue = LabelQueue()
    queue.start_round(1, requests)
    app = create_app(
        queue, dataset.category_names, category_exemplars(model, dataset), args.static_dir
    )
    server, thread = _start_server(app, port)
    print(f"serving {len(requests)} tasks on http://127.0.0.1:{port} (ctrl-c to stop)")
    try:
        while not queue.drained():
            if not thread.is_alive():
                raise TripletbootError("server stopped unexpectedly")
            time.sleep(0.2)
    finally:
        server.should_exit = True
    decided = [queue.decisions[tid] for tid in queue.decision_order]
    text = "\n".join(json.dumps(d, sort_keys=True) for d in decided) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bootstrap": _cmd_bootstrap,
    "score": _cmd_score,
    "export-2d": _cmd_export_2d,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config_file(args.config) if args.config else {}
        return _HANDLERS[args.command](args, config)
    except TripletbootError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
