"""Synthetic data generation, dataset/checkpoint persistence, 2-D export.

Datasets are stored as a small comma-separated text format; trained models go
into a versioned binary container. All writes are temp-then-rename so a
concurrent reader never sees a partial file, and every round trip is
bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .anchors import AnchorSet
from .embednet import Network, Sample, SoftmaxHead
from .errors import CheckpointError, ConfigError, InputError, ParseError
from .trainer import LogRecord, TrainConfig, TrainedModel

CHECKPOINT_MAGIC = b"TBCP"
CHECKPOINT_VERSION = 1

# Per-mode sample radius as a multiple of mode_spread; samples are redrawn
# (then radially clipped) to stay inside it, which makes class supports
# bounded and the overlap guarantee checkable.
CLIP_RADIUS_FACTOR = 3.0
CROSS_CLASS_MARGIN = 0.05
DISTRACTOR_BAND = (1.05, 1.5)


@dataclass
class Dataset:
    """Named collection of samples over a fixed category list."""

    name: str
    samples: list[Sample]
    category_names: list[str]

    def __post_init__(self):
        if not self.category_names:
            raise InputError("dataset needs at least one category name")
        for name in [self.name] + list(self.category_names):
            if name == "" or "," in name or "\n" in name:
                raise InputError(f"invalid name {name!r}: empty or contains ',' or newline")
        seen = set()
        for s in self.samples:
            if s.id == "" or "," in s.id or "\n" in s.id:
                raise InputError(f"invalid sample id {s.id!r}")
            if s.id in seen:
                raise InputError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if s.label is not None and not (0 <= s.label < len(self.category_names)):
                raise InputError(f"sample {s.id!r} label {s.label} outside category range")
        dims = {s.features.shape[0] for s in self.samples}
        if len(dims) > 1:
            raise InputError(f"inconsistent feature dimensions {sorted(dims)}")

    @property
    def n_categories(self) -> int:
        return len(self.category_names)

    @property
    def dim(self) -> int:
        if not self.samples:
            raise InputError("empty dataset has no dimension")
        return self.samples[0].features.shape[0]

    def features_matrix(self) -> np.ndarray:
        return np.vstack([s.features for s in self.samples])

    def by_id(self) -> dict:
        return {s.id: s for s in self.samples}


@dataclass
class SyntheticSpec:
    """Geometry of a synthetic multi-modal classification problem.

    Each category is a mixture of modes_per_category Gaussian blobs whose
    support is clipped to radius 3 * mode_spread. Cross-class mode centers are
    kept at least 2r(1 - overlap) + 0.05r apart, so overlap = 0 means class
    supports cannot touch.
    """

    n_categories: int = 4
    modes_per_category: int = 2
    input_dim: int = 16
    samples_per_mode: int = 20
    mode_spread: float = 0.5
    inter_mode_distance: float = 4.0
    overlap: float = 0.0
    seed: int = 0
    test_samples_per_mode: int | None = None
    candidate_samples_per_mode: int | None = None
    n_distractors: int = 0

    def __post_init__(self):
        counts = [self.n_categories, self.modes_per_category, self.input_dim, self.samples_per_mode]
        if any(int(c) != c or c < 1 for c in counts):
            raise ConfigError("spec counts must be positive integers")
        if not (0.0 <= self.overlap < 1.0):
            raise ConfigError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.mode_spread <= 0:
            raise ConfigError("mode_spread must be positive")
        if self.inter_mode_distance <= 0:
            raise ConfigError("inter_mode_distance must be positive")
        for n in (self.test_samples_per_mode, self.candidate_samples_per_mode):
            if n is not None and n < 0:
                raise ConfigError("per-mode sample counts must be >= 0")
        if self.n_distractors < 0:
            raise ConfigError("n_distractors must be >= 0")

    @property
    def clip_radius(self) -> float:
        return CLIP_RADIUS_FACTOR * self.mode_spread


def _unit_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
    return v / n


def _place_mode_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Sequential rejection placement with deterministic radius growth."""
    r = spec.clip_radius
    min_cross = 2.0 * r * (1.0 - spec.overlap) + CROSS_CLASS_MARGIN * r
    min_same = spec.inter_mode_distance
    total = spec.n_categories * spec.modes_per_category
    centers = np.zeros((total, spec.input_dim))
    radius = max(min_cross, min_same)
    placed = 0
    while placed < total:
        cat = placed // spec.modes_per_category
        ok = False
        for _ in range(200):
            c = _unit_direction(rng, spec.input_dim) * radius * rng.random() ** (1.0 / spec.input_dim)
            ok = True
            for j in range(placed):
                need = min_same if j // spec.modes_per_category == cat else min_cross
                if np.linalg.norm(c - centers[j]) < need:
                    ok = False
                    break
            if ok:
                centers[placed] = c
                placed += 1
                break
        if not ok:
            radius *= 1.25
    return centers


def _draw_mode_sample(center: np.ndarray, spread: float, clip: float, rng) -> np.ndarray:
    for _ in range(100):
        x = center + spread * rng.standard_normal(center.shape[0])
        if np.linalg.norm(x - center) <= clip:
            return x
    d = x - center
    return center + d * (clip / np.linalg.norm(d))


def _draw_distractor(centers: np.ndarray, clip: float, rng) -> np.ndarray:
    lo, hi = DISTRACTOR_BAND
    outer = hi
    fails = 0
    while True:
        base = centers[rng.integers(len(centers))]
        x = base + _unit_direction(rng, centers.shape[1]) * clip * rng.uniform(lo, outer)
        if np.min(np.linalg.norm(centers - x, axis=1)) >= lo * clip:
            return x
        fails += 1
        if fails % 100 == 0:
            outer *= 1.1


def generate_synthetic(spec: SyntheticSpec):
    """Build (train, test, candidates, distractors) datasets from one seed.

    Candidates are drawn from the same class mixtures and keep their labels so
    a simulated labeler can check them; distractors sit in a band just outside
    every mode's support and carry no label.
    """
    rng = np.random.default_rng(spec.seed)
    centers = _place_mode_centers(spec, rng)
    names = [f"class-{i}" for i in range(spec.n_categories)]
    r = spec.clip_radius
    n_test = spec.samples_per_mode if spec.test_samples_per_mode is None else spec.test_samples_per_mode
    n_cand = spec.samples_per_mode if spec.candidate_samples_per_mode is None else spec.candidate_samples_per_mode

    pools = {"train": [], "test": [], "cand": []}
    counts = {"train": spec.samples_per_mode, "test": n_test, "cand": n_cand}
    for cat in range(spec.n_categories):
        for mode in range(spec.modes_per_category):
            center = centers[cat * spec.modes_per_category + mode]
            for split, n in counts.items():
                for i in range(n):
                    x = _draw_mode_sample(center, spec.mode_spread, r, rng)
                    pools[split].append(Sample(f"{split}-{cat}-{mode}-{i}", x, cat))

    distractors = [
        Sample(f"dist-{i}", _draw_distractor(centers, r, rng), None)
        for i in range(spec.n_distractors)
    ]
    return (
        Dataset("train", pools["train"], names),
        Dataset("test", pools["test"], names),
        Dataset("candidates", pools["cand"], names),
        Dataset("distractors", distractors, names),
    )


def _atomic_write(path: str, data: bytes):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def dataset_to_text(dataset: Dataset) -> str:
    lines = [
        f"# name={dataset.name}",
        f"# categories={','.join(dataset.category_names)}",
        f"{dataset.dim if dataset.samples else 0},{dataset.n_categories}",
    ]
    for s in dataset.samples:
        label = "" if s.label is None else str(s.label)
        feats = ",".join(f"{v:.17g}" for v in s.features)
        lines.append(f"{s.id},{label},{feats}")
    return "\n".join(lines) + "\n"


def save_dataset(dataset: Dataset, path: str):
    _atomic_write(path, dataset_to_text(dataset).encode())


def dataset_from_text(text: str, name: str = "dataset") -> Dataset:
    """Parse the text format; errors cite 1-based physical line numbers."""
    meta = {"name": name, "categories": None}
    header = None
    samples = []
    seen_ids = set()
    dim = n_categories = None
    for ln, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if header is not None:
                raise ParseError(f"line {ln}: comment after header")
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                if key.strip() in meta:
                    meta[key.strip()] = value
            continue
        if header is None:
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"line {ln}: header must be 'dim,n_categories'")
            try:
                dim, n_categories = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"line {ln}: header must be two integers") from None
            if dim < 0 or n_categories < 1:
                raise ParseError(f"line {ln}: invalid header values {dim},{n_categories}")
            header = (dim, n_categories)
            continue
        parts = line.split(",")
        if len(parts) != 2 + dim:
            raise ParseError(f"line {ln}: expected {dim} features, got {len(parts) - 2}")
        sid, label_field = parts[0], parts[1]
        if label_field == "":
            label = None
        else:
            try:
                label = int(label_field)
            except ValueError:
                raise ParseError(f"line {ln}: label {label_field!r} is not an integer") from None
            if not (0 <= label < n_categories):
                raise ParseError(f"line {ln}: label {label} outside 0..{n_categories - 1}")
        try:
            feats = np.array([float(v) for v in parts[2:]], dtype=np.float64)
        except ValueError:
            raise ParseError(f"line {ln}: non-numeric feature value") from None
        if sid in seen_ids:
            raise ParseError(f"line {ln}: duplicate sample id {sid!r}")
        seen_ids.add(sid)
        try:
            samples.append(Sample(sid, feats, label))
        except InputError as e:
            raise ParseError(f"line {ln}: {e}") from None
    if header is None:
        raise ParseError("line 1: missing header")
    categories = (
        meta["categories"].split(",") if meta["categories"]
        else [f"class-{i}" for i in range(n_categories)]
    )
    if len(categories) != n_categories:
        raise ParseError(f"category list has {len(categories)} names, header says {n_categories}")
    try:
        return Dataset(meta["name"], samples, categories)
    except InputError as e:
        raise ParseError(str(e)) from None


def load_dataset(path: str) -> Dataset:
    try:
        with open(path, "rb") as f:
            text = f.read().decode()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from None
    return dataset_from_text(text)


def checkpoint_bytes(model: TrainedModel) -> bytes:
    """Serialize a model: JSON header plus raw little-endian float64 arrays."""
    header = {
        "config": asdict(model.config),
        "n_categories": model.n_categories,
        "network": {
            "layer_dims": list(model.network.layer_dims),
            "activation": model.network.activation,
            "rng_seed": model.network.rng_seed,
        },
        "anchors": None,
        "head": None,
        "log": [asdict(r) for r in model.log],
    }
    arrays = []
    for w, b in zip(model.network.weights, model.network.biases):
        arrays.extend([w, b])
    if model.anchors is not None:
        header["anchors"] = {
            "anchors_per_category": model.anchors.anchors_per_category,
            "counts": model.anchors.counts,
            "dim": model.anchors.dim,
        }
        arrays.extend(model.anchors.points)
    if model.head is not None:
        header["head"] = {"n_categories": model.head.n_categories}
        arrays.extend([model.head.weights, model.head.biases])

    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return (
        struct.pack("<4sIQ", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes))
        + header_bytes
        + blob
    )


def save_checkpoint(model: TrainedModel, path: str):
    _atomic_write(path, checkpoint_bytes(model))


class _BlobReader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        end = self.off + 8 * n
        if end > len(self.data):
            raise CheckpointError("checkpoint truncated: array data missing")
        arr = np.frombuffer(self.data[self.off:end], dtype="<f8").reshape(shape).copy()
        self.off = end
        return arr


def model_from_checkpoint_bytes(data: bytes) -> TrainedModel:
    if len(data) < 16:
        raise CheckpointError("checkpoint truncated: missing header")
    magic, version, header_len = struct.unpack_from("<4sIQ", data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} not supported (this build reads version {CHECKPOINT_VERSION})"
        )
    if 16 + header_len > len(data):
        raise CheckpointError("checkpoint truncated: incomplete header")
    try:
        header = json.loads(data[16 : 16 + header_len].decode())
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from None

    try:
        cfg_dict = dict(header["config"])
        cfg_dict["hidden_dims"] = tuple(cfg_dict["hidden_dims"])
        cfg = TrainConfig(**cfg_dict)
        net_meta = header["network"]
        log = [LogRecord(**r) for r in header["log"]]
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from None

    reader = _BlobReader(data[16 + header_len :])
    dims = [int(d) for d in net_meta["layer_dims"]]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(reader.take((fan_in, fan_out)))
        biases.append(reader.take((fan_out,)))
    net = Network(dims, weights, biases, net_meta["activation"], net_meta["rng_seed"])

    anchors = None
    if header["anchors"] is not None:
        a = header["anchors"]
        points = [reader.take((int(c), int(a["dim"]))) for c in a["counts"]]
        anchors = AnchorSet(int(a["anchors_per_category"]), points)
    head = None
    if header["head"] is not None:
        n_cat = int(header["head"]["n_categories"])
        head = SoftmaxHead(reader.take((dims[-1], n_cat)), reader.take((n_cat,)))
    if reader.off != len(reader.data):
        raise CheckpointError("checkpoint has trailing data")
    return TrainedModel(net, anchors, head, cfg, int(header["n_categories"]), log)


def load_checkpoint(path: str) -> TrainedModel:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from None
    return model_from_checkpoint_bytes(data)


def project_2d(embeddings: np.ndarray) -> np.ndarray:
    """Project points onto their top-2 principal directions.

    Directions are sign-fixed so each one's largest-magnitude component is
    positive, making the output deterministic.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("projection needs at least 2 points")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    coords = np.zeros((x.shape[0], 2))
    for k in range(min(2, x.shape[1])):
        v = eigvecs[:, order[k]]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        coords[:, k] = centered @ v
    return coords
