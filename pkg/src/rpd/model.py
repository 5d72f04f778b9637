"""Hashed bag-of-n-grams features and the three-head joint linear classifier.

The joint model shares one feature map between a standard classification
head, a dummy adversarial head (trained on the labels attackers produced) and
a binary adversarial detector. Training minimises

    L_c + alpha * L_d + beta * L_a + l2 * ||theta||^2

where the detector and adversarial terms use the complement cross-entropy
``-sum_i [p_i log q_i + (1 - p_i) log(1 - q_i)]`` against one-hot targets.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .text import Dataset, Sentence

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

UNK = ""  # placeholder token that contributes no features
HEADS = ("std", "adv", "det")
MAGIC = b"RPDJ1"


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 20)
def _bucket(gram: str, buckets: int) -> int:
    return fnv1a_64(gram.encode("utf-8")) % buckets


@dataclass(frozen=True)
class FeatureConfig:
    buckets: int = 1 << 18
    orders: tuple[int, ...] = (1, 2)
    max_tokens: int = 80

    def __post_init__(self):
        if self.buckets < 1 or not self.orders or min(self.orders) < 1 or self.max_tokens < 1:
            raise ValueError(f"invalid feature config {self}")


@dataclass(frozen=True)
class FeatureVector:
    """Sparse bucket counts; ``indices`` is sorted and unique."""

    indices: np.ndarray
    counts: np.ndarray

    def as_dict(self) -> dict[int, int]:
        return {int(i): int(c) for i, c in zip(self.indices, self.counts)}

    def __len__(self) -> int:
        return len(self.indices)


def ngram_buckets(tokens: Sequence[str], cfg: FeatureConfig) -> list[list[int]]:
    """Buckets of the n-grams covering each token position (truncated input)."""
    tokens = list(tokens)[: cfg.max_tokens]
    covering: list[list[int]] = [[] for _ in tokens]
    for n in cfg.orders:
        for i in range(len(tokens) - n + 1):
            gram = tokens[i : i + n]
            if UNK in gram:
                continue
            b = _bucket("\x1f".join(gram), cfg.buckets)
            for j in range(i, i + n):
                covering[j].append(b)
    return covering


def featurize(s: Sentence | Sequence[str], cfg: FeatureConfig) -> FeatureVector:
    tokens = s.tokens if isinstance(s, Sentence) else s
    tokens = list(tokens)[: cfg.max_tokens]
    counts: dict[int, int] = {}
    for n in cfg.orders:
        for i in range(len(tokens) - n + 1):
            gram = tokens[i : i + n]
            if UNK in gram:
                continue
            b = _bucket("\x1f".join(gram), cfg.buckets)
            counts[b] = counts.get(b, 0) + 1
    idx = np.fromiter(sorted(counts), dtype=np.int64, count=len(counts))
    cnt = np.array([counts[i] for i in idx.tolist()], dtype=np.float64)
    return FeatureVector(idx, cnt)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


class LinearHead:
    """Read-only view of one softmax head; the attack/defense model interface."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, feature_config: FeatureConfig):
        self.weight = weight
        self.bias = bias
        self.feature_config = feature_config

    @property
    def class_count(self) -> int:
        return self.bias.shape[0]

    def scores(self, tokens: Sentence | Sequence[str]) -> np.ndarray:
        f = featurize(tokens, self.feature_config)
        return self.weight[:, f.indices] @ f.counts + self.bias

    def predict_proba(self, tokens: Sentence | Sequence[str]) -> np.ndarray:
        return softmax(self.scores(tokens))

    def predict(self, tokens: Sentence | Sequence[str]) -> int:
        return int(np.argmax(self.scores(tokens)))


@dataclass
class JointModelParams:
    std_w: np.ndarray
    std_b: np.ndarray
    adv_w: np.ndarray
    adv_b: np.ndarray
    det_w: np.ndarray
    det_b: np.ndarray
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)

    @classmethod
    def zeros(cls, class_count: int, feature_config: FeatureConfig | None = None) -> "JointModelParams":
        fc = feature_config or FeatureConfig()
        B = fc.buckets
        return cls(
            np.zeros((class_count, B)), np.zeros(class_count),
            np.zeros((class_count, B)), np.zeros(class_count),
            np.zeros((2, B)), np.zeros(2),
            fc,
        )

    @property
    def class_count(self) -> int:
        return self.std_b.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "feature_config"}

    def copy(self) -> "JointModelParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def head(self, name: str) -> LinearHead:
        if name not in HEADS:
            raise KeyError(name)
        return LinearHead(getattr(self, f"{name}_w"), getattr(self, f"{name}_b"), self.feature_config)

    def standard_head(self) -> LinearHead:
        return self.head("std")

    def detector_head(self) -> LinearHead:
        return self.head("det")

    def sq_norm(self) -> float:
        return float(sum(np.dot(a.ravel(), a.ravel()) for a in self.arrays().values()))

    def equals(self, other: "JointModelParams") -> bool:
        """Bitwise equality of every block plus matching feature config."""
        if self.feature_config != other.feature_config:
            return False
        mine, theirs = self.arrays(), other.arrays()
        return all(
            mine[k].shape == theirs[k].shape and mine[k].tobytes() == theirs[k].tobytes() for k in mine
        )


def forward(params: JointModelParams, f: FeatureVector) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    out = []
    for name in HEADS:
        w, b = getattr(params, f"{name}_w"), getattr(params, f"{name}_b")
        out.append(softmax(w[:, f.indices] @ f.counts + b))
    return out[0], out[1], out[2]


@dataclass(frozen=True)
class AugmentedExample:
    """A training row carrying (true label, perturbed label, adversary flag).

    ``y1``/``y2`` use ``None`` for the dummy label. ``origin`` and
    ``attacker`` are bookkeeping for serialization only.
    """

    sentence: Sentence
    y1: int | None
    y2: int | None
    y3: int
    origin: str = "natural"
    attacker: str | None = None

    def __post_init__(self):
        if self.y3 == 1:
            ok = self.y1 is None and self.y2 is not None
        elif self.y3 == 0:
            ok = self.y1 is not None and self.y2 is None
        else:
            ok = False
        if not ok:
            raise ValueError(f"illegal label triple ({self.y1}, {self.y2}, {self.y3})")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 16
    epochs: int = 5
    alpha: float = 5.0
    beta: float = 5.0
    l2: float = 1e-5
    seed: int = 42
    max_tokens: int = 80
    buckets: int = 1 << 18
    orders: tuple[int, ...] = (1, 2)
    objective: str = "decoupled"  # or "vanilla-at": L_a drives the standard head

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0 or self.l2 < 0:
            raise ValueError(f"invalid training config {self}")
        if self.objective not in ("decoupled", "vanilla-at"):
            raise ValueError(f"unknown objective {self.objective!r}")

    @property
    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.buckets, tuple(self.orders), self.max_tokens)


# --- loss ---------------------------------------------------------------


def _ce(z: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax cross-entropy and its gradient w.r.t. the logits."""
    lse = _logsumexp(z)
    rows = np.arange(len(target))
    loss = lse - z[rows, target]
    g = softmax(z)
    g[rows, target] -= 1.0
    return loss, g


def _complement_ce(z: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``-sum_i [t_i log p_i + (1 - t_i) log(1 - p_i)]`` and logit gradient."""
    n, C = z.shape
    if C < 2:
        raise ValueError("complement cross-entropy needs at least two classes")
    lse = _logsumexp(z)
    log_p = z - lse[:, None]
    # log(1 - p_i) = logsumexp(z without i) - logsumexp(z)
    log_rest = np.empty_like(z)
    for i in range(C):
        log_rest[:, i] = _logsumexp(np.delete(z, i, axis=1))
    log_q = log_rest - lse[:, None]
    onehot = np.zeros_like(z)
    onehot[np.arange(n), target] = 1.0
    loss = -(onehot * log_p + (1 - onehot) * log_q).sum(axis=1)
    p = np.exp(log_p)
    # a_i = dloss/dp_i * p_i ; dloss/dz_j = a_j - p_j * sum_i a_i
    odds = np.exp(z - log_rest)
    a = -onehot + (1 - onehot) * odds
    g = a - p * a.sum(axis=1, keepdims=True)
    return loss, g


@dataclass
class _SparseGrad:
    """Data-term gradient for one head, restricted to touched buckets."""

    buckets: np.ndarray
    weight_cols: np.ndarray  # (len(buckets), C)
    bias: np.ndarray


def _head_grad(feats: Sequence[FeatureVector], g: np.ndarray, C: int) -> _SparseGrad:
    if not feats:
        return _SparseGrad(np.zeros(0, dtype=np.int64), np.zeros((0, C)), np.zeros(C))
    idx = np.concatenate([f.indices for f in feats])
    contrib = np.concatenate([np.outer(f.counts, g[k]) for k, f in enumerate(feats)])
    uniq, inv = np.unique(idx, return_inverse=True)
    cols = np.zeros((len(uniq), C))
    np.add.at(cols, inv, contrib)
    return _SparseGrad(uniq, cols, g.sum(axis=0))


def _logits(w: np.ndarray, b: np.ndarray, feats: Sequence[FeatureVector]) -> np.ndarray:
    return np.array([w[:, f.indices] @ f.counts + b for f in feats]).reshape(len(feats), b.shape[0])


def _data_terms(params: JointModelParams, feats: Sequence[FeatureVector], batch: Sequence[AugmentedExample],
                cfg: TrainConfig) -> tuple[dict[str, float], dict[str, _SparseGrad]]:
    if not batch:
        raise ValueError("loss needs a non-empty batch")
    C = params.class_count
    std_rows = [k for k, ex in enumerate(batch) if ex.y1 is not None]
    adv_rows = [k for k, ex in enumerate(batch) if ex.y2 is not None]
    adv_head = "std" if cfg.objective == "vanilla-at" else "adv"

    terms = {"L_c": 0.0, "L_d": 0.0, "L_a": 0.0}
    grads: dict[str, list[tuple[list[FeatureVector], np.ndarray]]] = {h: [] for h in HEADS}

    if std_rows:
        fs = [feats[k] for k in std_rows]
        loss, g = _ce(_logits(params.std_w, params.std_b, fs), np.array([batch[k].y1 for k in std_rows]))
        terms["L_c"] = float(loss.mean())
        grads["std"].append((fs, g / len(std_rows)))

    z = _logits(params.det_w, params.det_b, feats)
    loss, g = _complement_ce(z, np.array([ex.y3 for ex in batch]))
    terms["L_d"] = float(loss.mean())
    grads["det"].append((list(feats), cfg.alpha * g / len(batch)))

    if adv_rows:
        fs = [feats[k] for k in adv_rows]
        w, b = getattr(params, f"{adv_head}_w"), getattr(params, f"{adv_head}_b")
        loss, g = _complement_ce(_logits(w, b, fs), np.array([batch[k].y2 for k in adv_rows]))
        terms["L_a"] = float(loss.mean())
        grads[adv_head].append((fs, cfg.beta * g / len(adv_rows)))

    sparse = {}
    for h in HEADS:
        width = 2 if h == "det" else C
        parts = [_head_grad(fs, g, width) for fs, g in grads[h]]
        if not parts:
            sparse[h] = _head_grad([], np.zeros((0, width)), width)
        elif len(parts) == 1:
            sparse[h] = parts[0]
        else:
            idx = np.concatenate([p.buckets for p in parts])
            cols = np.concatenate([p.weight_cols for p in parts])
            uniq, inv = np.unique(idx, return_inverse=True)
            merged = np.zeros((len(uniq), width))
            np.add.at(merged, inv, cols)
            sparse[h] = _SparseGrad(uniq, merged, sum(p.bias for p in parts))
    return terms, sparse


def loss_terms(params: JointModelParams, batch: Sequence[AugmentedExample], cfg: TrainConfig) -> dict[str, float]:
    feats = [featurize(ex.sentence, params.feature_config) for ex in batch]
    terms, _ = _data_terms(params, feats, batch, cfg)
    return terms


def combine(terms: dict[str, float], alpha: float, beta: float, reg: float = 0.0) -> float:
    return terms["L_c"] + alpha * terms["L_d"] + beta * terms["L_a"] + reg


def loss(params: JointModelParams, batch: Sequence[AugmentedExample],
         cfg: TrainConfig) -> tuple[float, JointModelParams]:
    """Total joint loss and its exact gradient (same layout as ``params``)."""
    feats = [featurize(ex.sentence, params.feature_config) for ex in batch]
    terms, sparse = _data_terms(params, feats, batch, cfg)
    total = combine(terms, cfg.alpha, cfg.beta, cfg.l2 * params.sq_norm())
    grad = params.copy()
    for name, arr in grad.arrays().items():
        arr *= 2 * cfg.l2
    for h, sg in sparse.items():
        w = getattr(grad, f"{h}_w")
        w[:, sg.buckets] += sg.weight_cols.T
        getattr(grad, f"{h}_b")[:] += sg.bias
    return total, grad


# --- training -----------------------------------------------------------


def _canonical_key(ex: AugmentedExample):
    return (ex.sentence.tokens, -1 if ex.y1 is None else ex.y1, -1 if ex.y2 is None else ex.y2, ex.y3)


def train_joint(data: Sequence[AugmentedExample], cfg: TrainConfig,
                class_count: int | None = None) -> JointModelParams:
    """Mini-batch SGD from zero init; rows are canonically ordered, then shuffled by ``cfg.seed``."""
    if class_count is None:
        labels = [y for ex in data for y in (ex.y1, ex.y2) if y is not None]
        class_count = max(max(labels, default=0) + 1, 2)
    params = JointModelParams.zeros(class_count, cfg.feature_config)
    rows = sorted(data, key=_canonical_key)
    feats = [featurize(ex.sentence, params.feature_config) for ex in rows]
    rng = np.random.default_rng(cfg.seed)
    lr, decay = cfg.learning_rate, 1.0 - 2.0 * cfg.learning_rate * cfg.l2
    for _ in range(cfg.epochs):
        order = rng.permutation(len(rows))
        for start in range(0, len(rows), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            _, sparse = _data_terms(params, [feats[k] for k in sel], [rows[k] for k in sel], cfg)
            for name, arr in params.arrays().items():
                arr *= decay
            for h, sg in sparse.items():
                getattr(params, f"{h}_w")[:, sg.buckets] -= lr * sg.weight_cols.T
                getattr(params, f"{h}_b")[:] -= lr * sg.bias
    return params


def victim_rows(data: Iterable) -> list[AugmentedExample]:
    return [AugmentedExample(ex.sentence, ex.label, None, 0) for ex in data]


def train_victim(data: Dataset, cfg: TrainConfig) -> JointModelParams:
    """Standard head only, plain cross-entropy on true labels."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    return train_joint(victim_rows(data), replace(cfg, alpha=0.0, beta=0.0), data.class_count)


def adversarial_training_rows(records) -> list[AugmentedExample]:
    """Successful adversaries relabelled with their source example's true label."""
    return [
        AugmentedExample(r.outcome.perturbed, r.source.label, None, 0, "adversary-success", r.attacker_id)
        for r in records
        if r.outcome.success
    ]


def train_at_baseline(natural: Dataset, adversaries: Sequence[AugmentedExample],
                      cfg: TrainConfig) -> JointModelParams:
    """Adversarial training: one standard head fit on naturals plus relabelled adversaries."""
    if len(natural) == 0 and not adversaries:
        raise ValueError("cannot train on an empty dataset")
    for ex in adversaries:
        if ex.y1 is None:
            raise ValueError("adversaries for adversarial training need their true label in y1")
    rows = victim_rows(natural) + [AugmentedExample(ex.sentence, ex.y1, None, 0) for ex in adversaries]
    return train_joint(rows, replace(cfg, alpha=0.0, beta=0.0), natural.class_count)


# --- checkpoints --------------------------------------------------------


def save_model(params: JointModelParams, path: str | Path) -> None:
    blocks = params.arrays()
    header = {
        "class_count": params.class_count,
        "feature_config": {
            "buckets": params.feature_config.buckets,
            "orders": list(params.feature_config.orders),
            "max_tokens": params.feature_config.max_tokens,
        },
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in blocks.items()],
        "dtype": "<f8",
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for v in blocks.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_model(path: str | Path) -> JointModelParams:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC):
        raise CheckpointError(f"{path}: truncated or empty checkpoint")
    magic = data[: len(MAGIC)]
    if magic != MAGIC:
        if magic[:4] == MAGIC[:4]:
            raise CheckpointVersionError(f"{path}: unsupported checkpoint version {magic.decode(errors='replace')!r}")
        raise CheckpointError(f"{path}: not an RPDJ checkpoint")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    try:
        header = json.loads(data[pos : pos + hlen])
    except (ValueError, UnicodeDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    pos += hlen
    fc = FeatureConfig(header["feature_config"]["buckets"], tuple(header["feature_config"]["orders"]),
                       header["feature_config"]["max_tokens"])
    arrays = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        nbytes = 8 * math.prod(shape)
        if len(data) < pos + nbytes:
            raise CheckpointError(f"{path}: truncated block {block['name']}")
        arrays[block["name"]] = np.frombuffer(data, dtype="<f8", count=math.prod(shape), offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last block")
    params = JointModelParams(feature_config=fc, **arrays)
    if params.class_count != header["class_count"]:
        raise CheckpointError(f"{path}: class_count mismatch")
    return params
