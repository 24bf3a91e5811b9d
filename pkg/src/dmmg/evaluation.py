"""Downstream protocols: linear probe, finetune, KNN, semi-supervised, plus score fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, copy_params, encoder_forward, encoder_names
from .errors import ConfigError, DimensionError
from .graph import SkeletonGraph, normalize_adjacency
from .optim import Adam
from .skeleton import LabeledDataset, to_stream
from .tensor import Tensor

PROTOCOLS = ("linear", "finetune", "knn", "semi")


@dataclass
class EvalConfig:
    protocol: str = "linear"
    label_fraction: float = 0.1
    knn_k: int = 20
    knn_temperature: float = 0.1
    epochs: int = 80
    lr: float = 1e-3
    lr_drop_epoch: int = 60
    lr_drop_factor: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        if self.knn_k < 1:
            raise ConfigError(f"knn_k must be >= 1, got {self.knn_k}")
        if not self.knn_temperature > 0:
            raise ConfigError("knn_temperature must be positive")
        if not 0 < self.label_fraction <= 1:
            raise ConfigError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and lr > 0 required")


@dataclass
class EvalResult:
    accuracy: float
    scores: np.ndarray  # (N_test, C), rows sum to 1
    predictions: np.ndarray
    curve: list = field(default_factory=list)


def extract_features(params: dict, enc_cfg: EncoderConfig, graph: SkeletonGraph, sequences: np.ndarray,
                     batch_size: int = 64) -> np.ndarray:
    a_norm = normalize_adjacency(graph.adjacency).detach()
    out = [encoder_forward(params, sequences[i:i + batch_size], a_norm, enc_cfg).data
           for i in range(0, len(sequences), batch_size)]
    if not out:
        return np.zeros((0, enc_cfg.embed_dim), dtype=np.float32)
    return np.concatenate(out)


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _init_head(d: int, num_classes: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 501])
    bound = 1 / math.sqrt(d)
    return {"head.w": Tensor(rng.uniform(-bound, bound, size=(d, num_classes)), name="head.w"),
            "head.b": Tensor(rng.uniform(-bound, bound, size=num_classes), name="head.b")}


def _check_compatible(enc_cfg: EncoderConfig, graph: SkeletonGraph, *datasets: LabeledDataset):
    for ds in datasets:
        if ds.num_joints != graph.num_joints:
            raise DimensionError(f"dataset has {ds.num_joints} joints, encoder graph has {graph.num_joints}")


def linear_eval(params: dict, enc_cfg: EncoderConfig, graph: SkeletonGraph, train: LabeledDataset,
                test: LabeledDataset, cfg: EvalConfig, freeze: bool = True, stream: str = "joint") -> EvalResult:
    """Train an FC + softmax head on top of the encoder and score the test split.

    With ``freeze`` the encoder is only read; otherwise a copy of it is
    finetuned jointly with the head. The caller's parameters never change.
    """
    cfg.validate()
    _check_compatible(enc_cfg, graph, train, test)
    rng = np.random.default_rng([cfg.seed, 502])
    xtr = to_stream(train.sequences, stream)
    xte = to_stream(test.sequences, stream)
    head = _init_head(enc_cfg.embed_dim, train.num_classes, cfg.seed)
    if freeze:
        enc = params
        feats = extract_features(enc, enc_cfg, graph, xtr)
        trainable = list(head.items())
    else:
        enc = {n: p for n, p in copy_params(params).items() if n in encoder_names(params)}
        for p in enc.values():
            p.requires_grad = True
        trainable = list(enc.items()) + list(head.items())
    for p in head.values():
        p.requires_grad = True
    a_norm = normalize_adjacency(graph.adjacency).detach()
    opt = Adam(trainable, lr=cfg.lr)
    curve = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * (cfg.lr_drop_factor if epoch >= cfg.lr_drop_epoch else 1.0)
        order = rng.permutation(len(train))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            z = Tensor(feats[idx]) if freeze else encoder_forward(enc, xtr[idx], a_norm, enc_cfg)
            logits = T.matmul(z, head["head.w"]) + head["head.b"]
            loss = T.cross_entropy(logits, train.labels[idx])
            opt.step(T.grad(loss, [p for _, p in trainable]))
            losses.append(loss.item())
        curve.append({"epoch": epoch, "loss": float(np.mean(losses))})
    for p in head.values():
        p.requires_grad = False
    if not freeze:
        for p in enc.values():
            p.requires_grad = False
    zte = extract_features(enc, enc_cfg, graph, xte)
    scores = _softmax(zte @ head["head.w"].data + head["head.b"].data)
    pred = scores.argmax(axis=1)
    acc = float((pred == test.labels).mean()) if len(test) else 0.0
    return EvalResult(acc, scores, pred, curve)


def knn_scores(train_feats: np.ndarray, train_labels: np.ndarray, test_feats: np.ndarray,
               num_classes: int, k: int = 20, temperature: float = 0.1) -> np.ndarray:
    """Normalized class votes; each of the k most cosine-similar neighbours adds exp(sim / T)."""
    if k > len(train_feats):
        raise ConfigError(f"k={k} exceeds the {len(train_feats)} training samples")
    def unit(f):
        f = np.asarray(f, dtype=np.float64)
        return f / np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 1e-12)
    sim = unit(test_feats) @ unit(train_feats).T
    # stable sort on -sim keeps the lower index first among equal similarities
    nn = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(sim, nn, axis=1)
    weights = np.exp((top - 1.0) / temperature)  # shifted by the max possible similarity; cancels on normalization
    votes = np.zeros((len(test_feats), num_classes))
    np.add.at(votes, (np.arange(len(test_feats))[:, None], train_labels[nn]), weights)
    return votes / votes.sum(axis=1, keepdims=True)


def knn_eval(params: dict, enc_cfg: EncoderConfig, graph: SkeletonGraph, train: LabeledDataset,
             test: LabeledDataset, cfg: EvalConfig, stream: str = "joint") -> EvalResult:
    cfg.validate()
    _check_compatible(enc_cfg, graph, train, test)
    if cfg.knn_k > len(train):
        raise ConfigError(f"k={cfg.knn_k} exceeds the {len(train)} training samples")
    ftr = extract_features(params, enc_cfg, graph, to_stream(train.sequences, stream))
    fte = extract_features(params, enc_cfg, graph, to_stream(test.sequences, stream))
    scores = knn_scores(ftr, train.labels, fte, train.num_classes, cfg.knn_k, cfg.knn_temperature)
    pred = scores.argmax(axis=1)
    return EvalResult(float((pred == test.labels).mean()) if len(test) else 0.0, scores, pred)


def semi_supervised_split(ds: LabeledDataset, fraction: float, seed: int) -> np.ndarray:
    """Sorted indices of ceil(fraction * count) samples from each class."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"label fraction must lie in (0, 1], got {fraction}")
    rng = np.random.default_rng([seed, 503])
    picked = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        if len(members) == 0:
            raise ConfigError(f"class {c} has no samples to draw labels from")
        take = math.ceil(fraction * len(members) - 1e-9)
        picked.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(picked))


def semi_eval(params: dict, enc_cfg: EncoderConfig, graph: SkeletonGraph, train: LabeledDataset,
              test: LabeledDataset, cfg: EvalConfig, stream: str = "joint") -> EvalResult:
    subset = train.subset(semi_supervised_split(train, cfg.label_fraction, cfg.seed))
    return linear_eval(params, enc_cfg, graph, subset, test, cfg, freeze=False, stream=stream)


def run_protocol(params: dict, enc_cfg: EncoderConfig, graph: SkeletonGraph, train: LabeledDataset,
                 test: LabeledDataset, cfg: EvalConfig, stream: str = "joint") -> EvalResult:
    if cfg.protocol == "linear":
        return linear_eval(params, enc_cfg, graph, train, test, cfg, True, stream)
    if cfg.protocol == "finetune":
        return linear_eval(params, enc_cfg, graph, train, test, cfg, False, stream)
    if cfg.protocol == "knn":
        return knn_eval(params, enc_cfg, graph, train, test, cfg, stream)
    cfg.validate()
    return semi_eval(params, enc_cfg, graph, train, test, cfg, stream)


def fuse_streams(a: np.ndarray, b: np.ndarray, labels=None) -> tuple[np.ndarray, float | None]:
    """Mean of two score matrices, renormalized per row; accuracy if labels are given."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"score matrices differ in shape: {a.shape} vs {b.shape}")
    fused = (a + b) / 2
    fused = fused / fused.sum(axis=1, keepdims=True)
    acc = None
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != len(fused):
            raise DimensionError(f"{len(labels)} labels for {len(fused)} score rows")
        acc = float((fused.argmax(axis=1) == labels).mean())
    return fused, acc


def pca_2d(features: np.ndarray, iters: int = 500, tol: float = 1e-10) -> np.ndarray:
    """Project onto the top two covariance eigenvectors, found by power iteration with deflation."""
    x = np.asarray(features, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    cov = x.T @ x / max(len(x) - 1, 1)
    d = cov.shape[0]
    comps = []
    for k in range(min(2, d)):
        v = np.ones(d) / math.sqrt(d)
        v[k % d] += 0.5  # break symmetry deterministically
        v /= np.linalg.norm(v)
        for _ in range(iters):
            w = cov @ v
            for c in comps:
                w -= (w @ c) * c
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                break
            w /= norm
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        # sign convention: largest-magnitude coordinate positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
    while len(comps) < 2:
        comps.append(np.zeros(d))
    return x @ np.stack(comps, axis=1)


def metrics_record(protocol: str, stream: str, seed: int, result: EvalResult, **extra) -> dict:
    rec = {"protocol": protocol, "stream": stream, "seed": seed, "accuracy": result.accuracy,
           "epoch_curve": result.curve}
    rec.update(extra)
    return rec
