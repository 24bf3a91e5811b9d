"""Alternating min-max pretraining: adversaries minimize agreement, the encoder maximizes it.

Each minibatch runs the viewpoint game and the edge game (order configurable).
A game has a MIN phase, where only the augmenter moves and the online
encoder/projector serve as a frozen critic, and a MAX phase, where only the
online encoder/projector move against the momentum encoder's view of the
augmented batch, followed by the momentum update.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .augmenters import (init_graph_augmenter, init_skeleton_augmenter, predict_edge_weights,
                         predict_quaternion, random_unit_quaternions, rotate_sequence)
from .contrastive import TripletConfig, game_losses, mi_estimate
from .encoder import EncoderConfig, EncoderPair, embed, momentum_update
from .errors import ConfigError, NumericError
from .graph import SkeletonGraph, apply_edge_weights, normalize_adjacency
from .optim import SGD
from .skeleton import LabeledDataset, to_stream
from .tensor import Tensor

logger = logging.getLogger(__name__)

GAMES = ("vmmg", "emmg")
ABLATIONS = ("none", "r_view", "r_edge", "d_rr")


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 32
    # 0.1 assumes batch norm; without it the hardest-negative hinge collapses
    # the embedding within a few epochs at that rate
    lr: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.9
    aug_lr: float = 0.01
    # the target only tracks the online encoder over a few hundred desk-scale
    # steps, so the usual 0.999 would leave it pinned near initialization
    momentum_coef: float = 0.9
    # global L2 cap on the encoder gradient; None disables
    grad_clip: float | None = 1.0
    # largest rotation (radians) the viewpoint adversary may apply; None is unbounded
    view_budget: float | None = math.pi / 4
    triplet: TripletConfig = field(default_factory=TripletConfig)
    games: tuple = GAMES
    game_order: tuple = GAMES
    stream: str = "joint"
    ablation: str = "none"
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if isinstance(self.triplet, dict):
            self.triplet = TripletConfig(**self.triplet)
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        self.games = tuple(self.games)
        self.game_order = tuple(self.game_order)

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not self.games:
            raise ConfigError("at least one game must be enabled")
        for g in self.games:
            if g not in GAMES:
                raise ConfigError(f"unknown game {g!r}; choose from {GAMES}")
        if len(set(self.games)) != len(self.games):
            raise ConfigError("games listed twice")
        if sorted(self.game_order) != sorted(GAMES):
            raise ConfigError(f"game_order must be a permutation of {GAMES}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.stream not in ("joint", "motion"):
            raise ConfigError(f"unknown stream {self.stream!r}")
        if not 0 <= self.momentum_coef <= 1:
            raise ConfigError("momentum_coef must lie in [0, 1]")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive or null")
        if self.view_budget is not None and not 0 < self.view_budget < math.pi:
            raise ConfigError("view_budget must lie in (0, pi) or be null")
        for name in ("lr", "aug_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        self.triplet.validate()
        self.encoder.validate()

    def ordered_games(self) -> list[str]:
        return [g for g in self.game_order if g in self.games]

    def random_view(self) -> bool:
        return self.ablation in ("r_view", "d_rr")

    def random_edge(self) -> bool:
        return self.ablation in ("r_edge", "d_rr")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["games"] = list(self.games)
        d["game_order"] = list(self.game_order)
        d["encoder"]["blocks"] = [list(b) for b in self.encoder.blocks]
        return d


@dataclass
class TrainState:
    encoder: EncoderPair
    skeleton_aug: dict
    graph_aug: dict
    encoder_opt: SGD
    skeleton_opt: SGD
    graph_opt: SGD
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0

    @classmethod
    def create(cls, cfg: PretrainConfig, graph: SkeletonGraph) -> "TrainState":
        pair = EncoderPair.create(cfg.encoder, cfg.seed, cfg.momentum_coef)
        skel = init_skeleton_augmenter(graph.num_joints, cfg.seed)
        gaug = init_graph_augmenter(graph.num_joints, graph.num_edges, cfg.seed)
        return cls(
            encoder=pair,
            skeleton_aug=skel,
            graph_aug=gaug,
            encoder_opt=SGD(list(pair.online.items()), cfg.lr, cfg.weight_decay, cfg.momentum,
                            max_grad_norm=cfg.grad_clip),
            skeleton_opt=SGD(list(skel.items()), cfg.aug_lr),
            graph_opt=SGD(list(gaug.items()), cfg.aug_lr),
            rng=np.random.default_rng([cfg.seed, 401]),
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, params in (("online", self.encoder.online), ("target", self.encoder.target),
                               ("skeleton_aug", self.skeleton_aug), ("graph_aug", self.graph_aug)):
            for name, p in params.items():
                out[f"{prefix}/{name}"] = p.data
        return out


def _trainable(*groups: dict, flag: bool):
    for params in groups:
        for p in params.values():
            p.requires_grad = flag


def _freeze_all(state: TrainState):
    _trainable(state.encoder.online, state.encoder.target, state.skeleton_aug, state.graph_aug, flag=False)


# ----------------------------------------------------------- viewpoint game


def vmmg_min_objective(state: TrainState, x: np.ndarray, a_norm: Tensor, cfg: PretrainConfig) -> Tensor:
    """I between the online embedding of X and of its augmenter-rotated copy."""
    online = state.encoder.online
    z1 = embed(online, x, a_norm, cfg.encoder)
    x_aug = rotate_sequence(x, predict_quaternion(state.skeleton_aug, x, cfg.view_budget))
    z2 = embed(online, x_aug, a_norm, cfg.encoder)
    return mi_estimate(z1, z2, cfg.triplet)


def _view_batch(state: TrainState, x: np.ndarray, cfg: PretrainConfig) -> Tensor:
    if cfg.random_view():
        q = random_unit_quaternions(state.rng, x.shape[0])
    else:
        q = predict_quaternion(state.skeleton_aug, x, cfg.view_budget)
    return rotate_sequence(x, q)


def vmmg_min_phase(state: TrainState, x: np.ndarray, a_norm: Tensor, cfg: PretrainConfig) -> float:
    """Descend I w.r.t. the skeleton augmenter only; returns I before the update."""
    _freeze_all(state)
    _trainable(state.skeleton_aug, flag=True)
    info = vmmg_min_objective(state, x, a_norm, cfg)
    grads = T.grad(info, state.skeleton_aug.values())
    state.skeleton_opt.step(grads, "descent")
    _freeze_all(state)
    return info.item()


def vmmg_max_phase(state: TrainState, x: np.ndarray, a_norm: Tensor, cfg: PretrainConfig) -> float:
    """Descend gamma - I w.r.t. the online encoder/projector, then the momentum update."""
    pair = state.encoder
    _freeze_all(state)
    x_aug = _view_batch(state, x, cfg).detach()
    _trainable(pair.online, flag=True)
    z1 = embed(pair.online, x, a_norm, cfg.encoder)
    z2 = embed(pair.target, x_aug, a_norm, cfg.encoder)
    info, loss_max = game_losses(z1, z2, cfg.triplet)
    grads = T.grad(loss_max, pair.online.values())
    state.encoder_opt.step(grads, "descent")
    momentum_update(pair)
    _freeze_all(state)
    return info.item()


def vmmg_step(state: TrainState, x: np.ndarray, a_norm: Tensor, cfg: PretrainConfig,
              on_phase: Callable | None = None) -> tuple[float, float]:
    """One viewpoint game on a batch; returns I measured in the min and max phases."""
    i_min = math.nan
    if not cfg.random_view():
        i_min = vmmg_min_phase(state, x, a_norm, cfg)
        if on_phase:
            on_phase("vmmg_min", state)
    i_max = vmmg_max_phase(state, x, a_norm, cfg)
    if on_phase:
        on_phase("vmmg_max", state)
    return i_min, i_max


# ---------------------------------------------------------------- edge game


def perturbed_adjacency(graph: SkeletonGraph, w) -> Tensor:
    """Per-sample normalized adjacency after reweighting the bones by ``w``."""
    return normalize_adjacency(apply_edge_weights(graph, w))


def emmg_min_objective(state: TrainState, x: np.ndarray, a_norm: Tensor, graph: SkeletonGraph,
                       cfg: PretrainConfig) -> Tensor:
    online = state.encoder.online
    z1 = embed(online, x, a_norm, cfg.encoder)
    a_aug = perturbed_adjacency(graph, predict_edge_weights(state.graph_aug, x))
    z2 = embed(online, x, a_aug, cfg.encoder)
    return mi_estimate(z1, z2, cfg.triplet)


def _edge_batch(state: TrainState, x: np.ndarray, graph: SkeletonGraph, cfg: PretrainConfig) -> Tensor:
    if cfg.random_edge():
        w = state.rng.uniform(0.0, 1.0, size=(x.shape[0], graph.num_edges)).astype(np.float32)
    else:
        w = predict_edge_weights(state.graph_aug, x)
    return perturbed_adjacency(graph, w)


def emmg_min_phase(state: TrainState, x: np.ndarray, a_norm: Tensor, graph: SkeletonGraph,
                   cfg: PretrainConfig) -> float:
    _freeze_all(state)
    _trainable(state.graph_aug, flag=True)
    info = emmg_min_objective(state, x, a_norm, graph, cfg)
    grads = T.grad(info, state.graph_aug.values())
    state.graph_opt.step(grads, "descent")
    _freeze_all(state)
    return info.item()


def emmg_max_phase(state: TrainState, x: np.ndarray, a_norm: Tensor, graph: SkeletonGraph,
                   cfg: PretrainConfig) -> float:
    pair = state.encoder
    _freeze_all(state)
    a_aug = _edge_batch(state, x, graph, cfg).detach()
    _trainable(pair.online, flag=True)
    z1 = embed(pair.online, x, a_norm, cfg.encoder)
    z2 = embed(pair.target, x, a_aug, cfg.encoder)
    info, loss_max = game_losses(z1, z2, cfg.triplet)
    grads = T.grad(loss_max, pair.online.values())
    state.encoder_opt.step(grads, "descent")
    momentum_update(pair)
    _freeze_all(state)
    return info.item()


def emmg_step(state: TrainState, x: np.ndarray, a_norm: Tensor, graph: SkeletonGraph,
              cfg: PretrainConfig, on_phase: Callable | None = None) -> tuple[float, float]:
    """One edge game on a batch; returns I measured in the min and max phases."""
    i_min = math.nan
    if not cfg.random_edge():
        i_min = emmg_min_phase(state, x, a_norm, graph, cfg)
        if on_phase:
            on_phase("emmg_min", state)
    i_max = emmg_max_phase(state, x, a_norm, graph, cfg)
    if on_phase:
        on_phase("emmg_max", state)
    return i_min, i_max


# ----------------------------------------------------------------- driver


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled minibatches; a trailing singleton joins the previous batch."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _nan_to_none(v: float):
    return None if math.isnan(v) else v


def pretrain(cfg: PretrainConfig, dataset: LabeledDataset, graph: SkeletonGraph,
             on_phase: Callable | None = None, state: TrainState | None = None) -> tuple[TrainState, dict]:
    """Run the min-max games over ``dataset`` (labels unused).

    Returns the final state and a log with one record per step plus per-epoch
    means of every measured I.
    """
    cfg.validate()
    if len(dataset) < 2:
        raise ConfigError("pretraining needs at least 2 sequences")
    if dataset.num_joints != graph.num_joints:
        raise ConfigError(f"dataset has {dataset.num_joints} joints, graph has {graph.num_joints}")
    data = to_stream(dataset.sequences, cfg.stream)
    a_norm = normalize_adjacency(graph.adjacency).detach()
    state = state or TrainState.create(cfg, graph)
    steps, epochs = [], []
    games = cfg.ordered_games()
    for _ in range(cfg.epochs):
        epoch_records = []
        for idx in batch_indices(len(data), cfg.batch_size, state.rng):
            x = data[idx]
            record = {"epoch": state.epoch, "step": state.step}
            try:
                for game in games:
                    if game == "vmmg":
                        i_min, i_max = vmmg_step(state, x, a_norm, cfg, on_phase)
                    else:
                        i_min, i_max = emmg_step(state, x, a_norm, graph, cfg, on_phase)
                    record[f"{game}_min"] = _nan_to_none(i_min)
                    record[f"{game}_max"] = i_max
            except NumericError as exc:
                raise NumericError(f"step {state.step}: {exc}") from exc
            steps.append(record)
            epoch_records.append(record)
            state.step += 1
        means = {"epoch": state.epoch}
        for key in epoch_records[0] if epoch_records else ():
            if key in ("epoch", "step"):
                continue
            vals = [r[key] for r in epoch_records if r[key] is not None]
            means[key] = float(np.mean(vals)) if vals else None
        epochs.append(means)
        logger.info("epoch %d %s", state.epoch, means)
        state.epoch += 1
    return state, {"steps": steps, "epochs": epochs}
