"""End-to-end training: Adam with a step schedule, adversarial perturbations,
prototype warm-up, and per-epoch history logging.

Determinism contract: (dataset, config, arch, seed) fully determine the final
parameters. All randomness flows from one root Rng that is split per purpose
(init, per-epoch shuffling, per-batch perturbation starts), so reruns are
bitwise identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import TimeSeriesDataset
from .linalg import Rng
from .losses import LossBreakdown, Margins, kl_grad_wrt_offset, losses_and_grads
from .model import (
    ArchConfig,
    ModelParams,
    cross_norm,
    encode,
    init_params,
    predict_batch,
)

HISTORY_COLUMNS = ["epoch", "l_dse", "l_cl", "l_proto", "l_lse", "l_ortho",
                   "l_reg", "l_disc", "l_total", "lr", "cross_norm", "train_acc"]


@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the reference training recipe."""

    lam1: float = 0.9
    lam2: float = 2.0
    lam_adv: float = 0.1
    margins: Margins = field(default_factory=Margins)
    lr0: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 30
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 100
    adv_eps_max: float = 1.0
    adv_power_iters: int = 1
    repulsion_clamp: float | None = None
    seed: int = 0
    enable_dse: bool = True
    enable_lse: bool = True
    enable_ortho: bool = True
    enable_ag: bool = True

    def __post_init__(self):
        if isinstance(self.margins, dict):
            self.margins = Margins(**self.margins)
        if self.lr0 <= 0 or self.lr_decay_factor <= 0:
            raise ValueError("learning rates must be > 0")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0 or self.adv_eps_max < 0:
            raise ValueError("weight_decay and adv_eps_max must be >= 0")
        if self.adv_power_iters < 1:
            raise ValueError("adv_power_iters must be >= 1")
        if self.repulsion_clamp is not None and self.repulsion_clamp <= 0:
            raise ValueError("repulsion_clamp must be positive when set")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["margins"] = {"m_d": self.margins.m_d, "m_l1": self.margins.m_l1,
                        "m_l2": self.margins.m_l2}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step-decayed learning rate for a zero-based epoch index."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def adv_eps_at(epoch: int, cfg: TrainConfig) -> float:
    """Perturbation radius ramped linearly from ~0 up to adv_eps_max."""
    return cfg.adv_eps_max * (epoch + 1) / cfg.epochs


@dataclass
class EpochRecord:
    epoch: int                 # 1-based
    losses: LossBreakdown
    lr: float
    cross_norm: float
    proto_norm: float          # mean L2 norm of the prototypes
    train_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list[float]:
        if name == "epoch":
            return [r.epoch for r in self.records]
        if name in ("lr", "cross_norm", "proto_norm", "train_acc"):
            return [getattr(r, name) for r in self.records]
        return [getattr(r.losses, name) for r in self.records]


def save_history(history: TrainHistory, path: str) -> None:
    """History CSV with the fixed column set (one row per epoch, 1-based)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for r in history.records:
            bd = r.losses
            writer.writerow([r.epoch] + ["%.17g" % v for v in (
                bd.l_dse, bd.l_cl, bd.l_proto, bd.l_lse, bd.l_ortho, bd.l_reg,
                bd.l_disc, bd.l_total, r.lr, r.cross_norm, r.train_acc)])


@dataclass
class TrainState:
    """Mutable optimizer state: parameters plus Adam moments."""

    params: ModelParams
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-4
    adv_eps: float = 0.0

    @classmethod
    def fresh(cls, params: ModelParams, cfg: TrainConfig) -> "TrainState":
        return cls(params=params, adam_m=params.zeros_like(),
                   adam_v=params.zeros_like(), step=0, lr=cfg.lr0, adv_eps=0.0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
POWER_ITER_XI = 1e-6


def adv_perturbation(params: ModelParams, f0_rows: np.ndarray, eps: float,
                     iters: int, rng: Rng) -> np.ndarray:
    """Feature-space perturbations that (approximately) maximize predictive KL.

    Power iteration: start from a random unit direction per row, repeatedly
    replace it with the normalized gradient of KL(p(f0) || p(f0 + xi*u)) in
    the offset, then scale to radius ``eps``. Rows whose gradient vanishes get
    a zero perturbation. eps == 0 short-circuits to zeros.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    f0 = np.atleast_2d(np.asarray(f0_rows, dtype=np.float64))
    if eps == 0.0:
        return np.zeros_like(f0)
    from .model import label_energy_batch, proto_sq_dists, softmax  # local to avoid cycle noise

    e_y, _ = label_energy_batch(params, f0)
    p_ref = softmax(-(e_y + proto_sq_dists(params, f0)), axis=1)
    u = rng.normal_array(f0.shape, 1.0)
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    u = u / np.where(norms > 0, norms, 1.0)
    alive = np.ones(f0.shape[0], dtype=bool)
    for _ in range(iters):
        g = kl_grad_wrt_offset(params, f0, p_ref, POWER_ITER_XI * u)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        alive &= norms[:, 0] > 0
        u = np.where(norms > 0, g / np.where(norms > 0, norms, 1.0), 0.0)
    r = eps * u
    r[~alive] = 0.0
    return r


def _adam_update(state: TrainState, grads: dict[str, np.ndarray], cfg: TrainConfig) -> None:
    """In-place Adam step with coupled weight decay (prototypes excluded)."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, theta in state.params.tensors.items():
        g = grads[name]
        if cfg.weight_decay > 0 and name != "protos":
            g = g + cfg.weight_decay * theta
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        theta -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    d: np.ndarray


def train_step(state: TrainState, batch: Batch, cfg: TrainConfig,
               rng: Rng) -> tuple[TrainState, LossBreakdown, np.ndarray]:
    """One optimization step; returns (state, losses, predicted classes).

    The state is updated in place and also returned. Predictions come from
    the pre-update parameters (the same forward pass the losses use).
    """
    if batch.x.shape[0] == 0:
        raise ValueError("empty batch")
    params = state.params
    r_adv = None
    if cfg.enable_ag:
        f0 = encode(params, batch.x)
        r_adv = adv_perturbation(params, f0, state.adv_eps, cfg.adv_power_iters, rng)
    breakdown, grads, aux = losses_and_grads(
        params, batch.x, batch.y, batch.d,
        lam1=cfg.lam1, lam2=cfg.lam2, lam_adv=cfg.lam_adv, margins=cfg.margins,
        enable_dse=cfg.enable_dse, enable_lse=cfg.enable_lse,
        enable_ortho=cfg.enable_ortho, enable_ag=cfg.enable_ag,
        r_adv=r_adv, reverse_disc=True, repulsion_clamp=cfg.repulsion_clamp,
    )
    preds = np.argmin(aux.forward.c_y, axis=1)
    _adam_update(state, grads, cfg)
    state.params.check_finite()
    return state, breakdown, preds


def warm_up_prototypes(params: ModelParams, ds: TimeSeriesDataset,
                       chunk: int = 256) -> None:
    """Set each prototype to the mean encoder feature of its class (in place).

    Classes absent from the dataset keep their zero initialization.
    """
    b = params.arch.encoding_dim
    sums = np.zeros((params.arch.n_classes, b))
    counts = np.zeros(params.arch.n_classes)
    for start in range(0, ds.num_samples, chunk):
        sl = slice(start, min(start + chunk, ds.num_samples))
        f0 = encode(params, ds.samples[sl])
        np.add.at(sums, ds.class_labels[sl], f0)
        np.add.at(counts, ds.class_labels[sl], 1.0)
    present = counts > 0
    protos = params["protos"].copy()
    protos[present] = sums[present] / counts[present, None]
    params["protos"] = protos


def fit(train_ds: TimeSeriesDataset, cfg: TrainConfig,
        arch: ArchConfig) -> tuple[ModelParams, TrainHistory]:
    """Full training run: init, prototype warm-up, then cfg.epochs epochs."""
    if train_ds.num_samples == 0:
        raise ValueError("training dataset is empty")
    root = Rng(cfg.seed)
    init_rng = root.split()
    shuffle_rng = root.split()
    adv_rng = root.split()
    params = init_params(arch, init_rng)
    warm_up_prototypes(params, train_ds)
    state = TrainState.fresh(params, cfg)
    history = TrainHistory()
    n = train_ds.num_samples
    for epoch in range(cfg.epochs):
        state.lr = lr_at(epoch, cfg)
        state.adv_eps = adv_eps_at(epoch, cfg) if cfg.enable_ag else 0.0
        order = shuffle_rng.split().permutation(n)
        sums = np.zeros(8)
        n_batches = 0
        n_correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = Batch(train_ds.samples[idx], train_ds.class_labels[idx],
                          train_ds.domain_labels[idx])
            state, bd, preds = train_step(state, batch, cfg, adv_rng)
            sums += np.array([bd.l_dse, bd.l_cl, bd.l_proto, bd.l_lse,
                              bd.l_ortho, bd.l_reg, bd.l_disc, bd.l_total])
            n_correct += int(np.sum(preds == batch.y))
            n_batches += 1
        means = sums / n_batches
        epoch_losses = LossBreakdown(*means)
        proto_norm = float(np.mean(np.linalg.norm(state.params["protos"], axis=1)))
        history.records.append(EpochRecord(
            epoch=epoch + 1, losses=epoch_losses, lr=state.lr,
            cross_norm=cross_norm(state.params), proto_norm=proto_norm,
            train_acc=n_correct / n,
        ))
    return state.params, history


def evaluate_accuracy(params: ModelParams, ds: TimeSeriesDataset,
                      chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """(predicted classes, confidences) over a dataset, in dataset order."""
    preds = np.empty(ds.num_samples, dtype=np.int64)
    confs = np.empty(ds.num_samples)
    for start in range(0, ds.num_samples, chunk):
        sl = slice(start, min(start + chunk, ds.num_samples))
        f0 = encode(params, ds.samples[sl])
        classes, conf, _ = predict_batch(params, f0)
        preds[sl] = classes
        confs[sl] = conf
    return preds, confs
