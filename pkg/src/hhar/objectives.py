"""Alignment, contrastive and cross-entropy losses, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .model import LOSS_NAMES, Model, ModelConfig

log = logging.getLogger(__name__)

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_con: float = 1.0
    lambda_ce: float = 1.0
    margin: float = 1.0

    def __post_init__(self):
        if self.lambda_con < 0 or self.lambda_ce < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


def align_loss(E_X: dc.Tensor, E_L: dc.Tensor, phi_x, phi_l) -> dc.Tensor:
    """Mean over examples of ||phi_x(E_X[i]) - phi_l(E_L)||_F^2."""
    n = E_X.shape[0]
    if n == 0:
        return dc.Tensor(0.0)
    diff = phi_x(E_X) - phi_l(E_L)
    return dc.sum(dc.square(diff)) * (1.0 / n)


def pair_indices(n: int):
    i, j = np.triu_indices(n, k=1)
    return i, j


def contrastive_loss(E_X: dc.Tensor, label_sets, phi_x, margin: float = 1.0) -> dc.Tensor:
    """Margin contrastive loss averaged over all unordered pairs in the batch.

    A pair is positive only when the two full label sets are identical.
    """
    n = E_X.shape[0]
    if n < 2:
        log.debug("contrastive loss on a batch of %d: no pairs", n)
        return dc.Tensor(0.0)
    Y = np.asarray(label_sets) > 0.5
    i, j = pair_indices(n)
    same = np.all(Y[i] == Y[j], axis=1).astype(np.float64)
    Z = phi_x(E_X)
    Z = dc.reshape(Z, (n, int(np.prod(Z.shape[1:]))))
    d2 = dc.sum(dc.square(dc.take_rows(Z, i) - dc.take_rows(Z, j)), axis=1)
    per_pair = d2 * same + dc.relu(margin * margin - d2) * (1.0 - same)
    return dc.mean(per_pair)


def bce_loss(P: dc.Tensor, Y) -> dc.Tensor:
    """Binary cross-entropy summed over nodes, averaged over examples."""
    P = dc.as_tensor(P)
    Y = np.asarray(Y, dtype=np.float64)
    if P.shape != Y.shape:
        raise dc.ShapeError(f"bce_loss: probabilities {P.shape} vs targets {Y.shape}")
    n = P.shape[0]
    if n == 0:
        return dc.Tensor(0.0)
    Pc = dc.clip(P, PROB_EPS, 1.0 - PROB_EPS)
    ll = dc.log(Pc) * Y + dc.log(1.0 - Pc) * (1.0 - Y)
    return dc.sum(ll) * (-1.0 / n)


@dataclass
class LossTerms:
    total: dc.Tensor
    parts: dict[str, float]


def total_loss(model: Model, X, Y, weights: LossWeights = LossWeights(), losses=LOSS_NAMES) -> LossTerms:
    """Forward the batch and combine the enabled losses.

    The returned ``total`` is a live graph node: call ``.backward()`` on it to
    fill gradients for every trainable parameter.
    """
    losses = tuple(losses)
    unknown = set(losses) - set(LOSS_NAMES)
    if unknown:
        raise ValueError(f"unknown loss names {sorted(unknown)}")
    fp = model.forward(X, with_labels="align" in losses)
    parts, terms = {}, []
    if "align" in losses:
        t = align_loss(fp.E_X, fp.E_L, model.phi_x, model.phi_l)
        terms.append(("align", t, 1.0))
    if "con" in losses:
        t = contrastive_loss(fp.E_X, Y, model.phi_x, weights.margin)
        terms.append(("con", t, weights.lambda_con))
    if "ce" in losses:
        t = bce_loss(fp.P, Y)
        terms.append(("ce", t, weights.lambda_ce))
    if not terms:
        raise ValueError("no losses enabled")
    total = None
    for name, t, w in terms:
        value = t.item()
        if not math.isfinite(value):
            raise FloatingPointError(f"{name} loss is not finite ({value})")
        parts[name] = value
        term = t if name == "align" else t * w
        total = term if total is None else total + term
    return LossTerms(total, parts)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 0.01
    lr_decay: float = 0.5
    seed: int = 0
    losses: tuple[str, ...] = LOSS_NAMES
    weights: LossWeights = field(default_factory=LossWeights)
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if set(self.losses) - set(LOSS_NAMES) or not self.losses:
            raise ValueError(f"losses must be a non-empty subset of {LOSS_NAMES}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** epoch


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    align: float | None
    con: float | None
    ce: float | None
    total: float
    train_acc: float
    val_acc: float | None


class TrainingDiverged(RuntimeError):
    def __init__(self, message, epoch, snapshot, history):
        super().__init__(message)
        self.last_good_epoch = epoch
        self.snapshot = snapshot
        self.history = history
        self.model = None


def run_epochs(store: dc.ParamStore, step_loss, n_train: int, cfg: TrainConfig,
               shuffle_rng: np.random.Generator, on_epoch):
    """Mini-batch Adam with the per-epoch halving schedule.

    ``step_loss(batch_index) -> LossTerms`` and ``on_epoch(epoch, lr, means)``
    returns the record to append.  Raises :class:`TrainingDiverged` carrying
    the parameters of the last completed epoch.
    """
    history = []
    good = store.snapshot()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = shuffle_rng.permutation(n_train)
        sums, batches = {}, 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                terms = step_loss(idx)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", epoch - 1, good, history) from exc
            total = terms.total.item()
            if not math.isfinite(total) or total > cfg.divergence_limit:
                raise TrainingDiverged(f"epoch {epoch}: loss {total} diverged", epoch - 1, good, history)
            store.zero_grad()
            terms.total.backward()
            dc.adam_step(store, lr)
            sums["total"] = sums.get("total", 0.0) + total
            for k, v in terms.parts.items():
                sums[k] = sums.get(k, 0.0) + v
            batches += 1
        if not store.all_finite():
            raise TrainingDiverged(f"epoch {epoch}: parameters became non-finite", epoch - 1, good, history)
        history.append(on_epoch(epoch, lr, {k: v / batches for k, v in sums.items()}))
        good = store.snapshot()
    return history


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord]


def seed_streams(seed: int):
    """Independent generators for initialization and batch shuffling."""
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


def single_label_accuracy(model: Model, X, terminals) -> float:
    if len(terminals) == 0:
        return float("nan")
    pred, _ = model.predict(X, mode="single")
    return float(np.mean(pred == np.asarray(terminals)))


def train(dataset, model_cfg: ModelConfig, cfg: TrainConfig) -> TrainResult:
    """Train the full model (or an ablation variant) on ``dataset``'s train split."""
    h = dataset.hierarchy
    train_idx = dataset.indices("train")
    if len(train_idx) == 0:
        raise ValueError("training split is empty")
    val_idx = dataset.indices("val")
    X, Y = dataset.X, dataset.Y
    term_idx = np.array([h.index(t) for t in dataset.terminals], dtype=np.intp)
    eligible = set(h.leaves()) | {dataset.terminals[i] for i in train_idx}

    init_rng, shuffle_rng = seed_streams(cfg.seed)
    model = Model.create(model_cfg, h, init_rng, cfg.losses, eligible)
    Xtr, Ytr = X[train_idx], Y[train_idx]

    def step_loss(batch):
        return total_loss(model, Xtr[batch], Ytr[batch], cfg.weights, cfg.losses)

    def on_epoch(epoch, lr, means):
        val = single_label_accuracy(model, X[val_idx], term_idx[val_idx]) if len(val_idx) else None
        rec = EpochRecord(
            epoch=epoch, lr=lr,
            align=means.get("align"), con=means.get("con"), ce=means.get("ce"),
            total=means["total"],
            train_acc=single_label_accuracy(model, Xtr, term_idx[train_idx]),
            val_acc=val,
        )
        log.info("epoch %d lr=%g loss=%.6f train_acc=%.4f", epoch, lr, rec.total, rec.train_acc)
        return rec

    try:
        history = run_epochs(model.store, step_loss, len(train_idx), cfg, shuffle_rng, on_epoch)
    except TrainingDiverged as exc:
        for name, values in exc.snapshot.items():
            model.store[name].values[...] = values
        exc.model = model
        raise
    return TrainResult(model, history)
