"""Evaluation metrics, flat baselines, the ablation grid and report output."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .data import Dataset, SyntheticSpec, generate_synthetic, split_dataset
from .hierarchy import expand_label_set, is_valid_path
from .model import LOSS_NAMES, Model, ModelConfig, decode
from .objectives import (
    EpochRecord,
    LossTerms,
    TrainConfig,
    TrainingDiverged,
    bce_loss,
    run_epochs,
    seed_streams,
    train,
)

METRICS = ("single_label_acc", "exact_match_acc", "micro_acc", "path_consistency")


def score(pred_terminals, pred_sets, dataset: Dataset, idx) -> dict[str, float]:
    """The three accuracy metrics plus the path-consistency rate.

    ``pred_terminals`` are node indices, ``pred_sets`` a boolean n x N matrix.
    """
    idx = np.asarray(idx, dtype=np.intp)
    if len(idx) == 0:
        raise ValueError("cannot evaluate on an empty split")
    Y = dataset.Y[idx] > 0.5
    true_t = dataset.terminal_indices()[idx]
    pred_sets = np.asarray(pred_sets, dtype=bool)
    return {
        "single_label_acc": float(np.mean(np.asarray(pred_terminals) == true_t)),
        "exact_match_acc": float(np.mean(np.all(pred_sets == Y, axis=1))),
        "micro_acc": float(np.mean(pred_sets == Y)),
        "path_consistency": float(np.mean([is_valid_path(dataset.hierarchy, row) for row in pred_sets])),
    }


def evaluate(model: Model, dataset: Dataset, part="test") -> dict[str, float]:
    idx = dataset.indices(part)
    if len(idx) == 0:
        raise ValueError(f"split {part!r} is empty")
    P = model.probabilities(dataset.X[idx])
    terminals, _ = decode(P, model.paths, model.eligible, "single")
    return score(terminals, decode(P, model.paths, model.eligible, "multi"), dataset, idx)


# ---------------------------------------------------------------------------
# baselines


def knn_predict(X_train, t_train, X_query, k=7, n_nodes=None, chunk=256) -> np.ndarray:
    """Brute-force Euclidean k-NN vote; ties go to the smallest node index."""
    X_train = np.asarray(X_train, dtype=np.float64)
    t_train = np.asarray(t_train, dtype=np.intp)
    X_query = np.asarray(X_query, dtype=np.float64)
    if k < 1 or k > len(X_train):
        raise ValueError(f"k={k} must be between 1 and the training size {len(X_train)}")
    n_nodes = n_nodes or int(t_train.max()) + 1
    out = np.empty(len(X_query), dtype=np.intp)
    for s in range(0, len(X_query), chunk):
        q = X_query[s:s + chunk]
        d2 = ((q[:, None, :] - X_train[None, :, :]) ** 2).sum(axis=2)
        # stable sort: equal distances keep training order
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        for r, nb in enumerate(nearest):
            out[s + r] = np.argmax(np.bincount(t_train[nb], minlength=n_nodes))
    return out


def knn_baseline(dataset: Dataset, k=7, part="test") -> dict[str, float]:
    tr, te = dataset.indices("train"), dataset.indices(part)
    if len(tr) == 0:
        raise ValueError("training split is empty")
    t = dataset.terminal_indices()
    h = dataset.hierarchy
    pred = knn_predict(dataset.X[tr], t[tr], dataset.X[te], k, len(h))
    paths = np.stack([expand_label_set(h, v) for v in h.nodes]) > 0.5
    return score(pred, paths[pred], dataset, te)


class MLP:
    """One hidden ReLU layer and a sigmoid multi-label head over all nodes."""

    def __init__(self, n_features, n_nodes, hidden, rng):
        self.store = dc.ParamStore()
        self.store.add("w1", dc.init_uniform((n_features, hidden), dc.fan_in_scale(n_features), rng))
        self.store.add("b1", np.zeros(hidden))
        self.store.add("w2", dc.init_uniform((hidden, n_nodes), dc.fan_in_scale(hidden), rng))
        self.store.add("b2", np.zeros(n_nodes))

    def forward(self, X) -> dc.Tensor:
        s = self.store
        hidden = dc.relu(dc.matmul(dc.as_tensor(X), s["w1"]) + s["b1"])
        return dc.sigmoid(dc.matmul(hidden, s["w2"]) + s["b2"])


def mlp_baseline(dataset: Dataset, cfg: TrainConfig, hidden=64, part="test"):
    """Train the MLP with cross-entropy only; returns ``(metrics, history)``."""
    h = dataset.hierarchy
    tr = dataset.indices("train")
    if len(tr) == 0:
        raise ValueError("training split is empty")
    init_rng, shuffle_rng = seed_streams(cfg.seed)
    net = MLP(dataset.n_features, len(h), hidden, init_rng)
    Xtr, Ytr = dataset.X[tr], dataset.Y[tr]
    t = dataset.terminal_indices()
    eligible = sorted({h.index(v) for v in h.leaves()} | set(t[tr].tolist()))
    paths = np.stack([expand_label_set(h, v) for v in h.nodes]) > 0.5

    def step_loss(batch):
        loss = bce_loss(net.forward(Xtr[batch]), Ytr[batch])
        return LossTerms(loss, {"ce": loss.item()})

    def acc(idx):
        if len(idx) == 0:
            return None
        pred, _ = decode(net.forward(dataset.X[idx]).values, paths, eligible, "single")
        return float(np.mean(pred == t[idx]))

    def on_epoch(epoch, lr, means):
        return EpochRecord(epoch, lr, None, None, means["ce"], means["total"],
                           acc(tr), acc(dataset.indices("val")))

    history = run_epochs(net.store, step_loss, len(tr), cfg, shuffle_rng, on_epoch)
    te = dataset.indices(part)
    if len(te) == 0:
        raise ValueError(f"split {part!r} is empty")
    P = net.forward(dataset.X[te]).values
    terminals, _ = decode(P, paths, eligible, "single")
    return score(terminals, decode(P, paths, eligible, "multi"), dataset, te), history


# ---------------------------------------------------------------------------
# ablation grid


@dataclass(frozen=True)
class Variant:
    name: str
    graphs: str = "both"
    feature_propagation: bool = True
    losses: tuple[str, ...] = LOSS_NAMES


VARIANTS = (
    Variant("hierarchy=none", graphs="none"),
    Variant("hierarchy=predefined", graphs="predefined"),
    Variant("hierarchy=adaptive", graphs="adaptive"),
    Variant("feature_propagation=off", feature_propagation=False),
    Variant("losses=align+ce", losses=("align", "ce")),
    Variant("losses=con+ce", losses=("con", "ce")),
    Variant("losses=ce", losses=("ce",)),
    Variant("full"),
)
FULL = VARIANTS[-1]


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run, echoed verbatim into reports."""

    mode: str
    seed: int
    source: dict = field(default_factory=dict)
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    d_label: int = 64
    d_conv: int = 64
    d_data: int = 64
    d_adaptive: int = 16
    d_proj: int = 64
    graphs: str = "both"
    feature_propagation: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self, dataset: Dataset, variant: Variant | None = None) -> ModelConfig:
        v = variant or Variant("custom", self.graphs, self.feature_propagation, self.train.losses)
        return ModelConfig(
            n_features=dataset.n_features, n_nodes=len(dataset.hierarchy),
            d_label=self.d_label, d_conv=self.d_conv, d_data=self.d_data,
            d_adaptive=self.d_adaptive, d_proj=self.d_proj,
            graphs=v.graphs, feature_propagation=v.feature_propagation,
        )

    def train_config(self, variant: Variant | None = None) -> TrainConfig:
        if variant is None:
            return replace(self.train, seed=self.seed)
        return replace(self.train, seed=self.seed, losses=variant.losses)

    def echo(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


@dataclass
class Report:
    kind: str
    config: dict
    rows: list[dict]
    extra: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_json(self) -> str:
        # timing is kept out so identical runs serialize identically
        body = {"kind": self.kind, "config": self.config, "rows": self.rows, "extra": self.extra}
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        header = ["variant", "status"] + list(METRICS)
        lines = [header]
        for r in self.rows:
            m = r.get("metrics") or {}
            lines.append([r["name"], r.get("status", "ok")] +
                         [f"{100 * m[k]:.2f}" if k in m else "-" for k in METRICS])
        widths = [max(len(row[c]) for row in lines) for c in range(len(header))]
        out = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in lines]
        out.insert(1, "  ".join("-" * w for w in widths))
        for k, v in sorted(self.extra.items()):
            out.append(f"{k}: {v}")
        return "\n".join(out) + "\n"


def run_variant(dataset: Dataset, rc: RunConfig, variant: Variant, part="test"):
    """Train and evaluate one variant; returns ``(row, train_result_or_None, seconds_per_epoch)``."""
    row = {"name": variant.name, "graphs": variant.graphs,
           "feature_propagation": variant.feature_propagation, "losses": list(variant.losses)}
    start = time.perf_counter()
    try:
        result = train(dataset, rc.model_config(dataset, variant), rc.train_config(variant))
        row["metrics"] = evaluate(result.model, dataset, part)
        row["status"] = "ok"
    except (TrainingDiverged, FloatingPointError) as exc:
        row["status"] = "diverged"
        row["error"] = str(exc)
        result = None
    per_epoch = (time.perf_counter() - start) / rc.train.epochs
    return row, result, per_epoch


def run_ablation(dataset: Dataset, rc: RunConfig, variants=VARIANTS, part="test") -> Report:
    """Train every variant on one shared split and collect a single report."""
    if dataset.split is None:
        dataset = split_dataset(dataset, rc.fractions, rc.seed)
    rows, timing = [], {}
    for v in variants:
        row, _, per_epoch = run_variant(dataset, rc, v, part)
        rows.append(row)
        timing[v.name] = {"seconds_per_epoch": per_epoch}
    return Report("ablate", rc.echo(), rows, timing=timing)


def directional_trends(spec: SyntheticSpec, rc: RunConfig, seeds=(0, 1, 2, 3, 4)) -> Report:
    """Mean single-label accuracy of full vs. hierarchy=none and vs. ce-only.

    The synthetic dataset is fixed by ``spec``; each seed changes the split,
    the initialization and the batch order.
    """
    names = ("full", "hierarchy=none", "losses=ce")
    chosen = [v for v in VARIANTS if v.name in names]
    base = generate_synthetic(spec)
    per_seed = {v.name: [] for v in chosen}
    for s in seeds:
        ds = split_dataset(base, rc.fractions, s)
        rcs = replace(rc, seed=s)
        for v in chosen:
            row, _, _ = run_variant(ds, rcs, v)
            per_seed[v.name].append(row.get("metrics", {}).get("single_label_acc", float("nan")))
    means = {k: float(np.mean(v)) for k, v in per_seed.items()}
    rows = [{"name": k, "status": "ok", "metrics": {"single_label_acc": means[k]},
             "per_seed_single_label_acc": per_seed[k]} for k in names]
    extra = {
        "margin_full_minus_hierarchy_none": means["full"] - means["hierarchy=none"],
        "margin_full_minus_ce_only": means["full"] - means["losses=ce"],
        "seeds": list(seeds),
        "synthetic_spec": asdict(spec),
    }
    return Report("trends", rc.echo(), rows, extra)
