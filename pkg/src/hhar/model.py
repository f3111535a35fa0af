"""Label encoder, activity data encoder with feature propagation, sigmoid head.

Both encoders run a one-layer graph convolution that mixes node features with
the fixed hierarchy graph and the learned adaptive graph.  The data encoder
first lifts each example onto the label-node axis so the same graphs can be
applied per example.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .hierarchy import (
    LabelHierarchy,
    adaptive_adjacency,
    build_predefined_adjacency,
    expand_label_set,
    normalize_adjacency,
)

GRAPH_MODES = ("none", "predefined", "adaptive", "both")
LOSS_NAMES = ("align", "con", "ce")


@dataclass(frozen=True)
class ModelConfig:
    n_features: int
    n_nodes: int
    d_label: int = 64
    d_conv: int = 64
    d_data: int = 64
    d_adaptive: int = 16
    d_proj: int = 64
    graphs: str = "both"
    feature_propagation: bool = True

    def __post_init__(self):
        if self.graphs not in GRAPH_MODES:
            raise ValueError(f"graphs must be one of {GRAPH_MODES}, got {self.graphs!r}")
        for name in ("n_features", "n_nodes", "d_label", "d_conv", "d_data", "d_adaptive", "d_proj"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def uses_predefined(self):
        return self.graphs in ("predefined", "both")

    @property
    def uses_adaptive(self):
        return self.graphs in ("adaptive", "both")


def _param_shapes(cfg: ModelConfig):
    N, d = cfg.n_nodes, cfg.n_features
    dl, dc_, dx, df, dh = cfg.d_label, cfg.d_conv, cfg.d_data, cfg.d_adaptive, cfg.d_proj
    # fixed order: every variant draws the same initial values for shared params
    return [
        ("label_emb", (N, dl)),
        ("label_wp", (dl, dc_)),
        ("label_wadp", (dl, dc_)),
        ("adp_src", (N, df)),
        ("adp_dst", (N, df)),
        ("embed_w", (d, dx)),
        ("embed_b", (dx,)),
        ("res_w", (dx, N * dc_)),
        ("data_wp", (dc_, dc_)),
        ("data_wadp", (dc_, dc_)),
        ("proj_x_w", (dc_, dh)),
        ("proj_x_b", (dh,)),
        ("proj_l_w", (dc_, dh)),
        ("proj_l_b", (dh,)),
        ("cls_w", (dc_, 1)),
        ("cls_b", (1,)),
    ]


def required_params(cfg: ModelConfig, losses=LOSS_NAMES) -> set[str]:
    """Names of the parameters a variant actually touches."""
    losses = set(losses)
    need = {"embed_w", "embed_b", "res_w", "cls_w", "cls_b"}
    propagate = cfg.feature_propagation and cfg.graphs != "none"
    if not propagate or cfg.uses_predefined:
        need.add("data_wp")
    if propagate and cfg.uses_adaptive:
        need.add("data_wadp")
    if "align" in losses:
        need |= {"label_emb", "proj_l_w", "proj_l_b", "proj_x_w", "proj_x_b"}
        if cfg.graphs == "none" or cfg.uses_predefined:
            need.add("label_wp")
        if cfg.uses_adaptive:
            need.add("label_wadp")
    if "con" in losses:
        need |= {"proj_x_w", "proj_x_b"}
    if cfg.uses_adaptive and ("align" in losses or propagate):
        need |= {"adp_src", "adp_dst"}
    return need


def init_params(cfg: ModelConfig, rng: np.random.Generator, losses=LOSS_NAMES) -> dc.ParamStore:
    need = required_params(cfg, losses)
    store = dc.ParamStore()
    for name, shape in _param_shapes(cfg):
        if name.endswith("_b"):
            values = np.zeros(shape)
        else:
            # tables use their row width as the fan-in
            fan_in = shape[1] if name in ("label_emb", "adp_src", "adp_dst") else shape[0]
            values = dc.init_uniform(shape, dc.fan_in_scale(fan_in), rng).values
        if name in need:
            store.add(name, values)
    return store


@dataclass
class GraphPair:
    A: np.ndarray
    A_norm: dc.Tensor
    E1: dc.Tensor | None = None
    E2: dc.Tensor | None = None

    @classmethod
    def build(cls, h: LabelHierarchy, store: dc.ParamStore | None = None) -> "GraphPair":
        A = build_predefined_adjacency(h)
        A_norm = dc.Tensor(normalize_adjacency(A))
        E1 = store.params.get("adp_src") if store is not None else None
        E2 = store.params.get("adp_dst") if store is not None else None
        return cls(A=A, A_norm=A_norm, E1=E1, E2=E2)

    def adaptive(self) -> dc.Tensor:
        if self.E1 is None or self.E2 is None:
            raise ValueError("adaptive graph requested but E1/E2 are not trainable parameters here")
        return adaptive_adjacency(self.E1, self.E2)


def _graph_layer(X, adj, adj_adp, w_p, w_adp):
    # sigma(adj X W_p + adj_adp X W_adp); with no graphs this is a plain linear layer
    terms = []
    if adj is not None:
        terms.append(dc.matmul(dc.matmul(adj, X), w_p))
    if adj_adp is not None:
        terms.append(dc.matmul(dc.matmul(adj_adp, X), w_adp))
    if not terms:
        terms.append(dc.matmul(X, w_p))
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return dc.relu(out)


def label_encoder_forward(params: dc.ParamStore, adj, adj_adp) -> dc.Tensor:
    """E_L = relu(adj E W_p + adj_adp E W_adp), shape N x d_c."""
    return _graph_layer(params["label_emb"], adj, adj_adp,
                        params.params.get("label_wp"), params.params.get("label_wadp"))


def data_encoder_forward(params: dc.ParamStore, adj, adj_adp, X, feature_propagation=True) -> dc.Tensor:
    """E_X for a batch, shape n x N x d_c."""
    X = dc.as_tensor(X)
    w_embed = params["embed_w"]
    if X.ndim != 2 or X.shape[1] != w_embed.shape[0]:
        raise dc.ShapeError(f"expected features of width {w_embed.shape[0]}, got shape {X.shape}")
    d_c = params["cls_w"].shape[0]
    n_nodes = params["res_w"].shape[1] // d_c
    E_d = dc.relu(dc.matmul(X, w_embed) + params["embed_b"])
    V = dc.reshape(dc.matmul(E_d, params["res_w"]), (X.shape[0], n_nodes, d_c))
    if not feature_propagation:
        adj = adj_adp = None
    return _graph_layer(V, adj, adj_adp, params.params.get("data_wp"), params.params.get("data_wadp"))


def classify(params: dc.ParamStore, E_X: dc.Tensor) -> dc.Tensor:
    """p_ij = sigmoid(w . E_X[i, j, :] + b) with one head shared across nodes."""
    n, N = E_X.shape[0], E_X.shape[1]
    logits = dc.reshape(dc.matmul(E_X, params["cls_w"]), (n, N)) + params["cls_b"]
    return dc.sigmoid(logits)


def project(E: dc.Tensor, w: dc.Tensor, b: dc.Tensor) -> dc.Tensor:
    return dc.matmul(E, w) + b


@dataclass
class ForwardPass:
    adj: dc.Tensor | None
    adj_adp: dc.Tensor | None
    E_L: dc.Tensor | None
    E_X: dc.Tensor
    P: dc.Tensor


class Model:
    """Parameters plus the fixed pieces needed to run and decode them."""

    def __init__(self, cfg: ModelConfig, hierarchy: LabelHierarchy, store: dc.ParamStore,
                 eligible=None):
        if cfg.n_nodes != len(hierarchy):
            raise ValueError(f"config has {cfg.n_nodes} nodes, hierarchy has {len(hierarchy)}")
        self.cfg = cfg
        self.hierarchy = hierarchy
        self.store = store
        self.graphs = GraphPair.build(hierarchy, store)
        if eligible is None:
            eligible = hierarchy.leaves()
        self.eligible = sorted(hierarchy.index(v) for v in set(eligible))
        self.paths = np.stack([expand_label_set(hierarchy, v) for v in hierarchy.nodes]) > 0.5

    @classmethod
    def create(cls, cfg, hierarchy, rng, losses=LOSS_NAMES, eligible=None) -> "Model":
        return cls(cfg, hierarchy, init_params(cfg, rng, losses), eligible)

    def phi_x(self, E_X):
        return project(E_X, self.store["proj_x_w"], self.store["proj_x_b"])

    def phi_l(self, E_L):
        return project(E_L, self.store["proj_l_w"], self.store["proj_l_b"])

    def forward(self, X, with_labels=False) -> ForwardPass:
        cfg = self.cfg
        adj = self.graphs.A_norm if cfg.uses_predefined else None
        # computed once and handed to both encoders
        adj_adp = None
        if cfg.uses_adaptive and (with_labels or cfg.feature_propagation):
            adj_adp = self.graphs.adaptive()
        E_L = label_encoder_forward(self.store, adj, adj_adp) if with_labels else None
        E_X = data_encoder_forward(self.store, adj, adj_adp, X, cfg.feature_propagation)
        return ForwardPass(adj, adj_adp, E_L, E_X, classify(self.store, E_X))

    def probabilities(self, X) -> np.ndarray:
        if not self.store.all_finite():
            raise ValueError("model parameters contain NaN or Inf")
        return self.forward(np.asarray(X, dtype=np.float64)).P.values

    def predict(self, X, mode="multi"):
        return decode(self.probabilities(X), self.paths, self.eligible, mode)


def decode(P: np.ndarray, paths: np.ndarray, eligible, mode="multi"):
    """Turn node probabilities into predictions.

    ``multi`` returns the boolean matrix ``P > 0.5``.  ``single`` returns
    ``(terminal_indices, label_sets)`` where each terminal is the most probable
    terminal-eligible node and its label set is the full path to it.
    """
    if not np.isfinite(P).all():
        raise ValueError("probabilities contain NaN or Inf")
    if mode == "multi":
        return P > 0.5
    if mode == "single":
        eligible = np.asarray(eligible, dtype=np.intp)
        terminals = eligible[np.argmax(P[:, eligible], axis=1)] if len(P) else eligible[:0]
        return terminals, paths[terminals]
    raise ValueError(f"unknown prediction mode {mode!r}")


# ---------------------------------------------------------------------------
# checkpoint file

MAGIC = b"HHARCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, store: dc.ParamStore, meta: dict):
    """Write a versioned header, JSON metadata, then named float64 blocks."""
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header,
           struct.pack("<I", len(store))]
    for name, t in store.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path):
    """Return ``(meta, {name: array})`` from a checkpoint file."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after last parameter block")
    return meta, arrays


def model_meta(model: Model, extra=None) -> dict:
    meta = {
        "config": asdict(model.cfg),
        "hierarchy": [list(e) for e in model.hierarchy.edges()],
        "eligible": [model.hierarchy.nodes[i] for i in model.eligible],
    }
    meta.update(extra or {})
    return meta


def save_model(path, model: Model, extra=None):
    save_checkpoint(path, model.store, model_meta(model, extra))


def load_model(path):
    meta, arrays = load_checkpoint(path)
    cfg = ModelConfig(**meta["config"])
    h = LabelHierarchy.from_edges(tuple(e) for e in meta["hierarchy"])
    store = dc.ParamStore()
    for name, values in arrays.items():
        store.add(name, values)
    return Model(cfg, h, store, eligible=meta["eligible"]), meta
