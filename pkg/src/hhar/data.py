"""Feature-vector datasets: CSV loading, stratified splits, synthetic generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .hierarchy import LabelHierarchy, expand_label_set

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    terminals: tuple[str, ...]
    hierarchy: LabelHierarchy
    split: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"features must be a 2-d array, got shape {X.shape}")
        if len(X) != len(self.terminals):
            raise ValueError(f"{len(X)} feature rows but {len(self.terminals)} labels")
        for r, t in enumerate(self.terminals):
            if t not in self.hierarchy:
                raise ValueError(f"example {r}: unknown label {t!r}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "terminals", tuple(self.terminals))

    def __len__(self):
        return len(self.terminals)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def Y(self) -> np.ndarray:
        rows = {t: expand_label_set(self.hierarchy, t) for t in set(self.terminals)}
        if not self.terminals:
            return np.zeros((0, len(self.hierarchy)))
        return np.stack([rows[t] for t in self.terminals])

    def terminal_indices(self) -> np.ndarray:
        return np.array([self.hierarchy.index(t) for t in self.terminals], dtype=np.intp)

    def indices(self, part: str) -> np.ndarray:
        if part not in SPLITS:
            raise ValueError(f"unknown split {part!r}")
        if self.split is None:
            if part == "train":
                return np.arange(len(self))
            return np.arange(0)
        return np.flatnonzero(self.split == part)


def load_dataset(features_path, hierarchy_path) -> Dataset:
    """Read ``f0,...,f{d-1},label`` rows against an edge-list hierarchy."""
    h = LabelHierarchy.load(hierarchy_path)
    with open(features_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{features_path}: empty file") from None
        if len(header) < 2 or header[-1].strip() != "label":
            raise ValueError(f"{features_path}: header must end with a 'label' column")
        d = len(header) - 1
        rows, labels = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"{features_path}: row {lineno} has {len(row)} fields, expected {d + 1}")
            label = row[-1].strip()
            if label not in h:
                raise ValueError(f"{features_path}: row {lineno}: unknown label {label!r}")
            try:
                rows.append([float(x) for x in row[:-1]])
            except ValueError as exc:
                raise ValueError(f"{features_path}: row {lineno}: {exc}") from None
            labels.append(label)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return Dataset(X, tuple(labels), h)


def save_dataset(ds: Dataset, features_path, hierarchy_path):
    with open(features_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{k}" for k in range(ds.n_features)] + ["label"])
        for x, t in zip(ds.X, ds.terminals):
            w.writerow([repr(float(v)) for v in x] + [t])
    ds.hierarchy.dump(hierarchy_path)


def split_dataset(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Seeded random split, stratified by terminal label."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    active = sum(f > 0 for f in fractions)
    split = np.empty(len(ds), dtype=object)
    by_class = {}
    for i, t in enumerate(ds.terminals):
        by_class.setdefault(t, []).append(i)
    # class order follows the hierarchy so results do not depend on row order
    for t in sorted(by_class, key=ds.hierarchy.index):
        idx = np.array(by_class[t])
        if len(idx) < active:
            raise ValueError(f"class {t!r} has {len(idx)} examples, fewer than the {active} splits")
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(fractions[0] * len(idx)))
        n_val = int(round(fractions[1] * len(idx)))
        n_val = min(n_val, len(idx) - n_train)
        split[idx[:n_train]] = "train"
        split[idx[n_train:n_train + n_val]] = "val"
        split[idx[n_train + n_val:]] = "test"
    return replace(ds, split=split.astype(str) if len(ds) else np.array([], dtype=str))


# ---------------------------------------------------------------------------
# synthetic hierarchical activities


@dataclass(frozen=True)
class SyntheticSpec:
    depth: int = 2
    branching: int = 3
    dim: int = 16
    rho: float = 0.6
    sigma: float = 0.1
    per_leaf: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.branching < 1 or self.per_leaf < 1:
            raise ValueError("depth, branching and per_leaf must be positive")
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.dim <= self.branching:
            raise ValueError("dim must exceed branching so sibling directions can be orthogonal")

    @classmethod
    def from_file(cls, path) -> "SyntheticSpec":
        """Parse a ``key=value`` file (``#`` comments allowed)."""
        types = {"depth": int, "branching": int, "dim": int, "rho": float,
                 "sigma": float, "per_leaf": int, "seed": int}
        values = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise ValueError(f"{path}:{lineno}: expected one of {sorted(types)} as key=value")
            values[key] = types[key](value.strip())
        return cls(**values)

    def to_text(self) -> str:
        return "".join(f"{k}={getattr(self, k)}\n" for k in
                       ("depth", "branching", "dim", "rho", "sigma", "per_leaf", "seed"))


def _child_directions(parent: np.ndarray, k: int, rng) -> np.ndarray:
    # k unit vectors orthogonal to the parent and to each other
    basis = [parent]
    out = []
    while len(out) < k:
        v = rng.standard_normal(parent.shape)
        for b in basis:
            v = v - (v @ b) * b
        norm = np.linalg.norm(v)
        if norm < 1e-8:
            continue
        v = v / norm
        basis.append(v)
        out.append(v)
    return np.array(out)


def synthetic_prototypes(spec: SyntheticSpec):
    """Return ``(hierarchy, {node: unit prototype})`` built top-down.

    A child is ``sqrt(rho) * parent + sqrt(1 - rho) * u`` with ``u`` a fresh unit
    direction orthogonal to the parent and to its siblings' directions, so
    siblings have cosine similarity exactly ``rho``.
    """
    rng = np.random.default_rng(spec.seed)
    root = "root"
    v = rng.standard_normal(spec.dim)
    protos = {root: v / np.linalg.norm(v)}
    edges, frontier = [], [root]
    a, b = np.sqrt(spec.rho), np.sqrt(1.0 - spec.rho)
    for _ in range(spec.depth):
        nxt = []
        for p in frontier:
            dirs = _child_directions(protos[p], spec.branching, rng)
            for k, u in enumerate(dirs):
                name = f"n{k}" if p == root else f"{p}_{k}"
                c = a * protos[p] + b * u
                protos[name] = c / np.linalg.norm(c)
                edges.append((p, name))
                nxt.append(name)
        frontier = nxt
    h = LabelHierarchy.from_edges(edges)
    return h, {k: v for k, v in protos.items() if k != root}


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    h, protos = synthetic_prototypes(spec)
    rng = np.random.default_rng([spec.seed, 1])
    rows, labels = [], []
    for leaf in h.leaves():
        noise = rng.standard_normal((spec.per_leaf, spec.dim)) * spec.sigma
        rows.append(protos[leaf] + noise)
        labels.extend([leaf] * spec.per_leaf)
    return Dataset(np.concatenate(rows), tuple(labels), h)
