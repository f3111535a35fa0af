"""Label hierarchy and the two label-graph adjacencies.

The hierarchy root is virtual: it is not a label node (it never enters the
N x N matrices) but it is counted in every ancestor set, so top-level siblings
share exactly one ancestor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc


@dataclass(frozen=True)
class LabelHierarchy:
    root: str
    nodes: tuple[str, ...]
    parent: dict[str, str] = field(repr=False)

    def __post_init__(self):
        index = {name: i for i, name in enumerate(self.nodes)}
        if len(index) != len(self.nodes):
            raise ValueError("duplicate node names")
        if self.root in index:
            raise ValueError(f"root {self.root!r} cannot also be a label node")
        ancestors = {}
        for v in self.nodes:
            chain, cur, seen = [], v, {v}
            while cur != self.root:
                if cur not in self.parent:
                    raise ValueError(f"node {cur!r} does not reach the root")
                cur = self.parent[cur]
                if cur in seen:
                    raise ValueError(f"cycle through {cur!r}")
                seen.add(cur)
                chain.append(cur)
            ancestors[v] = tuple(chain)  # nearest first, root last
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_ancestors", ancestors)

    @classmethod
    def from_edges(cls, edges) -> "LabelHierarchy":
        """Build from ``(parent, child)`` pairs; node order is first appearance."""
        edges = list(edges)
        if not edges:
            raise ValueError("hierarchy has no edges")
        parent, order, seen = {}, [], set()
        for p, c in edges:
            if c in parent:
                raise ValueError(f"node {c!r} has more than one parent")
            parent[c] = p
            for name in (p, c):
                if name not in seen:
                    seen.add(name)
                    order.append(name)
        roots = [name for name in order if name not in parent]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root, found {roots}")
        root = roots[0]
        return cls(root=root, nodes=tuple(n for n in order if n != root), parent=parent)

    @classmethod
    def load(cls, path) -> "LabelHierarchy":
        edges = []
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(p.strip() for p in parts):
                raise ValueError(f"{path}:{lineno}: expected 'parent<TAB>child'")
            edges.append((parts[0].strip(), parts[1].strip()))
        return cls.from_edges(edges)

    def edges(self) -> list[tuple[str, str]]:
        return [(self.parent[v], v) for v in self.nodes]

    def dump(self, path):
        lines = [f"{p}\t{c}" for p, c in self.edges()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def __len__(self):
        return len(self.nodes)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValueError(f"unknown label {name!r}") from None

    def __contains__(self, name):
        return name in self._index

    def ancestors(self, name: str) -> tuple[str, ...]:
        """H(v): every strictly higher node, virtual root included."""
        self.index(name)
        return self._ancestors[name]

    def depth(self, name: str) -> int:
        return len(self.ancestors(name))

    def children(self, name: str) -> list[str]:
        return [v for v in self.nodes if self.parent[v] == name]

    def leaves(self) -> list[str]:
        parents = set(self.parent.values())
        return [v for v in self.nodes if v not in parents]

    def path(self, terminal: str) -> list[str]:
        """Real nodes from the top level down to ``terminal``."""
        return [a for a in reversed(self.ancestors(terminal)) if a != self.root] + [terminal]


def build_predefined_adjacency(h: LabelHierarchy) -> np.ndarray:
    """A[i, j] = |H(v_i) & H(v_j)| / |H(v_i)| with a zero diagonal."""
    n = len(h)
    # ancestor indicator over real nodes plus the root in the last column
    member = np.zeros((n, n + 1), dtype=np.int64)
    for i, v in enumerate(h.nodes):
        for a in h.ancestors(v):
            member[i, n if a == h.root else h.index(a)] = 1
    shared = member @ member.T
    A = shared / member.sum(axis=1, keepdims=True)
    np.fill_diagonal(A, 0.0)
    return A


def normalize_adjacency(A) -> np.ndarray:
    """I + D^-1/2 A D^-1/2 with D the row sums; empty rows get a zero scale."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {A.shape}")
    if (A < 0).any():
        raise ValueError("adjacency has negative entries")
    deg = A.sum(axis=1)
    scale = np.zeros_like(deg)
    nz = deg > 0
    scale[nz] = deg[nz] ** -0.5
    return np.eye(len(A)) + scale[:, None] * A * scale[None, :]


def adaptive_adjacency(E1: dc.Tensor, E2: dc.Tensor) -> dc.Tensor:
    if E1.ndim != 2 or E1.shape != E2.shape:
        raise dc.ShapeError(f"E1 and E2 must both be N x d_f, got {E1.shape} and {E2.shape}")
    return dc.row_softmax(dc.relu(dc.matmul(E1, dc.transpose(E2))))


def expand_label_set(h: LabelHierarchy, terminal: str) -> np.ndarray:
    y = np.zeros(len(h), dtype=np.float64)
    for v in h.path(terminal):
        y[h.index(v)] = 1.0
    return y


def is_valid_path(h: LabelHierarchy, y) -> bool:
    """True when the 0/1 vector ``y`` is the label set of some node."""
    on = [h.nodes[j] for j in np.flatnonzero(np.asarray(y) > 0.5)]
    if not on:
        return False
    deepest = max(on, key=h.depth)
    return np.array_equal(np.asarray(y) > 0.5, expand_label_set(h, deepest) > 0.5)


def bundled(name: str) -> LabelHierarchy:
    """Load a hierarchy shipped with the package (``daliac`` or ``hapt``)."""
    path = Path(__file__).parent / "hierarchies" / f"{name}.tsv"
    if not path.exists():
        raise ValueError(f"no bundled hierarchy named {name!r}")
    return LabelHierarchy.load(path)
