"""Discovery baselines: exhaustive enumeration, a regression-tree search with
backtracking, and its relaxed variant that enumerates a few unassigned bits.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from unfairgen import kernels
from unfairgen.attrspace import ENUMERATION_CAP, GroupBiasTable, SyntheticLandscape, landscape_bias_codes


@dataclass
class TreeConfig:
    min_leaf: int = 1
    max_depth: int | None = None

    def __post_init__(self):
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass
class Node:
    value: float
    n_samples: int
    feature: int = -1
    left: "Node | None" = None   # bit 0
    right: "Node | None" = None  # bit 1

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class RegressionTree:
    root: Node
    dimension: int
    config: TreeConfig = field(default_factory=TreeConfig)

    def predict_bits(self, bits) -> np.ndarray:
        bits = np.atleast_2d(np.asarray(bits))
        out = np.empty(len(bits))
        for r, row in enumerate(bits):
            node = self.root
            while not node.is_leaf:
                node = node.right if row[node.feature] else node.left
            out[r] = node.value
        return out

    def leaves(self) -> list:
        return [p.prediction for p in iter_paths(self)]

    @property
    def depth(self) -> int:
        return max((len(p.assignments) for p in iter_paths(self)), default=0)


@dataclass(frozen=True)
class TreePath:
    assignments: tuple  # sorted ((index, bit), ...)
    prediction: float
    dimension: int

    @property
    def complete(self) -> bool:
        return len(self.assignments) == self.dimension

    @property
    def n_unassigned(self) -> int:
        return self.dimension - len(self.assignments)

    def mask_and_value(self) -> tuple[int, int]:
        mask = value = 0
        for i, bit in self.assignments:
            pos = self.dimension - 1 - i
            mask |= 1 << pos
            value |= int(bit) << pos
        return mask, value


def fit_tree(table: GroupBiasTable, config: TreeConfig | None = None) -> RegressionTree:
    """Greedy CART regression tree on the group bias values, weighted by support count."""
    cfg = config or TreeConfig()
    if len(table) == 0:
        raise ValueError("cannot fit a tree to an empty table")
    bits, y = table.bits, table.bias
    w = table.count.astype(np.float64)
    d = table.dimension

    def grow(rows, allowed, depth):
        wr, yr = w[rows], y[rows]
        node = Node(float(wr @ yr / wr.sum()), int(rows.size))
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            return node
        if rows.size < 2 * cfg.min_leaf or not allowed.any():
            return node
        parent_sse = float(wr @ (yr - node.value) ** 2)
        f, gain = kernels.best_split(bits[rows], yr, wr, allowed, cfg.min_leaf)
        if f < 0 or gain <= 1e-12 * max(1.0, parent_sse):
            return node
        node.feature = int(f)
        child_allowed = allowed.copy()
        child_allowed[f] = 0
        mask = bits[rows, f] == 1
        node.left = grow(rows[~mask], child_allowed, depth + 1)
        node.right = grow(rows[mask], child_allowed, depth + 1)
        return node

    root = grow(np.arange(len(table)), np.ones(d, dtype=np.uint8), 0)
    return RegressionTree(root, d, cfg)


def iter_paths(tree: RegressionTree):
    """Root-to-leaf paths by depth-first backtracking (bit 0 branch first)."""
    stack = [(tree.root, ())]
    while stack:
        node, assign = stack.pop()
        if node.is_leaf:
            yield TreePath(tuple(sorted(assign)), node.value, tree.dimension)
            continue
        stack.append((node.right, assign + ((node.feature, 1),)))
        stack.append((node.left, assign + ((node.feature, 0),)))


@dataclass
class SearchResult:
    bits: np.ndarray
    estimated: np.ndarray
    method: str
    tau: float
    estimator: str
    wall_time: float = 0.0
    n_re: int | None = None

    def __post_init__(self):
        if len(self.bits) != len(self.estimated):
            raise ValueError("bits and estimated bias must align")
        if np.any(self.estimated < self.tau):
            raise ValueError("search results must satisfy estimated bias >= tau")

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def codes(self) -> np.ndarray:
        return kernels.pack_bits(self.bits) if len(self.bits) else np.zeros(0, dtype=np.int64)

    def code_set(self) -> set:
        return set(self.codes.tolist())

    def summary(self) -> dict:
        return {"count": len(self), "method": self.method, "tau": self.tau, "estimator": self.estimator,
                "n_re": self.n_re, "wall_time": self.wall_time}

    def to_csv(self, path) -> None:
        d = self.bits.shape[1]
        lines = [",".join([f"a{i}" for i in range(d)] + ["estimated_bias"])]
        for row, e in zip(self.bits, self.estimated):
            lines.append(",".join([str(int(v)) for v in row] + [repr(float(e))]))
        Path(path).write_text("\n".join(lines) + "\n")

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), sort_keys=True, indent=2) + "\n")


def _result(codes, estimated, d, method, tau, estimator, t0, n_re=None) -> SearchResult:
    codes = np.asarray(codes, dtype=np.int64)
    order = np.argsort(codes, kind="stable")
    return SearchResult(kernels.unpack_codes(codes[order], d), np.asarray(estimated, dtype=np.float64)[order],
                        method, float(tau), estimator, time.perf_counter() - t0, n_re)


def search_tree(tree: RegressionTree, tau: float) -> SearchResult:
    """Vectors of complete paths whose leaf prediction is at least ``tau``."""
    t0 = time.perf_counter()
    codes, est = [], []
    for path in iter_paths(tree):
        if path.complete and path.prediction >= tau:
            codes.append(path.mask_and_value()[1])
            est.append(path.prediction)
    return _result(codes, est, tree.dimension, "search_tree", tau, "tree", t0, n_re=0)


def relaxed_search(tree: RegressionTree, tau: float, n_re: int, estimator=None) -> SearchResult:
    """Paths with at most ``n_re`` unassigned bits, completed by enumeration.

    Args:
        estimator: ``None`` to score completions with the path's leaf value,
            or any object with ``predict_bits`` (e.g. a trained predictor).
    """
    if n_re < 0 or n_re > tree.dimension:
        raise ValueError(f"relaxation number must lie in [0, {tree.dimension}], got {n_re}")
    t0 = time.perf_counter()
    d = tree.dimension
    found: dict[int, float] = {}
    for path in iter_paths(tree):
        if path.n_unassigned > n_re:
            continue
        mask, value = path.mask_and_value()
        codes = kernels.expand_completions(mask, value, d)
        if estimator is None:
            if path.prediction < tau:
                continue
            scores = np.full(codes.size, path.prediction)
        else:
            scores = np.asarray(estimator.predict_bits(kernels.unpack_codes(codes, d)), dtype=np.float64)
        for c, s in zip(codes[scores >= tau].tolist(), scores[scores >= tau].tolist()):
            found.setdefault(c, s)
    name = "tree" if estimator is None else "predictor"
    return _result(list(found), list(found.values()), d, f"relaxed:{n_re}", tau, name, t0, n_re=n_re)


def enumerate_discover(source, tau: float, cap: int = ENUMERATION_CAP) -> SearchResult:
    """Exact ``{a : bias(a) >= tau}`` over a table's keys or a landscape's full space."""
    t0 = time.perf_counter()
    if isinstance(source, GroupBiasTable):
        keep = source.bias >= tau
        return _result(source.codes[keep], source.bias[keep], source.dimension, "enumerate", tau, "table", t0)
    if isinstance(source, SyntheticLandscape):
        d = source.dimension
        if d > cap:
            raise ValueError(f"dimension {d} exceeds the enumeration cap {cap}; pass cap= to override")
        codes = np.arange(1 << d, dtype=np.int64)
        bias = landscape_bias_codes(source, codes)
        keep = bias >= tau
        return _result(codes[keep], bias[keep], d, "enumerate", tau, "landscape", t0)
    raise TypeError("source must be a GroupBiasTable or a SyntheticLandscape")
