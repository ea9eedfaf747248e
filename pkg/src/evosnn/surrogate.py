"""Online regression-tree predictor of f1 from genome features."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .genome import MOTIFS_PER_MODULE, Genome, GenomeConfig, MotifKind
from .metrics import SpearmanResult, spearman
from .motifs import op_gene_offset, template_for


class FitError(ValueError):
    pass


@lru_cache(maxsize=None)
def _op_usage(b: int) -> np.ndarray:
    """(6, b-1) table: edges of each motif kind that read each operation gene."""
    table = np.zeros((len(MotifKind) + 1, b - 1), dtype=np.int64)
    for kind in MotifKind:
        for e in template_for(kind).edges:
            table[int(kind), op_gene_offset(e.op_slot, b) - 1] += 1
    return table


def feature_names(cfg: GenomeConfig) -> list[str]:
    names = [f"gene{i}" for i in range(cfg.length)]
    names += [f"count_{k.name}" for k in MotifKind]
    names += ["global_edges", "feedback_edges"]
    names += [f"op{o}_edges" for o in range(1, cfg.ops + 1)]
    return names


def featurize(genomes: Sequence[Genome]) -> np.ndarray:
    """Raw genes followed by motif-kind counts, edge counts and active-op counts.

    The derived columns agree with ``graph_stats`` of the decoded graph.
    """
    if len(genomes) == 0:
        raise ValueError("no genomes to featurize")
    cfg = genomes[0].config
    for g in genomes:
        if g.config != cfg:
            raise ValueError(f"mixed genome configs: {g.config} vs {cfg}")
    G = np.stack([g.genes for g in genomes])
    n = len(G)
    mods = G[:, : cfg.connection_offset].reshape(n, cfg.l, MOTIFS_PER_MODULE, cfg.b)
    kinds = mods[..., 0]
    ops = mods[..., 1:]
    counts = np.stack([(kinds == k).sum(axis=(1, 2)) for k in MotifKind], axis=1)
    conn = G[:, cfg.connection_offset :].reshape(n, cfg.l, cfg.l)
    edges = conn.sum(axis=(1, 2))
    feedback = np.tril(conn, -1).sum(axis=(1, 2))
    usage = _op_usage(cfg.b)[kinds]  # (n, l, 5, b-1)
    op_counts = np.stack([(usage * (ops == o)).sum(axis=(1, 2, 3)) for o in range(1, cfg.ops + 1)], axis=1)
    return np.concatenate(
        [G, counts, edges[:, None], feedback[:, None], op_counts], axis=1
    ).astype(np.float64)


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 12
    min_samples_leaf: int = 5

    def __post_init__(self):
        if self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")


_TIE = 1e-12


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Greedy variance-reduction split; returns ``(feature, threshold, sse)`` or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    cs = np.cumsum(ys, axis=0)
    cs2 = np.cumsum(ys * ys, axis=0)
    total, total2 = cs[-1], cs2[-1]
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    sl, sl2 = cs[:-1], cs2[:-1]
    sse = (sl2 - sl * sl / nl) + ((total2 - sl2) - (total - sl) ** 2 / nr)
    valid = xs[:-1] < xs[1:]
    valid[: min_leaf - 1] = False
    valid[n - min_leaf :] = False
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    best = sse.min()
    cand = sse <= best + _TIE * max(1.0, abs(best))
    feats = np.flatnonzero(cand.any(axis=0))
    f = int(feats[0])
    i = int(np.flatnonzero(cand[:, f])[0])
    thr = 0.5 * (xs[i, f] + xs[i + 1, f])
    return f, float(thr), float(sse[i, f])


class RegressionTree:
    """CART regressor stored as flat arrays; leaves hold target means."""

    def __init__(self, params: TreeParams = TreeParams()):
        self.params = params
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.n_samples: list[int] = []
        self.config: GenomeConfig | None = None

    def _node(self, value: float, n: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.n_samples.append(n)
        return len(self.value) - 1

    def fit_arrays(self, X: np.ndarray, y: np.ndarray) -> "RegressionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or len(X) != len(y):
            raise FitError("X must be (n, d) with one target per row")
        if len(y) < max(1, self.params.min_samples_leaf):
            raise FitError(f"need at least {max(1, self.params.min_samples_leaf)} records, got {len(y)}")
        if not np.isfinite(X).all() or not np.isfinite(y).all():
            raise FitError("features and targets must be finite")
        self.__init__(self.params)
        stack = [(np.arange(len(y)), 0, self._node(float(y.mean()), len(y)))]
        mleaf = self.params.min_samples_leaf
        while stack:
            idx, depth, node = stack.pop()
            yy = y[idx]
            if depth >= self.params.max_depth or len(idx) < 2 * mleaf or np.all(yy == yy[0]):
                continue
            split = _best_split(X[idx], yy, mleaf)
            if split is None:
                continue
            f, thr, sse = split
            if sse >= float(((yy - yy.mean()) ** 2).sum()):
                continue
            go_left = X[idx, f] <= thr
            li, ri = idx[go_left], idx[~go_left]
            self.feature[node] = f
            self.threshold[node] = thr
            self.left[node] = self._node(float(y[li].mean()), len(li))
            self.right[node] = self._node(float(y[ri].mean()), len(ri))
            stack.append((ri, depth + 1, self.right[node]))
            stack.append((li, depth + 1, self.left[node]))
        return self

    def fit(self, records, params: TreeParams | None = None) -> "RegressionTree":
        """Fit on evaluation records (degenerate ones included with their sentinel f1)."""
        if params is not None:
            self.params = params
        recs = list(records)
        if len(recs) < max(1, self.params.min_samples_leaf):
            raise FitError(f"need at least {max(1, self.params.min_samples_leaf)} records, got {len(recs)}")
        self.fit_arrays(featurize([r.genome for r in recs]), np.array([r.f1 for r in recs]))
        self.config = recs[0].genome.config
        return self

    def apply_arrays(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for each row."""
        if not self.value:
            raise FitError("tree is not fitted")
        X = np.asarray(X, dtype=np.float64)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            inner = feat[node] >= 0
            if not inner.any():
                return node
            rows = np.flatnonzero(inner)
            n = node[rows]
            go_left = X[rows, feat[n]] <= thr[n]
            node[rows] = np.where(go_left, left[n], right[n])

    def predict_arrays(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.value)[self.apply_arrays(X)]

    def predict(self, genomes) -> np.ndarray:
        single = isinstance(genomes, Genome)
        gs = [genomes] if single else list(genomes)
        if self.config is not None:
            for g in gs:
                if g.config != self.config:
                    raise ValueError(f"genome config {g.config} does not match tree config {self.config}")
        out = self.predict_arrays(featurize(gs))
        return float(out[0]) if single else out

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)] if self.value else []
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def to_dict(self) -> dict:
        return {
            "params": {"max_depth": self.params.max_depth, "min_samples_leaf": self.params.min_samples_leaf},
            "config": None if self.config is None else self.config.to_dict(),
            "nodes": [
                {"feature": f, "threshold": t, "left": lft, "right": r, "value": v, "n": n}
                for f, t, lft, r, v, n in zip(
                    self.feature, self.threshold, self.left, self.right, self.value, self.n_samples
                )
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: dict) -> "RegressionTree":
        tree = cls(TreeParams(**obj["params"]))
        if obj.get("config"):
            tree.config = GenomeConfig(**obj["config"])
        for node in obj["nodes"]:
            tree.feature.append(int(node["feature"]))
            tree.threshold.append(float(node["threshold"]))
            tree.left.append(int(node["left"]))
            tree.right.append(int(node["right"]))
            tree.value.append(float(node["value"]))
            tree.n_samples.append(int(node["n"]))
        return tree


def fit(records, params: TreeParams = TreeParams()) -> RegressionTree:
    return RegressionTree(params).fit(records)


def predictor_report(tree: RegressionTree, holdout) -> SpearmanResult:
    """Spearman correlation between predicted and measured f1 on ``holdout``."""
    recs = list(holdout)
    if len(recs) < 3:
        raise ValueError("holdout needs at least 3 records")
    pred = tree.predict([r.genome for r in recs])
    return spearman(pred, [r.f1 for r in recs])
