"""Workload-aware isolation level selection.

A batch of recent transactions becomes an undirected workload graph: one
vertex per transaction with features (read-set size, write-set size), and an
edge between two transactions whose key sets intersect. Edge attributes are
two one-hot blocks, the dependency type (RR, RW/WR, WW) followed by the
relation. A three-layer edge-conditioned network maps the graph to
probabilities over (RC, SI, SER); without weights, a threshold heuristic
stands in.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import HistoryRecord, IsolationLevel

LEVELS = (IsolationLevel.RC, IsolationLevel.SI, IsolationLevel.SER)
EDGE_TYPES = ("RR", "RW/WR", "WW")
MAGIC = b"TXSW"
FORMAT_VERSION = 1
POOL_MEAN = 0


class DimensionMismatch(ValueError):
    pass


# -- sampling ------------------------------------------------------------------------


def sample_batch(records: Iterable[HistoryRecord], batch_size: int, seed: int) -> list[HistoryRecord]:
    """Uniform reservoir sample (algorithm R) of committed and aborted records."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = random.Random(seed)
    reservoir: list[HistoryRecord] = []
    for i, rec in enumerate(records):
        if i < batch_size:
            reservoir.append(rec)
        else:
            j = rng.randint(0, i)
            if j < batch_size:
                reservoir[j] = rec
    return reservoir


# -- workload graph ------------------------------------------------------------------


@dataclass(frozen=True)
class WorkloadGraph:
    V: np.ndarray
    E: list
    A: np.ndarray
    relations: tuple

    @property
    def n(self) -> int:
        return self.V.shape[0]

    def edge_types(self) -> list[str]:
        return [EDGE_TYPES[int(np.argmax(row[:3]))] for row in self.A]


def build_workload_graph(batch: Sequence[HistoryRecord], relations: Optional[Sequence[str]] = None) -> WorkloadGraph:
    if relations is None:
        relations = sorted({op.key.relation for rec in batch for op in rec.ops})
    rel_index = {r: i for i, r in enumerate(relations)}
    reads = [{op.key for op in rec.reads()} for rec in batch]
    writes = [{op.key for op in rec.writes()} for rec in batch]
    V = np.array([[len(r), len(w)] for r, w in zip(reads, writes)], dtype=float).reshape(len(batch), 2)

    edges, attrs = [], []
    width = 3 + len(relations)
    for i in range(len(batch)):
        acc_i = reads[i] | writes[i]
        for j in range(i + 1, len(batch)):
            shared = acc_i & (reads[j] | writes[j])
            if not shared:
                continue
            if writes[i] & writes[j]:
                kind = 2
            elif (reads[i] & writes[j]) or (writes[i] & reads[j]):
                kind = 1
            else:
                kind = 0
            counts: dict[int, int] = {}
            for key in shared:
                idx = rel_index[key.relation]
                counts[idx] = counts.get(idx, 0) + 1
            rel = min(counts, key=lambda r: (-counts[r], r))
            row = np.zeros(width)
            row[kind] = 1.0
            row[3 + rel] = 1.0
            edges.append((i, j))
            attrs.append(row)
    A = np.array(attrs, dtype=float).reshape(len(attrs), width)
    return WorkloadGraph(V, edges, A, tuple(relations))


# -- predictor -----------------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    chosen: IsolationLevel


def choose(probs: np.ndarray, current: Optional[IsolationLevel] = None) -> IsolationLevel:
    best = float(np.max(probs))
    tied = [lvl for lvl, p in zip(LEVELS, probs) if p == best]
    if current in tied:
        return current
    return tied[0]


@dataclass
class EdgeMLP:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __call__(self, A: np.ndarray) -> np.ndarray:
        hidden = np.maximum(A @ self.W1.T + self.b1, 0.0)
        return hidden @ self.W2.T + self.b2


@dataclass
class PredictorWeights:
    dims: tuple  # (d1, d2, d3, h, n_relations)
    layers: list = field(default_factory=list)  # three EdgeMLPs
    C1: np.ndarray = None
    c1: np.ndarray = None
    C2: np.ndarray = None
    c2: np.ndarray = None
    pooling: int = POOL_MEAN

    @property
    def feature_dims(self) -> tuple:
        d1, d2, d3, _, _ = self.dims
        return (2, d1, d2, d3)

    @property
    def attr_dim(self) -> int:
        return 3 + self.dims[4]

    def shapes(self) -> list[tuple]:
        d = self.feature_dims
        h, a = self.dims[3], self.attr_dim
        out = []
        for l in range(1, 4):
            out += [(h, a), (h,), (d[l] * d[l - 1], h), (d[l] * d[l - 1],)]
        out += [(h, d[3]), (h,), (3, h), (3,)]
        return out

    def arrays(self) -> list[np.ndarray]:
        out = []
        for m in self.layers:
            out += [m.W1, m.b1, m.W2, m.b2]
        return out + [self.C1, self.c1, self.C2, self.c2]

    def validate(self) -> None:
        if len(self.layers) != 3:
            raise DimensionMismatch("expected three message-passing layers")
        if self.pooling != POOL_MEAN:
            raise DimensionMismatch(f"unsupported pooling tag {self.pooling}")
        for arr, shape in zip(self.arrays(), self.shapes()):
            if arr is None or arr.shape != shape:
                raise DimensionMismatch(f"expected shape {shape}, got {None if arr is None else arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DimensionMismatch("weights must be finite")

    @classmethod
    def from_arrays(cls, dims: Sequence[int], arrays: Sequence[np.ndarray], pooling: int = POOL_MEAN) -> "PredictorWeights":
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        layers = [EdgeMLP(*arrays[4 * l: 4 * l + 4]) for l in range(3)]
        w = cls(tuple(int(x) for x in dims), layers, *arrays[12:16], pooling=pooling)
        w.validate()
        return w

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "PredictorWeights":
        probe = cls(tuple(dims))
        return cls.from_arrays(dims, [np.zeros(s) for s in probe.shapes()])

    @classmethod
    def random(cls, dims: Sequence[int], rng: np.random.Generator, scale: float = 0.5) -> "PredictorWeights":
        probe = cls(tuple(dims))
        return cls.from_arrays(dims, [rng.normal(0.0, scale, s) for s in probe.shapes()])


def save_weights(path, w: PredictorWeights) -> None:
    w.validate()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IB5I", FORMAT_VERSION, w.pooling, *w.dims))
        for arr in w.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path) -> PredictorWeights:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise DimensionMismatch("not a weights file (bad magic)")
    header = struct.calcsize("<IB5I")
    version, pooling, *dims = struct.unpack_from("<IB5I", data, 4)
    if version != FORMAT_VERSION:
        raise DimensionMismatch(f"unsupported weights version {version}")
    shapes = PredictorWeights(tuple(dims)).shapes()
    offset = 4 + header
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        if offset + 8 * count > len(data):
            raise DimensionMismatch("weights file truncated")
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float))
        offset += 8 * count
    if offset != len(data):
        raise DimensionMismatch("trailing bytes in weights file")
    return PredictorWeights.from_arrays(dims, arrays, pooling)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def forward(g: WorkloadGraph, w: PredictorWeights, current: Optional[IsolationLevel] = None) -> Prediction:
    if g.A.shape[1] != w.attr_dim:
        raise DimensionMismatch(f"edge attributes have width {g.A.shape[1]}, weights expect {w.attr_dim}")
    d = w.feature_dims
    H = g.V
    if g.E:
        src = np.array([i for i, j in g.E] + [j for i, j in g.E])
        dst = np.array([j for i, j in g.E] + [i for i, j in g.E])
    for l, mlp in enumerate(w.layers, start=1):
        out = np.zeros((g.n, d[l]))
        if g.E:
            We = mlp(g.A).reshape(-1, d[l], d[l - 1])
            We = np.concatenate([We, We])
            msgs = np.einsum("eij,ej->ei", We, H[src])
            agg = np.full((g.n, d[l]), -np.inf)
            np.maximum.at(agg, dst, msgs)
            has = np.isfinite(agg[:, 0])
            out[has] = agg[has]
        H = np.maximum(out, 0.0)
    pooled = H.mean(axis=0) if g.n else np.zeros(d[3])
    z = np.maximum(w.C1 @ pooled + w.c1, 0.0)
    probs = softmax(w.C2 @ z + w.c2)
    return Prediction(probs, choose(probs, current))


# -- heuristic ---------------------------------------------------------------------


@dataclass(frozen=True)
class HeuristicThresholds:
    density: float = 0.1
    write_ratio: float = 0.3


def workload_stats(batch: Sequence[HistoryRecord], g: WorkloadGraph) -> dict:
    n_ops = sum(len(rec.ops) for rec in batch)
    n_writes = sum(1 for rec in batch for _ in rec.writes())
    pairs = g.n * (g.n - 1) / 2
    conflicts = sum(1 for row in g.A if row[0] == 0.0)
    return {
        "write_ratio": n_writes / n_ops if n_ops else 0.0,
        "conflict_edge_density": conflicts / pairs if pairs else 0.0,
    }


def heuristic_predict(stats: dict, thresholds: HeuristicThresholds = HeuristicThresholds(),
                      current: Optional[IsolationLevel] = None) -> Prediction:
    if stats["conflict_edge_density"] < thresholds.density:
        chosen = IsolationLevel.SI
    elif stats["write_ratio"] >= thresholds.write_ratio:
        chosen = IsolationLevel.RC
    else:
        chosen = IsolationLevel.SER
    probs = np.array([1.0 if lvl is chosen else 0.0 for lvl in LEVELS])
    return Prediction(probs, chosen)


# -- adaptation loop -------------------------------------------------------------------


class Adapter:
    """Samples each new batch of history and asks the governor to switch when the prediction changes."""

    def __init__(self, batch_size: int = 512, seed: int = 0, weights: Optional[PredictorWeights] = None,
                 thresholds: HeuristicThresholds = HeuristicThresholds(), relations: Optional[Sequence[str]] = None):
        self.batch_size = batch_size
        self.seed = seed
        self.weights = weights
        self.thresholds = thresholds
        self.relations = tuple(relations) if relations is not None else None
        self._cursor = 0
        self._round = 0
        self.predictions: list[Prediction] = []

    def predict(self, batch: Sequence[HistoryRecord], current: Optional[IsolationLevel] = None) -> Prediction:
        g = build_workload_graph(batch, self.relations)
        if self.weights is not None:
            return forward(g, self.weights, current)
        return heuristic_predict(workload_stats(batch, g), self.thresholds, current)

    def adapt_step(self, history: Sequence[HistoryRecord], governor) -> Optional[IsolationLevel]:
        """Consume records added since the last call; return the level requested, if any."""
        fresh = history[self._cursor:]
        self._cursor = len(history)
        if not fresh:
            return None
        batch = sample_batch(fresh, self.batch_size, self.seed + self._round)
        self._round += 1
        current = governor.level
        pred = self.predict(batch, current)
        self.predictions.append(pred)
        if pred.chosen is not current and governor.steady and governor.request_transition(pred.chosen):
            return pred.chosen
        return None
