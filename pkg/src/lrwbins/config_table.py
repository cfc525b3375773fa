"""Binary config tables for both stages.

``.lrwb`` holds what first-stage inference needs and nothing else:
normalization constants and quantile edges of the binned features, and
LR weights for the allocated bins, all as little-endian float32. A table
is scored by :class:`FirstStageTable`, which never touches the training
code path. ``.gbdt`` stores the fallback ensemble as pre-order node
records with float64 thresholds. Both end in a CRC32 footer.

See ``docs/config_table.md`` for the byte layout.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binning import BinnedFeature, BinSpec
from .dataset import BOOLEAN, CATEGORICAL, NUMERIC, Normalizer
from .errors import CorruptTable, SchemaMismatch, VersionMismatch
from .first_stage import LRWeights, LRwBinsModel
from .gbdt import GbdtModel, Tree
from .logistic import sigmoid

LRWB_MAGIC = b"LRWB"
GBDT_MAGIC = b"GBDT"
VERSION = 1

_KIND_CODE = {NUMERIC: 0, BOOLEAN: 1, CATEGORICAL: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}

_LEAF, _NUM_SPLIT, _CAT_SPLIT = 0, 1, 2


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def put(self, fmt, *values):
        self.buf += struct.pack("<" + fmt, *values)

    def f32s(self, values):
        self.buf += np.asarray(values, dtype="<f4").tobytes()

    def text(self, s):
        raw = s.encode("utf-8")
        self.put("H", len(raw))
        self.buf += raw

    def finish(self) -> bytes:
        self.put("I", zlib.crc32(self.buf))
        return bytes(self.buf)


class _Reader:
    def __init__(self, data: bytes, magic: bytes):
        if len(data) < 10:
            raise CorruptTable("table too short")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) != crc:
            raise CorruptTable("checksum mismatch")
        if body[:4] != magic:
            raise CorruptTable(f"bad magic {body[:4]!r}, expected {magic!r}")
        self.data = body
        self.off = 4
        (version,) = self.get("H")
        if version != VERSION:
            raise VersionMismatch(f"table version {version}, this build reads {VERSION}")

    def get(self, fmt):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.off + size > len(self.data):
            raise CorruptTable("unexpected end of table")
        out = struct.unpack_from(fmt, self.data, self.off)
        self.off += size
        return out

    def f32s(self, n) -> np.ndarray:
        end = self.off + 4 * n
        if end > len(self.data):
            raise CorruptTable("unexpected end of table")
        out = np.frombuffer(self.data, dtype="<f4", count=n, offset=self.off).astype(np.float64)
        self.off = end
        return out

    def text(self) -> str:
        (n,) = self.get("H")
        raw = self.data[self.off:self.off + n]
        if len(raw) != n:
            raise CorruptTable("unexpected end of table")
        self.off += n
        return raw.decode("utf-8")

    def done(self):
        if self.off != len(self.data):
            raise CorruptTable(f"{len(self.data) - self.off} trailing bytes")


def _write_dictionaries(w, categories):
    w.put("H", len(categories))
    for j in sorted(categories):
        w.put("HH", j, len(categories[j]))
        for s in categories[j]:
            w.text(s)


def _read_dictionaries(r):
    (count,) = r.get("H")
    out = {}
    for _ in range(count):
        j, n = r.get("HH")
        out[j] = tuple(r.text() for _ in range(n))
    return out


class _HashMap:
    """Open addressing with linear probing from bin id to weight row."""

    _EMPTY = -1

    def __init__(self, keys):
        cap = 8
        while cap < 2 * max(len(keys), 1):
            cap *= 2
        self.mask = cap - 1
        self.keys = np.full(cap, self._EMPTY, dtype=np.int64)
        self.slots = np.zeros(cap, dtype=np.int64)
        for i, k in enumerate(keys):
            s = self._home(k)
            while self.keys[s] != self._EMPTY:
                s = (s + 1) & self.mask
            self.keys[s] = k
            self.slots[s] = i

    def _home(self, k):
        return ((int(k) * 0x9E3779B1) >> 7) & self.mask

    def get(self, k):
        s = self._home(k)
        while True:
            key = self.keys[s]
            if key == k:
                return int(self.slots[s])
            if key == self._EMPTY:
                return None
            s = (s + 1) & self.mask


@dataclass(eq=False)
class FirstStageTable:
    """Inference-only first stage decoded from (or destined for) a ``.lrwb`` table."""

    n_features: int
    b: int
    min_bin_rows: int
    total_bins: int
    descriptors: list[tuple[int, str, float, float]]  # (index, kind, mean, std)
    binned: list[int]
    inference: list[int]
    edges: dict[int, np.ndarray]
    cardinality: dict[int, int]
    encodings: dict[int, np.ndarray]
    bin_ids: np.ndarray
    weights: np.ndarray  # (entries, 1 + m): bias then weights
    categories: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self._norm = {j: (mean, std) for j, kind, mean, std in self.descriptors if kind == NUMERIC}
        self._kind = {j: kind for j, kind, _, _ in self.descriptors}
        self._radix = []
        for j in self.binned:
            kind = self._kind[j]
            if kind == NUMERIC:
                self._radix.append(len(self.edges[j]) + 1)
            elif kind == BOOLEAN:
                self._radix.append(2)
            else:
                self._radix.append(self.cardinality[j] + 1)
        self._map = _HashMap(self.bin_ids.tolist())
        self._rows = [(float(w[0]), [float(v) for v in w[1:]]) for w in self.weights]
        self._edges = {j: e.tolist() for j, e in self.edges.items()}
        self._enc = {j: e.tolist() for j, e in self.encodings.items()}

    @property
    def n(self) -> int:
        return len(self.binned)

    @property
    def m(self) -> int:
        return len(self.inference)

    @property
    def entries(self) -> int:
        return len(self.bin_ids)

    # --- scoring -------------------------------------------------------
    def _value(self, row, j):
        v = float(row[j])
        ms = self._norm.get(j)
        if ms is not None:
            v = (v - ms[0]) / ms[1]
        return v

    def bin_index(self, row) -> int:
        idx = 0
        for j, radix in zip(self.binned, self._radix):
            v = self._value(row, j)
            kind = self._kind[j]
            if kind == NUMERIC:
                d = 0
                for e in self._edges[j]:  # right-closed cells
                    if v > e:
                        d += 1
                    else:
                        break
            elif kind == BOOLEAN:
                d = 1 if v > 0.5 else 0
            else:
                c = int(v)
                d = c if 0 <= c < radix - 1 else radix - 1
            idx = idx * radix + d
        return idx

    def predict(self, row) -> float | None:
        """Probability for one raw row, or ``None`` on a miss."""
        if len(row) != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {len(row)}")
        slot = self._map.get(self.bin_index(row))
        if slot is None:
            return None
        bias, w = self._rows[slot]
        z = bias
        for wi, j in zip(w, self.inference):
            enc = self._enc.get(j)
            if enc is not None:
                c = int(row[j])
                x = enc[c] if 0 <= c < len(enc) else enc[-1]
            else:
                x = self._value(row, j)
            z += wi * x
        return sigmoid(z)

    def predict_many(self, X) -> tuple[np.ndarray, np.ndarray]:
        out = np.full(len(X), np.nan)
        hit = np.zeros(len(X), dtype=bool)
        for i, row in enumerate(np.asarray(X, dtype=np.float64).tolist()):
            p = self.predict(row)
            if p is not None:
                out[i] = p
                hit[i] = True
        return out, hit

    predict_proba = predict_many

    # --- conversion ----------------------------------------------------
    @classmethod
    def from_model(cls, model: LRwBinsModel) -> "FirstStageTable":
        used = sorted(set(model.spec.indices) | set(model.inference_features))
        norm = dict(zip(model.normalizer.columns.tolist(),
                        zip(model.normalizer.mean.tolist(), model.normalizer.std.tolist())))
        kinds = {f.index: f.kind for f in model.spec.features}
        descriptors = []
        for j in used:
            kind = kinds.get(j)
            if kind is None:
                kind = CATEGORICAL if j in model.encodings else (NUMERIC if j in norm else BOOLEAN)
            mean, std = norm.get(j, (0.0, 1.0))
            descriptors.append((j, kind, float(np.float32(mean)), float(np.float32(std))))
        edges = {f.index: np.asarray(f.edges, dtype=np.float32).astype(np.float64)
                 for f in model.spec.features if f.kind == NUMERIC}
        card = {f.index: f.cardinality for f in model.spec.features if f.kind == CATEGORICAL}
        ids = sorted(model.weights_by_bin)
        m = model.m
        W = np.zeros((len(ids), 1 + m), dtype=np.float32)
        for i, b in enumerate(ids):
            lw = model.weights_by_bin[b]
            W[i, 0] = lw.bias
            W[i, 1:] = lw.weights
        n_feat = model.n_features if model.n_features is not None else (max(used) + 1 if used else 0)
        b = max((len(f.edges) + 1 for f in model.spec.features if f.kind == NUMERIC), default=0)
        return cls(n_feat, b, model.min_bin_rows, model.spec.total_bins, descriptors,
                   list(model.spec.indices), list(model.inference_features), edges, card,
                   {j: np.asarray(e, dtype=np.float32).astype(np.float64) for j, e in model.encodings.items()},
                   np.array(ids, dtype=np.int64), W.astype(np.float64), dict(model.categories))

    def to_model(self) -> LRwBinsModel:
        """Rebuild a (float32-weighted) LRwBinsModel for the vectorized path."""
        feats = []
        for j in self.binned:
            kind = self._kind[j]
            if kind == NUMERIC:
                feats.append(BinnedFeature(j, NUMERIC, edges=self.edges[j].copy()))
            elif kind == BOOLEAN:
                feats.append(BinnedFeature(j, BOOLEAN))
            else:
                feats.append(BinnedFeature(j, CATEGORICAL, cardinality=self.cardinality[j]))
        cols = [j for j, kind, _, _ in self.descriptors if kind == NUMERIC]
        norm = Normalizer(np.array(cols, dtype=np.int64),
                          np.array([self._norm[j][0] for j in cols]),
                          np.array([self._norm[j][1] for j in cols]))
        weights = {int(b): LRWeights(float(w[0]), w[1:].copy()) for b, w in zip(self.bin_ids, self.weights)}
        return LRwBinsModel(BinSpec(tuple(feats)), tuple(self.inference), weights, norm, self.min_bin_rows,
                            {j: e.copy() for j, e in self.encodings.items()}, self.n_features,
                            dict(self.categories))

    def section_sizes(self) -> dict[str, int]:
        """Bytes per section in RAM, matching the on-disk layout."""
        header = 4 + 2 + 2 + 2 * 3 + 8 + 4 + 2 + len(self.descriptors) * 11 + 2 * (self.n + self.m)
        quant = 0
        for j in self.binned:
            kind = self._kind[j]
            quant += 2 + 4 * len(self.edges[j]) if kind == NUMERIC else (2 if kind == CATEGORICAL else 0)
        enc = sum(2 + 4 * len(e) for e in self.encodings.values())
        weights = 4 + self.entries * (4 + 4 * (1 + self.m))
        dicts = 2 + sum(4 + sum(2 + len(t.encode("utf-8")) for t in v) for v in self.categories.values())
        return {"header": header, "quantiles": quant, "encodings": enc, "weights": weights,
                "dictionaries": dicts, "footer": 4}

    # --- bytes ---------------------------------------------------------
    def to_bytes(self) -> bytes:
        w = _Writer()
        w.buf += LRWB_MAGIC
        w.put("HH", VERSION, self.n_features)
        w.put("HHH", self.n, self.b, self.m)
        w.put("QI", self.total_bins, self.min_bin_rows)
        w.put("H", len(self.descriptors))
        for j, kind, mean, std in self.descriptors:
            w.put("HBff", j, _KIND_CODE[kind], mean, std)
        w.put(f"{self.n}H", *self.binned)
        w.put(f"{self.m}H", *self.inference)
        # quantile section, in binned-feature order
        for j in self.binned:
            kind = self._kind[j]
            if kind == NUMERIC:
                w.put("H", len(self.edges[j]))
                w.f32s(self.edges[j])
            elif kind == CATEGORICAL:
                w.put("H", self.cardinality[j])
        # categorical encodings, in inference order
        for j in self.inference:
            if j in self.encodings:
                w.put("H", len(self.encodings[j]))
                w.f32s(self.encodings[j])
        w.put("I", self.entries)
        for b, row in zip(self.bin_ids.tolist(), self.weights):
            w.put("I", b)
            w.f32s(row)
        _write_dictionaries(w, self.categories)
        return w.finish()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FirstStageTable":
        r = _Reader(data, LRWB_MAGIC)
        (n_features,) = r.get("H")
        n, b, m = r.get("HHH")
        total_bins, min_bin_rows = r.get("QI")
        (nd,) = r.get("H")
        descriptors = []
        for _ in range(nd):
            j, code, mean, std = r.get("HBff")
            if code not in _CODE_KIND:
                raise CorruptTable(f"unknown feature kind code {code}")
            descriptors.append((j, _CODE_KIND[code], mean, std))
        kind = {j: k for j, k, _, _ in descriptors}
        binned = list(r.get(f"{n}H"))
        inference = list(r.get(f"{m}H"))
        if any(j not in kind for j in binned + inference):
            raise CorruptTable("feature list references a missing descriptor")
        edges, card, enc = {}, {}, {}
        for j in binned:
            if kind[j] == NUMERIC:
                (cnt,) = r.get("H")
                edges[j] = r.f32s(cnt)
            elif kind[j] == CATEGORICAL:
                (card[j],) = r.get("H")
        for j in inference:
            if kind[j] == CATEGORICAL:
                (cnt,) = r.get("H")
                enc[j] = r.f32s(cnt)
        (entries,) = r.get("I")
        ids = np.zeros(entries, dtype=np.int64)
        W = np.zeros((entries, 1 + m))
        for i in range(entries):
            (ids[i],) = r.get("I")
            W[i] = r.f32s(1 + m)
        cats = _read_dictionaries(r)
        r.done()
        return cls(n_features, b, min_bin_rows, total_bins, descriptors, binned, inference,
                   edges, card, enc, ids, W, cats)


def export_first_stage(model, path) -> int:
    """Write a ``.lrwb`` table; returns the number of bytes written."""
    table = model if isinstance(model, FirstStageTable) else FirstStageTable.from_model(model)
    data = table.to_bytes()
    Path(path).write_bytes(data)
    return len(data)


def import_first_stage(path) -> FirstStageTable:
    return FirstStageTable.from_bytes(Path(path).read_bytes())


# --- second stage --------------------------------------------------------

def _write_tree(w, t: Tree, node=0):
    if t.feature[node] < 0:
        w.put("Bd", _LEAF, float(t.value[node]))
        return
    w.put("BHd", _CAT_SPLIT if t.categorical[node] else _NUM_SPLIT, int(t.feature[node]), float(t.threshold[node]))
    _write_tree(w, t, int(t.left[node]))
    _write_tree(w, t, int(t.right[node]))


def _count_nodes(t: Tree, node=0):
    if t.feature[node] < 0:
        return 1
    return 1 + _count_nodes(t, int(t.left[node])) + _count_nodes(t, int(t.right[node]))


def _read_tree(r, count, n_features):
    feature, threshold, categorical, left, right, value = [], [], [], [], [], []

    def node():
        i = len(feature)
        if i >= count:
            raise CorruptTable("tree has more nodes than declared")
        (tag,) = r.get("B")
        for lst, v in ((feature, -1), (threshold, 0.0), (categorical, False), (left, -1), (right, -1), (value, 0.0)):
            lst.append(v)
        if tag == _LEAF:
            (value[i],) = r.get("d")
            return i
        if tag not in (_NUM_SPLIT, _CAT_SPLIT):
            raise CorruptTable(f"unknown node tag {tag}")
        j, thr = r.get("Hd")
        if j >= n_features:
            raise CorruptTable("split on a feature outside the schema")
        feature[i], threshold[i], categorical[i] = j, thr, tag == _CAT_SPLIT
        left[i] = node()
        right[i] = node()
        return i

    node()
    if len(feature) != count:
        raise CorruptTable("tree node count mismatch")
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(categorical, dtype=bool),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value),
                np.zeros(count))


def gbdt_to_bytes(model: GbdtModel) -> bytes:
    w = _Writer()
    w.buf += GBDT_MAGIC
    w.put("HHId", VERSION, model.n_features, model.schema_fingerprint, model.base_score)
    w.put(f"{model.n_features}B", *(_KIND_CODE[k] for k in model.feature_kinds))
    _write_dictionaries(w, model.categories)
    w.put("I", len(model.trees))
    for t in model.trees:
        w.put("I", _count_nodes(t))
        _write_tree(w, t)
    return w.finish()


def gbdt_from_bytes(data: bytes) -> GbdtModel:
    r = _Reader(data, GBDT_MAGIC)
    n_features, fingerprint, base = r.get("HId")
    codes = r.get(f"{n_features}B")
    if any(c not in _CODE_KIND for c in codes):
        raise CorruptTable("unknown feature kind code")
    cats = _read_dictionaries(r)
    (n_trees,) = r.get("I")
    trees = []
    for _ in range(n_trees):
        (count,) = r.get("I")
        trees.append(_read_tree(r, count, n_features))
    r.done()
    return GbdtModel(trees, base, n_features, tuple(_CODE_KIND[c] for c in codes), fingerprint, cats)


def export_second_stage(model: GbdtModel, path) -> int:
    data = gbdt_to_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def import_second_stage(path) -> GbdtModel:
    return gbdt_from_bytes(Path(path).read_bytes())
