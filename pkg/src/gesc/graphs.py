"""Graph containers, dataset IO, splits, homophily, synthetic generation.

Undirected edges are the unit of storage: each edge {u, v} (stored in file
order as the pair (u, v)) expands into two directed arcs that share one
edge id and carry opposite orientation signs.  The arc u->v has orientation
+1 and the reverse arc orientation -1, so a single phase parameter per edge
yields antisymmetric transport phases across the two directions.  Arcs are
kept in CSR order grouped by *destination* node, which is the order every
aggregation runs in; that fixed order makes repeated runs bit-identical.

Randomness everywhere flows through explicit ``numpy.random.Generator``
objects backed by the Philox counter-based bit generator (documented,
keyed, reproducible across platforms); see ``make_rng``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "Graph",
    "ArcSet",
    "Dataset",
    "SyntheticSpec",
    "DataError",
    "MissingFileError",
    "DimensionMismatchError",
    "DuplicateEdgeError",
    "LabelRangeError",
    "ParseError",
    "SplitError",
    "GenerationError",
    "make_rng",
    "global_homophily",
    "load_bundle",
    "save_bundle",
    "load_content_cites",
    "make_splits",
    "default_splits",
    "generate_synthetic",
    "sample_edge_drop_mask",
    "relabel_nodes",
]


class DataError(ValueError):
    """Base class for dataset construction and IO failures."""


class MissingFileError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class DuplicateEdgeError(DataError):
    pass


class LabelRangeError(DataError):
    pass


class ParseError(DataError):
    pass


class SplitError(DataError):
    pass


class GenerationError(DataError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox-keyed generator: (seed, stream) fully determines the output.

    Philox is counter-based with a documented algorithm, so any other
    implementation keyed the same way reproduces the identical draw
    sequence.  Distinct streams are independent by key separation.
    """
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


# ---------------------------------------------------------------------------
# Graph and arc structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArcSet:
    """Directed arcs in CSR order grouped by destination node.

    May describe the full graph or the surviving subgraph after an edge-drop
    mask; ``edge`` indexes into the owning graph's undirected edge list
    either way, so per-edge parameters apply unchanged.
    """

    num_nodes: int
    indptr: np.ndarray   # (N+1,)
    src: np.ndarray      # (A,)
    dst: np.ndarray      # (A,) nondecreasing
    edge: np.ndarray     # (A,) undirected edge id
    orient: np.ndarray   # (A,) float64, +1 along the stored (u, v) direction

    @property
    def num_arcs(self) -> int:
        return self.src.shape[0]


def _build_arcs(num_nodes: int, edges: np.ndarray) -> ArcSet:
    e = edges.shape[0]
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    edge_id = np.concatenate([np.arange(e), np.arange(e)])
    orient = np.concatenate([np.ones(e), -np.ones(e)])
    order = np.argsort(dst, kind="stable")
    src, dst, edge_id, orient = src[order], dst[order], edge_id[order], orient[order]
    counts = np.bincount(dst, minlength=num_nodes)
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return ArcSet(num_nodes, indptr, src.astype(np.int64), dst.astype(np.int64),
                  edge_id.astype(np.int64), orient.astype(np.float64))


@dataclass(frozen=True)
class Graph:
    """Undirected graph with a CSR arc expansion and per-node degrees."""

    num_nodes: int
    edges: np.ndarray  # (E, 2) int64 in stored orientation; row index = edge id
    arcs: ArcSet
    degrees: np.ndarray  # (N,) in-arc counts

    @staticmethod
    def build(num_nodes: int, edges) -> "Graph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= num_nodes:
                raise DataError(
                    f"edge endpoint out of range [0, {num_nodes}): "
                    f"min={edges.min()}, max={edges.max()}"
                )
            if np.any(edges[:, 0] == edges[:, 1]):
                bad = int(np.flatnonzero(edges[:, 0] == edges[:, 1])[0])
                raise DataError(f"self-loop at edge row {bad}: {tuple(edges[bad])}")
            canon = np.sort(edges, axis=1)
            _, counts = np.unique(canon, axis=0, return_counts=True)
            if np.any(counts > 1):
                raise DuplicateEdgeError(
                    f"{int((counts > 1).sum())} duplicate undirected edge(s) present"
                )
        arcs = _build_arcs(num_nodes, edges)
        degrees = np.diff(arcs.indptr)
        return Graph(num_nodes, edges, arcs, degrees)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def num_arcs(self) -> int:
        return self.arcs.num_arcs

    def masked_arcs(self, keep_mask: np.ndarray) -> ArcSet:
        """Arc set of the subgraph keeping edges where ``keep_mask`` is True.

        Filtering preserves CSR (destination-sorted) order, so the result is
        a valid ArcSet with both arcs of every surviving edge present.
        """
        keep_mask = np.asarray(keep_mask, dtype=bool)
        if keep_mask.shape != (self.num_edges,):
            raise DataError(
                f"keep mask shape {keep_mask.shape} != (num_edges,) = ({self.num_edges},)"
            )
        a = self.arcs
        sel = keep_mask[a.edge]
        dst = a.dst[sel]
        counts = np.bincount(dst, minlength=self.num_nodes)
        indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return ArcSet(self.num_nodes, indptr, a.src[sel], dst, a.edge[sel], a.orient[sel])


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    graph: Graph
    features: np.ndarray  # (N, d_in) float64
    labels: np.ndarray    # (N,) int64 in [0, C)
    num_classes: int
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self) -> None:
        n = self.graph.num_nodes
        if self.features.shape[0] != n or self.features.ndim != 2:
            raise DimensionMismatchError(
                f"features shape {self.features.shape} inconsistent with {n} nodes"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain NaN/Inf")
        if self.labels.shape != (n,):
            raise DimensionMismatchError(f"labels shape {self.labels.shape} != ({n},)")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(
                f"label outside [0, {self.num_classes}): "
                f"min={self.labels.min()}, max={self.labels.max()}"
            )
        masks = (self.train_mask, self.val_mask, self.test_mask)
        for m in masks:
            if m.shape != (n,) or m.dtype != bool:
                raise DataError(f"mask must be boolean of shape ({n},), got {m.dtype}{m.shape}")
        if np.any(self.train_mask & self.val_mask) or np.any(self.train_mask & self.test_mask) \
                or np.any(self.val_mask & self.test_mask):
            raise DataError("train/val/test masks overlap")
        if not self.train_mask.any():
            raise DataError("train mask is empty")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def global_homophily(d: Dataset) -> float:
    """Fraction of undirected edges whose endpoints share a label."""
    e = d.graph.edges
    if e.shape[0] == 0:
        raise DataError("homophily undefined: graph has no edges")
    return float(np.mean(d.labels[e[:, 0]] == d.labels[e[:, 1]]))


def relabel_nodes(d: Dataset, perm: np.ndarray) -> Dataset:
    """Apply a node relabeling ``old id i -> new id perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    n = d.num_nodes
    if sorted(perm.tolist()) != list(range(n)):
        raise DataError("perm is not a permutation of node ids")
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    graph = Graph.build(n, perm[d.graph.edges])
    return Dataset(
        graph=graph,
        features=d.features[inv],
        labels=d.labels[inv],
        num_classes=d.num_classes,
        train_mask=d.train_mask[inv],
        val_mask=d.val_mask[inv],
        test_mask=d.test_mask[inv],
    )


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _split_masks(
    labels: np.ndarray, num_classes: int, per_class_train: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = labels.shape[0]
    train = np.zeros(n, dtype=bool)
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if members.size < per_class_train:
            raise SplitError(
                f"class {c} has {members.size} members, fewer than "
                f"per_class_train={per_class_train}"
            )
        chosen = rng.permutation(members)[:per_class_train]
        train[chosen] = True
    rest = rng.permutation(np.flatnonzero(~train))
    half = rest.size // 2
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:half]] = True
    test[rest[half:]] = True
    return train, val, test


def make_splits(d: Dataset, per_class_train: int, rng_seed: int) -> Dataset:
    """Fixed per-class train quota; remaining nodes split 50/50 val/test."""
    train, val, test = _split_masks(
        d.labels, d.num_classes, per_class_train, make_rng(rng_seed, stream=1)
    )
    return replace(d, train_mask=train, val_mask=val, test_mask=test)


def default_splits(
    labels: np.ndarray, num_classes: int, rng_seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split rule used when a dataset arrives without one.

    Takes min(20, smallest class size) train nodes per class and divides the
    remainder 50/50 into val/test, all driven by the given seed.
    """
    smallest = min(int(np.sum(labels == c)) for c in range(num_classes))
    per_class = max(1, min(20, smallest))
    return _split_masks(labels, num_classes, per_class, make_rng(rng_seed, stream=1))


# ---------------------------------------------------------------------------
# Bundle IO
# ---------------------------------------------------------------------------

_DEFAULT_FILES = {
    "features": "features.bin",
    "edges": "edges.csv",
    "labels": "labels.csv",
    "splits": "splits.json",
}


def save_bundle(d: Dataset, path) -> None:
    """Write a dataset as a graph-bundle directory (see ``load_bundle``)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "num_nodes": d.num_nodes,
        "num_edges": d.graph.num_edges,
        "feature_dim": d.feature_dim,
        "num_classes": d.num_classes,
        "files": dict(_DEFAULT_FILES),
        "format_version": 1,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (root / "features.bin").write_bytes(
        np.ascontiguousarray(d.features, dtype="<f8").tobytes()
    )
    with open(root / "edges.csv", "w") as fh:
        for u, v in d.graph.edges:
            fh.write(f"{u},{v}\n")
    with open(root / "labels.csv", "w") as fh:
        for y in d.labels:
            fh.write(f"{y}\n")
    splits = {
        "train": np.flatnonzero(d.train_mask).tolist(),
        "val": np.flatnonzero(d.val_mask).tolist(),
        "test": np.flatnonzero(d.test_mask).tolist(),
    }
    (root / "splits.json").write_text(json.dumps(splits) + "\n")


def _mask_from_indices(indices, n: int, what: str) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DataError(f"{what} split index out of range [0, {n})")
    mask[idx] = True
    return mask


def load_bundle(path, split_seed: int = 0) -> Dataset:
    """Load a graph-bundle directory.

    Layout: ``manifest.json`` declaring counts and file names; features as
    little-endian float64 row-major binary; edges as one ``i,j`` pair per
    line (0-based); labels one class index per line; optional
    ``splits.json`` with train/val/test node index lists.  Missing splits
    fall back to ``default_splits`` driven by ``split_seed``.
    """
    root = Path(path)
    man_path = root / "manifest.json"
    if not man_path.exists():
        raise MissingFileError(f"manifest not found: {man_path}")
    try:
        manifest = json.loads(man_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest.json is not valid JSON: {exc}") from exc
    if manifest.get("format_version") != 1:
        raise ParseError(f"unsupported format_version {manifest.get('format_version')!r}")
    for key in ("num_nodes", "num_edges", "feature_dim", "num_classes", "files"):
        if key not in manifest:
            raise ParseError(f"manifest missing key {key!r}")
    n = int(manifest["num_nodes"])
    e = int(manifest["num_edges"])
    d_in = int(manifest["feature_dim"])
    c = int(manifest["num_classes"])
    files = manifest["files"]

    def resolve(kind: str, required: bool = True) -> Path | None:
        name = files.get(kind)
        if name is None:
            if required:
                raise ParseError(f"manifest files{{}} missing entry {kind!r}")
            return None
        p = root / name
        if not p.exists():
            if required:
                raise MissingFileError(f"{kind} file not found: {p}")
            return None
        return p

    raw = resolve("features").read_bytes()
    if len(raw) != n * d_in * 8:
        raise DimensionMismatchError(
            f"features.bin holds {len(raw)} bytes, expected {n}x{d_in}x8 = {n * d_in * 8}"
        )
    features = np.frombuffer(raw, dtype="<f8").reshape(n, d_in).astype(np.float64)

    edge_rows = []
    with open(resolve("edges"), "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"edges.csv line {lineno}: expected 'i,j', got {line!r}")
            try:
                edge_rows.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise ParseError(f"edges.csv line {lineno}: {exc}") from exc
    edges = np.asarray(edge_rows, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] != e:
        raise DimensionMismatchError(
            f"edges.csv holds {edges.shape[0]} edges, manifest declares {e}"
        )

    labels_list = []
    with open(resolve("labels"), "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels_list.append(int(line))
            except ValueError as exc:
                raise ParseError(f"labels.csv line {lineno}: {exc}") from exc
    labels = np.asarray(labels_list, dtype=np.int64)
    if labels.shape[0] != n:
        raise DimensionMismatchError(
            f"labels.csv holds {labels.shape[0]} labels, manifest declares {n} nodes"
        )

    graph = Graph.build(n, edges)

    splits_path = resolve("splits", required=False)
    if splits_path is not None:
        splits = json.loads(splits_path.read_text())
        train = _mask_from_indices(splits.get("train", []), n, "train")
        val = _mask_from_indices(splits.get("val", []), n, "val")
        test = _mask_from_indices(splits.get("test", []), n, "test")
    else:
        train, val, test = default_splits(labels, c, split_seed)

    return Dataset(graph, features, labels, c, train, val, test)


# ---------------------------------------------------------------------------
# Plain-text citation format
# ---------------------------------------------------------------------------

def load_content_cites(content_path, cites_path, split_seed: int = 0) -> Dataset:
    """Load the classic two-file citation-graph distribution.

    ``.content``: one line per node, whitespace separated: id, d_in feature
    values, label string.  ``.cites``: one ``cited_id citing_id`` pair per
    line.  Citations are made undirected and deduplicated; pairs touching
    unknown ids and self-citations are reported via ``warnings`` and
    skipped.
    """
    ids: list[str] = []
    feats: list[np.ndarray] = []
    label_names: list[str] = []
    d_in: int | None = None
    with open(content_path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise ParseError(f"{content_path} line {lineno}: fewer than 3 fields")
            if d_in is None:
                d_in = len(parts) - 2
            elif len(parts) - 2 != d_in:
                raise ParseError(
                    f"{content_path} line {lineno}: {len(parts) - 2} features, expected {d_in}"
                )
            try:
                feats.append(np.asarray([float(t) for t in parts[1:-1]], dtype=np.float64))
            except ValueError as exc:
                raise ParseError(f"{content_path} line {lineno}: {exc}") from exc
            ids.append(parts[0])
            label_names.append(parts[-1])
    if not ids:
        raise ParseError(f"{content_path}: no node lines found")
    index = {node_id: k for k, node_id in enumerate(ids)}
    if len(index) != len(ids):
        raise ParseError(f"{content_path}: duplicate node ids present")

    classes = sorted(set(label_names))
    class_index = {name: k for k, name in enumerate(classes)}
    labels = np.asarray([class_index[name] for name in label_names], dtype=np.int64)

    seen: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    skipped_unknown = 0
    skipped_self = 0
    with open(cites_path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ParseError(f"{cites_path} line {lineno}: expected 2 ids, got {len(parts)}")
            a, b = parts
            if a not in index or b not in index:
                skipped_unknown += 1
                continue
            u, v = index[a], index[b]
            if u == v:
                skipped_self += 1
                continue
            key = (min(u, v), max(u, v))
            if key in seen:
                continue
            seen.add(key)
            edges.append((u, v))
    if skipped_unknown:
        warnings.warn(f"{skipped_unknown} citation pair(s) referenced unknown ids; skipped")
    if skipped_self:
        warnings.warn(f"{skipped_self} self-citation(s) dropped")

    n = len(ids)
    graph = Graph.build(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    features = np.vstack(feats)
    c = len(classes)
    train, val, test = default_splits(labels, c, split_seed)
    return Dataset(graph, features, labels, c, train, val, test)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Stochastic-block-model-style recipe with a homophily dial.

    The number of same-label edges is fixed to round(target * E) exactly, so
    realized homophily tracks the target up to rounding rather than binomial
    noise.  Features are a Gaussian mixture: class mean scaled by
    ``feature_signal_strength`` s plus sqrt(1 - s^2) unit noise.
    """

    num_nodes: int
    num_classes: int
    feature_dim: int
    target_homophily: float
    mean_degree: float
    feature_signal_strength: float
    rng_seed: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.target_homophily <= 1.0):
            raise GenerationError(f"target_homophily must be in [0,1], got {self.target_homophily}")
        if self.mean_degree < 1:
            raise GenerationError(f"mean_degree must be >= 1, got {self.mean_degree}")
        if not (0.0 <= self.feature_signal_strength <= 1.0):
            raise GenerationError(
                f"feature_signal_strength must be in [0,1], got {self.feature_signal_strength}"
            )
        if self.num_classes < 1 or self.num_nodes < 2 or self.feature_dim < 1:
            raise GenerationError("num_nodes >= 2, num_classes >= 1, feature_dim >= 1 required")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Generate a labeled graph with homophily pinned near the target."""
    n, c = spec.num_nodes, spec.num_classes
    if spec.mean_degree > n - 1:
        raise GenerationError(f"mean_degree {spec.mean_degree} exceeds n-1 = {n - 1}")
    num_edges = int(round(n * spec.mean_degree / 2.0))
    max_edges = n * (n - 1) // 2
    if num_edges > max_edges:
        raise GenerationError(f"{num_edges} edges requested but only {max_edges} possible")
    if c == 1 and spec.target_homophily < 1.0:
        raise GenerationError("single-class graphs force homophily 1.0")

    rng = make_rng(spec.rng_seed, stream=0)
    labels = rng.permutation(np.arange(n) % c).astype(np.int64)
    members = [np.flatnonzero(labels == k) for k in range(c)]
    if all(m.size < 2 for m in members) and spec.target_homophily > 0:
        raise GenerationError("no class has two members; intra-class edges impossible")

    num_intra = int(round(spec.target_homophily * num_edges))
    num_inter = num_edges - num_intra
    if c == 1 and num_inter > 0:  # unreachable given the guard above
        raise GenerationError("inter-class edges impossible with one class")

    seen: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []

    def place(want_intra: bool, count: int) -> None:
        attempts = 0
        placed = 0
        cap = 80 * count + 1000
        while placed < count:
            attempts += 1
            if attempts > cap:
                raise GenerationError(
                    f"could not place {count} {'intra' if want_intra else 'inter'}-class "
                    f"edges after {attempts} attempts (graph too dense for the target)"
                )
            if want_intra:
                k = int(rng.integers(c))
                if members[k].size < 2:
                    continue
                u, v = members[k][rng.choice(members[k].size, size=2, replace=False)]
            else:
                k1, k2 = rng.choice(c, size=2, replace=False)
                u = int(members[k1][rng.integers(members[k1].size)])
                v = int(members[k2][rng.integers(members[k2].size)])
            key = (min(int(u), int(v)), max(int(u), int(v)))
            if key in seen:
                continue
            seen.add(key)
            edges.append((int(u), int(v)))
            placed += 1

    place(True, num_intra)
    place(False, num_inter)

    graph = Graph.build(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    frac_isolated = float(np.mean(graph.degrees == 0))
    if frac_isolated > 0.05:
        raise GenerationError(
            f"{frac_isolated:.1%} of nodes are isolated; raise mean_degree"
        )

    s = spec.feature_signal_strength
    mu = rng.normal(size=(c, spec.feature_dim))
    noise = rng.normal(size=(n, spec.feature_dim))
    features = s * mu[labels] + np.sqrt(max(1.0 - s * s, 0.0)) * noise

    train, val, test = default_splits(labels, c, spec.rng_seed)
    return Dataset(graph, features, labels, c, train, val, test)


def sample_edge_drop_mask(g: Graph, p_drop: float, rng: np.random.Generator) -> np.ndarray:
    """Keep each undirected edge independently with probability 1 - p_drop."""
    if not (0.0 <= p_drop < 1.0):
        raise DataError(f"p_drop must be in [0,1), got {p_drop}")
    return rng.random(g.num_edges) >= p_drop
