"""Label-embedding construction.

Word vectors are retrofitted to a relation-filtered knowledge graph, two
retrofitted sets are merged through a shared SVD projection, and class labels
are resolved against the result to form the label matrix ``M`` (one unit-norm
row per class).  Attribute matrices can be used instead via :func:`pca_reduce`.
"""

from __future__ import annotations

import csv
import logging
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, LabelUnresolvableError, UnanchoredComponentError

log = logging.getLogger(__name__)

VISUAL_RELATIONS = frozenset(
    {
        "SimilarTo",
        "InstanceOf",
        "IsA",
        "FormOf",
        "Synonym",
        "EtymologicallyRelatedTo",
        "DefinedAs",
    }
)


@dataclass
class EmbeddingMatrix:
    """Vocabulary-indexed table of real vectors."""

    vocab: list[str]
    vectors: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.vocab):
            raise DataError(
                f"vectors shape {self.vectors.shape} does not match vocab of {len(self.vocab)}"
            )
        self._index = {}
        for i, term in enumerate(self.vocab):
            if term in self._index:
                raise DataError(f"duplicate term in vocabulary: {term!r}")
            self._index[term] = i
        if not np.all(np.isfinite(self.vectors)):
            raise DataError("embedding contains non-finite values")

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, term):
        return term in self._index

    def __getitem__(self, term) -> np.ndarray:
        return self.vectors[self._index[term]]

    def index(self, term) -> int:
        return self._index[term]

    def subset(self, terms: Sequence[str]) -> "EmbeddingMatrix":
        return EmbeddingMatrix(list(terms), self.vectors[[self._index[t] for t in terms]])


@dataclass(frozen=True)
class Edge:
    term_a: str
    term_b: str
    relation: str
    weight: float = 1.0


@dataclass
class KnowledgeGraph:
    edges: list[Edge] = field(default_factory=list)

    def __len__(self):
        return len(self.edges)

    def terms(self) -> list[str]:
        seen = {}
        for e in self.edges:
            seen.setdefault(e.term_a, None)
            seen.setdefault(e.term_b, None)
        return list(seen)


@dataclass(frozen=True)
class RetrofitConfig:
    alpha_present: float = 1.0
    max_iters: int = 10
    tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0 or self.alpha_present < 0:
            raise ValueError("tol and alpha_present must be non-negative")


# ---------------------------------------------------------------------------
# File formats


def read_embeddings(path) -> EmbeddingMatrix:
    """Read ``term v1 ... vd`` lines; a leading ``<count> <dim>`` header is skipped."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    vocab, rows = [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected a term followed by values")
            try:
                values = [float(v) for v in parts[1:]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric vector component") from None
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, found {len(values)}")
            vocab.append(parts[0])
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no embedding rows")
    try:
        return EmbeddingMatrix(vocab, np.array(rows))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_embeddings(emb: EmbeddingMatrix, path, header=False, fmt=None):
    """Inverse of :func:`read_embeddings`; ``fmt`` (e.g. ``"%.8g"``) trades precision for size."""
    fmt_one = repr if fmt is None else (lambda v: fmt % v)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(emb)} {emb.d}\n")
        for term, vec in zip(emb.vocab, emb.vectors):
            fh.write(term + " " + " ".join(fmt_one(float(v)) for v in vec) + "\n")


_CONCEPT_URI = re.compile(r"^/c/[^/]+/([^/]+)")


def _plain_term(term: str) -> str:
    m = _CONCEPT_URI.match(term)
    return m.group(1) if m else term


def _plain_relation(rel: str) -> str:
    return rel.rsplit("/", 1)[-1] if rel.startswith("/r/") else rel


def read_graph(path) -> KnowledgeGraph:
    """Read ``relation<TAB>term_a<TAB>term_b[<TAB>weight]`` rows.

    ConceptNet-style URIs (``/r/IsA``, ``/c/en/cat/n``) are reduced to their
    plain relation name and term.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 4):
                raise DataError(f"{path}:{lineno}: expected 3 or 4 tab-separated columns")
            weight = 1.0
            if len(cols) == 4 and cols[3].strip():
                try:
                    weight = float(cols[3])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad weight {cols[3]!r}") from None
            if not weight > 0 or not np.isfinite(weight):
                raise DataError(f"{path}:{lineno}: edge weight must be positive")
            edges.append(
                Edge(_plain_term(cols[1]), _plain_term(cols[2]), _plain_relation(cols[0]), weight)
            )
    return KnowledgeGraph(edges)


def write_graph(graph: KnowledgeGraph, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in graph.edges:
            fh.write(f"{e.relation}\t{e.term_a}\t{e.term_b}\t{e.weight!r}\n")


def read_attributes(path) -> tuple[list[str], np.ndarray]:
    """Read a CSV whose first column is the class name and the rest are reals."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    labels, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise DataError(f"{path}:{lineno}: non-numeric attribute") from None
            if rows and len(values) != len(rows[0]):
                raise DataError(f"{path}:{lineno}: ragged attribute row")
            labels.append(row[0])
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no attribute rows")
    return labels, np.array(rows, dtype=np.float64)


def read_labels(path) -> list[str]:
    """One class label per line (blank lines and ``#`` comments ignored)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


# ---------------------------------------------------------------------------
# Graph filtering and retrofitting


def filter_graph(graph: KnowledgeGraph, relation_whitelist: Iterable[str]) -> KnowledgeGraph:
    whitelist = {_plain_relation(r) for r in relation_whitelist}
    if not whitelist:
        raise ValueError("relation whitelist must not be empty")
    return KnowledgeGraph(
        [e for e in graph.edges if e.relation in whitelist and e.term_a != e.term_b]
    )


def _adjacency(graph: KnowledgeGraph, index: dict[str, int]) -> dict[int, dict[int, float]]:
    # undirected; parallel edges between one pair accumulate their weights
    adj: dict[int, dict[int, float]] = defaultdict(dict)
    for e in graph.edges:
        a, b = index[e.term_a], index[e.term_b]
        if a == b:
            continue
        adj[a][b] = adj[a].get(b, 0.0) + e.weight
        adj[b][a] = adj[b].get(a, 0.0) + e.weight
    return adj


def retrofit_objective(vectors, originals, alpha, adjacency) -> float:
    """Retrofitting energy; each undirected edge is counted once."""
    diff = vectors - originals
    total = float(np.sum(alpha * np.einsum("ij,ij->i", diff, diff)))
    for i, nbrs in adjacency.items():
        for j, w in nbrs.items():
            if i < j:
                d = vectors[i] - vectors[j]
                total += w * float(d @ d)
    return total


def _check_anchored(n, alpha, adjacency, vocab):
    seen = np.zeros(n, dtype=bool)
    for start in range(n):
        if seen[start] or alpha[start] > 0:
            continue
        comp, queue, anchored = [], deque([start]), False
        seen[start] = True
        while queue:
            i = queue.popleft()
            comp.append(i)
            anchored |= alpha[i] > 0
            for j in adjacency.get(i, ()):
                if not seen[j]:
                    seen[j] = True
                    queue.append(j)
        if not anchored:
            names = ", ".join(vocab[i] for i in comp[:5])
            raise UnanchoredComponentError(
                f"unanchored component: no term with an original vector among [{names}"
                + (", ...]" if len(comp) > 5 else "]")
            )


def retrofit(
    emb: EmbeddingMatrix,
    graph: KnowledgeGraph,
    cfg: RetrofitConfig = RetrofitConfig(),
    on_sweep: Callable[[int, np.ndarray], None] | None = None,
) -> EmbeddingMatrix:
    """Pull vectors towards their graph neighbours while anchoring them to the originals.

    Terms only present in the graph get ``alpha = 0`` and are inferred from
    their neighbours.  Updates are applied in place (Gauss-Seidel order), so
    each one exactly minimises the energy in its own coordinate block and the
    energy never increases between sweeps.  ``on_sweep(sweep, vectors)`` is
    called after every full sweep.
    """
    vocab = list(emb.vocab)
    index = dict(emb._index)
    for term in graph.terms():
        if term not in index:
            index[term] = len(vocab)
            vocab.append(term)
    n, d = len(vocab), emb.d

    originals = np.zeros((n, d))
    originals[: len(emb)] = emb.vectors
    alpha = np.zeros(n)
    alpha[: len(emb)] = cfg.alpha_present
    adjacency = _adjacency(graph, index)
    _check_anchored(n, alpha, adjacency, vocab)

    vectors = originals.copy()
    order = sorted(adjacency)
    nbr_idx = {i: np.fromiter(adjacency[i].keys(), dtype=np.intp) for i in order}
    nbr_w = {i: np.fromiter(adjacency[i].values(), dtype=np.float64) for i in order}

    for sweep in range(cfg.max_iters):
        max_shift = 0.0
        for i in order:
            w = nbr_w[i]
            new = (alpha[i] * originals[i] + w @ vectors[nbr_idx[i]]) / (alpha[i] + w.sum())
            max_shift = max(max_shift, float(np.max(np.abs(new - vectors[i]))))
            vectors[i] = new
        if on_sweep is not None:
            on_sweep(sweep, vectors)
        if max_shift <= cfg.tol:
            log.debug("retrofit converged after %d sweeps", sweep + 1)
            break
    return EmbeddingMatrix(vocab, vectors)


# ---------------------------------------------------------------------------
# Merging and dimensionality reduction


def _right_singular_basis(mat: np.ndarray, k: int) -> np.ndarray:
    """Top-k right singular directions as columns, with a deterministic sign."""
    n, D = mat.shape
    _, _, vt = np.linalg.svd(mat, full_matrices=n < k)
    basis = vt[:k].T
    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    return basis * signs


def merge_embeddings(
    emb_a: EmbeddingMatrix, emb_b: EmbeddingMatrix, target_dim: int = 128
) -> EmbeddingMatrix:
    """Merge two embedding sets into one ``target_dim`` space.

    The projection is fitted on the column-concatenation of the shared
    vocabulary.  A term known to only one source has the other source's block
    filled with that source's mean shared-vocabulary vector before projection.
    """
    if target_dim < 1 or target_dim > emb_a.d + emb_b.d:
        raise ValueError(f"target_dim must be in [1, {emb_a.d + emb_b.d}]")
    common = [t for t in emb_a.vocab if t in emb_b]
    if not common:
        raise DataError("no common vocabulary between the two embedding sets")
    a_common = emb_a.vectors[[emb_a.index(t) for t in common]]
    b_common = emb_b.vectors[[emb_b.index(t) for t in common]]
    joint = np.hstack([a_common, b_common])
    basis = _right_singular_basis(joint, target_dim)

    only_a = [t for t in emb_a.vocab if t not in emb_b]
    only_b = [t for t in emb_b.vocab if t not in emb_a]
    blocks = [joint]
    if only_a:
        a_rows = emb_a.vectors[[emb_a.index(t) for t in only_a]]
        blocks.append(np.hstack([a_rows, np.tile(b_common.mean(axis=0), (len(only_a), 1))]))
    if only_b:
        b_rows = emb_b.vectors[[emb_b.index(t) for t in only_b]]
        blocks.append(np.hstack([np.tile(a_common.mean(axis=0), (len(only_b), 1)), b_rows]))
    merged = np.vstack(blocks) @ basis
    return EmbeddingMatrix(common + only_a + only_b, merged)


def pca_reduce(attributes, dim: int) -> np.ndarray:
    """Project mean-centred rows onto the leading ``dim`` principal components."""
    attributes = np.asarray(attributes, dtype=np.float64)
    centred = attributes - attributes.mean(axis=0)
    rank = np.linalg.matrix_rank(centred)
    if dim < 1 or dim > rank:
        raise ValueError(f"dim={dim} exceeds the rank {rank} of the centred attribute matrix")
    return centred @ _right_singular_basis(centred, dim)


# ---------------------------------------------------------------------------
# Label resolution

_SEPARATORS = re.compile(r"[_\-\s]+")


def resolve_label(emb: EmbeddingMatrix, label: str) -> tuple[np.ndarray, str]:
    """Return ``(vector, how)`` where ``how`` names the fall-out stage that hit."""
    if not label:
        raise ValueError("label must be non-empty")
    if label in emb:
        return emb[label].copy(), "exact"
    lower = label.lower()
    if lower in emb:
        return emb[lower].copy(), "lowercase"
    tokens = [t for t in _SEPARATORS.split(lower) if t]
    for variant in (" ".join(tokens), "_".join(tokens), "-".join(tokens)):
        if variant in emb:
            return emb[variant].copy(), "separator"

    found = []
    for tok in tokens:
        if tok in emb:
            found.append(emb[tok])
    if found:
        how = "token_mean" if len(found) == len(tokens) else "partial_token_mean"
        return np.mean(found, axis=0), how
    raise LabelUnresolvableError(label)


def lookup_label(emb: EmbeddingMatrix, label: str) -> np.ndarray:
    return resolve_label(emb, label)[0]


def build_label_matrix(emb: EmbeddingMatrix, labels: Sequence[str]) -> EmbeddingMatrix:
    """Resolve every class label and L2-normalise the rows.

    Duplicate labels are allowed; the returned vocabulary then repeats them
    with a ``#k`` suffix so the result stays a valid table.
    """
    rows = []
    for k, label in enumerate(labels):
        try:
            vec, how = resolve_label(emb, label)
        except LabelUnresolvableError:
            raise LabelUnresolvableError(label, k) from None
        if how != "exact":
            log.info("label %r resolved via %s", label, how)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise DataError(f"label {label!r} (class index {k}) resolved to an all-zero vector")
        rows.append(vec / norm)
    names, seen = [], defaultdict(int)
    for label in labels:
        names.append(label if seen[label] == 0 else f"{label}#{seen[label]}")
        seen[label] += 1
    return EmbeddingMatrix(names, np.array(rows))


def build_embeddings(
    emb_a: EmbeddingMatrix,
    emb_b: EmbeddingMatrix,
    graph: KnowledgeGraph,
    relations: Iterable[str] = VISUAL_RELATIONS,
    dim: int = 128,
    cfg: RetrofitConfig = RetrofitConfig(),
) -> EmbeddingMatrix:
    """Filter the graph, retrofit both sources to it, then merge them."""
    filtered = filter_graph(graph, relations)
    log.info("graph filtered to %d of %d edges", len(filtered), len(graph))
    return merge_embeddings(retrofit(emb_a, filtered, cfg), retrofit(emb_b, filtered, cfg), dim)
