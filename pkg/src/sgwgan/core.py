"""Point sets, distance matrices, couplings, seeded randomness and embedding I/O.

Two on-disk embedding formats are supported:

* CSV: UTF-8, one header row, optional first column named ``label``, the
  remaining columns numeric features. LF or CRLF line endings.
* Raw binary (``SGWE``): magic bytes ``SGWE``, u32 LE ``n``, u32 LE ``d``,
  u8 ``has_labels``, then ``n*d`` little-endian f64 values in row-major order,
  then (if labelled) ``n`` strings, each a u32 LE byte length followed by
  UTF-8 bytes.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyFile, InvalidInput, MalformedFile, MissingLabels

MAGIC = b"SGWE"
COUPLING_TOL = 1e-9


def _as_matrix(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInput(f"points must be an n x d matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class EmbeddingSet:
    """``n`` points in R^d under the uniform measure, with optional labels."""

    points: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        pts = _as_matrix(self.points)
        n, d = pts.shape
        if n < 1 or d < 1:
            raise InvalidInput(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("points contain NaN or Inf")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != n:
                raise InvalidInput(f"{len(labels)} labels for {n} points")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def subset(self, idx) -> "EmbeddingSet":
        idx = np.asarray(idx, dtype=np.intp)
        labels = None if self.labels is None else tuple(self.labels[i] for i in idx)
        return EmbeddingSet(self.points[idx], labels)


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidInput(f"distance matrix must be square, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InvalidInput("distances must be finite and nonnegative")
        if np.any(np.diag(v) != 0) or not np.array_equal(v, v.T):
            raise InvalidInput("distance matrix must be symmetric with zero diagonal")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True)
class Coupling:
    """Nonnegative ``n x m`` plan whose row/column sums match the marginals."""

    plan: np.ndarray
    row_marginal: np.ndarray = field(default=None)
    col_marginal: np.ndarray = field(default=None)

    def __post_init__(self):
        p = np.asarray(self.plan, dtype=np.float64)
        if p.ndim != 2:
            raise InvalidInput(f"plan must be a matrix, got shape {p.shape}")
        n, m = p.shape
        a = np.full(n, 1.0 / n) if self.row_marginal is None else np.asarray(self.row_marginal, float)
        b = np.full(m, 1.0 / m) if self.col_marginal is None else np.asarray(self.col_marginal, float)
        if a.shape != (n,) or b.shape != (m,):
            raise InvalidInput("marginal lengths do not match the plan")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidInput("plan entries must be finite and nonnegative")
        if abs(p.sum() - 1.0) > COUPLING_TOL:
            raise InvalidInput(f"plan mass {p.sum()!r} != 1")
        if np.max(np.abs(p.sum(1) - a)) > COUPLING_TOL or np.max(np.abs(p.sum(0) - b)) > COUPLING_TOL:
            raise InvalidInput("plan marginals violate tolerance 1e-9")
        for name, arr in (("plan", p), ("row_marginal", a), ("col_marginal", b)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_permutation(cls, perm) -> "Coupling":
        perm = np.asarray(perm, dtype=np.intp)
        n = len(perm)
        plan = np.zeros((n, n))
        plan[np.arange(n), perm] = 1.0 / n
        return cls(plan)

    @classmethod
    def independent(cls, n: int, m: int) -> "Coupling":
        return cls(np.full((n, m), 1.0 / (n * m)))

    def __array__(self, dtype=None, copy=None):
        return self.plan if dtype is None else self.plan.astype(dtype)


class SeededRng:
    """PCG64 stream (numpy ``Generator``) tied to a 64-bit seed.

    Child streams are derived with ``spawn(key)``, which hashes
    ``(seed, key)`` through ``numpy.random.SeedSequence``; the parent stream
    is left untouched.
    """

    algorithm = "numpy.random.PCG64"

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidInput(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.generator = np.random.Generator(np.random.PCG64(seed))

    def spawn(self, key: int) -> "SeededRng":
        state = np.random.SeedSequence([self.seed, int(key)]).generate_state(1, np.uint64)
        return SeededRng(int(state[0]))

    def next_seed(self) -> int:
        return int(self.generator.integers(0, 2**63, dtype=np.int64))

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, n, size, replace=False):
        return self.generator.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"


def pairwise_distances(emb: EmbeddingSet | np.ndarray) -> DistanceMatrix:
    """Euclidean distance matrix of the rows of ``emb``."""
    pts = emb.points if isinstance(emb, EmbeddingSet) else _as_matrix(emb)
    diff = pts[:, None, :] - pts[None, :, :]
    return DistanceMatrix(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))


def split_by_label(emb: EmbeddingSet) -> dict[str, EmbeddingSet]:
    """Partition ``emb`` by label, keeping first-appearance order of labels."""
    if emb.labels is None:
        raise MissingLabels("embedding set has no labels")
    groups: dict[str, list[int]] = {}
    for i, lab in enumerate(emb.labels):
        groups.setdefault(lab, []).append(i)
    return {lab: emb.subset(idx) for lab, idx in groups.items()}


# ---------------------------------------------------------------- file I/O


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "raw-f64"):
            raise InvalidInput(f"unknown embedding format {fmt!r}")
        return fmt
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "raw-f64" if head == MAGIC else "csv"


def load_embeddings(path, format: str | None = None) -> EmbeddingSet:
    """Read an embedding file; ``format`` is sniffed from the magic bytes if omitted."""
    path = Path(path)
    fmt = _detect_format(path, format)
    if fmt == "raw-f64":
        with open(path, "rb") as fh:
            emb, _ = read_raw_block(fh, path)
        return emb
    return _load_csv(path)


def _load_csv(path: Path) -> EmbeddingSet:
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFile(f"not valid UTF-8 ({exc})", path) from None
    reader = csv.reader(io.StringIO(text, newline=""))
    rows = [(i + 1, r) for i, r in enumerate(reader) if r]
    if not rows:
        raise EmptyFile("no header row", path, 1)
    header_line, header = rows[0]
    header = [h.strip() for h in header]
    has_labels = header[0] == "label"
    n_features = len(header) - int(has_labels)
    if n_features < 1:
        raise MalformedFile("header declares no feature columns", path, header_line)
    data = rows[1:]
    if not data:
        raise EmptyFile("no data rows", path, header_line + 1)
    values = np.empty((len(data), n_features))
    labels = [] if has_labels else None
    for r, (lineno, row) in enumerate(data):
        if len(row) != len(header):
            raise MalformedFile(
                f"expected {len(header)} columns, found {len(row)}", path, lineno
            )
        cells = row[1:] if has_labels else row
        if has_labels:
            labels.append(row[0])
        for c, cell in enumerate(cells):
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise MalformedFile(f"non-numeric feature {cell!r} in column {c + 1 + has_labels}", path, lineno) from None
    try:
        return EmbeddingSet(values, labels)
    except InvalidInput as exc:
        raise MalformedFile(str(exc), path) from None


def save_embeddings(emb: EmbeddingSet, path, format: str = "csv") -> None:
    path = Path(path)
    if format == "raw-f64":
        with open(path, "wb") as fh:
            write_raw_block(fh, emb.points, emb.labels)
        return
    if format != "csv":
        raise InvalidInput(f"unknown embedding format {format!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = [f"f{j}" for j in range(emb.d)]
        w.writerow((["label"] if emb.labels is not None else []) + head)
        for i in range(emb.n):
            row = [repr(float(v)) for v in emb.points[i]]
            if emb.labels is not None:
                row.insert(0, emb.labels[i])
            w.writerow(row)


def write_raw_block(fh, values, labels=None) -> None:
    """Write one ``SGWE`` block (header, f64 payload, optional labels) to ``fh``."""
    arr = np.ascontiguousarray(_as_matrix(values), dtype="<f8")
    n, d = arr.shape
    fh.write(MAGIC + struct.pack("<IIB", n, d, labels is not None))
    fh.write(arr.tobytes())
    if labels is not None:
        for lab in labels:
            b = str(lab).encode("utf-8")
            fh.write(struct.pack("<I", len(b)) + b)


def _read_exact(fh, k, path, what):
    buf = fh.read(k)
    if len(buf) != k:
        raise MalformedFile(f"truncated while reading {what}", path)
    return buf


def read_raw_block(fh, path=None) -> tuple[EmbeddingSet | None, np.ndarray]:
    """Read one ``SGWE`` block.

    Returns ``(embedding_set, matrix)``; the embedding set is ``None`` when the
    block holds zero rows or columns (a valid container but not a valid point set).
    """
    magic = fh.read(4)
    if magic != MAGIC:
        if not magic:
            raise EmptyFile("empty file", path)
        raise MalformedFile(f"bad magic {magic!r}", path)
    n, d, has_labels = struct.unpack("<IIB", _read_exact(fh, 9, path, "header"))
    if has_labels not in (0, 1):
        raise MalformedFile(f"has_labels flag must be 0 or 1, got {has_labels}", path)
    payload = _read_exact(fh, 8 * n * d, path, "values")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(n, d)
    labels = None
    if has_labels:
        labels = []
        for _ in range(n):
            (k,) = struct.unpack("<I", _read_exact(fh, 4, path, "label length"))
            try:
                labels.append(_read_exact(fh, k, path, "label").decode("utf-8"))
            except UnicodeDecodeError:
                raise MalformedFile("label is not valid UTF-8", path) from None
    if n == 0:
        raise EmptyFile("zero rows", path)
    if d == 0:
        return None, arr
    try:
        return EmbeddingSet(arr, labels), arr
    except InvalidInput as exc:
        raise MalformedFile(str(exc), path) from None
