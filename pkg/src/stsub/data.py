"""Domain types, feature-file I/O, person-level splits and a synthetic cross-view generator.

Features are stored column-per-sample: a ``FeatureSet`` with ``d`` rows and ``N``
columns, where each column carries a person id (or ``-1`` when unknown), a camera
view id and a split tag.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SPLIT_TAGS = ("labeled", "unlabeled", "probe", "gallery")
NO_PERSON = -1

FEATURE_MAGIC = b"STSF"
FEATURE_VERSION = 1
PROJECTION_MAGIC = b"STSP"
PROJECTION_VERSION = 1


class DataError(ValueError):
    pass


class FormatError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureSet:
    features: np.ndarray
    person_id: np.ndarray
    view_id: np.ndarray
    split_tag: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ShapeError(f"features must be a non-empty d x N matrix, got shape {X.shape}")
        N = X.shape[1]
        pid = np.asarray(self.person_id, dtype=np.int64).reshape(-1)
        vid = np.asarray(self.view_id, dtype=np.int64).reshape(-1)
        tag = np.asarray(self.split_tag, dtype=object).reshape(-1)
        for name, arr in (("person_id", pid), ("view_id", vid), ("split_tag", tag)):
            if arr.shape[0] != N:
                raise ShapeError(f"{name} has {arr.shape[0]} entries for {N} samples")
        bad = [t for t in set(tag.tolist()) if t not in SPLIT_TAGS]
        if bad:
            raise DataError(f"unknown split tags {sorted(bad)}")
        if np.any(pid[tag == "labeled"] < 0):
            raise DataError("every labeled sample needs a person id")
        for a in (X, pid, vid):
            a.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "person_id", pid)
        object.__setattr__(self, "view_id", vid)
        object.__setattr__(self, "split_tag", tag.astype(str))

    @property
    def d(self) -> int:
        return self.features.shape[0]

    @property
    def n_samples(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "FeatureSet":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureSet(self.features[:, idx], self.person_id[idx], self.view_id[idx], self.split_tag[idx])

    def with_tags(self, tags) -> "FeatureSet":
        return FeatureSet(self.features, self.person_id, self.view_id, np.asarray(tags, dtype=object))

    def where(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.split_tag == tag)

    def persons(self) -> np.ndarray:
        return np.unique(self.person_id[self.person_id >= 0])

    def equals(self, other: "FeatureSet") -> bool:
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.person_id, other.person_id)
            and np.array_equal(self.view_id, other.view_id)
            and np.array_equal(self.split_tag, other.split_tag)
        )


@dataclass(frozen=True)
class LabeledPartition:
    labeled_indices: np.ndarray
    unlabeled_indices: np.ndarray
    ratio: Fraction


@dataclass(frozen=True, eq=False)
class KernelContext:
    """Everything needed to embed new samples with a kernelized projection.

    ``features`` are the training columns the coefficients refer to, in order.
    """

    features: np.ndarray
    kind: str
    mu: float
    c_grid: tuple
    beta: np.ndarray

    def kernel_columns(self, Z: np.ndarray) -> np.ndarray:
        """Fused kernel between training samples (rows) and columns of ``Z``."""
        from .kernels import cross_kernel

        return cross_kernel(self.features, np.asarray(Z, dtype=np.float64), self.kind, self.mu, self.c_grid, self.beta)


@dataclass(frozen=True, eq=False)
class Projection:
    kind: str
    basis: np.ndarray
    train_context: Optional[KernelContext] = None

    def __post_init__(self):
        if self.kind not in ("linear", "kernelized"):
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.kind == "kernelized":
            if self.train_context is None:
                raise ValueError("kernelized projection needs a training context")
            if self.train_context.features.shape[1] != self.basis.shape[0]:
                raise ShapeError("coefficient rows must match the number of training samples")

    @property
    def subspace_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def input_dim(self) -> int:
        if self.kind == "linear":
            return self.basis.shape[0]
        return self.train_context.features.shape[0]

    def transform(self, X) -> np.ndarray:
        """Map columns of ``X`` (d x N) into the learned r-dimensional subspace."""
        X = X.features if isinstance(X, FeatureSet) else np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != self.input_dim:
            raise ShapeError(f"projection expects dimension {self.input_dim}, got {X.shape[0]}")
        if self.kind == "linear":
            return self.basis.T @ X
        return self.basis.T @ self.train_context.kernel_columns(X)


def _default_c_grid():
    return tuple(round(2.0 + 0.1 * i, 1) for i in range(11))


@dataclass
class ExperimentConfig:
    eta: float = 1.0
    k_neighbors: int = 2
    max_iters: int = 10
    theta: float = 0.01
    c_grid: tuple = field(default_factory=_default_c_grid)
    kernel: str = "gaussian"
    ratio: Fraction = Fraction(1, 3)
    trials: int = 10
    rng_seed: int = 0
    stop_tolerance: float = 0.0
    method: str = "mkssl"
    subspace_dim: Optional[int] = None
    rank_tol: float = 1e-10
    center: bool = True
    ridge: float = 0.1
    rerank_alpha: float = 0.95
    rerank_k: int = 10
    multi_shot: bool = False
    split_mode: str = "two_view"
    track_iterations: bool = True

    def __post_init__(self):
        self.ratio = parse_ratio(self.ratio)
        self.c_grid = tuple(float(c) for c in self.c_grid)
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        if not self.theta >= 0:
            raise ValueError("theta must be nonnegative")
        if not self.ridge >= 0:
            raise ValueError("ridge must be nonnegative")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.stop_tolerance < 1:
            raise ValueError("stop_tolerance must lie in [0, 1)")
        if not self.c_grid or min(self.c_grid) <= 0:
            raise ValueError("c_grid must hold positive bandwidth factors")
        if self.kernel not in ("gaussian", "linear"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.split_mode not in ("two_view", "one_gallery_per_person"):
            raise ValueError(f"unknown split mode {self.split_mode!r}")
        if self.method not in ("fsl", "ssl", "mkfsl", "mkssl", "mkssl-mrank"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.rerank_alpha < 1:
            raise ValueError("rerank_alpha must lie in (0, 1)")

    @property
    def kernel_count(self) -> int:
        return len(self.c_grid)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Fraction):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def parse_ratio(value) -> Fraction:
    try:
        r = Fraction(value) if not isinstance(value, float) else Fraction(value).limit_denominator(10_000)
    except (ValueError, ZeroDivisionError) as exc:
        raise DataError(f"cannot parse ratio {value!r}") from exc
    if not 0 < r <= 1:
        raise DataError(f"ratio must lie in (0, 1], got {r}")
    return r


# ---------------------------------------------------------------------------
# feature files


def _parse_header(line: str):
    if not line.startswith("#"):
        raise FormatError("missing '# d=<int> n=<int> cols=...' header", line=1)
    parts = dict(p.split("=", 1) for p in line[1:].split() if "=" in p)
    try:
        d, n = int(parts["d"]), int(parts["n"])
        cols = parts["cols"].split(",")
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed header: {exc}", line=1) from exc
    if cols[:3] != ["person_id", "view_id", "split"]:
        raise FormatError("header cols must start with person_id,view_id,split", line=1)
    return d, n


def read_csv(path) -> FeatureSet:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty file", line=1)
    d, n = _parse_header(lines[0].strip())
    pid, vid, tags, rows = [], [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != d + 3:
            raise ShapeError(f"line {lineno}: expected {d + 3} fields, found {len(cells)}")
        try:
            pid.append(int(cells[0]) if cells[0].strip() else NO_PERSON)
            vid.append(int(cells[1]))
            rows.append([float(c) for c in cells[3:]])
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from exc
        tags.append(cells[2].strip())
    if len(rows) != n:
        raise ShapeError(f"header declares n={n} samples, file holds {len(rows)}")
    X = np.array(rows, dtype=np.float64).reshape(n, d).T
    return FeatureSet(X, pid, vid, np.array(tags, dtype=object))


def write_csv(fs: FeatureSet, path) -> None:
    buf = io.StringIO()
    cols = ",".join(["person_id", "view_id", "split"] + [f"f{i}" for i in range(fs.d)])
    buf.write(f"# d={fs.d} n={fs.n_samples} cols={cols}\n")
    for j in range(fs.n_samples):
        p = "" if fs.person_id[j] < 0 else str(int(fs.person_id[j]))
        vals = ",".join(repr(float(v)) for v in fs.features[:, j])
        buf.write(f"{p},{int(fs.view_id[j])},{fs.split_tag[j]},{vals}\n")
    Path(path).write_text(buf.getvalue())


def write_binary(fs: FeatureSet, path) -> None:
    tag_codes = np.array([SPLIT_TAGS.index(t) for t in fs.split_tag], dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<BQQ", FEATURE_VERSION, fs.d, fs.n_samples))
        fh.write(np.ascontiguousarray(fs.features, dtype="<f8").tobytes())
        fh.write(fs.person_id.astype("<i8").tobytes())
        fh.write(fs.view_id.astype("<i8").tobytes())
        fh.write(tag_codes.tobytes())


def read_binary(path) -> FeatureSet:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise FormatError("not a feature file (bad magic)")
    if len(raw) < 21:
        raise FormatError("truncated header")
    version, d, n = struct.unpack_from("<BQQ", raw, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    off = 21
    need = off + 8 * d * n + 16 * n + n
    if len(raw) != need:
        raise ShapeError(f"file size {len(raw)} does not match d={d}, n={n}")
    X = np.frombuffer(raw, dtype="<f8", count=d * n, offset=off).reshape(d, n).astype(np.float64)
    off += 8 * d * n
    pid = np.frombuffer(raw, dtype="<i8", count=n, offset=off).astype(np.int64)
    off += 8 * n
    vid = np.frombuffer(raw, dtype="<i8", count=n, offset=off).astype(np.int64)
    off += 8 * n
    codes = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)
    if codes.size and codes.max() >= len(SPLIT_TAGS):
        raise FormatError("invalid split code in metadata block")
    tags = np.array([SPLIT_TAGS[c] for c in codes], dtype=object)
    return FeatureSet(X, pid, vid, tags)


def load_feature_set(path, format: Optional[str] = None) -> FeatureSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format is None:
        format = "binary" if path.suffix in (".bin", ".stsf") else "csv"
    if format == "csv":
        return read_csv(path)
    if format == "binary":
        return read_binary(path)
    raise ValueError(f"unknown feature format {format!r}")


def save_feature_set(fs: FeatureSet, path, format: Optional[str] = None) -> None:
    path = Path(path)
    if format is None:
        format = "binary" if path.suffix in (".bin", ".stsf") else "csv"
    if format == "csv":
        write_csv(fs, path)
    elif format == "binary":
        write_binary(fs, path)
    else:
        raise ValueError(f"unknown feature format {format!r}")


# ---------------------------------------------------------------------------
# projection files

_KIND_CODES = {"linear": 0, "kernelized": 1}
_KERNEL_CODES = {"gaussian": 0, "linear": 1}


def _pack_matrix(M: np.ndarray) -> bytes:
    return struct.pack("<QQ", *M.shape) + np.ascontiguousarray(M, dtype="<f8").tobytes()


def _unpack_matrix(raw: bytes, off: int):
    rows, cols = struct.unpack_from("<QQ", raw, off)
    off += 16
    M = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).astype(np.float64)
    return M, off + 8 * rows * cols


def save_projection(p: Projection, path) -> None:
    out = bytearray(PROJECTION_MAGIC)
    out += struct.pack("<BB", PROJECTION_VERSION, _KIND_CODES[p.kind])
    out += _pack_matrix(p.basis)
    if p.kind == "kernelized":
        ctx = p.train_context
        M = len(ctx.c_grid)
        out += struct.pack("<BQd", _KERNEL_CODES[ctx.kind], M, float(ctx.mu))
        out += np.asarray(ctx.c_grid, dtype="<f8").tobytes()
        out += np.asarray(ctx.beta, dtype="<f8").tobytes()
        out += _pack_matrix(ctx.features)
    Path(path).write_bytes(bytes(out))


def load_projection(path) -> Projection:
    raw = Path(path).read_bytes()
    if raw[:4] != PROJECTION_MAGIC:
        raise FormatError("not a projection file (bad magic)")
    version, kind_code = struct.unpack_from("<BB", raw, 4)
    if version != PROJECTION_VERSION:
        raise FormatError(f"unsupported projection file version {version}")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if kind_code not in kinds:
        raise FormatError(f"unknown projection kind code {kind_code}")
    try:
        basis, off = _unpack_matrix(raw, 6)
        ctx = None
        if kinds[kind_code] == "kernelized":
            kcode, M, mu = struct.unpack_from("<BQd", raw, off)
            off += struct.calcsize("<BQd")
            c_grid = np.frombuffer(raw, dtype="<f8", count=M, offset=off)
            off += 8 * M
            beta = np.frombuffer(raw, dtype="<f8", count=M, offset=off).astype(np.float64)
            off += 8 * M
            feats, off = _unpack_matrix(raw, off)
            kernels = {v: k for k, v in _KERNEL_CODES.items()}
            ctx = KernelContext(feats, kernels[kcode], mu, tuple(float(c) for c in c_grid), beta)
    except (struct.error, ValueError, KeyError) as exc:
        raise FormatError(f"corrupt projection file: {exc}") from exc
    if off != len(raw):
        raise FormatError("trailing bytes in projection file")
    return Projection(kinds[kind_code], basis, ctx)


# ---------------------------------------------------------------------------
# splits and synthetic data


def split_by_ratio(fs: FeatureSet, ratio, seed: int, indices: Optional[Sequence[int]] = None) -> LabeledPartition:
    """Partition training columns by person: ``floor(ratio * persons)`` (at least one) are labeled."""
    ratio = parse_ratio(ratio)
    idx = np.arange(fs.n_samples) if indices is None else np.asarray(indices, dtype=np.int64)
    pids = fs.person_id[idx]
    if np.any(pids < 0):
        raise DataError("every training sample needs a person id to split by ratio")
    persons = np.unique(pids)
    n_lab = max(1, math.floor(ratio * len(persons)))
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(persons)[:n_lab]
    mask = np.isin(pids, chosen)
    return LabeledPartition(idx[mask], idx[~mask], ratio)


def generate_synthetic_crossview(
    persons: int,
    images_per_view: int = 1,
    latent_dim: int = 8,
    noise_sigma: float = 0.5,
    seed: int = 0,
    dim: int = 128,
    n_views: int = 2,
    return_latent: bool = False,
):
    """Cross-view data: view ``v`` observes ``A_v @ z_person + noise``.

    Each view gets its own fixed random linear map ``A_v`` (dim x latent_dim).
    With ``return_latent`` the per-person latent vectors and the view maps are
    returned as well.
    """
    if persons < 2:
        raise ValueError("need at least two persons")
    if latent_dim < 1 or dim < 1 or images_per_view < 1 or n_views < 2:
        raise ValueError("latent_dim, dim and images_per_view must be >= 1 and n_views >= 2")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((latent_dim, persons))
    maps = [rng.standard_normal((dim, latent_dim)) / math.sqrt(latent_dim) for _ in range(n_views)]
    cols, pid, vid = [], [], []
    for p in range(persons):
        for v in range(n_views):
            for _ in range(images_per_view):
                cols.append(maps[v] @ latent[:, p] + noise_sigma * rng.standard_normal(dim))
                pid.append(p)
                vid.append(v)
    X = np.stack(cols, axis=1)
    fs = FeatureSet(X, pid, vid, np.array(["labeled"] * X.shape[1], dtype=object))
    if return_latent:
        return fs, latent, maps
    return fs
