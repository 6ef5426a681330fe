"""Multi-block feature datasets: validation, file I/O, patient splits and a
synthetic generator standing in for CNN-extracted lesion features.

A dataset is four feature blocks (one per lesion type) sharing a row count,
plus optional binary labels. Row ``i`` of every block and of the label
vector describes the same sample; nothing in this module reorders rows
except :func:`split_by_patient`, which returns rows in their original
relative order within each split.
"""

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _binio
from .errors import DataError
from .kvfile import format_kv, read_kv

LESIONS = ("hard_exudate", "microaneurysm", "disk_hemorrhage", "edema")
BLOCK_MAGIC = b"DMHF"
MANIFEST_NAME = "manifest.txt"
_MANIFEST_KEYS = {"format", "labels"} | {f"block.{name}" for name in LESIONS}


def as_feature_matrix(values, name: str = "matrix") -> np.ndarray:
    """Return ``values`` as a read-only float64 N x d array, validating finiteness."""
    X = np.array(values, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"{name}: expected a 2-D matrix, got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise DataError(f"{name}: empty matrix of shape {X.shape}")
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"{name}: non-finite value {X[r, c]} at row {r}, col {c}")
    X.setflags(write=False)
    return X


@dataclass(frozen=True, eq=False)
class LesionFeatureSet:
    """Four per-lesion feature blocks over the same N samples.

    ``ids`` holds the patient identifier of each row (several rows may share
    a patient).
    """

    blocks: tuple
    ids: tuple

    def __post_init__(self):
        if len(self.blocks) != len(LESIONS):
            raise DataError(f"expected {len(LESIONS)} blocks, got {len(self.blocks)}")
        blocks = tuple(as_feature_matrix(b, f"block {i + 1} ({LESIONS[i]})")
                       for i, b in enumerate(self.blocks))
        n = blocks[0].shape[0]
        for i, b in enumerate(blocks):
            if b.shape[0] != n:
                raise DataError(f"dimension mismatch: block {i + 1} ({LESIONS[i]}) "
                                f"has {b.shape[0]} rows, block 1 has {n}")
        ids = tuple(str(s) for s in self.ids)
        if len(ids) != n:
            raise DataError(f"{len(ids)} ids for {n} rows")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def dims(self) -> tuple:
        return tuple(b.shape[1] for b in self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def block(self, name: str) -> np.ndarray:
        return self.blocks[LESIONS.index(name)]

    def concatenated(self) -> np.ndarray:
        return np.hstack(self.blocks)

    def take(self, rows) -> "LesionFeatureSet":
        rows = np.asarray(rows, dtype=np.intp)
        return LesionFeatureSet(tuple(b[rows] for b in self.blocks),
                                tuple(self.ids[r] for r in rows))

    def with_blocks(self, blocks) -> "LesionFeatureSet":
        return LesionFeatureSet(tuple(blocks), self.ids)


@dataclass(frozen=True, eq=False)
class LabelVector:
    labels: np.ndarray
    patient_ids: tuple

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 1:
            raise DataError("labels must be one-dimensional")
        bad = ~np.isin(raw, (0, 1))
        if bad.any():
            i = int(np.argmax(bad))
            raise DataError(f"label outside {{0,1}} at row {i}: {raw[i]!r}")
        labels = raw.astype(np.int64)
        labels.setflags(write=False)
        ids = tuple(str(s) for s in self.patient_ids)
        if len(ids) != len(labels):
            raise DataError(f"{len(ids)} patient ids for {len(labels)} labels")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "patient_ids", ids)

    def __len__(self):
        return len(self.labels)

    def take(self, rows) -> "LabelVector":
        rows = np.asarray(rows, dtype=np.intp)
        return LabelVector(self.labels[rows], tuple(self.patient_ids[r] for r in rows))


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    features: LesionFeatureSet
    labels: Optional[LabelVector] = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != self.features.n:
            raise DataError(f"{len(self.labels)} labels for {self.features.n} samples")

    @property
    def n(self) -> int:
        return self.features.n

    @property
    def ids(self) -> tuple:
        return self.features.ids

    def take(self, rows) -> "DatasetBundle":
        labels = None if self.labels is None else self.labels.take(rows)
        return DatasetBundle(self.features.take(rows), labels)


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: int
    block_dims: tuple = (8, 8, 8, 8)
    block_separations: tuple = (0.0, 0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if int(self.n_per_class) < 1:
            raise DataError("n_per_class must be >= 1")
        if len(self.block_dims) != 4 or len(self.block_separations) != 4:
            raise DataError("block_dims and block_separations need exactly 4 entries")
        if any(int(d) < 1 for d in self.block_dims):
            raise DataError(f"block dims must be >= 1: {self.block_dims}")
        if any(not (float(s) >= 0 and math.isfinite(float(s))) for s in self.block_separations):
            raise DataError(f"separations must be finite and >= 0: {self.block_separations}")
        if int(self.seed) < 0:
            raise DataError("seed must be unsigned")
        object.__setattr__(self, "block_dims", tuple(int(d) for d in self.block_dims))
        object.__setattr__(self, "block_separations",
                           tuple(float(s) for s in self.block_separations))


# -- file formats -------------------------------------------------------------

def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise DataError(f"missing or unreadable file {path}: {exc}") from exc


def _read_csv(path: Path, header_check) -> list:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"missing or unreadable file {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path}: empty file")
    header_check(rows[0])
    return rows[1:]


def read_block_csv(path) -> tuple:
    """Read ``id,f0,...`` block CSV -> (ids, matrix)."""
    path = Path(path)

    def check(header):
        want = ["id"] + [f"f{j}" for j in range(len(header) - 1)]
        if header != want or len(header) < 2:
            raise DataError(f"{path}: bad header {header[:4]}..., expected id,f0,f1,...")

    rows = _read_csv(path, check)
    if not rows:
        raise DataError(f"{path}: no data rows")
    ids, values = [], np.empty((len(rows), len(rows[0]) - 1))
    for r, row in enumerate(rows):
        if len(row) != values.shape[1] + 1:
            raise DataError(f"{path}: row {r} has {len(row) - 1} values, expected {values.shape[1]}")
        ids.append(row[0])
        for c, cell in enumerate(row[1:]):
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise DataError(f"{path}: unparseable value {cell!r} at row {r}, col {c}") from None
    return tuple(ids), as_feature_matrix(values, str(path))


def format_block_csv(ids: Sequence[str], X: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"f{j}" for j in range(X.shape[1])])
    for pid, row in zip(ids, X):
        w.writerow([pid] + [f"{v:.17g}" for v in row])
    return buf.getvalue()


def encode_matrix(X: np.ndarray) -> bytes:
    """DMHF payload: magic, u16 version, u32 rows, u32 cols, row-major f64 LE."""
    X = np.asarray(X, dtype=np.float64)
    w = _binio.Writer(BLOCK_MAGIC)
    w.u32(X.shape[0])
    w.u32(X.shape[1])
    w.f64(X)
    return w.getvalue()


def decode_matrix(data: bytes, what: str = "matrix") -> np.ndarray:
    r = _binio.Reader(data, BLOCK_MAGIC, what)
    rows, cols = r.u32(), r.u32()
    X = r.f64(rows * cols).reshape(rows, cols)
    r.finish()
    return as_feature_matrix(X, what)


def _read_ids_csv(path: Path) -> tuple:
    def check(header):
        if header != ["id"]:
            raise DataError(f"{path}: bad header {header}, expected id")
    return tuple(row[0] if row else "" for row in _read_csv(path, check))


def _format_ids_csv(ids) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"])
    for pid in ids:
        w.writerow([pid])
    return buf.getvalue()


def read_labels_csv(path) -> LabelVector:
    path = Path(path)

    def check(header):
        if header != ["id", "label"]:
            raise DataError(f"{path}: bad header {header}, expected id,label")

    rows = _read_csv(path, check)
    ids, labels = [], []
    for r, row in enumerate(rows):
        if len(row) != 2 or row[1].strip() not in ("0", "1"):
            raise DataError(f"{path}: label outside {{0,1}} at row {r}: {row}")
        ids.append(row[0])
        labels.append(int(row[1]))
    return LabelVector(np.array(labels, dtype=np.int64), tuple(ids))


def format_labels_csv(labels: LabelVector) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label"])
    for pid, lab in zip(labels.patient_ids, labels.labels):
        w.writerow([pid, int(lab)])
    return buf.getvalue()


def load_dataset(manifest_path) -> DatasetBundle:
    """Load a dataset described by a ``key = value`` manifest.

    Block and label paths are resolved relative to the manifest's directory.
    Every block must carry the same ids in the same order, and so must the
    label file when present.
    """
    manifest_path = Path(manifest_path)
    entries = read_kv(manifest_path)
    unknown = sorted(set(entries) - _MANIFEST_KEYS)
    if unknown:
        raise DataError(f"{manifest_path}: unknown manifest keys {unknown}")
    fmt = entries.get("format")
    if fmt not in ("csv", "binary"):
        raise DataError(f"{manifest_path}: format must be csv or binary, got {fmt!r}")
    base = manifest_path.parent

    blocks, ids = [], None
    for i, name in enumerate(LESIONS):
        key = f"block.{name}"
        if key not in entries:
            raise DataError(f"{manifest_path}: missing {key}")
        path = base / entries[key]
        if fmt == "csv":
            block_ids, X = read_block_csv(path)
        else:
            X = decode_matrix(_read_bytes(path), str(path))
            block_ids = _read_ids_csv(_ids_sidecar(path))
            if len(block_ids) != X.shape[0]:
                raise DataError(f"{path}: id sidecar has {len(block_ids)} rows, matrix {X.shape[0]}")
        if blocks and X.shape[0] != blocks[0].shape[0]:
            raise DataError(f"dimension mismatch: block {i + 1} ({name}) has {X.shape[0]} rows, "
                            f"block 1 has {blocks[0].shape[0]}")
        if ids is not None and block_ids != ids:
            raise DataError(f"block {i + 1} ({name}): ids differ from block 1")
        ids = block_ids
        blocks.append(X)

    labels = None
    if "labels" in entries:
        labels = read_labels_csv(base / entries["labels"])
        if len(labels) != len(ids):
            raise DataError(f"dimension mismatch: {len(labels)} labels for {len(ids)} samples")
        if labels.patient_ids != ids:
            raise DataError("label file ids differ from block ids")
    return DatasetBundle(LesionFeatureSet(tuple(blocks), ids), labels)


def _ids_sidecar(block_path: Path) -> Path:
    return block_path.with_suffix(".ids.csv")


def save_dataset(bundle: DatasetBundle, directory, format: str = "binary") -> Path:
    """Write one file per block (plus label file) and a manifest; return its path."""
    if format not in ("csv", "binary"):
        raise DataError(f"format must be csv or binary, got {format!r}")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {"format": format}
        for name, X in zip(LESIONS, bundle.features.blocks):
            if format == "csv":
                fname = f"{name}.csv"
                (directory / fname).write_text(format_block_csv(bundle.ids, X), encoding="utf-8")
            else:
                fname = f"{name}.bin"
                (directory / fname).write_bytes(encode_matrix(X))
                _ids_sidecar(directory / fname).write_text(_format_ids_csv(bundle.ids),
                                                           encoding="utf-8")
            manifest[f"block.{name}"] = fname
        if bundle.labels is not None:
            (directory / "labels.csv").write_text(format_labels_csv(bundle.labels),
                                                  encoding="utf-8")
            manifest["labels"] = "labels.csv"
        path = directory / MANIFEST_NAME
        path.write_text(format_kv(manifest), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write dataset to {directory}: {exc}") from exc
    return path


# -- splits and synthesis -----------------------------------------------------

def _largest_remainder(total: int, ratios: np.ndarray) -> np.ndarray:
    ideal = ratios * total
    counts = np.floor(ideal).astype(int)
    remainder = ideal - counts
    # stable sort: ties go to the earlier split
    for idx in np.argsort(-remainder, kind="stable")[: total - counts.sum()]:
        counts[idx] += 1
    # every positive-ratio split receives at least one patient
    for idx in np.flatnonzero((ratios > 0) & (counts == 0)):
        donor = int(np.argmax(np.where(counts > 1, counts - ideal, -np.inf)))
        counts[donor] -= 1
        counts[idx] += 1
    return counts


def split_by_patient(bundle: DatasetBundle, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Partition samples into train/validation/test so no patient spans two splits.

    Distinct patients are shuffled with ``seed`` and dealt out in
    largest-remainder proportions. A split whose ratio is zero is returned as
    ``None``.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or (ratios < 0).any() or abs(ratios.sum() - 1.0) > 1e-9:
        raise DataError(f"ratios must be 3 non-negative values summing to 1, got {ratios}")
    ids = bundle.ids if bundle.labels is None else bundle.labels.patient_ids
    patients = list(dict.fromkeys(ids))
    wanted = int((ratios > 0).sum())
    if len(patients) < wanted:
        raise DataError(f"{len(patients)} distinct patients cannot fill {wanted} non-empty splits")
    order = np.random.default_rng(seed).permutation(len(patients))
    counts = _largest_remainder(len(patients), ratios)
    group_of = {}
    start = 0
    for g, c in enumerate(counts):
        for p in order[start:start + c]:
            group_of[patients[p]] = g
        start += c
    membership = np.array([group_of[pid] for pid in ids])
    return tuple(bundle.take(np.flatnonzero(membership == g)) if ratios[g] > 0 else None
                 for g in range(3))


def generate_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    """Two-class isotropic Gaussian blocks.

    In block ``i`` class 0 is centred at the origin and class 1 at a random
    direction scaled to ``block_separations[i]``; both have identity
    covariance. Rows are shuffled, one patient per row.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_per_class
    labels = np.repeat([0, 1], n)
    order = rng.permutation(2 * n)
    labels = labels[order]
    blocks = []
    for d, sep in zip(spec.block_dims, spec.block_separations):
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        X = rng.standard_normal((2 * n, d)) + np.outer(labels, sep * direction)
        blocks.append(X)
    ids = tuple(f"p{i:05d}" for i in range(2 * n))
    return DatasetBundle(LesionFeatureSet(tuple(blocks), ids), LabelVector(labels, ids))
