"""Reference-map storage, nearest-neighbor retrieval, and file formats.

A reference map is an ordered collection of (id, descriptor, pose) entries
with a provenance flag telling whether the entry came from an original
anchor or was regressed during densification. Descriptors are held in one
contiguous float64 matrix so retrieval is a single vectorized scan.

File formats
------------
Pose CSV: UTF-8, LF line endings, header ``id,tx,ty,tz,qw,qx,qy,qz``,
decimal floats (written with shortest round-trip repr).

Descriptor binary: magic bytes ``CPRD``, u32 little-endian version (=1),
u32 LE count, u32 LE dim N, then count*N f32 LE values row-major, rows in
pose-file order.
"""

from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    DimMismatch,
    EmptyMap,
    IoError,
    ParseError,
    RefusedNonFinite,
    VersionUnsupported,
)
from .geometry import Pose, angular_error_deg

POSE_CSV_HEADER = ["id", "tx", "ty", "tz", "qw", "qx", "qy", "qz"]
DESCRIPTOR_MAGIC = b"CPRD"
DESCRIPTOR_VERSION = 1


class Origin(enum.Enum):
    """Provenance of a map entry."""

    ANCHOR = "anchor"
    REGRESSED = "regressed"


@dataclass(frozen=True)
class Match:
    """One retrieval result.

    ``translation_error`` and ``rotation_error`` are only meaningful when
    the query pose was known to the caller; they are NaN otherwise (pure
    feature-space retrieval). ``feature_distance`` is 0.0 for oracle
    retrieval, which never looks at descriptors.
    """

    ref_id: str
    ref_index: int
    feature_distance: float
    translation_error: float = math.nan
    rotation_error: float = math.nan


@dataclass(frozen=True)
class MapEntry:
    id: str
    descriptor: np.ndarray
    pose: Pose
    origin: Origin


def _as_matrix(rows, dim=None) -> np.ndarray:
    m = np.ascontiguousarray(np.asarray(rows, dtype=np.float64))
    if m.ndim != 2:
        raise DimMismatch(f"descriptor block must be 2-D, got shape {m.shape}")
    if dim is not None and m.shape[1] != dim:
        raise DimMismatch(f"descriptor dim {m.shape[1]} does not match map dim {dim}")
    return m


@dataclass(frozen=True)
class ReferenceMap:
    """Ordered (id, descriptor, pose, origin) collection with a shared dim.

    Immutable after construction; retrieval over it is pure and can run in
    parallel across queries.
    """

    ids: tuple[str, ...]
    descriptors: np.ndarray  # (n, dim) float64, C-contiguous
    translations: np.ndarray  # (n, 3) float64
    quaternions: np.ndarray  # (n, 4) float64, unit, canonical sign
    origins: tuple[Origin, ...]
    _index: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        n = len(self.ids)
        if n:
            desc = _as_matrix(self.descriptors)
        else:
            given = np.asarray(self.descriptors, dtype=np.float64)
            desc = np.zeros((0, given.shape[1] if given.ndim == 2 else 0))
        if desc.shape[0] != n:
            raise CountMismatch(f"{n} ids but {desc.shape[0]} descriptor rows")
        if not np.all(np.isfinite(desc)):
            raise ValueError("descriptors must be finite")
        t = np.ascontiguousarray(np.asarray(self.translations, dtype=np.float64).reshape(n, 3))
        q = np.ascontiguousarray(np.asarray(self.quaternions, dtype=np.float64).reshape(n, 4))
        if len(self.origins) != n:
            raise CountMismatch(f"{n} ids but {len(self.origins)} origin flags")
        index = {}
        for i, entry_id in enumerate(self.ids):
            if entry_id in index:
                raise ValueError(f"duplicate map id {entry_id!r}")
            index[entry_id] = i
        for a in (desc, t, q):
            a.setflags(write=False)
        object.__setattr__(self, "descriptors", desc)
        object.__setattr__(self, "translations", t)
        object.__setattr__(self, "quaternions", q)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "origins", tuple(self.origins))
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_entries(cls, entries) -> "ReferenceMap":
        """Build a map from an iterable of (id, descriptor, Pose, Origin)."""
        entries = list(entries)
        if entries:
            desc = _as_matrix([np.asarray(e[1], dtype=np.float64) for e in entries])
        else:
            desc = np.zeros((0, 0))
        return cls(
            ids=tuple(e[0] for e in entries),
            descriptors=desc,
            translations=np.array([e[2].t for e in entries], dtype=np.float64).reshape(len(entries), 3),
            quaternions=np.array([e[2].q for e in entries], dtype=np.float64).reshape(len(entries), 4),
            origins=tuple(e[3] for e in entries),
        )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.descriptors.shape[1])

    def index_of(self, entry_id: str) -> int:
        return self._index[entry_id]

    def pose(self, i: int) -> Pose:
        return Pose(t=self.translations[i], q=self.quaternions[i])

    def entry(self, i: int) -> MapEntry:
        return MapEntry(self.ids[i], self.descriptors[i], self.pose(i), self.origins[i])

    def entries(self):
        for i in range(len(self)):
            yield self.entry(i)

    def extended(self, entries) -> "ReferenceMap":
        """A new map with ``entries`` appended; this map is left untouched."""
        entries = list(entries)
        if not entries:
            return self
        extra = _as_matrix([np.asarray(e[1], dtype=np.float64) for e in entries], self.dim if len(self) else None)
        desc = np.vstack([self.descriptors, extra]) if len(self) else extra
        t = np.vstack([self.translations, [e[2].t for e in entries]])
        q = np.vstack([self.quaternions, [e[2].q for e in entries]])
        return ReferenceMap(
            ids=self.ids + tuple(e[0] for e in entries),
            descriptors=desc,
            translations=t,
            quaternions=q,
            origins=self.origins + tuple(e[3] for e in entries),
        )


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms <= 0.0):
        raise ValueError("cannot L2-normalize a zero descriptor row")
    return m / norms


def retrieve(query, ref_map: ReferenceMap, k: int, query_pose: Pose | None = None) -> list[Match]:
    """Exact brute-force nearest neighbors of ``query`` in feature space.

    Returns min(k, len(map)) matches sorted by ascending Euclidean
    distance; equal distances are broken by ascending entry index. When
    ``query_pose`` is given, translation and rotation errors against it are
    filled in.
    """
    if len(ref_map) == 0:
        raise EmptyMap("cannot retrieve from an empty map")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != ref_map.dim:
        raise DimMismatch(f"query dim {q.shape[0]} != map dim {ref_map.dim}")
    if k < 1:
        raise ValueError("k must be a positive integer")
    diff = ref_map.descriptors - q
    d2 = np.einsum("ij,ij->i", diff, diff)
    k = min(int(k), len(ref_map))
    order = np.argsort(d2, kind="stable")[:k]
    dists = np.sqrt(d2[order])
    out = []
    for rank, idx in enumerate(order):
        i = int(idx)
        if query_pose is not None:
            te = float(np.linalg.norm(ref_map.translations[i] - query_pose.t))
            re = angular_error_deg(ref_map.quaternions[i], query_pose.q)
        else:
            te = math.nan
            re = math.nan
        out.append(
            Match(
                ref_id=ref_map.ids[i],
                ref_index=i,
                feature_distance=float(dists[rank]),
                translation_error=te,
                rotation_error=re,
            )
        )
    return out


def oracle_retrieve(query_pose: Pose, ref_map: ReferenceMap) -> Match:
    """The physically closest reference (3-D Euclidean, ties by index).

    This is the hypothetical perfect retriever; its translation error lower
    bounds what any feature-space retrieval can achieve on the same map.
    """
    if len(ref_map) == 0:
        raise EmptyMap("cannot retrieve from an empty map")
    diff = ref_map.translations - query_pose.t
    d2 = np.einsum("ij,ij->i", diff, diff)
    i = int(np.argmin(d2))
    return Match(
        ref_id=ref_map.ids[i],
        ref_index=i,
        feature_distance=0.0,
        translation_error=float(math.sqrt(d2[i])),
        rotation_error=angular_error_deg(ref_map.quaternions[i], query_pose.q),
    )


def _origin_from_id(entry_id: str) -> Origin:
    # Regressed ids carry a '#' provenance marker by construction.
    return Origin.REGRESSED if "#" in entry_id else Origin.ANCHOR


def load_descriptor_block(descriptor_path) -> np.ndarray:
    """Read one descriptor binary into a (count, dim) float64 matrix."""
    try:
        with open(descriptor_path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read descriptor file {descriptor_path}: {exc}") from exc
    if len(blob) < 16:
        raise ParseError("descriptor file shorter than its 16-byte header", offset=len(blob))
    magic, version, count, dim = struct.unpack_from("<4sIII", blob, 0)
    if magic != DESCRIPTOR_MAGIC:
        raise BadMagic(f"expected magic {DESCRIPTOR_MAGIC!r}, found {magic!r}")
    if version != DESCRIPTOR_VERSION:
        raise VersionUnsupported(f"descriptor format version {version} not supported")
    expected = 16 + count * dim * 4
    if len(blob) != expected:
        raise ParseError(f"descriptor payload is {len(blob)} bytes, expected {expected}", offset=16)
    values = np.frombuffer(blob, dtype="<f4", offset=16).astype(np.float64)
    return values.reshape(count, dim) if count else np.zeros((0, dim))


def load_map(pose_path, descriptor_path, l2_normalize: bool = False) -> ReferenceMap:
    """Load a reference map from a pose CSV plus a descriptor binary.

    Row i of the descriptor file pairs with row i of the pose file; entry
    order is file order. ``l2_normalize`` rescales every descriptor row to
    unit norm at load time (off by default; plain Euclidean matching).
    """
    try:
        with open(pose_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise IoError(f"cannot read pose file {pose_path}: {exc}") from exc
    if not rows or rows[0] != POSE_CSV_HEADER:
        raise ParseError(f"pose file must start with header {','.join(POSE_CSV_HEADER)}", line=1)
    ids, ts, qs = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 8:
            raise ParseError(f"expected 8 fields, got {len(row)}", line=lineno)
        ids.append(row[0])
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"bad float in pose row: {exc}", line=lineno) from exc
        ts.append(vals[0:3])
        qs.append(vals[3:7])

    desc = load_descriptor_block(descriptor_path)
    count = desc.shape[0]

    if len(ids) != count:
        raise CountMismatch(f"pose file has {len(ids)} rows but descriptor file declares {count}")

    if l2_normalize and count:
        desc = l2_normalize_rows(desc)

    n = len(ids)
    return ReferenceMap(
        ids=tuple(ids),
        descriptors=desc,
        translations=np.asarray(ts, dtype=np.float64).reshape(n, 3),
        quaternions=np.asarray(qs, dtype=np.float64).reshape(n, 4),
        origins=tuple(_origin_from_id(i) for i in ids),
    )


def save_map(ref_map: ReferenceMap, pose_path, descriptor_path) -> None:
    """Write a map to the pose CSV + descriptor binary formats.

    Descriptor payloads are f32; poses are written with shortest
    round-trip float repr so load_map is an exact inverse. Refuses to
    write anything if a descriptor component is non-finite.
    """
    if not np.all(np.isfinite(ref_map.descriptors)):
        raise RefusedNonFinite("map contains non-finite descriptor components")
    payload = np.ascontiguousarray(ref_map.descriptors, dtype="<f4").tobytes()
    header = struct.pack("<4sIII", DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION, len(ref_map), ref_map.dim)
    try:
        with open(pose_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(POSE_CSV_HEADER) + "\n")
            for i in range(len(ref_map)):
                t = ref_map.translations[i]
                q = ref_map.quaternions[i]
                fields = [ref_map.ids[i]] + [repr(float(v)) for v in (*t, *q)]
                fh.write(",".join(fields) + "\n")
        with open(descriptor_path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write map: {exc}") from exc
