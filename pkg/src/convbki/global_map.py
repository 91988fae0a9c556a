"""Persistent hashed voxel store with local extraction, write-back and eviction."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .voxel import DEFAULT_PRIOR, GridSpec, LocalGrid, points_to_keys

MAGIC = b"CBKIMAP1"
_HEADER = struct.Struct("<8sIdIQQ")

# keys are packed into one int64: 21 bits per axis, offset to unsigned
_BITS = 21
_OFF = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1


class MapFormatError(ValueError):
    pass


class MapVersionError(MapFormatError):
    pass


class MapTruncatedError(MapFormatError):
    def __init__(self, msg, record_index):
        super().__init__(msg)
        self.record_index = record_index


def encode_keys(keys):
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    if keys.size and (keys.min() < -_OFF or keys.max() >= _OFF):
        raise ValueError("voxel key outside the representable range")
    u = keys + _OFF
    return (u[:, 0] << (2 * _BITS)) | (u[:, 1] << _BITS) | u[:, 2]


def decode_keys(codes):
    codes = np.asarray(codes, dtype=np.int64)
    return np.stack(
        [(codes >> (2 * _BITS)) & _MASK, (codes >> _BITS) & _MASK, codes & _MASK], axis=1
    ) - _OFF


class GlobalMap:
    """Sparse map from integer voxel keys to concentration vectors.

    Entries live in parallel arrays sorted by packed key, so a local window is
    fetched with one ``searchsorted`` call instead of per-voxel lookups.
    ``gc_window=None`` disables eviction.
    """

    def __init__(self, num_classes, prior=DEFAULT_PRIOR, gc_window=10):
        if prior <= 0:
            raise ValueError("prior must be positive")
        self.num_classes = int(num_classes)
        self.prior = float(prior)
        self.gc_window = gc_window
        self.frame_counter = 0
        self._codes = np.empty(0, dtype=np.int64)
        self._alpha = np.empty((0, self.num_classes))
        self._last = np.empty(0, dtype=np.int64)

    def __len__(self):
        return self._codes.size

    @property
    def nbytes(self):
        return self._codes.nbytes + self._alpha.nbytes + self._last.nbytes

    @property
    def keys(self):
        return decode_keys(self._codes)

    @property
    def alphas(self):
        return self._alpha

    @property
    def last_update(self):
        return self._last

    def set_entries(self, keys, alphas, last_update):
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        alphas = np.asarray(alphas, dtype=np.float64).reshape(len(keys), self.num_classes)
        last = np.broadcast_to(np.asarray(last_update, dtype=np.int64), (len(keys),))
        codes = encode_keys(keys)
        order = np.argsort(codes, kind="stable")
        codes = codes[order]
        if codes.size > 1 and np.any(codes[1:] == codes[:-1]):
            raise ValueError("duplicate voxel keys")
        self._codes = codes
        self._alpha = alphas[order].copy()
        self._last = last[order].copy()

    def lookup(self, keys):
        """Row positions of ``keys`` in the store (-1 where absent)."""
        codes = encode_keys(keys)
        if not self._codes.size:
            return np.full(codes.shape, -1)
        pos = np.minimum(np.searchsorted(self._codes, codes), self._codes.size - 1)
        return np.where(self._codes[pos] == codes, pos, -1)

    def query(self, keys):
        """Concentrations at ``keys``; absent voxels read as the prior."""
        rows = self.lookup(keys)
        out = np.full((rows.size, self.num_classes), self.prior)
        hit = rows >= 0
        out[hit] = self._alpha[rows[hit]]
        return out, hit

    def copy(self):
        m = GlobalMap(self.num_classes, self.prior, self.gc_window)
        m.frame_counter = self.frame_counter
        m._codes = self._codes.copy()
        m._alpha = self._alpha.copy()
        m._last = self._last.copy()
        return m

    def equals(self, other):
        return (
            self.num_classes == other.num_classes
            and self.prior == other.prior
            and self.gc_window == other.gc_window
            and self.frame_counter == other.frame_counter
            and np.array_equal(self._codes, other._codes)
            and np.array_equal(self._alpha, other._alpha)
            and np.array_equal(self._last, other._last)
        )


def local_anchor(pose, spec: GridSpec):
    """Global key of the local grid origin for an ego pose (4x4)."""
    ego_key = points_to_keys(np.asarray(pose)[:3, 3][None], spec.resolution)[0]
    return ego_key + spec.min_key_offset()


def grid_keys(spec: GridSpec, anchor):
    """Global keys of every voxel of a local grid in C-order, shape (V, 3)."""
    idx = np.indices(spec.dims).reshape(3, -1).T
    return idx + np.asarray(anchor, dtype=np.int64)


def extract_local(gmap: GlobalMap, pose, spec: GridSpec) -> LocalGrid:
    """Copy the ego-centred window of the map into a dense local grid.

    The window is anchored on the voxel containing the pose translation and stays
    aligned with the global axes.
    """
    if spec.num_classes != gmap.num_classes:
        raise ValueError("grid and map disagree on the number of classes")
    anchor = local_anchor(pose, spec)
    alpha, _ = gmap.query(grid_keys(spec, anchor))
    alpha = np.ascontiguousarray(alpha.T).reshape(spec.shape)
    return LocalGrid(alpha, spec, anchor)


def write_back(local: LocalGrid, gmap: GlobalMap, frame: int) -> GlobalMap:
    """Upsert the local window into the map (in place; the map is returned).

    Voxels still exactly at the prior and not already stored are skipped.
    """
    C = gmap.num_classes
    alpha = local.alpha.reshape(C, -1).T
    keys = grid_keys(local.spec, local.anchor)
    rows = gmap.lookup(keys)
    existing = rows >= 0
    touched = np.any(alpha != gmap.prior, axis=1)
    if np.any(alpha < gmap.prior):
        raise ValueError("local grid holds concentrations below the prior")

    gmap._alpha[rows[existing]] = alpha[existing]
    gmap._last[rows[existing]] = frame

    new = touched & ~existing
    if np.any(new):
        codes = np.concatenate([gmap._codes, encode_keys(keys[new])])
        alphas = np.concatenate([gmap._alpha, alpha[new]])
        last = np.concatenate([gmap._last, np.full(int(new.sum()), frame, dtype=np.int64)])
        order = np.argsort(codes, kind="stable")
        gmap._codes, gmap._alpha, gmap._last = codes[order], alphas[order], last[order]
    return gmap


def garbage_collect(gmap: GlobalMap, current_frame: int) -> int:
    """Evict entries with ``last_update < current_frame - gc_window``."""
    if gmap.gc_window is None:
        return 0
    keep = gmap._last >= current_frame - gmap.gc_window
    evicted = int(keep.size - keep.sum())
    if evicted:
        gmap._codes = gmap._codes[keep]
        gmap._alpha = gmap._alpha[keep]
        gmap._last = gmap._last[keep]
    return evicted


_NO_GC = 0xFFFFFFFF


def save_map(gmap: GlobalMap, path):
    C = gmap.num_classes
    rec = np.dtype([("key", "<i4", 3), ("last", "<u8"), ("alpha", "<f8", C)])
    records = np.empty(len(gmap), dtype=rec)
    records["key"] = gmap.keys
    records["last"] = gmap._last
    records["alpha"] = gmap._alpha
    window = _NO_GC if gmap.gc_window is None else int(gmap.gc_window)
    header = _HEADER.pack(MAGIC, C, gmap.prior, window, gmap.frame_counter, len(gmap))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def load_map(path) -> GlobalMap:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MapTruncatedError(f"{path}: file shorter than the map header", -1)
    magic, C, prior, window, frame_counter, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        if magic[:7] == MAGIC[:7]:
            raise MapVersionError(f"{path}: unsupported map version {magic!r}")
        raise MapFormatError(f"{path}: not a map file (magic {magic!r})")
    rec = np.dtype([("key", "<i4", 3), ("last", "<u8"), ("alpha", "<f8", C)])
    body = data[_HEADER.size:]
    complete = len(body) // rec.itemsize
    if complete < count:
        raise MapTruncatedError(
            f"{path}: record {complete} of {count} is truncated", complete
        )
    if len(body) != count * rec.itemsize:
        raise MapFormatError(f"{path}: {len(body) - count * rec.itemsize} trailing bytes after record {count - 1}")
    records = np.frombuffer(body, dtype=rec, count=count)
    bad = ~np.all(records["alpha"] >= prior, axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise MapFormatError(f"{path}: record {i} holds an invalid concentration vector")
    gmap = GlobalMap(C, prior, None if window == _NO_GC else window)
    gmap.frame_counter = int(frame_counter)
    gmap.set_entries(records["key"].astype(np.int64), records["alpha"], records["last"].astype(np.int64))
    return gmap
