"""Readers and writers for the fvecs / bvecs / ivecs formats.

Each record is a little-endian int32 dimension ``d`` followed by ``d``
elements (float32, uint8 or int32).
"""
import numpy as np

_ELEM = {"fvecs": np.dtype("<f4"), "bvecs": np.dtype("u1"), "ivecs": np.dtype("<i4")}


class VecFormatError(ValueError):
    pass


def _kind(path, kind):
    if kind is not None:
        return kind
    for k in _ELEM:
        if str(path).endswith("." + k):
            return k
    raise VecFormatError(f"cannot infer vector format from {path!r}")


def read_vecs(path, kind=None, count=None):
    """Read a whole file into an (n, d) array; bvecs is widened to float32."""
    kind = _kind(path, kind)
    elem = _ELEM[kind]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        return np.zeros((0, 0), dtype=np.float32 if kind != "ivecs" else np.int32)
    if raw.size < 4:
        raise VecFormatError("truncated header")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise VecFormatError(f"bad dimension {d}")
    stride = 4 + d * elem.itemsize
    if raw.size % stride:
        raise VecFormatError("file size is not a multiple of the record size (nonuniform d?)")
    n = raw.size // stride
    rec = raw.reshape(n, stride)
    dims = rec[:, :4].copy().view("<i4").ravel()
    if np.any(dims != d):
        raise VecFormatError("nonuniform dimension across records")
    if count is not None:
        rec = rec[:count]
    body = np.ascontiguousarray(rec[:, 4:]).view(elem).reshape(len(rec), d)
    if kind == "ivecs":
        return body.astype(np.int32)
    return body.astype(np.float32)


def write_vecs(path, array, kind=None):
    kind = _kind(path, kind)
    elem = _ELEM[kind]
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, d = arr.shape
    out = np.empty((n, 4 + d * elem.itemsize), dtype=np.uint8)
    out[:, :4] = np.full((n, 1), d, dtype="<i4").view(np.uint8)
    out[:, 4:] = np.ascontiguousarray(arr.astype(elem)).view(np.uint8).reshape(n, -1)
    out.tofile(path)
