"""Named parameters, initialization schemes, seeded RNG streams, checkpoints."""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .tensor import Tensor


class Parameter(Tensor):
    """A named leaf tensor that always tracks gradients."""

    __slots__ = ("init_scheme",)

    def __init__(self, data, name: str, init_scheme: str = "explicit"):
        super().__init__(data, requires_grad=True, name=name)
        self.init_scheme = init_scheme


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """A generator keyed by ``(seed, name)``.

    Distinct names give statistically independent streams; the same pair
    always yields the same stream, on any platform.
    """
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "little")])


def semi_orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Matrix whose smaller-side Gram matrix is the identity.

    For rows >= cols the columns are orthonormal (M^T M = I), otherwise the
    rows are (M M^T = I). Drawn Haar-uniformly via QR of a Gaussian matrix
    with the usual sign fix on R's diagonal.
    """
    flip = rows < cols
    r, c = (cols, rows) if flip else (rows, cols)
    q, rr = np.linalg.qr(rng.standard_normal((r, c)))
    d = np.diag(rr)
    q = q * np.where(d == 0, 1.0, np.sign(d))
    return np.ascontiguousarray(q.T) if flip else q


def uniform_fanin(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def weight(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Parameter:
    """Weight matrix, stored (fan_in, fan_out), semi-orthogonal at init."""
    return Parameter(semi_orthogonal(rng, fan_in, fan_out), name, "semi-orthogonal")


def projection(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Parameter:
    """Policy projection, uniform fan-in init."""
    return Parameter(uniform_fanin(rng, fan_in, (fan_in, fan_out)), name, "uniform-fanin")


def bias(n: int, name: str) -> Parameter:
    return Parameter(np.zeros(n), name, "zeros")


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all integers little-endian):
#   magic   b"APCKPT1\n"
#   u32     parameter count
#   then per parameter, in the order given at save time:
#   u16     name length, followed by that many UTF-8 bytes
#   u8      rank
#   u32[r]  extents
#   f64[n]  row-major values, little-endian (bit-exact round trip)

_MAGIC = b"APCKPT1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params) -> None:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate parameter names in checkpoint")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            raw = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", p.data.ndim))
            for e in p.data.shape:
                fh.write(struct.pack("<I", e))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(
            f"bad checkpoint magic: expected {_MAGIC!r}, got {blob[:len(_MAGIC)]!r}"
        )
    off = len(_MAGIC)

    def take(fmt):
        nonlocal off
        n = struct.calcsize(fmt)
        if off + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, off)
        off += n
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = take("<B")
        shape = tuple(take("<" + "I" * rank)) if rank else ()
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if off + nbytes > len(blob):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        out[name] = arr.astype(np.float64)
        off += nbytes
    if off != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return out


def load_into(path, params) -> None:
    """Restore saved values into live parameters, matching by name."""
    saved = load_checkpoint(path)
    for p in params:
        if p.name not in saved:
            raise CheckpointError(f"checkpoint is missing parameter {p.name!r}")
        arr = saved[p.name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {p.name!r}: saved {arr.shape}, live {p.data.shape}"
            )
        p.data = arr.copy()
