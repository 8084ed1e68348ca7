"""Dense linear algebra helpers, seeded random streams and a finite-difference oracle.

Everything in the core runs in float64. Matrices are plain ``numpy.ndarray``
objects; the helpers here only add shape checking and finiteness validation.
"""
from __future__ import annotations

import contextlib
import hashlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64


def as_matrix(data, cols: int | None = None) -> np.ndarray:
    """Return ``data`` as a C-contiguous 2-D float64 array."""
    a = np.ascontiguousarray(data, dtype=DTYPE)
    if a.ndim == 1:
        a = a.reshape(1, -1) if cols is None else a.reshape(-1, cols)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def check_finite(a: np.ndarray, name: str = "array") -> None:
    """Raise ``FloatingPointError`` if ``a`` holds a NaN or infinity."""
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise FloatingPointError(f"{name} has a non-finite entry at index {tuple(int(i) for i in bad)}")


@contextlib.contextmanager
def deterministic_mode(enabled: bool = True) -> Iterator[None]:
    """Pin BLAS to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def _derive_key(seed: int, path: Sequence[str]) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for label in path:
        h.update(b"\x00")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """Counter-based random stream (Philox) keyed by a seed and a label path.

    Normal draws use Box-Muller on uniform pairs so each call consumes a
    fixed number of counter steps, independent of the values produced.
    ``split`` derives an independent child stream from a label; the child
    depends only on ``(seed, path)``, never on how much the parent was used.
    """

    def __init__(self, seed: int, path: Sequence[str] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.path = tuple(str(p) for p in path)
        self._bitgen = np.random.Philox(key=_derive_key(seed, self.path))
        self._gen = np.random.Generator(self._bitgen)

    def split(self, label) -> "RngStream":
        return RngStream(self.seed, self.path + (str(label),))

    def uniform(self, size) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        u = self._gen.random(size)
        # random() yields [0, 1); fold the single excluded endpoint inwards
        return np.where(u == 0.0, 2.0**-53, u)

    def standard_normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniform((2, pairs))
        r = np.sqrt(-2.0 * np.log(u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of uniform keys: fixed consumption of n draws
        keys = self._gen.random(n)
        return np.argsort(keys, kind="stable")

    def get_state(self) -> dict:
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "path": list(self.path),
            "counter": [int(c) for c in st["state"]["counter"]],
            "buffer": [int(c) for c in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        stream = cls(state["seed"], state["path"])
        st = stream._bitgen.state
        st["state"]["counter"] = np.array(state["counter"], dtype=np.uint64)
        st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
        st["buffer_pos"] = state["buffer_pos"]
        st["has_uint32"] = state["has_uint32"]
        st["uinteger"] = state["uinteger"]
        stream._bitgen.state = st
        return stream

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path!r})"


def sample_std_gaussian(rng: RngStream, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return rng.standard_normal(n)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    x = np.array(x, dtype=DTYPE, copy=True)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"f is not finite around coordinate {i} (f(x+h)={fp}, f(x-h)={fm})")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
