"""The shared two-layer transformation network and its exact gradients.

T(v) = sigmoid(W2 @ tanh(W1 @ v + b1) + b2), computed in float64 with
closed-form reverse-mode derivatives (no autodiff framework). Includes the
Adam optimizer and a binary model file format. ``IdentityTransform`` stands
in for T wherever the untrained identity baseline is wanted.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Union

import numpy as np

from .errors import CodedError

MODEL_MAGIC = b"A2CM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class IdentityTransform:
    """Marker for the identity mapping baseline (no learned parameters)."""


IDENTITY = IdentityTransform()


@dataclass
class NetworkParams:
    """Weights and biases: W1 (h1 x d0), b1 (h1), W2 (d x h1), b2 (d)."""

    W1: np.ndarray = field(repr=False)
    b1: np.ndarray = field(repr=False)
    W2: np.ndarray = field(repr=False)
    b2: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        if self.W1.ndim != 2 or self.W2.ndim != 2:
            raise CodedError("E_SHAPE_MISMATCH", "W1 and W2 must be matrices")
        h1, d0 = self.W1.shape
        d, h1b = self.W2.shape
        if h1b != h1 or self.b1.shape != (h1,) or self.b2.shape != (d,):
            raise CodedError("E_SHAPE_MISMATCH", "parameter block shapes are inconsistent")
        if min(d0, h1, d) < 1:
            raise CodedError("E_BAD_DIM", f"dims must be positive, got d0={d0} h1={h1} d={d}")
        for block in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(block)):
                raise CodedError("E_BAD_DIM", "parameters contain non-finite values")

    @property
    def d0(self) -> int:
        return self.W1.shape[1]

    @property
    def h1(self) -> int:
        return self.W1.shape[0]

    @property
    def d(self) -> int:
        return self.W2.shape[0]

    def blocks(self):
        return (self.W1, self.b1, self.W2, self.b2)


Transform = Union[NetworkParams, IdentityTransform]


def init_network(d0: int, h1: int, d: int, seed: int) -> NetworkParams:
    """Fan-scaled symmetric uniform weights, zero biases; deterministic per seed."""
    if min(d0, h1, d) < 1:
        raise CodedError("E_BAD_DIM", f"dims must be positive, got d0={d0} h1={h1} d={d}")
    rng = np.random.default_rng(seed)
    bound1 = np.sqrt(6.0 / (d0 + h1))
    bound2 = np.sqrt(6.0 / (h1 + d))
    return NetworkParams(
        W1=rng.uniform(-bound1, bound1, size=(h1, d0)),
        b1=np.zeros(h1),
        W2=rng.uniform(-bound2, bound2, size=(d, h1)),
        b2=np.zeros(d),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split form avoids overflow in exp for large |z|.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ForwardCache(NamedTuple):
    """Retained activations: input, hidden pre/post-activation, output value."""

    v: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    out: np.ndarray


def forward_batch(params: NetworkParams, V: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Apply T to the rows of V (n x d0). Output components lie in (0, 1)
    up to float64 saturation for |pre-activation| beyond ~37."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != params.d0:
        raise CodedError("E_DIM_MISMATCH", f"input shape {V.shape} incompatible with d0={params.d0}")
    if not np.all(np.isfinite(V)):
        raise CodedError("E_NONFINITE_INPUT", "input contains non-finite values")
    z1 = V @ params.W1.T + params.b1
    a1 = np.tanh(z1)
    z2 = a1 @ params.W2.T + params.b2
    out = _sigmoid(z2)
    return out, ForwardCache(V, z1, a1, out)


def forward(params: NetworkParams, v: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Single-vector forward pass; see :func:`forward_batch`."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise CodedError("E_DIM_MISMATCH", f"expected a vector, got shape {v.shape}")
    out, cache = forward_batch(params, v[None, :])
    return out[0], ForwardCache(v, cache.z1[0], cache.a1[0], cache.out[0])


def backward_batch(
    params: NetworkParams, cache: ForwardCache, upstream: np.ndarray
) -> tuple[NetworkParams, np.ndarray]:
    """Gradients of sum_i upstream_i . out_i for a batched cache.

    Returns parameter gradients (summed over rows) and per-row input
    gradients. Uses tanh' = 1 - tanh^2 and sigmoid' = s(1 - s).
    """
    U = np.asarray(upstream, dtype=np.float64)
    if U.shape != cache.out.shape:
        raise CodedError("E_DIM_MISMATCH", f"upstream shape {U.shape} != output shape {cache.out.shape}")
    dz2 = U * cache.out * (1.0 - cache.out)
    gW2 = dz2.T @ cache.a1
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ params.W2
    dz1 = da1 * (1.0 - cache.a1 ** 2)
    gW1 = dz1.T @ cache.v
    gb1 = dz1.sum(axis=0)
    dV = dz1 @ params.W1
    return NetworkParams(gW1, gb1, gW2, gb2), dV


def backward(
    params: NetworkParams, cache: ForwardCache, upstream: np.ndarray
) -> tuple[NetworkParams, np.ndarray]:
    """Single-vector companion of :func:`backward_batch`."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (params.d,):
        raise CodedError("E_DIM_MISMATCH", f"upstream shape {upstream.shape}, expected ({params.d},)")
    batch_cache = ForwardCache(cache.v[None, :], cache.z1[None, :], cache.a1[None, :], cache.out[None, :])
    grads, dV = backward_batch(params, batch_cache, upstream[None, :])
    return grads, dV[0]


def transform_vectors(transform: Transform, V: np.ndarray) -> np.ndarray:
    """Apply a transform to the rows of V; the identity passes V through."""
    if isinstance(transform, IdentityTransform):
        V = np.asarray(V, dtype=np.float64)
        if not np.all(np.isfinite(V)):
            raise CodedError("E_NONFINITE_INPUT", "input contains non-finite values")
        return V
    out, _ = forward_batch(transform, V)
    return out


# --- parameter-vector helpers (finite differences, optimizer internals) ---

def params_to_vector(params: NetworkParams) -> np.ndarray:
    return np.concatenate([block.ravel() for block in params.blocks()])

def params_from_vector(template: NetworkParams, vec: np.ndarray) -> NetworkParams:
    blocks = []
    offset = 0
    for block in template.blocks():
        blocks.append(vec[offset : offset + block.size].reshape(block.shape).copy())
        offset += block.size
    if offset != vec.size:
        raise CodedError("E_SHAPE_MISMATCH", f"vector of size {vec.size}, expected {offset}")
    return NetworkParams(*blocks)

def params_zeros_like(params: NetworkParams) -> NetworkParams:
    return NetworkParams(*(np.zeros_like(b) for b in params.blocks()))

def params_squared_norm(params: NetworkParams) -> float:
    return float(sum(np.sum(b * b) for b in params.blocks()))

def params_add_scaled(base: NetworkParams, other: NetworkParams, scale: float) -> NetworkParams:
    return NetworkParams(*(b + scale * o for b, o in zip(base.blocks(), other.blocks())))


# --- Adam ---

@dataclass
class AdamState:
    """Bias-corrected Adam accumulators; moment shapes mirror the parameters."""

    step: int
    m: NetworkParams
    v: NetworkParams
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step < 0 or self.lr <= 0 or self.eps <= 0:
            raise ValueError("step must be >= 0 and lr, eps positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def init_adam(params: NetworkParams, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(step=0, m=params_zeros_like(params), v=params_zeros_like(params),
                     lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(
    params: NetworkParams, state: AdamState, grads: NetworkParams
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update; pure in all arguments."""
    for p, g, m in zip(params.blocks(), grads.blocks(), state.m.blocks()):
        if p.shape != g.shape or p.shape != m.shape:
            raise CodedError("E_SHAPE_MISMATCH", "gradient/moment shapes do not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.blocks(), grads.blocks(), state.m.blocks(), state.v.blocks()):
        m_t = b1 * m + (1.0 - b1) * g
        v_t = b2 * v + (1.0 - b2) * g * g
        m_hat = m_t / (1.0 - b1 ** t)
        v_hat = v_t / (1.0 - b2 ** t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m_t)
        new_v.append(v_t)
    return (
        NetworkParams(*new_p),
        replace(state, step=t, m=NetworkParams(*new_m), v=NetworkParams(*new_v)),
    )


# --- model file format ---
# magic "A2CM" | u32 version | u32 d0,h1,d | f64-LE row-major W1,b1,W2,b2
# | u32 metadata length | metadata JSON (UTF-8) | u32 CRC32 of everything before it


def serialize_model(params: NetworkParams, meta: dict) -> bytes:
    body = bytearray()
    body += MODEL_MAGIC
    body += struct.pack("<IIII", MODEL_VERSION, params.d0, params.h1, params.d)
    for block in params.blocks():
        body += np.ascontiguousarray(block, dtype="<f8").tobytes()
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(meta_bytes))
    body += meta_bytes
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    return bytes(body)


def deserialize_model(data: bytes) -> tuple[NetworkParams, dict]:
    if len(data) < 8:
        raise CodedError("E_CORRUPT", f"stream of {len(data)} bytes is too short")
    if data[:4] != MODEL_MAGIC:
        raise CodedError("E_CORRUPT", f"bad magic bytes {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != MODEL_VERSION:
        raise CodedError("E_VERSION", f"unknown model format version {version}")
    if len(data) < 20:
        raise CodedError("E_CORRUPT", "stream truncated inside the dimension header")
    d0, h1, d = struct.unpack_from("<III", data, 8)
    if min(d0, h1, d) < 1:
        raise CodedError("E_CORRUPT", f"non-positive dims d0={d0} h1={h1} d={d}")
    n_floats = h1 * d0 + h1 + d * h1 + d
    meta_len_at = 20 + 8 * n_floats
    if len(data) < meta_len_at + 4:
        raise CodedError("E_CORRUPT", "stream truncated inside the parameter block")
    (meta_len,) = struct.unpack_from("<I", data, meta_len_at)
    total = meta_len_at + 4 + meta_len + 4
    if len(data) != total:
        raise CodedError("E_CORRUPT", f"stream of {len(data)} bytes, expected {total}")
    (crc_stored,) = struct.unpack_from("<I", data, total - 4)
    if zlib.crc32(data[: total - 4]) != crc_stored:
        raise CodedError("E_CORRUPT", "checksum mismatch")
    flat = np.frombuffer(data, dtype="<f8", count=n_floats, offset=20).astype(np.float64)
    shapes = [(h1, d0), (h1,), (d, h1), (d,)]
    blocks = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        blocks.append(flat[offset : offset + size].reshape(shape).copy())
        offset += size
    try:
        meta = json.loads(data[meta_len_at + 4 : meta_len_at + 4 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CodedError("E_CORRUPT", "metadata block is not valid JSON") from None
    return NetworkParams(*blocks), meta


def save_model(params: NetworkParams, meta: dict, path) -> None:
    from .fileio import atomic_write_bytes

    atomic_write_bytes(path, serialize_model(params, meta))


def load_model(path) -> tuple[NetworkParams, dict]:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
