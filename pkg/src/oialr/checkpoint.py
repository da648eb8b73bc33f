"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"OIALR1\\0\\0"
    version    u32      1
    count      u32      number of tensors
    per tensor:
        name_len u32, name (UTF-8)
        role     u8     see ROLE_* constants
        ndim     u32
        dims     u64 * ndim
        payload  f64 * prod(dims), little-endian, row-major
    crc32      u32      IEEE CRC of every preceding byte
"""

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .exceptions import CheckpointError
from .factorization import LowRankWeight
from .nn import Activation, DenseLayer, SequentialModel
from .optim import AdamWState

MAGIC = b"OIALR1\x00\x00"
VERSION = 1

ROLE_WEIGHT = 0
ROLE_U = 1
ROLE_SIGMA = 2
ROLE_V = 3
ROLE_BIAS = 4
ROLE_OPT_M = 5
ROLE_OPT_V = 6
ROLE_OPT_STEP = 7
ROLE_NAMES = {0: "weight", 1: "U", 2: "sigma", 3: "V", 4: "bias", 5: "opt-m", 6: "opt-v", 7: "opt-step"}

_PARAM_ROLE = {"weight": ROLE_WEIGHT, "u": ROLE_U, "sigma": ROLE_SIGMA, "v": ROLE_V, "bias": ROLE_BIAS}
OPT_PREFIX = "opt/"


@dataclass
class Tensor:
    name: str
    role: int
    data: np.ndarray


def encode(tensors):
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for t in tensors:
        name = t.name.encode("utf-8")
        data = np.ascontiguousarray(t.data, dtype="<f8")
        parts.append(struct.pack("<I", len(name)))
        parts.append(name)
        parts.append(struct.pack("<BI", t.role, data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(raw):
    if len(raw) < len(MAGIC) + 12:
        raise CheckpointError("corrupt checkpoint: file too short")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("corrupt checkpoint: CRC mismatch")
    if body[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not an OIALR checkpoint (bad magic)")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", body, pos)
    pos += 8
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos : pos + nlen].decode("utf-8")
            pos += nlen
            role, ndim = struct.unpack_from("<BI", body, pos)
            pos += 5
            dims = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            size = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * size
            tensors.append(Tensor(name, role, data))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    if pos != len(body):
        raise CheckpointError("corrupt checkpoint: trailing bytes")
    return tensors


def save(path, tensors):
    """Write atomically (temp file in the same directory, then rename)."""
    raw = encode(tensors)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".ckpt")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())


def model_tensors(model, optimizer=None):
    """Serialize dense-layer parameters (and optimizer state) in network order."""
    out = []
    for layer in model.dense_layers:
        lid = layer.layer_id
        if layer.is_low_rank:
            w = layer.low_rank
            out += [Tensor(f"{lid}.u", ROLE_U, w.u), Tensor(f"{lid}.sigma", ROLE_SIGMA, w.sigma), Tensor(f"{lid}.v", ROLE_V, w.v)]
        else:
            out.append(Tensor(f"{lid}.weight", ROLE_WEIGHT, layer.weight))
        out.append(Tensor(f"{lid}.bias", ROLE_BIAS, layer.bias))
    if optimizer is not None:
        for name, st in optimizer.state.items():
            out += [
                Tensor(f"{OPT_PREFIX}{name}.m", ROLE_OPT_M, st.m),
                Tensor(f"{OPT_PREFIX}{name}.v", ROLE_OPT_V, st.v),
                Tensor(f"{OPT_PREFIX}{name}.t", ROLE_OPT_STEP, np.array([float(st.t)])),
            ]
    return out


def restore_model(tensors, activation="identity"):
    """Rebuild ``(model, optimizer_state)`` from checkpoint tensors.

    Activations are not stored; ``activation`` is placed between consecutive
    dense layers.
    """
    params = {}
    order = []
    opt = {}
    for t in tensors:
        if t.name.startswith(OPT_PREFIX):
            pname, field_ = t.name[len(OPT_PREFIX) :].rsplit(".", 1)
            opt.setdefault(pname, {})[field_] = t.data
            continue
        lid, kind = t.name.rsplit(".", 1)
        if _PARAM_ROLE.get(kind) != t.role:
            raise CheckpointError(f"tensor {t.name} has role {t.role}, expected {_PARAM_ROLE.get(kind)}")
        if lid not in params:
            params[lid] = {}
            order.append(lid)
        params[lid][kind] = t.data.copy()
    layers = []
    for i, lid in enumerate(order):
        p = params[lid]
        if "weight" in p:
            layer = DenseLayer(lid, p["weight"], p["bias"])
        else:
            lrw = LowRankWeight(p["u"], p["sigma"], p["v"])
            layer = DenseLayer(lid, np.zeros(lrw.full_shape), p["bias"])
            layer.to_low_rank(lrw)
        layers.append(layer)
        if i < len(order) - 1:
            layers.append(Activation(activation))
    model = SequentialModel(layers)
    model.converted = any(l.is_low_rank for l in model.dense_layers)
    state = {name: AdamWState(f["m"].copy(), f["v"].copy(), int(f["t"][0])) for name, f in opt.items()}
    return model, state


def save_model(path, model, optimizer=None):
    save(path, model_tensors(model, optimizer))


def load_model(path, activation="identity", optimizer=None):
    model, state = restore_model(load(path), activation)
    if optimizer is not None:
        optimizer.state = state
    return model
