"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"NABUCKPT" | u32 version | u32 len, config hash (ascii hex)
    | u32 len, config json (utf-8) | u32 record count
    | records: u16 name len, name, u8 itemsize, u8 ndim, u32 dims..., raw payload
    | 32-byte sha256 of everything before it
"""

import hashlib
import struct

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .errors import ConfigHashMismatch, CorruptCheckpoint

MAGIC = b"NABUCKPT"
VERSION = 1
_DTYPES = {4: "<f4", 8: "<f8"}


def _blob(b):
    return struct.pack("<I", len(b)) + b


def checkpoint_bytes(store, cfg):
    parts = [MAGIC, struct.pack("<I", VERSION), _blob(cfg.digest().encode()),
             _blob(cfg.to_json().encode()), struct.pack("<I", len(store))]
    for name, p in store.items():
        data = np.ascontiguousarray(p.data)
        itemsize = data.dtype.itemsize
        name_b = name.encode()
        parts.append(struct.pack("<H", len(name_b)) + name_b)
        parts.append(struct.pack("<BB", itemsize, data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.astype(_DTYPES[itemsize], copy=False).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(store, cfg, path):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(store, cfg))


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptCheckpoint("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(buf, cfg=None):
    if len(buf) < len(MAGIC) + 32 or not buf.startswith(MAGIC):
        raise CorruptCheckpoint("not a checkpoint file")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint("checksum mismatch (truncated or modified file)")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    stored_hash = r.take(n).decode()
    (n,) = r.unpack("<I")
    stored_cfg = ModelConfig.from_json(r.take(n).decode())
    if cfg is not None and cfg.digest() != stored_hash:
        raise ConfigHashMismatch("checkpoint was written for a different model configuration")
    if stored_cfg.digest() != stored_hash:
        raise CorruptCheckpoint("embedded config does not match its hash")
    (count,) = r.unpack("<I")
    store = ad.ParameterStore()
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        itemsize, ndim = r.unpack("<BB")
        if itemsize not in _DTYPES:
            raise CorruptCheckpoint(f"bad item size {itemsize}")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) * itemsize
        data = np.frombuffer(r.take(size), dtype=_DTYPES[itemsize]).reshape(shape)
        t = ad.Tensor(0.0, requires_grad=True, name=name)
        # keep the stored width regardless of the process-wide dtype
        t.data = data.astype(data.dtype.newbyteorder("="), copy=True)
        store.params[name] = t
    if r.pos != len(body):
        raise CorruptCheckpoint("trailing bytes after records")
    return stored_cfg, store


def load_checkpoint(path, cfg=None):
    """Returns ``(ModelConfig, ParameterStore)``; with ``cfg`` given, its hash
    must match the one the checkpoint was written with."""
    with open(path, "rb") as f:
        return parse_checkpoint(f.read(), cfg)


def load_model(path, cfg=None):
    from .model import NabuModel

    stored_cfg, store = load_checkpoint(path, cfg)
    model = NabuModel(stored_cfg)
    model.store.load_state_dict(store.state_dict())
    return model
