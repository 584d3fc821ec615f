"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CRVAE"  u8 version
    u32 n  + n bytes UTF-8 JSON   {"config": TrainConfig, "meta": bundle.meta, "layout": {...}}
    u32 record count, then per record:
        u32 n + name ("group.param")  u8 ndim  u32 dims...  float32 values (C order)
    u8 optimizer flag; if 1, per parameter group (in GROUPS order):
        u32 n + group name  f64 lr  f64 beta1  f64 beta2  f64 eps  u64 t
        u32 slot count, then m and v records for every slot (same record encoding)
    8-byte blake2b digest of every preceding byte

LSTM weights use gate order (i, f, g, o) along their last axis; latent blocks are
flattened channel-major then row-major. Both are recorded under "layout".
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..diffcore import GATE_ORDER, AdamState, Tensor
from ..networks import GROUPS, ModelBundle, init_params
from .config import TrainConfig

MAGIC = b"CRVAE"
VERSION = 1
CHECKSUM_BYTES = 8
LAYOUT = {"lstm_gate_order": "".join(GATE_ORDER), "block_flatten": "channel-major,row-major",
          "dtype": "float32-le"}


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint."""


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ShapeError(CheckpointError):
    pass


class VariantMismatchError(CheckpointError):
    pass


def _checksum(buf: bytes) -> bytes:
    return hashlib.blake2b(buf, digest_size=CHECKSUM_BYTES).digest()


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _record(name: str, arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f4")
    return (_str(name) + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
            + a.tobytes())


def encode_checkpoint(bundle: ModelBundle, config: TrainConfig, include_optimizer: bool = True) -> bytes:
    if bundle.spec.to_dict() != config.network.to_dict():
        raise CheckpointError("bundle network spec differs from config.network")
    header = json.dumps({"config": config.to_dict(), "meta": bundle.meta, "layout": LAYOUT},
                        sort_keys=True, separators=(",", ":"))
    out = [MAGIC, struct.pack("<B", VERSION), _str(header)]
    named = bundle.named_params()
    out.append(struct.pack("<I", len(named)))
    out.extend(_record(n, t.data) for n, t in named)
    if include_optimizer and bundle.optim:
        out.append(b"\x01")
        for g in GROUPS:
            st = bundle.optim[g]
            out.append(_str(g) + struct.pack("<ddddQ", st.lr, st.beta1, st.beta2, st.eps, st.t))
            out.append(struct.pack("<I", len(st.m)))
            for k, (m, v) in enumerate(zip(st.m, st.v)):
                out.append(_record(f"{g}.m{k}", m))
                out.append(_record(f"{g}.v{k}", v))
    else:
        out.append(b"\x00")
    body = b"".join(out)
    return body + _checksum(body)


def save_checkpoint(bundle: ModelBundle, config: TrainConfig, path, include_optimizer: bool = True) -> None:
    data = encode_checkpoint(bundle, config, include_optimizer)
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise OSError(f"writing checkpoint {path}: {e}") from e


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: unexpected end of data at byte {self.pos}")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{self.source}: invalid UTF-8 string before byte {self.pos}") from None

    def record(self) -> tuple[str, np.ndarray]:
        name = self.string()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        return name, arr


def decode_checkpoint(buf: bytes, source: str = "<bytes>",
                      expect: TrainConfig | None = None) -> tuple[ModelBundle, TrainConfig]:
    if len(buf) < len(MAGIC) + 1 + CHECKSUM_BYTES or buf[:len(MAGIC)] != MAGIC:
        if buf[:len(MAGIC)] == MAGIC[:len(buf)]:
            raise ChecksumError(f"{source}: file truncated ({len(buf)} bytes)")
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    body, digest = buf[:-CHECKSUM_BYTES], buf[-CHECKSUM_BYTES:]
    if _checksum(body) != digest:
        raise ChecksumError(f"{source}: checksum mismatch (file truncated or corrupted)")
    r = _Reader(body, source)
    r.take(len(MAGIC))
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise VersionError(f"{source}: checkpoint version {version}, this build reads version {VERSION}")
    header = json.loads(r.string())
    config = TrainConfig.from_dict(header["config"])
    if expect is not None and expect.network.variant != config.network.variant:
        raise VariantMismatchError(f"{source}: checkpoint holds variant {config.network.variant!r}, "
                                   f"config expects {expect.network.variant!r}")
    if expect is not None and expect.network.to_dict() != config.network.to_dict():
        raise ShapeError(f"{source}: network spec differs from the expected config")

    # template from the config fixes the expected names and shapes
    template = init_params(config.network, 0, np.float32)
    expected = {f"{g}.{n}": t.shape for g, grp in template.items() for n, t in grp.items()}
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise ShapeError(f"{source}: {count} parameter records, config implies {len(expected)}")
    seen = set()
    for _ in range(count):
        name, arr = r.record()
        if name in seen:
            raise ShapeError(f"{source}: duplicate parameter record {name!r}")
        seen.add(name)
        if name not in expected:
            raise ShapeError(f"{source}: unexpected parameter {name!r} for variant {config.network.variant!r}")
        if arr.shape != expected[name]:
            raise ShapeError(f"{source}: {name} has shape {arr.shape}, config implies {expected[name]}")
        g, n = name.split(".", 1)
        template[g][n] = Tensor(arr, requires_grad=True)
    bundle = ModelBundle(config.network, template, meta=header.get("meta", {"steps": 0, "disc_updates": 0}))

    (flag,) = r.unpack("<B")
    if flag == 1:
        for _ in GROUPS:
            g = r.string()
            if g not in GROUPS:
                raise CheckpointError(f"{source}: unknown optimizer group {g!r}")
            lr, b1, b2, eps, t = r.unpack("<ddddQ")
            (slots,) = r.unpack("<I")
            params = bundle.params([g])
            if slots != len(params):
                raise ShapeError(f"{source}: optimizer group {g} has {slots} slots for {len(params)} parameters")
            m, v = [], []
            for p in params:
                _, mk = r.record()
                _, vk = r.record()
                if mk.shape != p.shape or vk.shape != p.shape:
                    raise ShapeError(f"{source}: optimizer moments for {g} do not match parameter shape {p.shape}")
                m.append(mk.copy())
                v.append(vk.copy())
            bundle.optim[g] = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, m=m, v=v, t=t)
    elif flag == 0:
        bundle.reset_optimizers(config.lr)
    else:
        raise CheckpointError(f"{source}: bad optimizer flag {flag} at byte {r.pos - 1}")
    if r.pos != len(body):
        raise CheckpointError(f"{source}: {len(body) - r.pos} unread bytes at byte {r.pos}")
    return bundle, config


def load_checkpoint(path, expect: TrainConfig | None = None) -> tuple[ModelBundle, TrainConfig]:
    p = Path(path)
    return decode_checkpoint(p.read_bytes(), str(p), expect)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
