"""Binary checkpoint container.

Layout (all little-endian):

    magic  "ASPDC1\\0" (7 bytes)
    u32    manifest entry count
    entry: u16 name length, UTF-8 name, u8 ndim, u32 x ndim dims,
           u64 byte offset into the blob area
    u64    blob area length
    blob   raw float32 data

Network hyperparameters ride along as "meta/" arrays so a checkpoint can
rebuild its own network; optimizer moments are stored under "opt/".
"""

import struct

import numpy as np

from .blocks import AspdcConfig
from .deblur import DeblurConfig, DeblurNet
from .reblur import ReblurConfig, ReblurNet

MAGIC = b"ASPDC1\x00"


class CheckpointError(RuntimeError):
    pass


def save(path, arrays):
    """Write name -> ndarray (cast to float32) in insertion order."""
    manifest = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append((name, arr32.shape, offset))
        blobs.append(arr32.tobytes())
        offset += arr32.nbytes
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        for name, shape, off in manifest:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape) if shape else b"")
            fh.write(struct.pack("<Q", off))
        fh.write(struct.pack("<Q", offset))
        for blob in blobs:
            fh.write(blob)
    return path


def load(path):
    """Read back name -> float32 ndarray, in manifest order."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:7]!r}")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    manifest = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos) if ndim else ()
        pos += 4 * ndim
        (off,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        manifest.append((name, shape, off))
    (blob_len,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    blob = data[pos : pos + blob_len]
    if len(blob) != blob_len:
        raise CheckpointError(f"{path}: truncated blob area")
    out = {}
    for name, shape, off in manifest:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        out[name] = arr.copy()
    return out


# ---------------------------------------------------------------------------
# network <-> checkpoint


def _meta_deblur(cfg):
    a = cfg.aspdc
    meta = {
        "meta/net_kind": np.array([1.0]),
        "meta/base_width": np.array([cfg.base_width]),
        "meta/n_modules": np.array([cfg.n_modules]),
        "meta/branch_enabled": np.array([float(b) for b in a.branch_enabled]),
        "meta/branch_dilations": np.array([float(d) for d in a.branch_dilations]),
        "meta/afim_enabled": np.array([float(a.afim_enabled)]),
    }
    if a.duplicate is not None:
        meta["meta/duplicate"] = np.array([float(a.duplicate[0]), float(a.duplicate[1])])
    return meta


def save_deblur(path, net, extra=None):
    arrays = dict(_meta_deblur(net.cfg))
    arrays.update(net.state())
    arrays.update(extra or {})
    return save(path, arrays)


def load_deblur(path):
    arrays = load(path)
    if arrays.get("meta/net_kind", np.array([0.0]))[0] != 1.0:
        raise CheckpointError(f"{path} is not a deblurring checkpoint")
    dup = arrays.get("meta/duplicate")
    cfg = DeblurConfig(
        base_width=int(arrays["meta/base_width"][0]),
        n_modules=int(arrays["meta/n_modules"][0]),
        aspdc=AspdcConfig(
            branch_enabled=tuple(bool(v) for v in arrays["meta/branch_enabled"]),
            branch_dilations=tuple(int(v) for v in arrays["meta/branch_dilations"]),
            duplicate=(int(dup[0]), int(dup[1])) if dup is not None else None,
            afim_enabled=bool(arrays["meta/afim_enabled"][0]),
        ),
    )
    net = DeblurNet(cfg, rng=np.random.default_rng(0))
    net.load_state(arrays)
    return net, arrays


def save_reblur(path, net, extra=None):
    arrays = {"meta/net_kind": np.array([2.0]),
              "meta/base_width": np.array([net.cfg.base_width])}
    arrays.update(net.state())
    arrays.update(extra or {})
    return save(path, arrays)


def load_reblur(path):
    arrays = load(path)
    if arrays.get("meta/net_kind", np.array([0.0]))[0] != 2.0:
        raise CheckpointError(f"{path} is not a reblurring checkpoint")
    net = ReblurNet(ReblurConfig(base_width=int(arrays["meta/base_width"][0])),
                    rng=np.random.default_rng(0))
    net.load_state(arrays)
    return net, arrays
