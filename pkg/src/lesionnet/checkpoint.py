"""Versioned checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the raw little-endian bytes of every named tensor back to back. The
header's ``digest`` is the SHA-256 of the header (with ``digest`` blanked)
followed by the tensor payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import ArchConfig, build_model
from .schema import LesionSchema

MAGIC = b"LNCKPT\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arch: ArchConfig
    schema: LesionSchema
    state: dict[str, torch.Tensor]
    optimizer_state: dict | None = None
    epoch: int = 0
    config: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION
    digest: str | None = None

    @property
    def variant(self):
        return self.arch.variant

    def build(self) -> torch.nn.Module:
        model = build_model(self.arch)
        model.load_state_dict(self.state)
        model.eval()
        return model

    @classmethod
    def from_model(cls, model, schema, optimizer=None, epoch=0, config=None) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        opt = optimizer.state_dict() if optimizer is not None else None
        return cls(model.arch, schema, state, opt, epoch, dict(config or {}))


def state_digest(state: dict[str, torch.Tensor]) -> str:
    """Order-independent SHA-256 over parameter names, shapes and bytes."""
    h = hashlib.sha256()
    for k in sorted(state):
        a = state[k].detach().cpu().contiguous().numpy()
        h.update(k.encode())
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _tensor_items(ckpt: Checkpoint):
    for k, v in ckpt.state.items():
        yield "model/" + k, v
    if ckpt.optimizer_state is not None:
        for idx, st in ckpt.optimizer_state["state"].items():
            for key, v in st.items():
                yield f"optim/{idx}/{key}", torch.as_tensor(v)


def _to_le_bytes(t: torch.Tensor) -> tuple[bytes, str]:
    a = t.detach().cpu().contiguous().numpy()
    a = a.astype(a.dtype.newbyteorder("<"), copy=False)
    return a.tobytes(), a.dtype.str


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    index, chunks, offset = [], [], 0
    for name, t in _tensor_items(ckpt):
        raw, dtype = _to_le_bytes(t)
        index.append({"name": name, "dtype": dtype, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    opt_meta = None
    if ckpt.optimizer_state is not None:
        opt_meta = {"param_groups": ckpt.optimizer_state["param_groups"]}
    header = {
        "format_version": ckpt.version,
        "variant": ckpt.arch.variant.value,
        "arch": ckpt.arch.to_dict(),
        "schema": ckpt.schema.to_dict(),
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "optimizer": opt_meta,
        "tensors": index,
        "digest": "",
    }
    header["digest"] = _digest(header, payload)
    ckpt.digest = header["digest"]
    hbytes = json.dumps(header, sort_keys=True, default=_json_default).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    try:
        (hlen,) = struct.unpack("<Q", blob[len(MAGIC): len(MAGIC) + 8])
        start = len(MAGIC) + 8
        header = json.loads(blob[start: start + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupted checkpoint header in {path}: digest cannot be verified") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    payload = blob[start + hlen:]
    if _digest(header, payload) != header.get("digest"):
        raise CheckpointError(f"digest mismatch in {path}: file is corrupted")

    state: dict[str, torch.Tensor] = {}
    optim: dict[int, dict] = {}
    for e in header["tensors"]:
        raw = payload[e["offset"]: e["offset"] + e["nbytes"]]
        a = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
        t = torch.from_numpy(a)
        kind, _, rest = e["name"].partition("/")
        if kind == "model":
            state[rest] = t
        else:
            idx, _, key = rest.partition("/")
            optim.setdefault(int(idx), {})[key] = t
    opt_state = None
    if header.get("optimizer") is not None:
        groups = header["optimizer"]["param_groups"]
        for g in groups:
            if "betas" in g:
                g["betas"] = tuple(g["betas"])
        opt_state = {"state": optim, "param_groups": groups}
    return Checkpoint(
        ArchConfig.from_dict(header["arch"]),
        LesionSchema.from_dict(header["schema"]),
        state,
        opt_state,
        int(header.get("epoch", 0)),
        header.get("config", {}),
        version,
        header["digest"],
    )


def _digest(header: dict, payload: bytes) -> str:
    h = dict(header)
    h["digest"] = ""
    hb = json.dumps(h, sort_keys=True, default=_json_default).encode("utf-8")
    return hashlib.sha256(hb + payload).hexdigest()


def _json_default(o):
    if isinstance(o, torch.Tensor):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
