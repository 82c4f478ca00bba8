"""Desk-scale networks: MLP generator and discriminator plus a shared-trunk
encoder with a unit-normalized class-feature head and a content head.

Checkpoints are a little-endian float32 payload preceded by a JSON header
(length-prefixed with a 4-byte LE uint32) listing tensor names, shapes and
element offsets, plus enough architecture metadata to rebuild the bundle.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, FormatError, ValidationError
from .latent import LatentBatch

CHECKPOINT_MAGIC = "cdgan-checkpoint-v1"

_ACTIVATIONS = ("leaky_relu", "tanh")


@dataclass
class MLPSpec:
    """Layer widths (input first, output last) and activations."""

    widths: Sequence[int]
    hidden: str = "leaky_relu"
    slope: float = 0.2
    output: Optional[str] = None  # None = linear

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValidationError(
                f"an MLP needs at least one hidden layer, got widths {list(self.widths)}")
        if any(w < 1 for w in self.widths):
            raise ValidationError(f"widths must be positive, got {list(self.widths)}")
        if self.hidden not in _ACTIVATIONS:
            raise ValidationError(f"hidden activation must be one of {_ACTIVATIONS}")
        if self.output not in (None, "tanh", "leaky_relu"):
            raise ValidationError(f"unsupported output activation {self.output!r}")


def _he_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str):
        self.w = Tensor(_he_uniform(fan_in, fan_out, rng), requires_grad=True,
                        name=f"{name}.w")
        self.b = Tensor(np.zeros(fan_out, dtype=np.float32), requires_grad=True,
                        name=f"{name}.b")

    def forward(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    @property
    def params(self) -> list[Tensor]:
        return [self.w, self.b]


class MLP:
    def __init__(self, spec: MLPSpec, rng: np.random.Generator, name: str):
        self.spec = spec
        self.layers = [
            Linear(spec.widths[i], spec.widths[i + 1], rng, f"{name}.l{i}")
            for i in range(len(spec.widths) - 1)
        ]

    def _activate(self, x: Tensor, kind: Optional[str]) -> Tensor:
        if kind is None:
            return x
        if kind == "tanh":
            return ad.tanh(x)
        return ad.leaky_relu(x, self.spec.slope)

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for layer in self.layers[:-1]:
            h = self._activate(layer.forward(h), self.spec.hidden)
        return self._activate(self.layers[-1].forward(h), self.spec.output)

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params]


@dataclass
class EncoderOutput:
    """Class-related feature rows f (unit norm when normalization is on)
    and class-unrelated content rows e."""

    f: Tensor
    e: Tensor


@dataclass
class ModelBundle:
    g: MLP
    d: MLP
    trunk: MLP
    f_head: Linear
    e_head: Linear
    p: int
    d_z: int
    k: int
    d_f: int
    hidden: tuple[int, ...]
    normalize_f: bool = True

    @classmethod
    def build(cls, p: int, d_z: int, k: int, d_f: int,
              hidden: Sequence[int] = (256, 256),
              normalize_f: bool = True,
              rng: Optional[np.random.Generator] = None) -> "ModelBundle":
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = tuple(int(h) for h in hidden)
        g = MLP(MLPSpec([d_z + k, *hidden, p], output="tanh"), rng, "g")
        d = MLP(MLPSpec([p, *hidden, 1]), rng, "d")
        trunk = MLP(MLPSpec([p, *hidden], output="leaky_relu"), rng, "trunk")
        f_head = Linear(hidden[-1], d_f, rng, "f_head")
        e_head = Linear(hidden[-1], d_z, rng, "e_head")
        return cls(g=g, d=d, trunk=trunk, f_head=f_head, e_head=e_head,
                   p=p, d_z=d_z, k=k, d_f=d_f, hidden=hidden,
                   normalize_f=normalize_f)

    @property
    def g_params(self) -> list[Tensor]:
        return self.g.params

    @property
    def d_params(self) -> list[Tensor]:
        return self.d.params

    @property
    def e_params(self) -> list[Tensor]:
        return self.trunk.params + self.f_head.params + self.e_head.params

    @property
    def all_params(self) -> list[Tensor]:
        return self.g_params + self.d_params + self.e_params


def generator_forward(bundle: ModelBundle, latent: LatentBatch) -> Tensor:
    """Images in (-1, 1) from concatenated content code and one-hot class."""
    if latent.z.shape[1] != bundle.d_z or latent.c_onehot.shape[1] != bundle.k:
        raise ContractError(
            f"latent dims ({latent.z.shape[1]}, {latent.c_onehot.shape[1]}) do not "
            f"match bundle ({bundle.d_z}, {bundle.k})")
    x = ad.concatenate([Tensor(latent.z), Tensor(latent.c_onehot)], axis=1)
    return bundle.g.forward(x)


def discriminator_forward(bundle: ModelBundle, images: Tensor) -> Tensor:
    """Raw realness logits, one per row; squashing happens inside the losses."""
    if images.values.shape[1] != bundle.p:
        raise ContractError(
            f"image dim {images.values.shape[1]} != discriminator input {bundle.p}")
    return bundle.d.forward(images)


def encoder_forward(bundle: ModelBundle, images: Tensor) -> EncoderOutput:
    if images.values.shape[1] != bundle.p:
        raise ContractError(
            f"image dim {images.values.shape[1]} != encoder input {bundle.p}")
    h = bundle.trunk.forward(images)
    f = bundle.f_head.forward(h)
    if bundle.normalize_f:
        f = ad.l2_normalize(f)
    return EncoderOutput(f=f, e=bundle.e_head.forward(h))


# ---------------------------------------------------------------------------
# checkpoints


def _named_params(bundle: ModelBundle) -> list[Tensor]:
    return bundle.all_params


def save_checkpoint(bundle: ModelBundle, path) -> None:
    path = Path(path)
    tensors = []
    offset = 0
    chunks = []
    for p in _named_params(bundle):
        arr = np.ascontiguousarray(p.values, dtype="<f4")
        tensors.append({"name": p.name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes())
    header = {
        "format": CHECKPOINT_MAGIC,
        "arch": {
            "p": bundle.p, "d_z": bundle.d_z, "k": bundle.k, "d_f": bundle.d_f,
            "hidden": list(bundle.hidden), "normalize_f": bundle.normalize_f,
        },
        "tensors": tensors,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> ModelBundle:
    path = Path(path)
    with open(path, "rb") as fh:
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise FormatError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<I", raw_len)
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad JSON header: {exc}") from exc
        if header.get("format") != CHECKPOINT_MAGIC:
            raise FormatError(
                f"{path}: expected format {CHECKPOINT_MAGIC!r}, "
                f"found {header.get('format')!r}")
        data = np.frombuffer(fh.read(), dtype="<f4")

    arch = header["arch"]
    bundle = ModelBundle.build(
        p=arch["p"], d_z=arch["d_z"], k=arch["k"], d_f=arch["d_f"],
        hidden=arch["hidden"], normalize_f=arch["normalize_f"],
        rng=np.random.default_rng(0))
    by_name = {p.name: p for p in _named_params(bundle)}
    for entry in header["tensors"]:
        p = by_name.get(entry["name"])
        if p is None:
            raise FormatError(f"{path}: unknown tensor {entry['name']!r}")
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        chunk = data[entry["offset"]:entry["offset"] + size]
        if chunk.size != size or shape != p.values.shape:
            raise FormatError(
                f"{path}: tensor {entry['name']!r} shape {shape} does not fit")
        p.values = chunk.reshape(shape).astype(np.float32)
    return bundle
