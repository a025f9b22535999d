"""Compact BERT-style encoder written functionally over a dict of named tensors.

Parameters live in a plain ``dict[str, torch.Tensor]`` so that checkpoints,
freezing and gradient checks can address every tensor by name. Gradients
come from torch autograd.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import truncnorm

from .errors import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigurationError,
)
from .tokenizer import TokenSequence

Params = dict  # name -> torch.Tensor

INIT_STD = 0.02
_TRUNC = 2.0
# Underlying normal scale so the +-2 sigma truncated draw has std exactly INIT_STD.
_INIT_SCALE = INIT_STD / truncnorm.std(-_TRUNC, _TRUNC)
_MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_seq_len: int = 128
    hidden_dim: int = 128
    num_layers: int = 4
    num_heads: int = 4
    ffn_dim: int = 512
    dropout_rate: float = 0.1
    layer_norm_epsilon: float = 1e-12

    def __post_init__(self):
        if self.vocab_size <= 0 or self.num_layers <= 0 or self.num_heads <= 0:
            raise ConfigurationError(f"invalid model config {self}")
        if self.hidden_dim <= 0 or self.hidden_dim % self.num_heads:
            raise ConfigurationError("hidden_dim must be a positive multiple of num_heads")
        if self.max_seq_len < 5:
            raise ConfigurationError("max_seq_len must be at least 5")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        if not self.layer_norm_epsilon > 0:
            raise ConfigurationError("layer_norm_epsilon must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; this order is also the checkpoint order."""
    h, f, v = config.hidden_dim, config.ffn_dim, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (v, h),
        "embeddings.position": (config.max_seq_len, h),
        "embeddings.segment": (2, h),
        "embeddings.norm.scale": (h,),
        "embeddings.norm.shift": (h,),
    }
    for i in range(config.num_layers):
        p = f"layers.{i}."
        for proj in ("query", "key", "value", "output"):
            shapes[p + f"attention.{proj}.weight"] = (h, h)
            shapes[p + f"attention.{proj}.bias"] = (h,)
        shapes[p + "attention.norm.scale"] = (h,)
        shapes[p + "attention.norm.shift"] = (h,)
        shapes[p + "ffn.inner.weight"] = (h, f)
        shapes[p + "ffn.inner.bias"] = (f,)
        shapes[p + "ffn.outer.weight"] = (f, h)
        shapes[p + "ffn.outer.bias"] = (h,)
        shapes[p + "ffn.norm.scale"] = (h,)
        shapes[p + "ffn.norm.shift"] = (h,)
    shapes.update(
        {
            "heads.mlm.transform.weight": (h, h),
            "heads.mlm.transform.bias": (h,),
            "heads.mlm.norm.scale": (h,),
            "heads.mlm.norm.shift": (h,),
            "heads.mlm.bias": (v,),
            "heads.nsp.weight": (h, 2),
            "heads.nsp.bias": (2,),
            "heads.pair.weight": (h, 2),
            "heads.pair.bias": (2,),
        }
    )
    return shapes


NSP_HEAD = ("heads.nsp.weight", "heads.nsp.bias")
PAIR_HEAD = ("heads.pair.weight", "heads.pair.bias")


def is_head(name: str) -> bool:
    return name.startswith("heads.")


def init_parameters(config: ModelConfig, rng_seed: int, dtype: torch.dtype = torch.float32) -> Params:
    """Truncated-normal weights (std 0.02), zero biases/shifts, unit norm scales."""
    rng = np.random.default_rng(rng_seed)
    params: Params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".scale"):
            arr = np.ones(shape)
        elif name.endswith((".bias", ".shift")):
            arr = np.zeros(shape)
        else:
            arr = _truncated_normal(rng, shape)
        params[name] = torch.from_numpy(arr).to(dtype)
    return params


def _truncated_normal(rng: np.random.Generator, shape) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > _TRUNC
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > _TRUNC
    return out * _INIT_SCALE


def clone_params(params: Params) -> Params:
    return {k: v.detach().clone() for k, v in params.items()}


def cast_params(params: Params, dtype: torch.dtype) -> Params:
    return {k: v.detach().to(dtype) for k, v in params.items()}


def checksum(params: Params, names: Iterable[str] | None = None) -> str:
    """SHA-256 over the raw bytes of the selected tensors in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(params if names is None else names):
        h.update(name.encode())
        h.update(params[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# --- batching ---------------------------------------------------------------


@dataclass
class TokenBatch:
    ids: torch.Tensor  # (batch, seq) int64
    segment_ids: torch.Tensor
    attention_mask: torch.Tensor

    def __len__(self) -> int:
        return self.ids.shape[0]


def collate(seqs: Sequence[TokenSequence], trim: bool = True) -> TokenBatch:
    """Stack token sequences; with ``trim`` drop columns that are padding everywhere."""
    if not seqs:
        raise ValueError("empty batch")
    width = {len(s.ids) for s in seqs}
    if len(width) != 1:
        raise ValueError("sequences in a batch must share one padded length")
    ids = torch.tensor([s.ids for s in seqs], dtype=torch.long)
    seg = torch.tensor([s.segment_ids for s in seqs], dtype=torch.long)
    mask = torch.tensor([s.attention_mask for s in seqs], dtype=torch.long)
    if trim:
        keep = max(s.length for s in seqs)
        ids, seg, mask = ids[:, :keep], seg[:, :keep], mask[:, :keep]
    return TokenBatch(ids, seg, mask)


# --- forward ----------------------------------------------------------------


@dataclass
class EncoderOutput:
    last_layer_states: torch.Tensor
    cls_vector: torch.Tensor
    attention_probs: list | None = None


@dataclass
class PairRepresentation:
    vector: torch.Tensor
    title_component: torch.Tensor
    body_component: torch.Tensor


def _layer_norm(x, scale, shift, eps):
    return F.layer_norm(x, (x.shape[-1],), scale, shift, eps)


def _dropout(x: torch.Tensor, rate: float, generator: torch.Generator | None) -> torch.Tensor:
    if generator is None or rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep / (1.0 - rate)


def make_generator(rng_seed: int | None) -> torch.Generator | None:
    if rng_seed is None:
        return None
    g = torch.Generator()
    g.manual_seed(int(rng_seed) & 0xFFFF_FFFF_FFFF)
    return g


def forward_encoder(
    params: Params,
    config: ModelConfig,
    batch: TokenBatch,
    train_mode: bool = False,
    generator: torch.Generator | int | None = None,
    return_attention: bool = False,
) -> EncoderOutput:
    """Run the encoder stack.

    Dropout is applied only when ``train_mode`` is set and a generator (or
    integer seed) is supplied; eval mode is a pure function of its inputs.
    """
    ids = batch.ids
    if ids.numel() and (int(ids.max()) >= config.vocab_size or int(ids.min()) < 0):
        raise ValueError("token id outside the vocabulary")
    bsz, seq = ids.shape
    if seq > config.max_seq_len:
        raise ValueError(f"sequence length {seq} exceeds max_seq_len {config.max_seq_len}")
    if isinstance(generator, int):
        generator = make_generator(generator)
    gen = generator if train_mode else None
    rate = config.dropout_rate
    eps = config.layer_norm_epsilon
    h, nh, hd = config.hidden_dim, config.num_heads, config.head_dim

    x = (
        params["embeddings.token"][ids]
        + params["embeddings.position"][:seq].unsqueeze(0)
        + params["embeddings.segment"][batch.segment_ids]
    )
    x = _layer_norm(x, params["embeddings.norm.scale"], params["embeddings.norm.shift"], eps)
    x = _dropout(x, rate, gen)

    dtype = x.dtype
    additive = (1.0 - batch.attention_mask.to(dtype))[:, None, None, :] * _MASK_VALUE
    probs_out = [] if return_attention else None

    def heads(t):
        return t.view(bsz, seq, nh, hd).transpose(1, 2)

    for i in range(config.num_layers):
        p = f"layers.{i}."
        q = heads(x @ params[p + "attention.query.weight"] + params[p + "attention.query.bias"])
        k = heads(x @ params[p + "attention.key.weight"] + params[p + "attention.key.bias"])
        v = heads(x @ params[p + "attention.value.weight"] + params[p + "attention.value.bias"])
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd) + additive
        probs = torch.softmax(scores, dim=-1)
        if probs_out is not None:
            probs_out.append(probs.detach())
        probs = _dropout(probs, rate, gen)
        ctx = (probs @ v).transpose(1, 2).reshape(bsz, seq, h)
        attn = ctx @ params[p + "attention.output.weight"] + params[p + "attention.output.bias"]
        attn = _dropout(attn, rate, gen)
        x = _layer_norm(x + attn, params[p + "attention.norm.scale"], params[p + "attention.norm.shift"], eps)

        inner = F.gelu(x @ params[p + "ffn.inner.weight"] + params[p + "ffn.inner.bias"])
        ffn = inner @ params[p + "ffn.outer.weight"] + params[p + "ffn.outer.bias"]
        ffn = _dropout(ffn, rate, gen)
        x = _layer_norm(x + ffn, params[p + "ffn.norm.scale"], params[p + "ffn.norm.shift"], eps)

    return EncoderOutput(x, x[:, 0], probs_out)


def mlm_logits(params: Params, config: ModelConfig, output: EncoderOutput, masked_positions) -> torch.Tensor:
    """Vocabulary logits at ``masked_positions``, an (M, 2) array of (row, column)."""
    pos = torch.as_tensor(masked_positions, dtype=torch.long).reshape(-1, 2)
    states = output.last_layer_states
    if pos.numel():
        bad = (pos < 0).any() or (pos[:, 0] >= states.shape[0]).any() or (pos[:, 1] >= states.shape[1]).any()
        if bad:
            raise IndexError("masked position outside the batch")
    hidden = states[pos[:, 0], pos[:, 1]]
    t = F.gelu(hidden @ params["heads.mlm.transform.weight"] + params["heads.mlm.transform.bias"])
    t = _layer_norm(t, params["heads.mlm.norm.scale"], params["heads.mlm.norm.shift"], config.layer_norm_epsilon)
    return t @ params["embeddings.token"].T + params["heads.mlm.bias"]


def nsp_logits(params: Params, output: EncoderOutput) -> torch.Tensor:
    return output.cls_vector @ params["heads.nsp.weight"] + params["heads.nsp.bias"]


def pair_representation(
    params: Params,
    config: ModelConfig,
    titles: TokenBatch,
    bodies: TokenBatch,
    train_mode: bool = False,
    generator: torch.Generator | None = None,
) -> PairRepresentation:
    """Sum of the last-layer [CLS] vectors of the title packing and the body packing."""
    if len(titles) != len(bodies):
        raise ValueError(f"title batch {len(titles)} and body batch {len(bodies)} differ in size")
    title = forward_encoder(params, config, titles, train_mode, generator).cls_vector
    body = forward_encoder(params, config, bodies, train_mode, generator).cls_vector
    return PairRepresentation(title + body, title, body)


def pair_logits(params: Params, rep: PairRepresentation) -> torch.Tensor:
    return rep.vector @ params["heads.pair.weight"] + params["heads.pair.bias"]


def cross_entropy(logits: torch.Tensor, labels, ignore_index: int = -100) -> torch.Tensor:
    """Mean softmax cross entropy; labels equal to ``ignore_index`` are skipped."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.shape[0] == 0 or not (labels != ignore_index).any():
        return logits.sum() * 0.0
    return F.cross_entropy(logits, labels, ignore_index=ignore_index)


def backward(loss: torch.Tensor, params: Params, trainable: Iterable[str] | None = None) -> dict[str, torch.Tensor]:
    """Gradients of ``loss`` for every named tensor.

    Tensors outside ``trainable`` get zero gradients, as do tensors the loss
    does not depend on. The trainable tensors must have had
    ``requires_grad`` set before the forward pass.
    """
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise RuntimeError("backward called without a recorded forward pass")
    names = list(params if trainable is None else trainable)
    tracked = [n for n in names if params[n].requires_grad]
    grads = torch.autograd.grad(loss, [params[n] for n in tracked], allow_unused=True) if tracked else []
    out = {n: torch.zeros_like(t) for n, t in params.items()}
    for n, g in zip(tracked, grads):
        if g is not None:
            out[n] = g
    return out


def encoder_names(params: Params) -> list[str]:
    return [n for n in params if not n.startswith("heads.pair.")]


def trainable_names(params: Params, frozen_encoder: bool = False) -> list[str]:
    if frozen_encoder:
        return list(PAIR_HEAD)
    return list(params)


def require_grad(params: Params, names: Iterable[str]) -> Params:
    """Return a copy whose selected tensors are fresh autograd leaves."""
    names = set(names)
    return {k: (v.detach().clone().requires_grad_(True) if k in names else v.detach()) for k, v in params.items()}


# --- checkpoint file --------------------------------------------------------

MAGIC = b"DQDA"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: Params, config: ModelConfig, path) -> None:
    """Write ``params`` as little-endian float32 after a JSON config block."""
    expected = parameter_shapes(config)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointShapeError(f"parameters missing: {sorted(missing)[:5]}")
    cfg = config.to_json().encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        for name, shape in expected.items():
            t = params[name].detach().cpu()
            if tuple(t.shape) != shape:
                raise CheckpointShapeError(f"{name}: shape {tuple(t.shape)} != {shape}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            fh.write(t.to(torch.float32).contiguous().numpy().astype("<f4", copy=False).tobytes())
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    @property
    def done(self) -> bool:
        return self.pos >= len(self.data)


def load_checkpoint(path) -> tuple[Params, ModelConfig]:
    """Read a checkpoint; the embedded config is authoritative."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointVersionError(f"{path}: bad magic, not a DQDA checkpoint")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(r.u32("config length"), "config").decode("utf-8")))
    except (ValueError, TypeError, ConfigurationError) as exc:
        raise CheckpointError(f"{path}: unreadable config block ({exc})") from exc
    expected = parameter_shapes(config)
    params: Params = {}
    while not r.done:
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        rank = r.u32("rank")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(4 * count, name), dtype="<f4").reshape(shape)
        if name not in expected or tuple(shape) != expected[name]:
            raise CheckpointShapeError(f"{path}: tensor {name} shape {shape} does not match config")
        params[name] = torch.from_numpy(arr.astype(np.float32))
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointTruncatedError(f"{path}: missing tensors {sorted(missing)[:5]}")
    return {n: params[n] for n in expected}, config
