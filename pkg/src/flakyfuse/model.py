"""Dual-channel classifier.

Neural channel: a from-scratch token embedding, an optional single-head
self-attention block with a residual connection, masked mean pooling and an
affine map to ``d_neural``. Symbolic channel: 16 -> 128 -> 128 projection head
(Linear, ReLU, Linear, LayerNorm, ReLU). The two are concatenated (neural first)
and read by a binary head and a six-way categorical head, with inverted dropout
on the fused vector in training mode only.

Everything is float64; training at this scale is cheap and the gradient checks
need the precision.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import CATEGORIES, FlakinessCategory, TestCase, atomic_write_bytes, tokenize
from .symbolic import N_FEATURES

DTYPE = torch.float64
D_PROJ = 128
CHECKPOINT_MAGIC = b"FLKFCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_neural: int = 768
    d_proj: int = D_PROJ
    vocab_cap: int = 20_000
    max_seq: int = 512
    n_attention_blocks: int = 1
    dropout_rate: float = 0.3
    use_symbolic: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d_proj != D_PROJ:
            raise ValueError(f"d_proj is fixed at {D_PROJ}")
        if self.n_attention_blocks not in (0, 1):
            raise ValueError("n_attention_blocks must be 0 or 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.d_neural < 1 or self.vocab_cap < 2 or self.max_seq < 1:
            raise ValueError(f"invalid model dimensions in {self}")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small preset used by the tests and the acceptance experiments."""
        return cls(**{"d_neural": 64, "vocab_cap": 4096, **overrides})

    @property
    def d_fused(self) -> int:
        return self.d_neural + (self.d_proj if self.use_symbolic else 0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in names})


class Logits(NamedTuple):
    binary: torch.Tensor  # (..., 2); index 1 = flaky
    categorical: torch.Tensor  # (..., 6) in category enum order


class NeuralVocabulary:
    """Token -> id map for the neural channel. Id 0 is the shared UNK slot."""

    UNK = 0

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self._ids = {t: i + 1 for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, streams, cap: int) -> "NeuralVocabulary":
        counts = Counter(tok for s in streams for tok in s)
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(ranked[: cap - 1])

    def __len__(self) -> int:
        return len(self.tokens) + 1

    def encode(self, stream: Sequence[str], max_seq: int) -> list[int]:
        return [self._ids.get(t, self.UNK) for t in stream[:max_seq]]


def encode_batch(streams, vocab: NeuralVocabulary, max_seq: int
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    encoded = [vocab.encode(s, max_seq) for s in streams]
    width = max(1, max((len(e) for e in encoded), default=1))
    ids = torch.zeros((len(encoded), width), dtype=torch.long)
    mask = torch.zeros((len(encoded), width), dtype=torch.bool)
    for row, e in enumerate(encoded):
        ids[row, : len(e)] = torch.tensor(e, dtype=torch.long)
        mask[row, : len(e)] = True
    return ids, mask


def apply_dropout(x: torch.Tensor, rate: float, generator: torch.Generator | None
                  ) -> torch.Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors."""
    if rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep / (1.0 - rate)


class DualChannelClassifier(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_neural
        kw = {"dtype": DTYPE}
        self.embedding = nn.Parameter(torch.empty(config.vocab_cap, d, **kw))
        if config.n_attention_blocks:
            self.attn_query = nn.Linear(d, d, **kw)
            self.attn_key = nn.Linear(d, d, **kw)
            self.attn_value = nn.Linear(d, d, **kw)
            self.attn_out = nn.Linear(d, d, **kw)
        self.pool = nn.Linear(d, d, **kw)
        if config.use_symbolic:
            self.proj_in = nn.Linear(N_FEATURES, config.d_proj, **kw)
            self.proj_hidden = nn.Linear(config.d_proj, config.d_proj, **kw)
            self.proj_norm = nn.LayerNorm(config.d_proj, eps=1e-5, **kw)
        self.head_binary = nn.Linear(config.d_fused, 2, **kw)
        self.head_category = nn.Linear(config.d_fused, len(CATEGORIES), **kw)

    # -- channels ---------------------------------------------------------

    def encode_neural(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, L) ids and validity mask -> (B, d_neural)."""
        x = self.embedding[ids]
        m = mask.to(x.dtype).unsqueeze(-1)
        if self.config.n_attention_blocks:
            q, k, v = self.attn_query(x), self.attn_key(x), self.attn_value(x)
            scores = q @ k.transpose(-1, -2) / math.sqrt(x.shape[-1])
            scores = scores.masked_fill(~mask.unsqueeze(1), -1e9)
            x = x + self.attn_out(torch.softmax(scores, dim=-1) @ v)
        pooled = (x * m).sum(dim=1) / m.sum(dim=1).clamp(min=1.0)
        return self.pool(pooled)

    def project_symbolic(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != N_FEATURES:
            raise ValueError(f"symbolic vector must have length {N_FEATURES}, got {v.shape[-1]}")
        h = torch.relu(self.proj_in(v))
        return torch.relu(self.proj_norm(self.proj_hidden(h)))

    def fuse(self, neural: torch.Tensor, symbolic: torch.Tensor | None) -> torch.Tensor:
        if neural.shape[-1] != self.config.d_neural:
            raise ValueError("neural width does not match config")
        if not self.config.use_symbolic:
            return neural
        if symbolic is None or symbolic.shape[-1] != self.config.d_proj:
            raise ValueError("projected symbolic width does not match config")
        return torch.cat([neural, symbolic], dim=-1)

    def fused(self, ids, mask, symbolic) -> torch.Tensor:
        neural = self.encode_neural(ids, mask)
        if not self.config.use_symbolic:
            return neural
        return self.fuse(neural, self.project_symbolic(torch.as_tensor(symbolic, dtype=DTYPE)))

    def forward(self, ids, mask, symbolic=None, train_mode: bool = False,
                generator: torch.Generator | None = None) -> Logits:
        z = self.fused(ids, mask, symbolic)
        if train_mode:
            z = apply_dropout(z, self.config.dropout_rate, generator)
        return Logits(self.head_binary(z), self.head_category(z))

    # -- convenience --------------------------------------------------------

    def forward_tests(self, tests: Sequence[TestCase], vocab: NeuralVocabulary,
                      symbolic: np.ndarray | None) -> Logits:
        """Eval-mode logits for raw tests (mining tokenizer feeds the neural channel)."""
        ids, mask = encode_batch([tokenize(t.source) for t in tests], vocab,
                                 self.config.max_seq)
        with torch.no_grad():
            return self(ids, mask, symbolic)


def init_params(config: ModelConfig) -> DualChannelClassifier:
    """Fresh model; bit-identical for a given config (seed included).

    Affine maps draw U(-b, b) with b = sqrt(6 / (fan_in + fan_out)) and zero bias.
    The embedding is treated as an affine map from a one-hot row (fan_in 1).
    LayerNorm starts at gain 1, bias 0.
    """
    model = DualChannelClassifier(config)
    gen = torch.Generator().manual_seed(config.seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name == "embedding":
                bound = math.sqrt(6.0 / (1 + config.d_neural))
            elif name.startswith("proj_norm."):
                p.fill_(1.0 if name.endswith("weight") else 0.0)
                continue
            elif name.endswith(".bias"):
                p.zero_()
                continue
            else:
                fan_out, fan_in = p.shape
                bound = math.sqrt(6.0 / (fan_in + fan_out))
            p.copy_((torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
    return model


def predict(categorical_logits) -> FlakinessCategory | list[FlakinessCategory]:
    """Arg-max over the categorical head; ties go to the earlier enum member."""
    arr = np.asarray(torch.as_tensor(categorical_logits).detach(), dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits must be finite")
    idx = np.argmax(arr, axis=-1)
    if arr.ndim == 1:
        return CATEGORIES[int(idx)]
    return [CATEGORIES[int(i)] for i in idx]


def checksum(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in model.state_dict().items():
        t = p.detach().contiguous()
        h.update(name.encode())
        h.update(repr(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model: DualChannelClassifier, path: str | os.PathLike,
                    vocab: NeuralVocabulary | None = None) -> None:
    """Binary container: magic, version, header length, JSON header, raw float64 data."""
    tensors, blobs, offset = [], [], 0
    for name, p in model.state_dict().items():
        raw = p.detach().contiguous().numpy().astype("<f8").tobytes()
        tensors.append({"name": name, "shape": list(p.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "dtype": "float64",
        "tensors": tensors,
        "neural_vocabulary": None if vocab is None else vocab.tokens,
    }, sort_keys=True).encode()
    data = (CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(header))
            + header + b"".join(blobs))
    atomic_write_bytes(path, data)


def load_checkpoint(path: str | os.PathLike
                    ) -> tuple[DualChannelClassifier, NeuralVocabulary | None]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<IQ", data, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(data[pos: pos + header_len])
    body = memoryview(data)[pos + header_len:]
    model = DualChannelClassifier(ModelConfig.from_dict(header["config"]))
    expected = model.state_dict()
    if {t["name"] for t in header["tensors"]} != set(expected):
        raise CheckpointError("checkpoint tensors do not match the model layout")
    state = {}
    for t in header["tensors"]:
        if tuple(t["shape"]) != tuple(expected[t["name"]].shape):
            raise CheckpointError(f"shape mismatch for {t['name']}: {t['shape']}")
        arr = np.frombuffer(body[t["offset"]: t["offset"] + t["nbytes"]], dtype="<f8")
        state[t["name"]] = torch.from_numpy(arr.reshape(t["shape"]).copy())
    model.load_state_dict(state)
    vocab = header.get("neural_vocabulary")
    return model, None if vocab is None else NeuralVocabulary(vocab)
