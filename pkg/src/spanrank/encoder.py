"""Desk-scale transformer encoder built on :mod:`spanrank.autograd`."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_multiplier: int = 4
    max_len: int = 256

    def validate(self) -> None:
        if self.hidden % self.n_heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by n_heads={self.n_heads}")
        if self.max_len < 8:
            raise ConfigError(f"max_len must be >= 8, got {self.max_len}")
        if self.vocab_size < 6:
            raise ConfigError("vocab_size must cover the six reserved tokens")
        if self.n_layers < 1 or self.ffn_multiplier < 1:
            raise ConfigError("n_layers and ffn_multiplier must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """Named tensors plus the config that fixes their shapes."""

    def __init__(self, config: EncoderConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def leaves(self) -> dict[str, Tensor]:
        """Wrap every tensor as a differentiable leaf."""
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in self.tensors.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v, name=k) for k, v in self.tensors.items()}


def init_params(config: EncoderConfig, seed: int, heads: tuple[str, ...] = ("w",)) -> ModelParams:
    """Scaled-normal initialization (std 1/sqrt(H)); layer-norm gains 1, biases 0.

    ``heads`` names the extra length-H vectors to create: ``w`` for the scorer,
    ``start``/``end`` for the reader's span heads.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    h = config.hidden
    f = h * config.ffn_multiplier
    scale = 1.0 / np.sqrt(h)

    def normal(*shape):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    t = {
        "tok_emb": normal(config.vocab_size, h),
        "pos_emb": normal(config.max_len, h),
    }
    for i in range(config.n_layers):
        p = f"layer{i}."
        t[p + "ln1.g"] = np.ones(h, np.float32)
        t[p + "ln1.b"] = np.zeros(h, np.float32)
        for name in ("wq", "wk", "wv", "wo"):
            t[p + name] = normal(h, h)
        for name in ("bq", "bk", "bv", "bo"):
            t[p + name] = np.zeros(h, np.float32)
        t[p + "ln2.g"] = np.ones(h, np.float32)
        t[p + "ln2.b"] = np.zeros(h, np.float32)
        t[p + "w1"] = normal(h, f)
        t[p + "b1"] = np.zeros(f, np.float32)
        t[p + "w2"] = (rng.standard_normal((f, h)) / np.sqrt(f)).astype(np.float32)
        t[p + "b2"] = np.zeros(h, np.float32)
    t["lnf.g"] = np.ones(h, np.float32)
    t["lnf.b"] = np.zeros(h, np.float32)
    for name in heads:
        t[name] = normal(h)
    return ModelParams(config, t)


def pad_batch(sequences: list[np.ndarray], length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with [PAD]=0; returns (ids, mask)."""
    if length is None:
        length = max(len(s) for s in sequences)
    ids = np.zeros((len(sequences), length), dtype=np.int64)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s
    mask = np.arange(length)[None, :] < np.array([len(s) for s in sequences])[:, None]
    return ids, mask


def encoder_forward(t: dict[str, Tensor], config: EncoderConfig, ids: np.ndarray, mask: np.ndarray) -> Tensor:
    """Return per-token states of shape (B, L, H).

    ``t`` maps parameter names to tensors (leaves or constants). Padding is
    masked out of every attention key set, so padded positions never influence
    real positions. The sequence representation E is ``states[:, 0]``.
    """
    b, length = ids.shape
    if length > config.max_len:
        raise ValueError(f"sequence length {length} exceeds max_len {config.max_len}")
    if ids.size and ids.max() >= config.vocab_size:
        raise ValueError("token id out of vocabulary range")
    h = config.hidden
    nh = config.n_heads
    dh = h // nh
    scale = 1.0 / np.sqrt(dh)
    key_mask = mask[:, None, None, :]

    x = ag.embedding(t["tok_emb"], ids) + t["pos_emb"][:length]
    for i in range(config.n_layers):
        p = f"layer{i}."
        y = ag.layer_norm(x, t[p + "ln1.g"], t[p + "ln1.b"])

        def heads(w, bias):
            return ag.linear(y, t[p + w], t[p + bias]).reshape(b, length, nh, dh).transpose(0, 2, 1, 3)

        q = heads("wq", "bq") * scale
        k = heads("wk", "bk")
        v = heads("wv", "bv")
        att = ag.masked_softmax(q @ k.transpose(0, 1, 3, 2), key_mask)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(b, length, h)
        x = x + ag.linear(o, t[p + "wo"], t[p + "bo"])
        y = ag.layer_norm(x, t[p + "ln2.g"], t[p + "ln2.b"])
        x = x + ag.linear(ag.gelu(ag.linear(y, t[p + "w1"], t[p + "b1"])), t[p + "w2"], t[p + "b2"])
    return ag.layer_norm(x, t["lnf.g"], t["lnf.b"])


def cls_representation(states: Tensor) -> Tensor:
    return states[:, 0]


@dataclass(frozen=True)
class EncodedInput:
    """One unpadded id sequence ``[CLS] question [SEP] passage``.

    ``passage_pos`` is the sequence position of the first passage token kept,
    ``window_start`` its index within the (possibly marked) passage, and
    ``n_window`` the number of passage tokens kept.
    """

    ids: np.ndarray
    passage_pos: int
    window_start: int = 0
    n_window: int = 0

    def __len__(self):
        return len(self.ids)

    def padded(self, length: int) -> np.ndarray:
        if length < len(self.ids):
            raise ValueError("cannot pad to a shorter length")
        out = np.zeros(length, dtype=np.int64)
        out[: len(self.ids)] = self.ids
        return out


def collate(inputs: list[EncodedInput]) -> tuple[np.ndarray, np.ndarray]:
    """Pad a batch to its longest member; returns (ids, mask)."""
    return pad_batch([x.ids for x in inputs])
