"""A small bidirectional transformer encoder over prepended prompt embeddings.

Sequences are embedded as [prompt rows | token rows], every position gets a
learned absolute position embedding, and encoding runs a stack of post-norm
attention/FFN blocks with GELU. Padding key positions are masked to -1e9
before the attention softmax, which underflows to an exact zero weight in
float32, so padding never influences a valid position.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .initializers import glorot_uniform, truncated_normal

_MASK_BIAS = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    max_positions: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.vocab_size <= 0 or self.num_layers < 0 or self.hidden_dim <= 0:
            raise ValueError("vocab_size and hidden_dim must be positive, num_layers >= 0")
        if self.num_heads <= 0 or self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} must be divisible by num_heads {self.num_heads}"
            )
        if self.ffn_dim <= 0 or self.max_positions <= 0:
            raise ValueError("ffn_dim and max_positions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "max_positions": self.max_positions,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ForwardPassCounter:
    """Thread-safe counter of encoder forward passes."""

    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def increment(self):
        with self._lock:
            self.value += 1

    def reset(self):
        with self._lock:
            self.value = 0


class TransformerEncoder:
    """Backbone encoder; registers all weights under the "backbone" group."""

    def __init__(self, config: EncoderConfig, store=None, seed=0):
        self.config = config
        self.store = store if store is not None else ad.ParameterStore()
        self.passes = ForwardPassCounter()
        rng = np.random.default_rng(seed)
        d = config.hidden_dim

        def reg(name, data):
            return self.store.register(f"backbone.{name}", data, group="backbone")

        # Glorot kernels: the desk backbone trains from scratch, and a
        # pretrained-style 0.02 normal leaves attention degenerate at d=64.
        self.token_embedding = reg(
            "token_embedding", truncated_normal(rng, (config.vocab_size, d)))
        self.position_embedding = reg(
            "position_embedding", truncated_normal(rng, (config.max_positions, d)))
        self.layers = []
        for i in range(config.num_layers):
            p = f"layer{i}"
            layer = {
                "wq": reg(f"{p}.attention.wq", glorot_uniform(rng, d, d)),
                "bq": reg(f"{p}.attention.bq", np.zeros(d)),
                "wk": reg(f"{p}.attention.wk", glorot_uniform(rng, d, d)),
                "bk": reg(f"{p}.attention.bk", np.zeros(d)),
                "wv": reg(f"{p}.attention.wv", glorot_uniform(rng, d, d)),
                "bv": reg(f"{p}.attention.bv", np.zeros(d)),
                "wo": reg(f"{p}.attention.wo", glorot_uniform(rng, d, d)),
                "bo": reg(f"{p}.attention.bo", np.zeros(d)),
                "ln1_scale": reg(f"{p}.ln1.scale", np.ones(d)),
                "ln1_shift": reg(f"{p}.ln1.shift", np.zeros(d)),
                "w_in": reg(f"{p}.ffn.w_in", glorot_uniform(rng, d, config.ffn_dim)),
                "b_in": reg(f"{p}.ffn.b_in", np.zeros(config.ffn_dim)),
                "w_out": reg(f"{p}.ffn.w_out", glorot_uniform(rng, config.ffn_dim, d)),
                "b_out": reg(f"{p}.ffn.b_out", np.zeros(d)),
                "ln2_scale": reg(f"{p}.ln2.scale", np.ones(d)),
                "ln2_shift": reg(f"{p}.ln2.shift", np.zeros(d)),
            }
            self.layers.append(layer)

    def backbone_parameters(self):
        return self.store.group("backbone")

    def embed_sequence(self, prompt_block, token_ids):
        """Embed [prompt rows | token rows] with absolute position embeddings.

        `prompt_block` is a (P, d) Tensor (or None for no prompts) shared by
        every sequence in the batch; `token_ids` is an int array of shape
        (batch, length). Row p of the output is prompt row p plus position
        embedding p; token rows continue at position P.
        """
        token_ids = np.asarray(token_ids)
        if token_ids.ndim != 2:
            raise ad.ShapeError(f"token_ids must be 2-D (batch, length), got {token_ids.shape}")
        batch, length = token_ids.shape
        if token_ids.size and token_ids.max() >= self.config.vocab_size:
            raise ad.ShapeError(
                f"token id {int(token_ids.max())} out of range for vocab of "
                f"{self.config.vocab_size}"
            )
        prompt_rows = 0 if prompt_block is None else prompt_block.data.shape[0]
        total = prompt_rows + length
        if total > self.config.max_positions:
            raise ad.ShapeError(
                f"sequence of {total} positions exceeds max_positions="
                f"{self.config.max_positions}"
            )

        pos = self.position_embedding.tensor
        tok = ad.embedding(self.token_embedding.tensor, token_ids)
        tok = ad.add(tok, pos[prompt_rows:total])
        if prompt_rows == 0:
            return tok
        block = ad.add(prompt_block, pos[0:prompt_rows])
        block = ad.expand_batch(block, batch)
        return ad.concat([block, tok], axis=1)

    def encode(self, embedded, mask, training=False, rng=None):
        """Run the block stack and return last-layer hidden states.

        `mask` is a (batch, length) boolean array, True at real positions.
        Counts one forward pass per call. With dropout disabled the result
        is a deterministic function of the inputs.
        """
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != embedded.data.shape[:2]:
            raise ad.ShapeError(
                f"mask shape {mask.shape} does not match sequence {embedded.data.shape[:2]}"
            )
        self.passes.increment()

        x = embedded
        if not self.layers:
            return x
        bias = np.where(mask, 0.0, _MASK_BIAS).astype(embedded.data.dtype)
        bias_t = ad.Tensor(bias[:, None, None, :])
        drop = self.config.dropout_rate if training else 0.0
        for layer in self.layers:
            x = self._block(x, layer, bias_t, drop, rng)
        return x

    def _block(self, x, layer, bias_t, drop, rng):
        attn = self._attention(x, layer, bias_t, drop, rng)
        attn = _dropout(attn, drop, rng)
        x = ad.layer_norm(ad.add(x, attn), layer["ln1_scale"].tensor, layer["ln1_shift"].tensor)
        h = ad.gelu(ad.linear(x, layer["w_in"].tensor, layer["b_in"].tensor))
        h = ad.linear(h, layer["w_out"].tensor, layer["b_out"].tensor)
        h = _dropout(h, drop, rng)
        return ad.layer_norm(ad.add(x, h), layer["ln2_scale"].tensor, layer["ln2_shift"].tensor)

    def _attention(self, x, layer, bias_t, drop, rng):
        heads = self.config.num_heads
        head_dim = self.config.hidden_dim // heads

        q = ad.split_heads(ad.linear(x, layer["wq"].tensor, layer["bq"].tensor),
                           heads, scale=1.0 / math.sqrt(head_dim))
        k = ad.split_heads(ad.linear(x, layer["wk"].tensor, layer["bk"].tensor), heads)
        v = ad.split_heads(ad.linear(x, layer["wv"].tensor, layer["bv"].tensor), heads)

        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
        weights = ad.softmax(ad.add(scores, bias_t))
        weights = _dropout(weights, drop, rng)
        ctx = ad.merge_heads(ad.matmul(weights, v))
        return ad.linear(ctx, layer["wo"].tensor, layer["bo"].tensor)


def _dropout(x, rate, rng):
    if rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout requires an rng when rate > 0")
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / keep
    return ad.mul(x, ad.Tensor(mask))
