"""Encoders, decoders and attention shared by the generative and summary modules."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence


def length_mask(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    """Boolean (B, T) mask, True at real (non-PAD) positions."""
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


def pool_mean(seq: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over unmasked positions of a (B, T, D) sequence."""
    counts = mask.sum(dim=1)
    if bool((counts == 0).any()):
        raise ValueError("cannot pool a fully masked sequence")
    weights = mask.to(seq.dtype).unsqueeze(-1)
    return (seq * weights).sum(dim=1) / counts.to(seq.dtype).unsqueeze(-1)


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    """Multi-head scaled dot-product attention returning per-head weights.

    ``key_mask`` is (B, S) with True at keys that may be attended;
    ``causal`` additionally blocks keys after the query position.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        b, n, _ = t.shape
        return t.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, q, k, v, key_mask=None, causal: bool = False):
        if k.shape[1] != v.shape[1]:
            raise ValueError("keys and values must have equal length")
        if q.shape[-1] != self.dim or k.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise ValueError(f"attention inputs must have dim {self.dim}")
        qh, kh, vh = self._split(self.query(q)), self._split(self.key(k)), self._split(self.value(v))
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(self.head_dim)
        allowed = torch.ones(scores.shape[-2:], dtype=torch.bool, device=scores.device)
        if causal:
            allowed = torch.tril(allowed)
        allowed = allowed[None, None]
        if key_mask is not None:
            allowed = allowed & key_mask[:, None, None, :]
        scores = scores.masked_fill(~allowed, float("-inf"))
        # every query row keeps at least one key (itself, or a real key)
        weights = torch.softmax(scores, dim=-1)
        heads = (weights @ vh).transpose(1, 2).reshape(q.shape[0], q.shape[1], self.dim)
        return self.out(heads), weights


class TransformerBlock(nn.Module):
    """Post-norm self-attention + feedforward block."""

    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.attention = MultiHeadAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.ReLU(), nn.Linear(ff_dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x, key_mask=None, causal=False):
        attended, weights = self.attention(x, x, x, key_mask=key_mask, causal=causal)
        x = self.norm1(x + attended)
        x = self.norm2(x + self.ff(x))
        return x, weights


class RecurrentEncoder(nn.Module):
    """Single-layer bidirectional LSTM; output dim is ``2 * hidden``."""

    def __init__(self, embed_dim: int, hidden: int):
        super().__init__()
        self.lstm = nn.LSTM(embed_dim, hidden, batch_first=True, bidirectional=True)
        self.output_dim = 2 * hidden

    def forward(self, emb: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        lengths = mask.sum(dim=1).cpu()
        packed = pack_padded_sequence(emb, lengths, batch_first=True, enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=emb.shape[1])
        return out


class SelfAttentiveEncoder(nn.Module):
    """One transformer encoder block; output dim equals the embedding dim."""

    def __init__(self, embed_dim: int, hidden: int, heads: int, position_encoding: bool = True):
        super().__init__()
        self.block = TransformerBlock(embed_dim, heads, hidden)
        self.position_encoding = position_encoding
        self.output_dim = embed_dim
        self.last_weights = None

    def forward(self, emb: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if self.position_encoding:
            emb = emb + sinusoidal_positions(emb.shape[1], emb.shape[2], emb.dtype)
        out, self.last_weights = self.block(emb, key_mask=mask)
        return out * mask.unsqueeze(-1).to(out.dtype)


class RecurrentDecoder(nn.Module):
    """LSTM decoder fed ``[token embedding; conditioning vector]`` at every step."""

    def __init__(self, embed_dim: int, cond_dim: int, hidden: int):
        super().__init__()
        self.cond_dim = cond_dim
        self.lstm = nn.LSTM(embed_dim + cond_dim, hidden, batch_first=True)
        self.output_dim = hidden

    def _inputs(self, emb, cond):
        if cond.shape[-1] != self.cond_dim:
            raise ValueError(f"conditioning vector has dim {cond.shape[-1]}, expected {self.cond_dim}")
        return torch.cat([emb, cond.unsqueeze(1).expand(-1, emb.shape[1], -1)], dim=-1)

    def forward(self, emb: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(self._inputs(emb, cond))
        return out

    def step(self, prev_emb: torch.Tensor, cond: torch.Tensor, state=None):
        """One step from a (B, E) input; ``state=None`` is the zero state."""
        out, state = self.lstm(self._inputs(prev_emb.unsqueeze(1), cond), state)
        return out[:, 0], state


class SelfAttentiveDecoder(nn.Module):
    """Causal transformer decoder block.

    The conditioning vector is projected and added to every input position.
    """

    def __init__(self, embed_dim: int, cond_dim: int, hidden: int, heads: int, position_encoding: bool = True):
        super().__init__()
        self.cond_dim = cond_dim
        self.cond_proj = nn.Linear(cond_dim, embed_dim)
        self.block = TransformerBlock(embed_dim, heads, hidden)
        self.position_encoding = position_encoding
        self.output_dim = embed_dim
        self.last_weights = None

    def forward(self, emb: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.cond_dim:
            raise ValueError(f"conditioning vector has dim {cond.shape[-1]}, expected {self.cond_dim}")
        x = emb + self.cond_proj(cond).unsqueeze(1)
        if self.position_encoding:
            x = x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)
        out, self.last_weights = self.block(x, causal=True)
        return out

    def step(self, prev_emb: torch.Tensor, cond: torch.Tensor, state=None):
        # state is the prefix of input embeddings; the block is re-run over it
        prefix = prev_emb.unsqueeze(1) if state is None else torch.cat([state, prev_emb.unsqueeze(1)], 1)
        return self.forward(prefix, cond)[:, -1], prefix


def contextualize(encoder: nn.Module, embedding: nn.Embedding, ids: torch.Tensor, mask: torch.Tensor):
    vocab = embedding.num_embeddings
    if bool(((ids < 0) | (ids >= vocab)).any()):
        raise IndexError(f"token id out of range for vocabulary of size {vocab}")
    return encoder(embedding(ids), mask)


def vocab_logits(v: torch.Tensor, projection: nn.Linear) -> torch.Tensor:
    if v.shape[-1] != projection.in_features:
        raise ValueError(f"decoder output dim {v.shape[-1]} != {projection.in_features}")
    return projection(v)
