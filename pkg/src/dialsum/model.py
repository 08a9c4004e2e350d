"""The full parameter set: per-role embeddings, encoders, decoders, latent maps and attention."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .corpus import AGENT, CUSTOMER, Vocabulary
from .latent import LatentSpaces
from .seqmodel import (
    MultiHeadAttention,
    RecurrentDecoder,
    RecurrentEncoder,
    SelfAttentiveDecoder,
    SelfAttentiveEncoder,
    contextualize,
    length_mask,
    pool_mean,
)

ARCHS = ("recurrent", "selfattentive")


@dataclass
class ModelConfig:
    arch: str = "recurrent"
    embed_dim: int = 300
    hidden: int = 600
    latent_dim: int = 300
    prior_hidden: int = 600
    heads: int = 10
    sentence_heads: int = 10
    position_encoding: bool = True

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHS}")
        for name in ("embed_dim", "hidden", "latent_dim", "prior_hidden", "heads", "sentence_heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class DialogueSummarizer(nn.Module):
    """Two encoders, two decoders and the coupled latent spaces.

    Parameter names follow ``<role>_<component>/...`` once dots are turned
    into slashes (see :mod:`dialsum.checkpoint`).
    """

    def __init__(self, config: ModelConfig, customer_vocab: Vocabulary, agent_vocab: Vocabulary):
        super().__init__()
        self.config = config
        self.vocabs = {CUSTOMER: customer_vocab, AGENT: agent_vocab}
        c = config
        self.customer_embedding = nn.Embedding(customer_vocab.size, c.embed_dim)
        self.agent_embedding = nn.Embedding(agent_vocab.size, c.embed_dim)
        if c.arch == "recurrent":
            self.customer_encoder = RecurrentEncoder(c.embed_dim, c.hidden)
            self.agent_encoder = RecurrentEncoder(c.embed_dim, c.hidden)
            self.agent_decoder = RecurrentDecoder(c.embed_dim, c.latent_dim, c.hidden)
            self.customer_decoder = RecurrentDecoder(c.embed_dim, c.latent_dim + c.embed_dim, c.hidden)
        else:
            pe = c.position_encoding
            self.customer_encoder = SelfAttentiveEncoder(c.embed_dim, c.hidden, c.heads, pe)
            self.agent_encoder = SelfAttentiveEncoder(c.embed_dim, c.hidden, c.heads, pe)
            self.agent_decoder = SelfAttentiveDecoder(c.embed_dim, c.latent_dim, c.hidden, c.heads, pe)
            self.customer_decoder = SelfAttentiveDecoder(
                c.embed_dim, c.latent_dim + c.embed_dim, c.hidden, c.heads, pe
            )
        enc_dim = self.customer_encoder.output_dim
        self.encoder_dim = enc_dim
        self.latent = LatentSpaces(enc_dim, enc_dim, c.latent_dim, c.prior_hidden)
        self.customer_output = nn.Linear(self.customer_decoder.output_dim, customer_vocab.size)
        self.agent_output = nn.Linear(self.agent_decoder.output_dim, agent_vocab.size)
        self.customer_attention = MultiHeadAttention(enc_dim, c.sentence_heads)
        self.agent_attention = MultiHeadAttention(enc_dim, c.sentence_heads)

    def embedding(self, role: str) -> nn.Embedding:
        return getattr(self, f"{role}_embedding")

    def encoder(self, role: str) -> nn.Module:
        return getattr(self, f"{role}_encoder")

    def decoder(self, role: str) -> nn.Module:
        return getattr(self, f"{role}_decoder")

    def output(self, role: str) -> nn.Linear:
        return getattr(self, f"{role}_output")

    def attention(self, role: str) -> MultiHeadAttention:
        return getattr(self, f"{role}_attention")

    @property
    def dtype(self) -> torch.dtype:
        return self.customer_embedding.weight.dtype

    def encode(self, role: str, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Utterance embeddings: mean of contextual states over real tokens."""
        mask = length_mask(lengths, ids.shape[1])
        return pool_mean(contextualize(self.encoder(role), self.embedding(role), ids, mask), mask)

    def encode_soft(self, role: str, probs: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Encode sequences of probability vectors through the role's embedding table."""
        emb = probs @ self.embedding(role).weight
        if mask is None:
            mask = torch.ones(probs.shape[:2], dtype=torch.bool)
        return pool_mean(self.encoder(role)(emb, mask), mask)


def initialize(model: nn.Module, seed: int | None = None) -> nn.Module:
    """Embeddings and LSTMs U(-0.1, 0.1); linear weights N(0, 1/fan_in), biases 0."""
    gen = torch.Generator().manual_seed(seed) if seed is not None else None

    def uniform(p):
        p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 0.2 - 0.1)

    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Embedding, nn.LSTM)):
                for p in module.parameters():
                    uniform(p)
            elif isinstance(module, nn.Linear):
                std = 1.0 / math.sqrt(module.in_features)
                module.weight.copy_(torch.randn(module.weight.shape, generator=gen, dtype=module.weight.dtype) * std)
                module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
    return model


def build_model(
    config: ModelConfig, customer_vocab: Vocabulary, agent_vocab: Vocabulary, seed: int | None = 0
) -> DialogueSummarizer:
    return initialize(DialogueSummarizer(config, customer_vocab, agent_vocab), seed)
