"""Conditional generative module: paired reconstruction, ELBO and pair sampling.

The agent utterance is decoded first from ``z_y``; the customer decoder is
conditioned on ``z_x`` concatenated with a pooled embedding of the agent
decode (soft during training, hard at generation time).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .corpus import AGENT, BOS_ID, CUSTOMER, EOS_ID, PAD_ID, UNK_ID, SPECIALS
from .latent import GaussianParams, kl_divergence, reparameterize
from .model import DialogueSummarizer
from .seqmodel import length_mask, pool_mean, vocab_logits

MODES = ("train", "eval")


def soft_argmax(logits: torch.Tensor, tau: float) -> torch.Tensor:
    """Softmax of ``logits / tau``; a differentiable stand-in for argmax."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return F.softmax(logits / tau, dim=-1)


def word_dropout(tokens: torch.Tensor, rate: float, generator: torch.Generator | None = None) -> torch.Tensor:
    """Replace each non-special token by UNK with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("word dropout rate must lie in [0, 1]")
    if rate == 0.0:
        return tokens.clone()
    drop = torch.rand(tokens.shape, generator=generator) < rate
    drop &= tokens >= len(SPECIALS)
    return tokens.masked_fill(drop, UNK_ID)


def _noise(like: torch.Tensor, generator) -> torch.Tensor:
    return torch.randn(like.shape, generator=generator, dtype=like.dtype)


def _decoder_io(ids: torch.Tensor, lengths: torch.Tensor):
    """Teacher-forcing inputs ``[BOS, w1..wn]`` and targets ``[w1..wn, EOS]``."""
    b = ids.shape[0]
    inputs = torch.cat([torch.full((b, 1), BOS_ID, dtype=ids.dtype), ids], dim=1)
    targets = torch.cat([ids, torch.full((b, 1), PAD_ID, dtype=ids.dtype)], dim=1)
    targets[torch.arange(b), lengths] = EOS_ID
    return inputs, targets, length_mask(lengths + 1, ids.shape[1] + 1)


def mask_specials(logits: torch.Tensor) -> torch.Tensor:
    """PAD and BOS can never be emitted."""
    logits = logits.clone()
    logits[..., PAD_ID] = float("-inf")
    logits[..., BOS_ID] = float("-inf")
    return logits


def teacher_forced_logits(model: DialogueSummarizer, role: str, inputs: torch.Tensor, cond: torch.Tensor):
    v = model.decoder(role)(model.embedding(role)(inputs), cond)
    return vocab_logits(v, model.output(role))


def sequence_nll(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Summed token negative log-likelihood per sequence (nats)."""
    logp = F.log_softmax(logits, dim=-1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(logp * mask.to(logp.dtype)).sum(dim=1)


def pooled_soft_embedding(model, role, probs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return pool_mean(probs @ model.embedding(role).weight, mask)


def pair_nll(
    model: DialogueSummarizer,
    x: torch.Tensor,
    x_len: torch.Tensor,
    y: torch.Tensor,
    y_len: torch.Tensor,
    z_x: torch.Tensor,
    z_y: torch.Tensor,
    generator: torch.Generator | None = None,
    *,
    dropout: float = 0.0,
    tau: float = 0.01,
):
    """Per-pair ``-log p(y | z_y)`` and ``-log p(x | z_x, y_tilde)`` at given latents."""
    y_in, y_tgt, y_mask = _decoder_io(y, y_len)
    x_in, x_tgt, x_mask = _decoder_io(x, x_len)
    if dropout > 0:
        y_in = word_dropout(y_in, dropout, generator)
        x_in = word_dropout(x_in, dropout, generator)

    y_logits = teacher_forced_logits(model, AGENT, y_in, z_y)
    nll_y = sequence_nll(y_logits, y_tgt, y_mask)

    y_soft = soft_argmax(mask_specials(y_logits), tau)
    y_tilde = pooled_soft_embedding(model, AGENT, y_soft, y_mask)
    x_logits = teacher_forced_logits(model, CUSTOMER, x_in, torch.cat([z_x, y_tilde], dim=-1))
    return sequence_nll(x_logits, x_tgt, x_mask), nll_y


@dataclass
class PairLossBreakdown:
    """Per-pair terms of the ELBO; every tensor has shape (B,)."""

    nll_x: torch.Tensor
    nll_y: torch.Tensor
    kl_x: torch.Tensor
    kl_y: torch.Tensor
    tokens_x: torch.Tensor
    tokens_y: torch.Tensor
    e_x: torch.Tensor | None = None
    e_y: torch.Tensor | None = None


def reconstruct_pair(
    model: DialogueSummarizer,
    x: torch.Tensor,
    x_len: torch.Tensor,
    y: torch.Tensor,
    y_len: torch.Tensor,
    generator: torch.Generator | None = None,
    mode: str = "train",
    *,
    word_dropout_rate: float = 0.4,
    tau: float = 0.01,
    use_mean: bool = False,
) -> PairLossBreakdown:
    """Single-sample ELBO terms for a padded batch of (customer, agent) pairs.

    ``use_mean`` replaces both latent samples by posterior means (used for
    deterministic perplexity reporting).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if bool((x_len < 1).any()) or bool((y_len < 1).any()):
        raise ValueError("utterances must be non-empty")
    lat = model.latent
    e_x = model.encode(CUSTOMER, x, x_len)
    e_y = model.encode(AGENT, y, y_len)

    q_x = lat.posterior_customer(e_x)
    z_x = q_x.mean if use_mean else reparameterize(q_x, _noise(q_x.mean, generator))
    q_y = lat.posterior_agent(e_y, z_x)
    z_y = q_y.mean if use_mean else reparameterize(q_y, _noise(q_y.mean, generator))

    dropout = word_dropout_rate if mode == "train" else 0.0
    nll_x, nll_y = pair_nll(model, x, x_len, y, y_len, z_x, z_y, generator, dropout=dropout, tau=tau)
    kl_x = kl_divergence(q_x, GaussianParams.standard(q_x.mean))
    kl_y = kl_divergence(q_y, lat.prior_agent(z_x))
    return PairLossBreakdown(nll_x, nll_y, kl_x, kl_y, x_len + 1, y_len + 1, e_x, e_y)


def elbo(breakdown: PairLossBreakdown, kl_weight: float = 1.0) -> torch.Tensor:
    """Per-pair (annealed) evidence lower bound; larger is better."""
    if not 0.0 <= kl_weight <= 1.0:
        raise ValueError("kl_weight must lie in [0, 1]")
    b = breakdown
    return -(b.nll_x + b.nll_y) - kl_weight * (b.kl_x + b.kl_y)


@dataclass
class Decoded:
    tokens: list[list[int]]
    logits: list[torch.Tensor]


def greedy_decode(model: DialogueSummarizer, role: str, cond: torch.Tensor, max_len: int) -> Decoded:
    """Argmax decoding, truncated after the first EOS or at ``max_len``.

    ``logits[i]`` holds the (PAD/BOS-masked) logits of each emitted step.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    b = cond.shape[0]
    dec, emb, out = model.decoder(role), model.embedding(role), model.output(role)
    prev = torch.full((b,), BOS_ID, dtype=torch.long)
    state = None
    steps, step_logits = [], []
    finished = torch.zeros(b, dtype=torch.bool)
    for _ in range(max_len):
        v, state = dec.step(emb(prev), cond, state)
        logits = mask_specials(vocab_logits(v, out))
        prev = logits.argmax(dim=-1)
        steps.append(prev)
        step_logits.append(logits)
        finished |= prev == EOS_ID
        if bool(finished.all()):
            break
    ids = torch.stack(steps, dim=1)
    all_logits = torch.stack(step_logits, dim=1)
    tokens, logits = [], []
    for i in range(b):
        row = ids[i].tolist()
        n = row.index(EOS_ID) + 1 if EOS_ID in row else len(row)
        tokens.append(row[:n])
        logits.append(all_logits[i, :n])
    return Decoded(tokens, logits)


def soft_decode(model: DialogueSummarizer, role: str, cond: torch.Tensor, steps: int, tau: float) -> torch.Tensor:
    """Free-running decode feeding back soft-argmax mixtures; returns (B, steps, V)."""
    b = cond.shape[0]
    dec, emb, out = model.decoder(role), model.embedding(role), model.output(role)
    prev = emb(torch.full((b,), BOS_ID, dtype=torch.long))
    state = None
    probs = []
    for _ in range(steps):
        v, state = dec.step(prev, cond, state)
        p = soft_argmax(mask_specials(vocab_logits(v, out)), tau)
        probs.append(p)
        prev = p @ emb.weight
    return torch.stack(probs, dim=1)


def pooled_token_embedding(model: DialogueSummarizer, role: str, tokens: list[list[int]]) -> torch.Tensor:
    """Mean embedding of each hard-decoded sequence (EOS included)."""
    table = model.embedding(role)
    return torch.stack([table(torch.tensor(t, dtype=torch.long)).mean(dim=0) for t in tokens])


@torch.no_grad()
def generate_pair(model: DialogueSummarizer, generator: torch.Generator | None = None, max_len: int = 30, n: int = 1):
    """Sample ``n`` novel (customer, agent) token-id sequences from the priors."""
    lat = model.latent
    z_x = torch.randn((n, lat.latent_dim), generator=generator, dtype=model.dtype)
    prior = lat.prior_agent(z_x)
    z_y = reparameterize(prior, _noise(prior.mean, generator))
    agent = greedy_decode(model, AGENT, z_y, max_len)
    y_tilde = pooled_token_embedding(model, AGENT, agent.tokens)
    customer = greedy_decode(model, CUSTOMER, torch.cat([z_x, y_tilde], dim=-1), max_len)
    return list(zip(customer.tokens, agent.tokens))
