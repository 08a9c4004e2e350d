"""Per-speaker summary generation on top of the trained generative components."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .corpus import AGENT, CUSTOMER, ROLES, Dialogue, FactualLexicon, make_batch, pair_utterances
from .generative import greedy_decode, pooled_soft_embedding, pooled_token_embedding, soft_decode
from .model import DialogueSummarizer
from .seqmodel import MultiHeadAttention


def sentence_self_attention(
    attention: MultiHeadAttention, embeddings: torch.Tensor, mask: torch.Tensor | None = None
):
    """Attend over a dialogue's utterance embeddings and mean-pool the result.

    ``embeddings`` is (D, n, dim) for D dialogues (padded to n utterances,
    ``mask`` True at real ones). Returns the combined (D, dim) embedding and
    the (D, heads, n, n) attention weights.
    """
    if embeddings.ndim == 2:
        embeddings = embeddings.unsqueeze(0)
    if embeddings.shape[1] == 0:
        raise ValueError("sentence attention needs at least one utterance")
    if mask is None:
        mask = torch.ones(embeddings.shape[:2], dtype=torch.bool)
    attended, weights = attention(embeddings, embeddings, embeddings, key_mask=mask)
    m = mask.to(attended.dtype).unsqueeze(-1)
    return (attended * m).sum(dim=1) / m.sum(dim=1), weights


def summary_latent(model: DialogueSummarizer, combined_x: torch.Tensor, combined_y: torch.Tensor):
    """Zero-variance summary representations: the posterior means."""
    s_x = model.latent.posterior_customer(combined_x).mean
    s_y = model.latent.posterior_agent(combined_y, s_x).mean
    return s_x, s_y


@dataclass
class RoleSummary:
    tokens: list[str]
    logits: torch.Tensor


def decode_summaries(model: DialogueSummarizer, s_x: torch.Tensor, s_y: torch.Tensor, max_len: int = 30):
    """Greedy agent summary from ``s_y``, then customer summary from ``s_x`` and the agent summary."""
    agent = greedy_decode(model, AGENT, s_y, max_len)
    y_tilde = pooled_token_embedding(model, AGENT, agent.tokens)
    customer = greedy_decode(model, CUSTOMER, torch.cat([s_x, y_tilde], dim=-1), max_len)
    out = []
    for role, dec in ((CUSTOMER, customer), (AGENT, agent)):
        vocab = model.vocabs[role]
        out.append([RoleSummary(vocab.decode(t), lg) for t, lg in zip(dec.tokens, dec.logits)])
    return out[0], out[1]


@dataclass
class CopyEvent:
    position: int
    predicted: str
    substituted: str

    def to_json(self) -> list:
        return [self.position, self.predicted, self.substituted]


def _candidates(lexicon: FactualLexicon, source: Dialogue, role: str) -> list[str]:
    """Factual tokens of the source, same-role ones if any exist, in order of first occurrence."""
    for r in (role, AGENT if role == CUSTOMER else CUSTOMER):
        seen = list(dict.fromkeys(t for t in source.tokens(r) if t in lexicon))
        if seen:
            return seen
    return []


def partial_copy(
    tokens: list[str],
    logits: torch.Tensor,
    vocab,
    lexicon: FactualLexicon,
    source: Dialogue,
    role: str,
) -> tuple[list[str], list[CopyEvent]]:
    """Swap each decoded factual token for the likeliest factual token of the source.

    Candidates are scored by the decoder logit at that step (tokens outside
    the vocabulary score lowest); ties go to the earliest source occurrence.
    A factual token with no source candidate is kept.
    """
    candidates = _candidates(lexicon, source, role)
    out, log = list(tokens), []
    if not candidates:
        return out, log
    for pos, tok in enumerate(tokens):
        if tok not in lexicon:
            continue
        step = logits[pos]
        best, best_score = None, None
        for cand in candidates:
            score = float(step[vocab.stoi[cand]]) if cand in vocab else float("-inf")
            if best_score is None or score > best_score:
                best, best_score = cand, score
        out[pos] = best
        log.append(CopyEvent(pos, tok, best))
    return out, log


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.cosine_similarity(a, b, dim=-1, eps=1e-8)


def mean_similarity(summary: torch.Tensor, utterances: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Average cosine similarity of each (D, dim) summary to its (D, n, dim) utterances."""
    sims = cosine_similarity(summary.unsqueeze(1), utterances)
    m = mask.to(sims.dtype)
    return (sims * m).sum(dim=1) / m.sum(dim=1)


def group_embeddings(e: torch.Tensor, dialogue_index: torch.Tensor, n_dialogues: int):
    """Scatter (P, dim) pair embeddings into a padded (D, n_max, dim) tensor with mask."""
    counts = torch.bincount(dialogue_index, minlength=n_dialogues)
    n_max = int(counts.max())
    grouped = e.new_zeros((n_dialogues, n_max, e.shape[-1]))
    mask = torch.zeros((n_dialogues, n_max), dtype=torch.bool)
    slot = torch.zeros_like(dialogue_index)
    seen = [0] * n_dialogues
    for i, d in enumerate(dialogue_index.tolist()):
        slot[i] = seen[d]
        seen[d] += 1
    grouped = grouped.index_put((dialogue_index, slot), e)
    mask[dialogue_index, slot] = True
    return grouped, mask


@dataclass
class SummaryTerms:
    similarity: torch.Tensor
    s_x: torch.Tensor
    s_y: torch.Tensor


def similarity_loss(
    model: DialogueSummarizer,
    e_x: torch.Tensor,
    e_y: torch.Tensor,
    mask: torch.Tensor,
    steps: int = 30,
    tau: float = 0.01,
) -> SummaryTerms:
    """Per-dialogue summary similarity (to be maximized).

    Soft summaries are decoded from the attention-pooled representations,
    re-encoded, and compared with every same-role utterance embedding; the
    value is the sum over both roles of the average cosine similarity.
    """
    combined_x, _ = sentence_self_attention(model.attention(CUSTOMER), e_x, mask)
    combined_y, _ = sentence_self_attention(model.attention(AGENT), e_y, mask)
    s_x, s_y = summary_latent(model, combined_x, combined_y)
    agent_soft = soft_decode(model, AGENT, s_y, steps, tau)
    full = torch.ones(agent_soft.shape[:2], dtype=torch.bool)
    y_tilde = pooled_soft_embedding(model, AGENT, agent_soft, full)
    customer_soft = soft_decode(model, CUSTOMER, torch.cat([s_x, y_tilde], dim=-1), steps, tau)
    summary_x = model.encode_soft(CUSTOMER, customer_soft)
    summary_y = model.encode_soft(AGENT, agent_soft)
    sim = mean_similarity(summary_x, e_x, mask) + mean_similarity(summary_y, e_y, mask)
    return SummaryTerms(sim, s_x, s_y)


@dataclass
class SummaryResult:
    id: str
    customer_summary: list[str]
    agent_summary: list[str]
    attention: dict[str, list] = field(default_factory=dict)
    copy_log: dict[str, list[CopyEvent]] = field(default_factory=dict)
    s_x: torch.Tensor | None = None
    s_y: torch.Tensor | None = None

    def summary(self, role: str) -> list[str]:
        return self.customer_summary if role == CUSTOMER else self.agent_summary

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "customer_summary": " ".join(self.customer_summary),
            "agent_summary": " ".join(self.agent_summary),
            "attention": self.attention,
            "copy_log": {r: [e.to_json() for e in self.copy_log.get(r, [])] for r in ROLES},
        }


def strip_eos(tokens: list[str]) -> list[str]:
    return tokens[:-1] if tokens and tokens[-1] == "<eos>" else tokens


@torch.no_grad()
def encode_dialogue(model: DialogueSummarizer, dialogue: Dialogue):
    """Summary representations ``(s_x, s_y)`` and sentence-attention weights of one dialogue."""
    pairs = pair_utterances(dialogue)
    if not pairs:
        raise ValueError(f"dialogue {dialogue.id!r} has no customer/agent pairs")
    batch = make_batch(pairs, model.vocabs[CUSTOMER], model.vocabs[AGENT])
    e_x = model.encode(CUSTOMER, batch.x, batch.x_len).unsqueeze(0)
    e_y = model.encode(AGENT, batch.y, batch.y_len).unsqueeze(0)
    combined_x, w_x = sentence_self_attention(model.attention(CUSTOMER), e_x)
    combined_y, w_y = sentence_self_attention(model.attention(AGENT), e_y)
    s_x, s_y = summary_latent(model, combined_x, combined_y)
    return s_x, s_y, {CUSTOMER: w_x[0], AGENT: w_y[0]}


@torch.no_grad()
def summarize_dialogue(
    model: DialogueSummarizer,
    dialogue: Dialogue,
    lexicon: FactualLexicon | None = None,
    max_len: int = 30,
    copy: bool = True,
) -> SummaryResult:
    """Full inference pipeline for one dialogue (deterministic)."""
    s_x, s_y, weights = encode_dialogue(model, dialogue)
    (cust,), (agent,) = decode_summaries(model, s_x, s_y, max_len)
    summaries = {CUSTOMER: cust.tokens, AGENT: agent.tokens}
    copy_log: dict[str, list[CopyEvent]] = {CUSTOMER: [], AGENT: []}
    if copy and lexicon is not None:
        for role, res in ((CUSTOMER, cust), (AGENT, agent)):
            summaries[role], copy_log[role] = partial_copy(
                res.tokens, res.logits, model.vocabs[role], lexicon, dialogue, role
            )
    return SummaryResult(
        dialogue.id,
        strip_eos(summaries[CUSTOMER]),
        strip_eos(summaries[AGENT]),
        attention={r: w.tolist() for r, w in weights.items()},
        copy_log=copy_log,
        s_x=s_x[0],
        s_y=s_y[0],
    )
