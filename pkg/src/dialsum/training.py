"""Joint training of reconstruction and summary-similarity objectives."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import save_checkpoint
from .corpus import Batch, UtterancePair, Vocabulary, batch_iterator, group_by_dialogue
from .generative import elbo, reconstruct_pair
from .model import DialogueSummarizer, ModelConfig, build_model
from .summarizer import group_embeddings, similarity_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.4
    tau: float = 0.01
    kl_threshold: float = 0.8
    kl_anneal_fraction: float = 0.5
    word_dropout: float = 0.4
    learning_rate: float = 0.0005
    batch_size: int = 16
    max_epochs: int = 10
    latent_dim: int = 300
    embed_dim: int = 300
    hidden: int = 600
    prior_hidden: int = 600
    heads: int = 10
    sentence_heads: int = 10
    layers: int = 1
    arch: str = "recurrent"
    summary_len: int = 30
    max_steps: int | None = None
    grad_clip: float = 5.0
    classifier_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.layers != 1:
            raise ValueError("only single-layer encoders/decoders are supported")
        for name in ("batch_size", "max_epochs", "latent_dim", "embed_dim", "hidden", "prior_hidden",
                     "heads", "sentence_heads", "summary_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            arch=self.arch,
            embed_dim=self.embed_dim,
            hidden=self.hidden,
            latent_dim=self.latent_dim,
            prior_hidden=self.prior_hidden,
            heads=self.heads,
            sentence_heads=self.sentence_heads,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        """Read a JSON object or ``key=value`` lines; unknown keys are an error."""
        text = Path(path).read_text(encoding="utf-8")
        try:
            values = json.loads(text)
        except json.JSONDecodeError:
            values = {}
            for line in text.splitlines():
                line = line.split("#", 1)[0].strip()
                if line:
                    key, sep, value = line.partition("=")
                    if not sep:
                        raise ValueError(f"{path}: bad config line {line!r}")
                    values[key.strip()] = value.strip()
        return cls.from_dict({**values, **overrides})

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(values) - set(types)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        parsed = {}
        for key, value in values.items():
            if isinstance(value, str):
                kind = types[key]
                if value.lower() in ("none", "null"):
                    value = None
                elif "int" in kind:
                    value = int(value)
                elif "float" in kind:
                    value = float(value)
            parsed[key] = value
        return cls(**parsed)


def kl_weight_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp from 0 to ``kl_threshold`` over the first ``kl_anneal_fraction`` of training."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError("step out of range")
    ramp = cfg.kl_anneal_fraction * total_steps
    if ramp <= 0:
        return cfg.kl_threshold
    return cfg.kl_threshold * min(1.0, step / ramp)


def combined_objective(gen, summ, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return alpha * gen + (1.0 - alpha) * summ


@dataclass
class AdamState:
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


def adam_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor | None],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[list[torch.Tensor], AdamState]:
    """Bias-corrected Adam update; returns new parameter tensors and state."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state = AdamState(0, [torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])
    b1, b2 = betas
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params.append(p - lr * m_hat / (v_hat.sqrt() + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    """In-place wrapper around :func:`adam_step` for module parameters."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state = AdamState()

    @torch.no_grad()
    def step(self):
        grads = [p.grad for p in self.params]
        new, self.state = adam_step([p.detach() for p in self.params], grads, self.state, self.lr, self.betas, self.eps)
        for p, n in zip(self.params, new):
            p.copy_(n)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, record: dict):
        super().__init__(f"non-finite loss at step {step}: {record}")
        self.step, self.record = step, record


@dataclass
class StepOutput:
    loss: torch.Tensor
    objective: torch.Tensor
    record: dict
    s_x: torch.Tensor
    s_y: torch.Tensor


def batch_objective(
    model: DialogueSummarizer,
    batch: Batch,
    cfg: TrainConfig,
    kl_weight: float,
    generator: torch.Generator | None = None,
    mode: str = "train",
) -> StepOutput:
    """Combined objective for one batch; ``loss`` is its negation (minimized)."""
    b = reconstruct_pair(
        model, batch.x, batch.x_len, batch.y, batch.y_len, generator, mode,
        word_dropout_rate=cfg.word_dropout, tau=cfg.tau,
    )
    gen = elbo(b, kl_weight).mean()
    e_x, mask = group_embeddings(b.e_x, batch.dialogue_index, batch.n_dialogues)
    e_y, _ = group_embeddings(b.e_y, batch.dialogue_index, batch.n_dialogues)
    terms = similarity_loss(model, e_x, e_y, mask, cfg.summary_len, cfg.tau)
    summ = terms.similarity.mean()
    objective = combined_objective(gen, summ, cfg.alpha)
    record = {
        "nll_x": b.nll_x.mean().item(),
        "nll_y": b.nll_y.mean().item(),
        "kl_x": b.kl_x.mean().item(),
        "kl_y": b.kl_y.mean().item(),
        "gen": gen.item(),
        "sum": summ.item(),
        "kl_weight": kl_weight,
        "objective": objective.item(),
        "loss": -objective.item(),
    }
    return StepOutput(-objective, objective, record, terms.s_x, terms.s_y)


class ClassifierHead(nn.Module):
    """Linear map from concatenated features to label logits."""

    def __init__(self, in_dim: int, n_labels: int, multi_label: bool, seed: int = 0):
        super().__init__()
        self.linear = nn.Linear(in_dim, n_labels)
        self.multi_label = multi_label
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.linear.weight.copy_(torch.randn(self.linear.weight.shape, generator=gen) / math.sqrt(in_dim))
            self.linear.bias.zero_()

    def forward(self, features):
        return self.linear(features)

    def loss(self, logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        if self.multi_label:
            return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))
        return F.cross_entropy(logits, targets.argmax(dim=-1))


@dataclass
class TrainReport:
    config: dict
    records: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint: str | None = None

    def header(self) -> dict:
        return {"config": self.config, "grad_clip": self.config.get("grad_clip")}

    def write(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def count_batches(pairs: Sequence[UtterancePair], batch_size: int) -> int:
    return math.ceil(len(group_by_dialogue(pairs)) / batch_size)


def train(
    pairs: Sequence[UtterancePair],
    cfg: TrainConfig,
    customer_vocab: Vocabulary,
    agent_vocab: Vocabulary,
    out_dir=None,
    *,
    labels: dict[str, torch.Tensor] | None = None,
    multi_label: bool = False,
    model: DialogueSummarizer | None = None,
    progress_every: int = 0,
):
    """Train from scratch (or continue ``model``); returns (model, report, head).

    ``labels`` maps dialogue id to a label indicator vector and switches on
    the jointly trained classifier on ``[s_x; s_y]`` weighted by
    ``cfg.classifier_weight``.
    """
    if not pairs:
        raise ValueError("training corpus has no utterance pairs")
    if model is None:
        model = build_model(cfg.model_config(), customer_vocab, agent_vocab, seed=cfg.seed)
    head = None
    params = list(model.parameters())
    if labels is not None:
        n_labels = len(next(iter(labels.values())))
        head = ClassifierHead(2 * cfg.latent_dim, n_labels, multi_label, seed=cfg.seed + 7)
        params += list(head.parameters())
    optimizer = Adam(params, cfg.learning_rate)
    generator = torch.Generator().manual_seed(cfg.seed + 1)

    per_epoch = count_batches(pairs, cfg.batch_size)
    total = cfg.max_steps if cfg.max_steps is not None else per_epoch * cfg.max_epochs
    report = TrainReport(cfg.to_dict())
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_dir / "checkpoint.npz" if out_dir is not None else None
    start = time.perf_counter()
    step = 0
    epoch = 0
    model.train()
    while step < total:
        for batch in batch_iterator(pairs, cfg.batch_size, cfg.seed + epoch, customer_vocab, agent_vocab):
            if step >= total:
                break
            weight = kl_weight_schedule(step, total, cfg)
            out = batch_objective(model, batch, cfg, weight, generator)
            loss = out.loss
            record = {"step": step + 1, "epoch": epoch, **out.record}
            if head is not None:
                target = torch.stack([labels[d] for d in batch.dialogue_ids])
                features = torch.cat([out.s_x, out.s_y], dim=-1)
                cls = head.loss(head(features), target)
                loss = loss + cfg.classifier_weight * cls
                record["classifier"] = cls.item()
            if not math.isfinite(loss.item()):
                raise NonFiniteLossError(step + 1, record)
            optimizer.zero_grad()
            loss.backward()
            record["grad_norm"] = float(torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip))
            optimizer.step()
            report.records.append(record)
            step += 1
            if progress_every and step % progress_every == 0:
                log.info("step %d/%d loss %.4f gen %.4f sum %.4f kl_w %.3f", step, total,
                         record["loss"], record["gen"], record["sum"], weight)
        epoch += 1
        if ckpt_path is not None:
            _save(ckpt_path, model, head, epoch, step)
    report.wall_clock = time.perf_counter() - start
    if ckpt_path is not None:
        report.checkpoint = str(_save(ckpt_path, model, head, epoch, step))
        report.write(out_dir / "report.jsonl")
    model.eval()
    return model, report, head


def _save(path, model, head, epoch, step):
    extra = {f"classifier/{k.replace('.', '/')}": v for k, v in head.state_dict().items()} if head is not None else None
    meta = {"epoch": epoch, "step": step}
    if head is not None:
        meta["classifier"] = {"multi_label": head.multi_label, "n_labels": head.linear.out_features}
    return save_checkpoint(path, model, meta, extra)
