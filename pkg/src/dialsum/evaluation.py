"""ROUGE, perplexity/KL reporting and summary-based domain classification."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
from sklearn.metrics import roc_auc_score

from .corpus import AGENT, CUSTOMER, EOS, ROLES, Dialogue, UtterancePair, make_batch, pad_sequences
from .generative import reconstruct_pair
from .model import DialogueSummarizer
from .summarizer import SummaryResult, encode_dialogue, summarize_dialogue
from .training import Adam, ClassifierHead, TrainConfig, train

METRICS = ("rouge-1", "rouge-2", "rouge-l")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    flag: str | None = None


def _score(overlap: int, n_cand: int, n_ref: int, flag: str | None = None) -> RougeScore:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(p, r, f, flag)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> RougeScore:
    """Clipped n-gram overlap; no stemming or stopword removal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(reference) < n:
        return RougeScore(0.0, 0.0, 0.0, "reference shorter than n")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    return _score(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    if not candidate:
        return RougeScore(0.0, 0.0, 0.0, "empty candidate")
    return _score(lcs_length(candidate, reference), len(candidate), len(reference))


def rouge_all(candidate: Sequence[str], reference: Sequence[str]) -> dict[str, RougeScore]:
    return {
        "rouge-1": rouge_n(candidate, reference, 1),
        "rouge-2": rouge_n(candidate, reference, 2),
        "rouge-l": rouge_l(candidate, reference),
    }


@dataclass
class RougeReport:
    """Mean F1 per role and metric over the scored dialogues."""

    table: dict[str, dict[str, float]]
    scored: int
    missing: int

    def to_json(self) -> dict:
        return {"aggregate": "f1", "table": self.table, "scored": self.scored, "missing": self.missing}


def rouge_table(
    summaries: Mapping[str, Mapping[str, Sequence[str]]],
    references: Mapping[str, Mapping[str, Sequence[str]]],
) -> RougeReport:
    """Score ``{id: {role: tokens}}`` summaries against same-keyed references."""
    if not references:
        raise ValueError("empty reference set")
    sums = {r: {m: 0.0 for m in METRICS} for r in ROLES}
    scored = missing = 0
    for did, summary in summaries.items():
        ref = references.get(did)
        if ref is None:
            missing += 1
            continue
        scored += 1
        for role in ROLES:
            for metric, score in rouge_all(summary[role], ref[role]).items():
                sums[role][metric] += score.f1
    if scored == 0:
        raise ValueError("no summary has a matching reference")
    table = {r: {m: sums[r][m] / scored for m in METRICS} for r in ROLES}
    return RougeReport(table, scored, missing)


def read_summary_records(records: Iterable[dict]) -> dict[str, dict[str, list[str]]]:
    """``{"id", "customer_summary", "agent_summary"}`` records to token lists."""
    from .corpus import tokenize

    return {
        str(rec["id"]): {CUSTOMER: tokenize(rec["customer_summary"]), AGENT: tokenize(rec["agent_summary"])}
        for rec in records
    }


def evaluate_summaries(
    model: DialogueSummarizer,
    dialogues: Sequence[Dialogue],
    references: Mapping[str, Mapping[str, Sequence[str]]],
    lexicon=None,
    max_len: int = 30,
) -> RougeReport:
    if not references:
        raise ValueError("empty reference set")
    generated = {}
    for d in dialogues:
        res = summarize_dialogue(model, d, lexicon, max_len)
        generated[d.id] = {CUSTOMER: res.customer_summary, AGENT: res.agent_summary}
    return rouge_table(generated, references)


@torch.no_grad()
def perplexity(model: DialogueSummarizer, pairs: Sequence[UtterancePair], batch_size: int = 64) -> dict:
    """Per-role perplexity with noise-free latents and no word dropout, plus mean KLs."""
    if not pairs:
        raise ValueError("empty corpus")
    nll = {CUSTOMER: 0.0, AGENT: 0.0}
    tokens = {CUSTOMER: 0, AGENT: 0}
    kl = {CUSTOMER: 0.0, AGENT: 0.0}
    cv, av = model.vocabs[CUSTOMER], model.vocabs[AGENT]
    for start in range(0, len(pairs), batch_size):
        b = make_batch(pairs[start : start + batch_size], cv, av)
        out = reconstruct_pair(model, b.x, b.x_len, b.y, b.y_len, None, "eval", use_mean=True)
        nll[CUSTOMER] += float(out.nll_x.double().sum())
        nll[AGENT] += float(out.nll_y.double().sum())
        tokens[CUSTOMER] += int(out.tokens_x.sum())
        tokens[AGENT] += int(out.tokens_y.sum())
        kl[CUSTOMER] += float(out.kl_x.double().sum())
        kl[AGENT] += float(out.kl_y.double().sum())
    return {
        r: {"ppl": math.exp(nll[r] / tokens[r]), "kl": kl[r] / len(pairs), "nll": nll[r], "tokens": tokens[r]}
        for r in ROLES
    }


# -- classification --------------------------------------------------------


def label_matrix(dialogues: Sequence[Dialogue], labels: Sequence[str], multi_label: bool) -> np.ndarray:
    """Indicator matrix; single-label mode keeps only each dialogue's first domain."""
    index = {l: i for i, l in enumerate(labels)}
    y = np.zeros((len(dialogues), len(labels)), dtype=np.float64)
    for row, d in enumerate(dialogues):
        if not d.domains:
            raise ValueError(f"dialogue {d.id!r} has no domain label")
        for dom in d.domains if multi_label else d.domains[:1]:
            if dom not in index:
                raise ValueError(f"label {dom!r} absent from the training split")
            y[row, index[dom]] = 1.0
    return y


def label_set(dialogues: Sequence[Dialogue], multi_label: bool) -> list[str]:
    labels = {dom for d in dialogues for dom in (d.domains if multi_label else d.domains[:1])}
    if not labels:
        raise ValueError("no domain labels present")
    return sorted(labels)


def macro_auc(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Mean one-vs-rest ROC AUC over labels that have both classes present."""
    aucs = [
        roc_auc_score(y_true[:, k], scores[:, k])
        for k in range(y_true.shape[1])
        if 0 < y_true[:, k].sum() < len(y_true)
    ]
    if not aucs:
        raise ValueError("no label has both positive and negative examples")
    return float(np.mean(aucs))


@torch.no_grad()
def summary_features(model: DialogueSummarizer, results: Sequence[SummaryResult]) -> np.ndarray:
    """Concatenated re-encoded customer and agent summaries, one row per dialogue."""
    rows = []
    for role in ROLES:
        vocab = model.vocabs[role]
        ids = [vocab.encode(res.summary(role) or [EOS]) for res in results]
        padded, lengths = pad_sequences(ids)
        rows.append(model.encode(role, padded, lengths))
    return torch.cat(rows, dim=-1).double().numpy()


def fit_linear_classifier(
    features: np.ndarray, y: np.ndarray, multi_label: bool, epochs: int = 200, lr: float = 0.01, seed: int = 0
):
    """Full-batch Adam on a linear head over standardized features; returns a scorer."""
    mean, std = features.mean(axis=0), features.std(axis=0) + 1e-8
    x = torch.from_numpy((features - mean) / std)
    target = torch.from_numpy(y)
    head = ClassifierHead(x.shape[1], y.shape[1], multi_label, seed=seed).double()
    opt = Adam(head.parameters(), lr)
    for _ in range(epochs):
        opt.zero_grad()
        head.loss(head(x), target).backward()
        opt.step()

    def score(new: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return head(torch.from_numpy((new - mean) / std)).numpy()

    return score


@dataclass
class ClassificationReport:
    auc: float
    labels: list[str]
    multi_label: bool
    feature_dim: int
    n_train: int
    n_test: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "auc": self.auc,
            "labels": self.labels,
            "multi_label": self.multi_label,
            "feature_dim": self.feature_dim,
            "n_train": self.n_train,
            "n_test": self.n_test,
            **self.extra,
        }


def classify_unsupervised(
    model: DialogueSummarizer,
    train_dialogues: Sequence[Dialogue],
    test_dialogues: Sequence[Dialogue],
    lexicon=None,
    multi_label: bool = False,
    max_len: int = 30,
    epochs: int = 200,
) -> ClassificationReport:
    """Domain classification from frozen-model summary embeddings."""
    labels = label_set(train_dialogues, multi_label)
    y_train = label_matrix(train_dialogues, labels, multi_label)
    y_test = label_matrix(test_dialogues, labels, multi_label)
    summarize = lambda ds: [summarize_dialogue(model, d, lexicon, max_len) for d in ds]  # noqa: E731
    f_train = summary_features(model, summarize(train_dialogues))
    f_test = summary_features(model, summarize(test_dialogues))
    scorer = fit_linear_classifier(f_train, y_train, multi_label, epochs)
    auc = macro_auc(y_test, scorer(f_test))
    return ClassificationReport(auc, labels, multi_label, f_train.shape[1], len(f_train), len(f_test))


def classify_supervised_joint(
    train_dialogues: Sequence[Dialogue],
    test_dialogues: Sequence[Dialogue],
    cfg: TrainConfig,
    customer_vocab,
    agent_vocab,
    multi_label: bool = False,
    out_dir=None,
):
    """Train the model jointly with a classifier on ``[s_x; s_y]``; AUC on held-out dialogues.

    Returns (model, report, head, ClassificationReport).
    """
    from .corpus import corpus_pairs

    labels = label_set(train_dialogues, multi_label)
    y = label_matrix(train_dialogues, labels, multi_label)
    targets = {d.id: torch.from_numpy(row).float() for d, row in zip(train_dialogues, y)}
    y_test = label_matrix(test_dialogues, labels, multi_label)
    model, report, head = train(
        corpus_pairs(train_dialogues), cfg, customer_vocab, agent_vocab, out_dir,
        labels=targets, multi_label=multi_label,
    )
    scores = supervised_scores(model, head, test_dialogues)
    auc = macro_auc(y_test, scores)
    cls = ClassificationReport(auc, labels, multi_label, 2 * cfg.latent_dim, len(train_dialogues), len(test_dialogues),
                               {"mode": "supervised", "classifier_weight": cfg.classifier_weight})
    return model, report, head, cls


@torch.no_grad()
def supervised_scores(model: DialogueSummarizer, head: ClassifierHead, dialogues: Sequence[Dialogue]) -> np.ndarray:
    rows = []
    for d in dialogues:
        s_x, s_y, _ = encode_dialogue(model, d)
        rows.append(torch.cat([s_x, s_y], dim=-1).to(head.linear.weight.dtype))
    return head(torch.cat(rows)).double().numpy()
