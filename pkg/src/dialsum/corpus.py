"""Dialogue ingestion, utterance pairing, vocabularies, factual lexicon and batching."""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import torch

CUSTOMER = "customer"
AGENT = "agent"
ROLES = (CUSTOMER, AGENT)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

FORMATS = ("jsonl", "multiwoz-json", "taskmaster-json")

_TOKEN_RE = re.compile(r"\d+(?:[.,:/-]\d+)+|\w+(?:'\w+)*|[^\w\s]")

_SPEAKER_ALIASES = {
    "customer": CUSTOMER,
    "user": CUSTOMER,
    "agent": AGENT,
    "system": AGENT,
    "assistant": AGENT,
}

MULTIWOZ_DOMAINS = ("attraction", "hospital", "hotel", "police", "restaurant", "taxi", "train")


class CorpusError(ValueError):
    """Raised for unreadable or malformed corpus input."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace after isolating punctuation.

    Numbers joined by ``.,:/-`` (times, prices, dates) and word-internal
    apostrophes stay in one token.
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Dialogue:
    id: str
    turns: list[tuple[str, list[str]]]
    domains: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.turns:
            raise CorpusError(f"dialogue {self.id!r} has no turns")
        for speaker, tokens in self.turns:
            if speaker not in ROLES:
                raise CorpusError(f"dialogue {self.id!r}: unknown speaker {speaker!r}")
            if not tokens:
                raise CorpusError(f"dialogue {self.id!r}: empty turn")

    def tokens(self, role: str | None = None) -> list[str]:
        return [tok for speaker, toks in self.turns if role in (None, speaker) for tok in toks]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "turns": [{"speaker": s, "text": " ".join(t)} for s, t in self.turns],
            "domains": list(self.domains),
        }


@dataclass
class UtterancePair:
    x: list[str]
    y: list[str]
    dialogue_id: str
    turn_index: int


def _speaker(tag: str, where: str) -> str:
    try:
        return _SPEAKER_ALIASES[str(tag).lower()]
    except KeyError:
        raise CorpusError(f"{where}: unknown speaker tag {tag!r}") from None


def _make_dialogue(did: str, raw_turns: Iterable[tuple[str, str]], domains, where: str) -> Dialogue:
    turns = []
    for speaker, text in raw_turns:
        tokens = tokenize(text or "")
        if not tokens:
            raise CorpusError(f"{where}: empty turn text")
        turns.append((_speaker(speaker, where), tokens))
    if not turns:
        raise CorpusError(f"{where}: no turns")
    return Dialogue(str(did), turns, sorted(set(domains or ())))


def _load_jsonl(path: Path) -> list[Dialogue]:
    dialogues = []
    with path.open(encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            where = f"{path}: record {index}"
            try:
                rec = json.loads(line)
                turns = [(t["speaker"], t["text"]) for t in rec["turns"]]
                did = rec["id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{where}: malformed record ({exc})") from None
            dialogues.append(_make_dialogue(did, turns, rec.get("domains"), where))
    return dialogues


def _load_multiwoz(path: Path) -> list[Dialogue]:
    # MultiWOZ 2.0 data.json: {dialogue_id: {"goal": {...}, "log": [{"text", "metadata"}, ...]}}
    # Turns alternate user/system starting with the user.
    data = _read_json(path)
    if not isinstance(data, dict):
        raise CorpusError(f"{path}: expected a JSON object keyed by dialogue id")
    dialogues = []
    for index, (did, rec) in enumerate(data.items()):
        where = f"{path}: record {index} ({did})"
        try:
            log = rec["log"]
            turns = [("user" if i % 2 == 0 else "system", t["text"]) for i, t in enumerate(log)]
            goal = rec.get("goal", {})
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"{where}: malformed record ({exc})") from None
        domains = [d for d in MULTIWOZ_DOMAINS if goal.get(d)]
        dialogues.append(_make_dialogue(did, turns, domains, where))
    return dialogues


def _load_taskmaster(path: Path) -> list[Dialogue]:
    # Taskmaster-1 self-dialogs.json: [{"conversation_id", "instruction_id", "utterances": [...]}]
    data = _read_json(path)
    if not isinstance(data, list):
        raise CorpusError(f"{path}: expected a JSON list of conversations")
    dialogues = []
    for index, rec in enumerate(data):
        where = f"{path}: record {index}"
        try:
            did = rec["conversation_id"]
            turns = [(u["speaker"], u["text"]) for u in rec["utterances"]]
            instruction = rec.get("instruction_id") or ""
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"{where}: malformed record ({exc})") from None
        domain = instruction.split("-")[0] if instruction else ""
        dialogues.append(_make_dialogue(did, turns, [domain] if domain else [], where))
    return dialogues


def _read_json(path: Path):
    try:
        with path.open(encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: malformed JSON ({exc})") from None


def load_corpus(path, format: str = "jsonl") -> list[Dialogue]:
    path = Path(path)
    if format not in FORMATS:
        raise CorpusError(f"unknown corpus format {format!r}; expected one of {FORMATS}")
    if not path.is_file():
        raise CorpusError(f"{path}: not a readable file")
    if format == "jsonl":
        return _load_jsonl(path)
    if format == "multiwoz-json":
        return _load_multiwoz(path)
    return _load_taskmaster(path)


def save_corpus(dialogues: Iterable[Dialogue], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(d.to_json(), ensure_ascii=False) + "\n")


def merge_turns(d: Dialogue) -> list[tuple[str, list[str]]]:
    """Collapse runs of same-speaker turns into one turn."""
    merged: list[tuple[str, list[str]]] = []
    for speaker, tokens in d.turns:
        if merged and merged[-1][0] == speaker:
            merged[-1] = (speaker, merged[-1][1] + list(tokens))
        else:
            merged.append((speaker, list(tokens)))
    return merged


def pair_utterances(d: Dialogue) -> list[UtterancePair]:
    turns = merge_turns(d)
    if turns and turns[0][0] == AGENT:
        turns = turns[1:]
    pairs = []
    for i in range(0, len(turns) - 1, 2):
        (_, x), (_, y) = turns[i], turns[i + 1]
        pairs.append(UtterancePair(x, y, d.id, len(pairs)))
    return pairs


class Vocabulary:
    def __init__(self, role: str, tokens: Sequence[str] = ()):
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        self.role = role
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    @property
    def size(self) -> int:
        return len(self.itos)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for tok in self.itos[len(SPECIALS):]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path, role: str) -> "Vocabulary":
        with Path(path).open(encoding="utf-8") as fh:
            return cls(role, [line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocabulary(
    pairs: Sequence[UtterancePair], role: str, min_freq: int = 2, max_size: int = 20000
) -> Vocabulary:
    if not pairs:
        raise ValueError("cannot build a vocabulary from zero pairs")
    counts = Counter(tok for p in pairs for tok in (p.x if role == CUSTOMER else p.y))
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(role, kept[:max_size])


# Priority order decides the recorded provenance when several rules match.
_TIME_RE = re.compile(r"^(?:[01]?\d|2[0-3]):[0-5]\d$")
_NUMERIC_RE = re.compile(r"^\d+(?:[./,:-]\d+)*$")


def _is_code(tok: str) -> bool:
    return len(tok) >= 6 and any(c.isalpha() for c in tok) and any(c.isdigit() for c in tok)


FACTUAL_RULES = {
    "time": lambda tok: bool(_TIME_RE.match(tok)),
    "numeric": lambda tok: bool(_NUMERIC_RE.match(tok)),
    "alphanumeric-code": _is_code,
}


def classify_token(tok: str, gazetteer: frozenset[str] | set[str] = frozenset()) -> str | None:
    """Name of the first factual rule matching ``tok``, or None."""
    for name, rule in FACTUAL_RULES.items():
        if rule(tok):
            return name
    if tok in gazetteer:
        return "gazetteer"
    return None


@dataclass
class FactualLexicon:
    entries: dict[str, str] = field(default_factory=dict)

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for tok in sorted(self.entries):
                fh.write(f"{tok}\t{self.entries[tok]}\n")

    @classmethod
    def load(cls, path) -> "FactualLexicon":
        entries = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    tok, _, rule = line.rstrip("\n").partition("\t")
                    entries[tok] = rule or "gazetteer"
        return cls(entries)


def load_gazetteer(path) -> set[str]:
    with Path(path).open(encoding="utf-8") as fh:
        return {line.strip().lower() for line in fh if line.strip()}


def extract_factual_lexicon(pairs: Iterable[UtterancePair], gazetteer=None) -> FactualLexicon:
    gaz = frozenset(gazetteer or ())
    entries = {}
    for p in pairs:
        for tok in (*p.x, *p.y):
            if tok not in entries:
                rule = classify_token(tok, gaz)
                if rule is not None:
                    entries[tok] = rule
    return FactualLexicon(dict(sorted(entries.items())))


@dataclass
class Batch:
    """Padded utterance pairs of whole dialogues.

    ``dialogue_index[i]`` is the position (within ``dialogue_ids``) of the
    dialogue that pair ``i`` came from; pairs of a dialogue are contiguous.
    """

    x: torch.Tensor
    y: torch.Tensor
    x_len: torch.Tensor
    y_len: torch.Tensor
    dialogue_index: torch.Tensor
    dialogue_ids: list[str]
    pairs: list[UtterancePair]

    @property
    def n_pairs(self) -> int:
        return self.x.shape[0]

    @property
    def n_dialogues(self) -> int:
        return len(self.dialogue_ids)


def pad_sequences(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    out = torch.full((len(seqs), int(lengths.max())), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out, lengths


def make_batch(pairs: Sequence[UtterancePair], cvocab: Vocabulary, avocab: Vocabulary) -> Batch:
    dialogue_ids: list[str] = []
    index = []
    for p in pairs:
        if not dialogue_ids or dialogue_ids[-1] != p.dialogue_id:
            dialogue_ids.append(p.dialogue_id)
        index.append(len(dialogue_ids) - 1)
    x, x_len = pad_sequences([cvocab.encode(p.x) for p in pairs])
    y, y_len = pad_sequences([avocab.encode(p.y) for p in pairs])
    return Batch(x, y, x_len, y_len, torch.tensor(index, dtype=torch.long), dialogue_ids, list(pairs))


def group_by_dialogue(pairs: Iterable[UtterancePair]) -> list[list[UtterancePair]]:
    groups: dict[str, list[UtterancePair]] = {}
    for p in pairs:
        groups.setdefault(p.dialogue_id, []).append(p)
    return [sorted(g, key=lambda p: p.turn_index) for g in groups.values()]


def batch_iterator(
    pairs: Sequence[UtterancePair],
    batch_size: int,
    shuffle_seed: int | None,
    cvocab: Vocabulary,
    avocab: Vocabulary,
) -> Iterator[Batch]:
    """Yield batches of ``batch_size`` whole dialogues in a seeded order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    groups = group_by_dialogue(pairs)
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(groups)
    for start in range(0, len(groups), batch_size):
        chunk = [p for g in groups[start : start + batch_size] for p in g]
        yield make_batch(chunk, cvocab, avocab)


def corpus_pairs(dialogues: Iterable[Dialogue]) -> list[UtterancePair]:
    return [p for d in dialogues for p in pair_utterances(d)]


def split_sizes(n: int, format: str) -> tuple[int, int, int]:
    """(train, test, valid) dialogue counts.

    The public datasets use their published split ratios (MultiWOZ
    8438/1000/1000 of 10438, Taskmaster written 6168/770/770 of 7708);
    anything else is split 80/10/10.
    """
    ratio = {"multiwoz-json": 1000 / 10438, "taskmaster-json": 770 / 7708}.get(format, 0.1)
    test = int(round(n * ratio))
    valid = test
    return n - test - valid, test, valid


def split_dialogues(dialogues: Sequence[Dialogue], format: str, seed: int = 0) -> dict[str, list[str]]:
    ids = [d.id for d in dialogues]
    random.Random(seed).shuffle(ids)
    n_train, n_test, _ = split_sizes(len(ids), format)
    return {
        "train": ids[:n_train],
        "test": ids[n_train : n_train + n_test],
        "valid": ids[n_train + n_test :],
    }
