"""Command line entry point: ``dialsum <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
``DIALSUM_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .corpus import (
    AGENT,
    CUSTOMER,
    FORMATS,
    CorpusError,
    FactualLexicon,
    Vocabulary,
    build_vocabulary,
    corpus_pairs,
    extract_factual_lexicon,
    load_corpus,
    load_gazetteer,
    save_corpus,
    split_dialogues,
)
from .model import ARCHS

log = logging.getLogger("dialsum")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
SPLITS = ("train", "test", "valid")
CORPUS_FILE = "corpus.jsonl"
SPLITS_FILE = "splits.json"
LEXICON_FILE = "lexicon.txt"


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def data_error(message: str) -> CommandError:
    return CommandError(EXIT_DATA, message)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is our data-error code
    def error(self, message):
        raise CommandError(EXIT_USAGE, f"{self.prog}: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def _emit(text: str, output) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _jsonl(records) -> str:
    return "".join(_dump(r) + "\n" for r in records)


def _vocab_path(corpus_dir: Path, role: str) -> Path:
    return corpus_dir / f"vocab.{role}.txt"


# -- prepared corpus directory ---------------------------------------------


class PreparedCorpus:
    def __init__(self, root):
        self.root = Path(root)
        paths = [self.root / CORPUS_FILE, self.root / SPLITS_FILE, self.root / LEXICON_FILE,
                 _vocab_path(self.root, CUSTOMER), _vocab_path(self.root, AGENT)]
        missing = [p.name for p in paths if not p.is_file()]
        if missing:
            raise data_error(f"{self.root}: not a prepared corpus (missing {', '.join(missing)})")
        self.dialogues = load_corpus(self.root / CORPUS_FILE)
        self.by_id = {d.id: d for d in self.dialogues}
        self.manifest = json.loads((self.root / SPLITS_FILE).read_text(encoding="utf-8"))
        self.lexicon = FactualLexicon.load(self.root / LEXICON_FILE)

    @property
    def format(self) -> str:
        return self.manifest.get("format", "jsonl")

    def vocab(self, role: str) -> Vocabulary:
        return Vocabulary.load(_vocab_path(self.root, role), role)

    def split(self, name: str):
        ids = self.manifest.get(name)
        if ids is None:
            raise data_error(f"split {name!r} absent from {SPLITS_FILE}")
        unknown = [i for i in ids if i not in self.by_id]
        if unknown:
            raise data_error(f"split {name!r} names dialogues missing from the corpus: {unknown[:5]}")
        return [self.by_id[i] for i in ids]


def _load_model(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise data_error(f"{path}: checkpoint not found") from None
    except (CheckpointError, KeyError, TypeError) as exc:
        raise data_error(f"{path}: invalid checkpoint ({exc})") from None


def _train_config(args):
    from .training import TrainConfig

    overrides = {}
    if getattr(args, "arch", None):
        overrides["arch"] = args.arch
    if getattr(args, "max_steps", None) is not None:
        overrides["max_steps"] = args.max_steps
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    try:
        if args.config:
            return TrainConfig.from_file(args.config, **overrides)
        return TrainConfig(**overrides)
    except FileNotFoundError:
        raise data_error(f"{args.config}: config not found") from None
    except (ValueError, TypeError) as exc:
        raise CommandError(EXIT_USAGE, f"bad config: {exc}") from None


# -- commands ----------------------------------------------------------------


def cmd_prepare(args) -> str:
    out = Path(args.output_dir)
    gazetteer = None
    if args.gazetteer:
        try:
            gazetteer = load_gazetteer(args.gazetteer)
        except OSError as exc:
            raise data_error(f"{args.gazetteer}: {exc}") from None
    dialogues = load_corpus(args.input, args.format)
    if not dialogues:
        raise data_error(f"{args.input}: corpus is empty")
    splits = split_dialogues(dialogues, args.format, args.seed)
    by_id = {d.id: d for d in dialogues}
    if len(by_id) != len(dialogues):
        raise data_error(f"{args.input}: duplicate dialogue ids")
    train_pairs = corpus_pairs(by_id[i] for i in splits["train"])
    if not train_pairs:
        raise data_error(f"{args.input}: training split has no customer/agent pairs")
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(dialogues, out / CORPUS_FILE)
    for role in (CUSTOMER, AGENT):
        build_vocabulary(train_pairs, role, args.min_freq, args.max_vocab).save(_vocab_path(out, role))
    extract_factual_lexicon(corpus_pairs(dialogues), gazetteer).save(out / LEXICON_FILE)
    manifest = {"format": args.format, "seed": args.seed, **splits}
    (out / SPLITS_FILE).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    sizes = "/".join(str(len(splits[s])) for s in SPLITS)
    return f"prepared {len(dialogues)} dialogues in {out} (train/test/valid {sizes})"


def cmd_train(args) -> str:
    from .training import NonFiniteLossError, train

    corpus = PreparedCorpus(args.corpus_dir)
    cfg = _train_config(args)
    pairs = corpus_pairs(corpus.split("train"))
    if not pairs:
        raise data_error("training split has no customer/agent pairs")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        _, report, _ = train(pairs, cfg, corpus.vocab(CUSTOMER), corpus.vocab(AGENT), out,
                             progress_every=args.log_every)
    except NonFiniteLossError as exc:
        raise CommandError(EXIT_RUNTIME, str(exc)) from None
    last = report.records[-1]
    return (f"trained {len(report.records)} steps in {report.wall_clock:.1f}s, final loss {last['loss']:.4f}; "
            f"checkpoint {report.checkpoint}")


def cmd_summarize(args) -> str:
    from .summarizer import summarize_dialogue

    model, _, _ = _load_model(args.checkpoint)
    corpus = PreparedCorpus(args.corpus_dir)
    dialogues = corpus.split(args.split)
    if not dialogues:
        raise data_error(f"split {args.split!r} is empty")
    records = []
    for d in dialogues:
        try:
            res = summarize_dialogue(model, d, corpus.lexicon, args.max_len, copy=not args.no_copy)
        except ValueError as exc:
            log.warning("skipping %s: %s", d.id, exc)
            continue
        rec = res.to_json()
        if not args.attention:
            rec.pop("attention")
        records.append(rec)
    _emit(_jsonl(records), args.output)
    return f"summarized {len(records)} dialogues"


def _read_jsonl(path) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise data_error(f"{path}: {exc}") from None
    records = []
    for i, line in enumerate(lines):
        if line.strip():
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise data_error(f"{path}: line {i + 1}: {exc}") from None
    return records


def cmd_evaluate(args) -> str:
    from .evaluation import perplexity, read_summary_records, rouge_table

    if not (args.references or args.ppl):
        raise CommandError(EXIT_USAGE, "evaluate needs --references and/or --ppl")
    result = {}
    if args.references:
        if not args.summaries:
            raise CommandError(EXIT_USAGE, "--references needs --summaries")
        try:
            summaries = read_summary_records(_read_jsonl(args.summaries))
            references = read_summary_records(_read_jsonl(args.references))
        except KeyError as exc:
            raise data_error(f"summary record lacks field {exc}") from None
        if not references:
            raise data_error(f"{args.references}: no references")
        try:
            result["rouge"] = rouge_table(summaries, references).to_json()
        except ValueError as exc:
            raise data_error(str(exc)) from None
    if args.ppl:
        if not (args.checkpoint and args.corpus_dir):
            raise CommandError(EXIT_USAGE, "--ppl needs --checkpoint and --corpus-dir")
        model, _, _ = _load_model(args.checkpoint)
        pairs = corpus_pairs(PreparedCorpus(args.corpus_dir).split(args.split))
        if not pairs:
            raise data_error(f"split {args.split!r} has no utterance pairs")
        result["ppl"] = perplexity(model, pairs)
    _emit(_dump(result) + "\n", args.output)
    return "evaluation written" + (f" to {args.output}" if args.output else "")


def cmd_classify(args) -> str:
    from .evaluation import classify_supervised_joint, classify_unsupervised

    corpus = PreparedCorpus(args.corpus_dir)
    train_d, test_d = corpus.split("train"), corpus.split(args.split)
    unlabeled = [d.id for d in (*train_d, *test_d) if not d.domains]
    if unlabeled:
        raise data_error(f"dialogues without domain labels: {unlabeled[:5]}")
    multi = args.multi_label if args.multi_label is not None else corpus.format == "multiwoz-json"
    try:
        if args.mode == "unsupervised":
            if not args.checkpoint:
                raise CommandError(EXIT_USAGE, "unsupervised mode needs --checkpoint")
            model, _, _ = _load_model(args.checkpoint)
            report = classify_unsupervised(model, train_d, test_d, corpus.lexicon, multi, args.max_len)
            report.extra["mode"] = "unsupervised"
        else:
            cfg = _train_config(args)
            *_, report = classify_supervised_joint(
                train_d, test_d, cfg, corpus.vocab(CUSTOMER), corpus.vocab(AGENT), multi, args.out
            )
    except ValueError as exc:
        raise data_error(str(exc)) from None
    _emit(_dump(report.to_json()) + "\n", args.output)
    return f"{args.mode} AUC {report.auc:.4f}"


def cmd_generate(args) -> str:
    from .generative import generate_pair
    from .summarizer import strip_eos

    if args.count < 1:
        raise CommandError(EXIT_USAGE, "--count must be positive")
    model, _, _ = _load_model(args.checkpoint)
    gen = torch.Generator().manual_seed(args.seed)
    records = []
    for cust, agent in generate_pair(model, gen, args.max_len, args.count):
        records.append({
            "customer": " ".join(strip_eos(model.vocabs[CUSTOMER].decode(cust))),
            "agent": " ".join(strip_eos(model.vocabs[AGENT].decode(agent))),
        })
    _emit(_jsonl(records), args.output)
    return f"generated {len(records)} pairs"


def cmd_make_synthetic(args) -> str:
    from .synthetic import make_synthetic

    try:
        dialogues = make_synthetic(args.n_dialogues, args.n_domains, args.seed)
    except ValueError as exc:
        raise CommandError(EXIT_USAGE, str(exc)) from None
    save_corpus(dialogues, args.out)
    return f"wrote {len(dialogues)} dialogues to {args.out}"


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dialsum", description="Unsupervised two-speaker dialogue summarization.")
    p.add_argument("--version", action="version", version=f"dialsum {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="tokenize a corpus; build vocabularies, lexicon and splits")
    s.add_argument("--input", required=True)
    s.add_argument("--format", required=True, choices=FORMATS)
    s.add_argument("--output-dir", required=True)
    s.add_argument("--min-freq", type=int, default=2)
    s.add_argument("--max-vocab", type=int, default=20000)
    s.add_argument("--gazetteer")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_prepare)

    def training_flags(s):
        s.add_argument("--config", help="JSON object or key=value lines overriding the defaults")
        s.add_argument("--arch", choices=ARCHS)
        s.add_argument("--max-steps", type=int)
        s.add_argument("--seed", type=int)

    s = sub.add_parser("train", help="train a model on the training split")
    s.add_argument("--corpus-dir", required=True)
    s.add_argument("--out", required=True, help="directory for checkpoint.npz and report.jsonl")
    s.add_argument("--log-every", type=int, default=50)
    training_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("summarize", help="write per-speaker summaries as JSONL")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus-dir", required=True)
    s.add_argument("--split", default="test", choices=SPLITS)
    s.add_argument("--max-len", type=int, default=30)
    s.add_argument("--no-copy", action="store_true", help="disable the partial copy step")
    s.add_argument("--attention", action="store_true", help="include sentence-attention weights")
    s.add_argument("--output")
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("evaluate", help="ROUGE against references and/or perplexity and KL")
    s.add_argument("--checkpoint")
    s.add_argument("--summaries")
    s.add_argument("--references")
    s.add_argument("--ppl", action="store_true")
    s.add_argument("--corpus-dir")
    s.add_argument("--split", default="test", choices=SPLITS)
    s.add_argument("--output")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("classify", help="domain classification AUC")
    s.add_argument("--checkpoint")
    s.add_argument("--corpus-dir", required=True)
    s.add_argument("--mode", choices=("unsupervised", "supervised"), default="unsupervised")
    s.add_argument("--split", default="test", choices=("test", "valid"))
    s.add_argument("--max-len", type=int, default=30)
    s.add_argument("--multi-label", dest="multi_label", action="store_true", default=None)
    s.add_argument("--single-label", dest="multi_label", action="store_false")
    s.add_argument("--out", help="supervised mode: directory for the jointly trained checkpoint")
    s.add_argument("--output")
    training_flags(s)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("generate", help="sample novel customer/agent exchanges")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--count", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-len", type=int, default=30)
    s.add_argument("--output")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("make-synthetic", help="write the templated synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-dialogues", type=int, default=200)
    s.add_argument("--n-domains", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    level = os.environ.get("DIALSUM_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args = build_parser().parse_args(argv)
        message = args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CorpusError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything else is a bug or numerical failure
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(message, file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
