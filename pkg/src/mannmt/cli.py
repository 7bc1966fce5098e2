"""Command-line entry point: ``mannmt train | translate | evaluate | inspect``.

Every option of ``train`` may also come from a flat ``key = value`` config
file given with ``--config`` (``#`` starts a comment, keys use the long flag
name with dashes or underscores). Flags on the command line win over the
file, and the fully resolved configuration is written to
``<output-dir>/config.txt``; that file can be passed back with ``--config``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis
from .bleu import bleu
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ParallelCorpus,
    Vocabulary,
    _read_lines,
    build_vocab,
    detokenize,
    generate_copy_task,
    generate_toy_translation,
    load_parallel_corpus,
)
from .decoding import beam_search, greedy_decode
from .errors import ContractViolation, IngestionError, TrainingDiverged
from .models import ARCHITECTURES, ModelConfig, build_model
from .training import TrainConfig, token_accuracy, train

log = logging.getLogger("mannmt")

TASKS = ("copy", "toy", "files")


@dataclass
class RunConfig:
    task: str = "toy"
    arch: str = "baseline"
    output_dir: str = "run"
    seed: int = 0
    # data
    train_src: Optional[str] = None
    train_tgt: Optional[str] = None
    valid_src: Optional[str] = None
    valid_tgt: Optional[str] = None
    vocab_size: int = 10000
    copy_bits: int = 8
    copy_min_length: int = 1
    copy_max_length: int = 8
    toy_vocab: int = 50
    toy_min_length: int = 1
    toy_max_length: int = 12
    train_pairs: int = 20000
    held_out: int = 1000
    # model
    embedding_size: int = 32
    hidden_size: int = 64
    layers: int = 1
    memory_locations: int = 16
    memory_width: int = 16
    read_heads: int = 1
    write_heads: int = 1
    bidirectional: Optional[bool] = None
    dropout: float = 0.3
    # optimisation
    steps: int = 1000
    batch_size: int = 32
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    validation_interval: int = 0
    target_accuracy: Optional[float] = None

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ContractViolation(f"task must be one of {TASKS}, got {self.task!r}")
        if self.arch not in ARCHITECTURES:
            raise ContractViolation(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        positive = ("memory_locations", "memory_width", "embedding_size", "hidden_size", "layers", "batch_size",
                    "copy_bits", "copy_min_length", "toy_vocab", "toy_min_length", "train_pairs", "held_out")
        for name in positive:
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name.replace('_', '-')} must be at least 1, got {getattr(self, name)}")
        for name in ("steps", "read_heads", "write_heads", "validation_interval"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name.replace('_', '-')} must be nonnegative, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.learning_rate < 0 or self.clip_norm < 0:
            raise ContractViolation("learning-rate and clip-norm must be nonnegative")
        if self.copy_max_length < self.copy_min_length or self.toy_max_length < self.toy_min_length:
            raise ContractViolation("maximum lengths must not be below minimum lengths")
        if self.task == "toy" and self.held_out >= self.train_pairs:
            raise ContractViolation("held-out must be smaller than train-pairs")
        if self.task == "files":
            for name in ("train_src", "train_tgt", "valid_src", "valid_tgt"):
                if not getattr(self, name):
                    raise ContractViolation(f"{name.replace('_', '-')} is required for task files")

    def model_config(self, source_vocab_size: int, target_vocab_size: int) -> ModelConfig:
        return ModelConfig(self.arch, source_vocab_size, target_vocab_size, self.embedding_size, self.hidden_size,
                           self.layers, self.memory_locations, self.memory_width, self.read_heads, self.write_heads,
                           self.bidirectional, self.dropout)

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if value is None:
                continue
            lines.append(f"{key.replace('_', '-')} = {str(value).lower() if isinstance(value, bool) else value}")
        return "\n".join(lines) + "\n"


def _bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for number, line in enumerate(_read_lines(path), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"{path}: line {number} is not of the form key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


# ------------------------------------------------------------------- parsers

def _add_train_arguments(p: argparse.ArgumentParser) -> None:
    d = RunConfig()
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    p.add_argument("--task", choices=TASKS, default=d.task, help="synthetic copy task, toy translation, or text files")
    p.add_argument("--arch", choices=ARCHITECTURES, default=d.arch, help="model architecture")
    p.add_argument("--output-dir", default=d.output_dir, help="checkpoints, metrics and config echo go here")
    p.add_argument("--seed", type=int, default=d.seed, help="the single source of randomness")
    g = p.add_argument_group("data")
    g.add_argument("--train-src", default=None, help="training source file (task files)")
    g.add_argument("--train-tgt", default=None, help="training target file (task files)")
    g.add_argument("--valid-src", default=None, help="validation source file (task files)")
    g.add_argument("--valid-tgt", default=None, help="validation target file (task files)")
    g.add_argument("--vocab-size", type=int, default=d.vocab_size, help="vocabulary cap for text files")
    g.add_argument("--copy-bits", type=int, default=d.copy_bits, help="bits per copy symbol; 2**bits symbols")
    g.add_argument("--copy-min-length", type=int, default=d.copy_min_length, help="shortest copy sequence")
    g.add_argument("--copy-max-length", type=int, default=d.copy_max_length, help="longest copy sequence")
    g.add_argument("--toy-vocab", type=int, default=d.toy_vocab, help="content tokens per toy language")
    g.add_argument("--toy-min-length", type=int, default=d.toy_min_length, help="shortest toy sentence")
    g.add_argument("--toy-max-length", type=int, default=d.toy_max_length, help="longest toy sentence")
    g.add_argument("--train-pairs", type=int, default=d.train_pairs, help="synthetic pairs generated")
    g.add_argument("--held-out", type=int, default=d.held_out, help="synthetic validation pairs")
    g = p.add_argument_group("model")
    g.add_argument("--embedding-size", type=int, default=d.embedding_size, help="token embedding width")
    g.add_argument("--hidden-size", type=int, default=d.hidden_size, help="LSTM units per layer")
    g.add_argument("--layers", type=int, default=d.layers, help="stacked LSTM layers")
    g.add_argument("--memory-locations", type=int, default=d.memory_locations, help="memory rows N")
    g.add_argument("--memory-width", type=int, default=d.memory_width, help="memory row width W")
    g.add_argument("--read-heads", type=int, default=d.read_heads, help="read heads (mad, pure-mann)")
    g.add_argument("--write-heads", type=int, default=d.write_heads, help="write heads (mad, pure-mann)")
    g.add_argument("--bidirectional", type=_bool, default=d.bidirectional,
                   help="bidirectional encoder; unset means yes for encoder-decoders")
    g.add_argument("--dropout", type=float, default=d.dropout, help="dropout rate during training")
    g = p.add_argument_group("optimisation")
    g.add_argument("--steps", type=int, default=d.steps, help="parameter updates")
    g.add_argument("--batch-size", type=int, default=d.batch_size, help="sentence pairs per update")
    g.add_argument("--learning-rate", type=float, default=d.learning_rate, help="Adam step size")
    g.add_argument("--clip-norm", type=float, default=d.clip_norm, help="global gradient-norm ceiling; 0 disables")
    g.add_argument("--validation-interval", type=int, default=d.validation_interval,
                   help="steps between validations; 0 validates once per epoch")
    g.add_argument("--target-accuracy", type=float, default=d.target_accuracy,
                   help="stop once validation token accuracy reaches this")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="mannmt", description="Memory-augmented sequence transduction.",
                                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints", formatter_class=fmt)
    _add_train_arguments(p)
    parser.set_defaults(train_parser=p)

    p = sub.add_parser("translate", help="decode one output line per input line", formatter_class=fmt)
    p.add_argument("checkpoint", help="a .ckpt file written by train")
    p.add_argument("--input", required=True, help="whitespace-tokenised source sentences")
    p.add_argument("--output", default="-", help="output file, - for stdout")
    p.add_argument("--beam-width", type=int, default=10, help="hypotheses kept per step")
    p.add_argument("--greedy", action="store_true", help="argmax decoding instead of beam search")
    p.add_argument("--max-length", type=int, default=0, help="decode limit; 0 means 2 * source length + 10")
    p.add_argument("--arch", choices=ARCHITECTURES, default=None, help="fail unless the checkpoint has this")
    p.add_argument("--source-vocab", default=None, help="fail unless the checkpoint's source vocabulary matches")
    p.add_argument("--target-vocab", default=None, help="fail unless the checkpoint's target vocabulary matches")

    p = sub.add_parser("evaluate", help="print corpus BLEU and token accuracy", formatter_class=fmt)
    p.add_argument("checkpoint", help="a .ckpt file written by train")
    p.add_argument("--source", required=True, help="whitespace-tokenised source sentences")
    p.add_argument("--reference", required=True, help="one reference translation per source line")
    p.add_argument("--beam-width", type=int, default=10, help="hypotheses kept per step")
    p.add_argument("--greedy", action="store_true", help="argmax decoding instead of beam search")
    p.add_argument("--max-length", type=int, default=0, help="decode limit; 0 means 2 * source length + 10")

    p = sub.add_parser("inspect", help="export per-head address traces for one sentence", formatter_class=fmt)
    p.add_argument("checkpoint", help="a .ckpt file written by train")
    p.add_argument("--sentence", required=True, help="whitespace-tokenised source sentence")
    p.add_argument("--output-dir", required=True, help="one subdirectory per head is written here")
    p.add_argument("--max-length", type=int, default=0, help="decode limit; 0 means 2 * source length + 10")
    return parser


def resolve_train_config(parser: argparse.ArgumentParser, argv: list) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        train_parser = args.train_parser
        actions = {a.dest: a for a in train_parser._actions}
        overrides = {}
        for key, value in read_config_file(args.config).items():
            if key not in actions or key in ("config", "help"):
                raise ContractViolation(f"{args.config}: unknown key {key!r}")
            convert = actions[key].type or str
            try:
                overrides[key] = None if value.lower() == "none" else convert(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ContractViolation(f"{args.config}: bad value for {key!r}: {exc}") from None
        train_parser.set_defaults(**overrides)
        args = parser.parse_args(argv)
    fields = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    config = RunConfig(**fields)
    config.validate()
    return config


# ------------------------------------------------------------------ commands

def _seeds(seed: int) -> tuple:
    data, valid, model, loop = (int(s) for s in np.random.SeedSequence(seed).generate_state(4))
    return data, valid, model, loop


def load_task_data(config: RunConfig) -> tuple:
    data_seed, valid_seed, _, _ = _seeds(config.seed)
    if config.task == "copy":
        args = (config.copy_min_length, config.copy_max_length, config.copy_bits)
        return (generate_copy_task(config.train_pairs, *args, data_seed),
                generate_copy_task(config.held_out, *args, valid_seed))
    if config.task == "toy":
        full = generate_toy_translation(config.train_pairs, config.toy_vocab, config.toy_min_length,
                                        config.toy_max_length, data_seed)
        return full.split(config.held_out)
    source_vocab = build_vocab(config.train_src, config.vocab_size)
    target_vocab = build_vocab(config.train_tgt, config.vocab_size)
    train_corpus = load_parallel_corpus(config.train_src, config.train_tgt, source_vocab, target_vocab)
    valid_corpus = load_parallel_corpus(config.valid_src, config.valid_tgt, source_vocab, target_vocab)
    return train_corpus, valid_corpus


def _write_corpus_text(corpus: ParallelCorpus, out: Path, stem: str) -> None:
    for side, vocab, index in (("src", corpus.source_vocab, 0), ("tgt", corpus.target_vocab, 1)):
        text = "".join(detokenize(vocab, pair[index]) + "\n" for pair in corpus.pairs)
        (out / f"{stem}.{side}").write_text(text, encoding="utf-8")


def cmd_train(config: RunConfig) -> int:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    train_corpus, valid_corpus = load_task_data(config)
    train_corpus.validate()
    valid_corpus.validate()
    if config.task != "files":
        _write_corpus_text(valid_corpus, out, "valid")
    _, _, model_seed, loop_seed = _seeds(config.seed)
    model = build_model(config.model_config(len(train_corpus.source_vocab), len(train_corpus.target_vocab)),
                        seed=model_seed)
    train_config = TrainConfig(steps=config.steps, batch_size=config.batch_size, learning_rate=config.learning_rate,
                               clip_norm=config.clip_norm, seed=loop_seed,
                               validation_interval=config.validation_interval or None,
                               target_accuracy=config.target_accuracy)

    def report(step, epoch, result):
        log.info("step %d epoch %d: token accuracy %.4f, BLEU %.2f", step, epoch, result.token_accuracy, result.bleu)

    vocabs = (train_corpus.source_vocab, train_corpus.target_vocab)
    try:
        result = train(model, train_corpus, valid_corpus, train_config, log_path=out / "metrics.tsv",
                       on_validation=report)
    except TrainingDiverged as exc:
        if exc.checkpoint is not None:
            save_checkpoint(out / "last_good.ckpt", exc.checkpoint, *vocabs, {"step": exc.step - 1})
        print(f"error: training diverged: {exc}; last good parameters in {out / 'last_good.ckpt'}", file=sys.stderr)
        return 1
    save_checkpoint(out / "best.ckpt", result.model, *vocabs, {"step": result.best_step, "bleu": result.best_bleu})
    save_checkpoint(out / "last.ckpt", result.final_model, *vocabs, {"step": result.steps_run})
    print(f"steps={result.steps_run}\tbest_step={result.best_step}\tbest_bleu={result.best_bleu:.4f}\t"
          f"checkpoint={out / 'best.ckpt'}")
    return 0


def _limit(requested: int, source: list) -> int:
    return requested if requested > 0 else 2 * len(source) + 10


def _decode_lines(ckpt, lines: list, beam_width: int, greedy: bool, max_length: int) -> list:
    params = ckpt.model.bind()
    out = []
    for line in lines:
        src = ckpt.source_vocab.encode(line.split())
        limit = _limit(max_length, src)
        if greedy:
            ids = greedy_decode(ckpt.model, np.array([src]), None, limit, params)[0]
        else:
            ids = beam_search(ckpt.model, src, beam_width, limit, params).tokens
        out.append(ids)
    return out


def cmd_translate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.arch is not None and args.arch != ckpt.model.config.architecture:
        raise ContractViolation(f"checkpoint architecture is {ckpt.model.config.architecture}, not {args.arch}")
    for flag, path, vocab in (("source", args.source_vocab, ckpt.source_vocab),
                              ("target", args.target_vocab, ckpt.target_vocab)):
        if path is not None and Vocabulary.load(path) != vocab:
            raise ContractViolation(f"{flag} vocabulary {path} does not match the checkpoint")
    if args.beam_width < 1:
        raise ContractViolation("beam-width must be at least 1")
    lines = _read_lines(args.input)
    decoded = _decode_lines(ckpt, lines, args.beam_width, args.greedy, args.max_length)
    text = "".join(detokenize(ckpt.target_vocab, ids) + "\n" for ids in decoded)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    sources, references = _read_lines(args.source), _read_lines(args.reference)
    if len(sources) != len(references):
        raise IngestionError(f"{args.source} has {len(sources)} lines but {args.reference} has {len(references)}")
    if not sources:
        raise IngestionError(f"{args.source} is empty")
    if args.beam_width < 1:
        raise ContractViolation("beam-width must be at least 1")
    decoded = _decode_lines(ckpt, sources, args.beam_width, args.greedy, args.max_length)
    hyp_tokens = [ckpt.target_vocab.decode(ids) for ids in decoded]
    ref_tokens = [line.split() for line in references]
    score = bleu(hyp_tokens, ref_tokens)
    accuracy = token_accuracy(decoded, [ckpt.target_vocab.encode(r) for r in ref_tokens])
    print(f"bleu={score:.4f}\ttoken_accuracy={accuracy:.6f}\tsentences={len(sources)}")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    src = ckpt.source_vocab.encode(args.sentence.split())
    decoded = greedy_decode(ckpt.model, np.array([src]), None, _limit(args.max_length, src))[0]
    traces = analysis.record_episode(ckpt.model, src, decoded, ckpt.source_vocab, ckpt.target_vocab)
    out = Path(args.output_dir)
    reports = []
    for trace in traces:
        analysis.export_trace(trace, out)
        reports.append(analysis.format_report(analysis.monotonicity_report(trace)))
    text = f"translation\t{detokenize(ckpt.target_vocab, decoded)}\n" + "\n".join(reports) + "\n"
    try:
        (out / "report.txt").write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {out / 'report.txt'}: {exc}") from exc
    sys.stdout.write(text)
    return 0


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                            stream=sys.stderr)
        if args.command == "train":
            return cmd_train(resolve_train_config(parser, argv))
        return {"translate": cmd_translate, "evaluate": cmd_evaluate, "inspect": cmd_inspect}[args.command](args)
    except (ContractViolation, IngestionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
