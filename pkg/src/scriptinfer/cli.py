"""Command-line entry point: ``scriptinfer <command> [flags]``.

Every flag may also come from ``--config FILE`` (``key = value`` lines,
keys spelled like the flags without leading dashes); flags on the command
line win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .corpus import (
    Vocabulary,
    atomic_write,
    build_vocab_from_sentences,
    decode_ids,
    encode_context,
    iter_pairs,
    read_lines,
    read_pairs,
    read_parsed_corpus,
    read_tokenized_corpus,
    write_pairs,
)
from .errors import FormatError, NonFiniteError, ShapeError
from .events import Event, extract_events, linearize_events, parse_event_tokens
from .metrics import MetricsReport, cloze_report, corpus_bleu, identity_baseline, most_common_event
from .seqmodel import DEFAULT_MAX_LEN, init_model, gradient_check, load_model, predict, save_model
from .training import TrainConfig, chained_predict, encode_pairs, event_text_pairs, train

NO_EVENT = "<no-event>"
MODES = ("t-t", "e-e", "e-e-t", "t-t-e")

log = logging.getLogger("scriptinfer")


class CLIError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _digest(path) -> Optional[str]:
    if path is None or path == "-" or not os.path.exists(path):
        return None
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command: str, config: dict, inputs: Sequence[str], outputs: Sequence[str], started: float):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {p: _digest(p) for p in inputs if p},
        "artifacts": [p for p in outputs if p],
        "timings": {"seconds": round(time.time() - started, 3)},
    }
    atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _emit(text: str, out: Optional[str]):
    if out and out != "-":
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _read_stream_lines(path: Optional[str]) -> List[List[str]]:
    if path is None or path == "-":
        return [line.split() for line in sys.stdin.read().splitlines()]
    return read_lines(path)


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) in (None, []):
            raise CLIError(f"--{n.replace('_', '-')} is required for {args.command}")


def _first_event(tokens: Sequence[str]) -> Optional[Event]:
    if list(tokens) == [NO_EVENT] or not tokens:
        return None
    events, _ = parse_event_tokens(tokens)
    return events[0] if events else None


def _event_line(ev: Optional[Event]) -> str:
    return " ".join(linearize_events([ev])) if ev is not None else NO_EVENT


def _event_json(ev: Event) -> dict:
    return {"verb": ev.verb, "subject": ev.subject, "object": ev.object, "preps": [list(p) for p in ev.preps]}


def _event_from_json(d: dict) -> Event:
    return Event(d["verb"], d.get("subject"), d.get("object"), tuple(tuple(p) for p in d.get("preps", [])))


# ---------------------------------------------------------------- commands


def cmd_build_vocab(args):
    _need(args, "out")
    if args.corpus:
        sents = [s for d in read_tokenized_corpus(args.corpus) for s in d.sentences]
    elif args.pairs:
        sents = [s for p in read_pairs(args.pairs) for s in p.context + [p.successor]]
    else:
        raise CLIError("build-vocab needs --corpus or --pairs")
    vocab = build_vocab_from_sentences(sents, args.size)
    vocab.save(args.out)


def cmd_extract_events(args):
    _need(args, "parsed")
    lines = []
    for di, doc in enumerate(read_parsed_corpus(args.parsed)):
        for si, sent in enumerate(doc.parses or []):
            evs = extract_events(sent)
            lines.append(json.dumps({"doc": di, "sentence": si, "events": [_event_json(e) for e in evs]}) + "\n")
    _emit("".join(lines), args.out)


def cmd_linearize(args):
    _need(args, "events")
    out = []
    with open(args.events, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                evs = [_event_from_json(e) for e in rec["events"]]
            except (ValueError, KeyError, TypeError) as e:
                raise FormatError(f"{args.events}:{lineno}: bad event record ({e})") from None
            out.append(" ".join(linearize_events(evs)) + "\n")
    _emit("".join(out), args.out)


def cmd_make_pairs(args):
    _need(args, "out")
    if args.representation == "event-text":
        _need(args, "parsed")
        pairs = event_text_pairs(read_parsed_corpus(args.parsed))
    elif args.parsed:
        pairs = list(iter_pairs(read_parsed_corpus(args.parsed), args.n_context, args.representation))
    elif args.corpus:
        if args.representation != "tokens":
            raise CLIError("event pairs need --parsed input")
        pairs = list(iter_pairs(read_tokenized_corpus(args.corpus), args.n_context, "tokens"))
    else:
        raise CLIError("make-pairs needs --corpus or --parsed")
    write_pairs(args.out, pairs)


def _config_from_args(args) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        initial_lr=args.lr,
        momentum=args.momentum,
        max_updates=args.max_updates,
        seed=args.seed,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        attention=args.attention,
        n_context=args.n_context,
        level=args.level,
        damping_rule=args.damping_rule,
        damping_signal=args.damping_signal,
        loss_normalization=args.loss_normalization,
        checkpoint_every=args.checkpoint_every,
        checkpoint_path=args.model[0] if args.checkpoint_every else None,
    )


def cmd_train(args):
    _need(args, "pairs", "vocab", "model")
    started = time.time()
    cfg = _config_from_args(args)
    vocab = Vocabulary.load(args.vocab)
    pairs = encode_pairs(vocab, read_pairs(args.pairs))
    validation = encode_pairs(vocab, read_pairs(args.validation)) if args.validation else ()
    result = train(cfg, pairs, vocab, validation)
    model_path = args.model[0]
    trace_path = args.trace or model_path + ".trace.tsv"
    save_model(result.model, model_path)
    atomic_write(trace_path, result.trace_tsv())
    _write_manifest(model_path + ".manifest.json", "train", cfg.to_dict(),
                    [args.pairs, args.vocab, args.validation], [model_path, trace_path], started)


def _check_level(model, level, mode):
    if model.level != level:
        raise CLIError(f"mode {mode} needs a {level}-level model, got {model.level}")


def cmd_predict(args):
    mode = args.mode
    _need(args, "out")
    if mode == "t-t-e" and args.parsed:
        # second half of the text -> parse -> event path: one document per generated line
        docs = read_parsed_corpus(args.parsed)
        lines = []
        for d in docs:
            evs = [e for p in (d.parses or []) for e in extract_events(p)]
            lines.append(_event_line(evs[0] if evs else None) + "\n")
        atomic_write(args.out, "".join(lines))
        return

    _need(args, "pairs", "model")
    pairs = read_pairs(args.pairs)
    models = [load_model(p) for p in args.model]
    lines = []
    if mode in ("t-t", "e-e", "t-t-e"):
        if len(models) != 1:
            raise CLIError(f"mode {mode} takes exactly one --model")
        m = models[0]
        _check_level(m, "events" if mode == "e-e" else "tokens", mode)
        for p in pairs:
            out = decode_ids(m.vocab, predict(m, encode_context(m.vocab, p.context), args.max_len))
            if mode == "e-e":
                events, _ = parse_event_tokens(out)
                out = linearize_events(events)
            lines.append(" ".join(out) + "\n")
    elif mode == "e-e-t":
        if len(models) != 2:
            raise CLIError("mode e-e-t takes two --model paths: events model, then text model")
        _check_level(models[0], "events", mode)
        _check_level(models[1], "tokens", mode)
        for p in pairs:
            lines.append(" ".join(chained_predict(models[0], models[1], p.context, args.max_len)) + "\n")
    else:
        raise CLIError(f"unknown mode {mode!r}")
    atomic_write(args.out, "".join(lines))


def _eval_manifest_path(args):
    if args.manifest:
        return args.manifest
    if args.out and args.out != "-":
        return args.out + ".manifest.json"
    return None


def cmd_evaluate_bleu(args):
    _need(args, "references")
    started = time.time()
    cands = _read_stream_lines(args.candidates)
    refs = read_lines(args.references)
    if len(cands) != len(refs):
        raise CLIError(f"{len(cands)} candidate lines vs {len(refs)} reference lines")
    report = corpus_bleu(cands, refs)
    _emit(report.to_text(), args.out)
    if (m := _eval_manifest_path(args)):
        _write_manifest(m, "evaluate-bleu", {"seed": None}, [args.candidates, args.references], [args.out], started)


def cmd_evaluate_cloze(args):
    _need(args, "references")
    started = time.time()
    cands = _read_stream_lines(args.candidates)
    refs = read_lines(args.references)
    if len(cands) != len(refs):
        raise CLIError(f"{len(cands)} candidate lines vs {len(refs)} reference lines")
    gold = []
    for k, r in enumerate(refs, start=1):
        ev = _first_event(r)
        if ev is None:
            raise CLIError(f"reference line {k} holds no event")
        gold.append(ev)
    report = cloze_report([_first_event(c) for c in cands], gold)
    _emit(report.to_text(), args.out)
    if (m := _eval_manifest_path(args)):
        _write_manifest(m, "evaluate-cloze", {"seed": None}, [args.candidates, args.references], [args.out], started)


def cmd_baseline(args):
    _need(args, "pairs")
    pairs = read_pairs(args.pairs)
    if args.kind == "identity":
        cands = identity_baseline([p.context for p in pairs])
        _emit("".join(" ".join(c) + "\n" for c in cands), args.out)
        return
    _need(args, "train_pairs")
    train_events = []
    for p in read_pairs(args.train_pairs):
        evs, _ = parse_event_tokens(p.successor)
        train_events += evs
    ev = most_common_event(train_events)
    _emit((_event_line(ev) + "\n") * len(pairs), args.out)


def cmd_grad_check(args):
    vocab = Vocabulary([f"w{i}" for i in range(7)])  # 12 ids with specials
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for attention in (False, True):
        for k in range(args.instances):
            model = init_model(vocab, 4, 8, attention=attention, seed=args.seed * 100 + k, scale=0.5)
            batch = [(_rand_seq(rng), _rand_seq(rng)) for _ in range(2)]
            errs = gradient_check(model, batch, eps=1e-4)
            worst = max(worst, max(errs.values()))
    print(f"max relative error = {worst:.3e}")
    if not worst < 1e-4:
        raise CLIError(f"gradient check failed: {worst:.3e} >= 1e-4")


def _rand_seq(rng, max_len=6):
    n = int(rng.integers(1, max_len - 1))
    return [1] + [int(i) for i in rng.integers(3, 12, size=n)] + [2]


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "extract-events": cmd_extract_events,
    "linearize": cmd_linearize,
    "make-pairs": cmd_make_pairs,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate-bleu": cmd_evaluate_bleu,
    "evaluate-cloze": cmd_evaluate_cloze,
    "baseline": cmd_baseline,
    "grad-check": cmd_grad_check,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scriptinfer", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    p.subcommands = {}

    def add(name, help):
        sp = p.subcommands[name] = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="key = value file supplying flag defaults")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = add("build-vocab", "top-K vocabulary from a tokenized corpus or a pairs file")
    sp.add_argument("--corpus")
    sp.add_argument("--pairs")
    sp.add_argument("--size", type=int, default=50_000)
    sp.add_argument("--out")

    sp = add("extract-events", "parsed TSV -> JSON lines of events per sentence")
    sp.add_argument("--parsed")
    sp.add_argument("--out")

    sp = add("linearize", "event JSON lines -> event token sequences")
    sp.add_argument("--events")
    sp.add_argument("--out")

    sp = add("make-pairs", "corpus -> (context, successor) pairs file")
    sp.add_argument("--corpus")
    sp.add_argument("--parsed")
    sp.add_argument("--representation", choices=("tokens", "events", "event-text"), default="tokens")
    sp.add_argument("--n-context", type=int, default=1)
    sp.add_argument("--out")

    sp = add("train", "train an encoder-decoder model")
    sp.add_argument("--pairs")
    sp.add_argument("--validation")
    sp.add_argument("--vocab")
    sp.add_argument("--model", nargs="+")
    sp.add_argument("--trace")
    sp.add_argument("--level", choices=("tokens", "events"), default="tokens")
    sp.add_argument("--attention", action="store_true")
    sp.add_argument("--n-context", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-updates", type=int, default=300_000)
    sp.add_argument("--batch-size", type=int, default=10)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--momentum", type=float, default=0.95)
    sp.add_argument("--embed-dim", type=int, default=100)
    sp.add_argument("--hidden-dim", type=int, default=500)
    sp.add_argument("--damping-rule", choices=("gt_min", "gt_max"), default="gt_min")
    sp.add_argument("--damping-signal", choices=("train", "validation"), default="train")
    sp.add_argument("--loss-normalization", choices=("sum", "batch_mean"), default="batch_mean")
    sp.add_argument("--checkpoint-every", type=int, default=0)

    sp = add("predict", "greedy-decode successors for a pairs file")
    sp.add_argument("--mode", choices=MODES, default="t-t")
    sp.add_argument("--model", nargs="+")
    sp.add_argument("--pairs")
    sp.add_argument("--parsed", help="t-t-e only: parsed generated text, one document per pair")
    sp.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    sp.add_argument("--out")

    for name in ("evaluate-bleu", "evaluate-cloze"):
        sp = add(name, "score candidates against references")
        sp.add_argument("--candidates", default="-")
        sp.add_argument("--references")
        sp.add_argument("--out")
        sp.add_argument("--manifest")

    sp = add("baseline", "identity or most-common-event predictions")
    sp.add_argument("kind", choices=("identity", "most-common"))
    sp.add_argument("--pairs")
    sp.add_argument("--train-pairs")
    sp.add_argument("--out")

    sp = add("grad-check", "finite-difference check of a tiny random model")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--instances", type=int, default=3)
    return p


def _read_config(path) -> dict:
    vals = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            vals[k.lstrip("-").replace("-", "_")] = v
    return vals


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sub = parser.subcommands[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in _read_config(args.config).items():
        act = known.get(k)
        if act is None or k in ("config", "help"):
            raise CLIError(f"unknown config key {k!r} for {args.command}")
        if act.nargs == 0:
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        elif act.nargs == "+":
            defaults[k] = v.split()
        else:
            defaults[k] = act.type(v) if act.type else v
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except CLIError as e:
        print(f"scriptinfer: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (CLIError, FormatError, ShapeError, NonFiniteError, ValueError, IndexError, KeyError, OSError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"scriptinfer {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
