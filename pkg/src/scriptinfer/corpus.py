"""Vocabulary, sentence encoding, corpus readers/writers and training-pair generation.

File formats
------------
tokenized corpus
    one sentence per line, tokens separated by single spaces, documents
    separated by one blank line.
parsed corpus
    TSV, one token per line: ``index form POS head deprel``; a blank line ends
    a sentence; a line ``#doc`` separates documents.
vocabulary
    one token per line; line ``k`` (0-based) holds id ``k + 5``.
pairs
    one pair per line, tab-separated: the context sentences in order, then
    the successor as the last field. Fields are space-joined tokens.
"""

from __future__ import annotations

import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .errors import FormatError
from .events import EV, NULL, Event, ParsedSentence, Token, extract_events, linearize_events

OOV = "<OOV>"
BOS = "<S>"
EOS = "</S>"
SPECIALS = (OOV, BOS, EOS, NULL, EV)
OOV_ID, BOS_ID, EOS_ID, NULL_ID, EV_ID = range(5)


class Vocabulary:
    """Dense token/id bijection with the five specials at ids 0-4."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = list(SPECIALS)
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def words(self) -> List[str]:
        """Non-special tokens in id order."""
        return self.itos[len(SPECIALS):]

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, OOV_ID)

    def token(self, i: int) -> str:
        return self.itos[i]

    def save(self, path):
        atomic_write_text(path, "".join(w + "\n" for w in self.words))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f if line.rstrip("\n"))


def build_vocab_from_counts(counts: Counter, k: int) -> Vocabulary:
    for s in SPECIALS:
        counts.pop(s, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tok for tok, _ in ranked[: max(k, 0)])


def build_vocab_from_sentences(sentences: Iterable[Sequence[str]], k: int) -> Vocabulary:
    counts: Counter = Counter()
    for s in sentences:
        counts.update(s)
    return build_vocab_from_counts(counts, k)


def build_vocab(path, k: int) -> Vocabulary:
    """Top-``k`` tokens of a tokenized corpus file; ties broken lexicographically."""
    docs = read_tokenized_corpus(path)
    return build_vocab_from_sentences((s for d in docs for s in d.sentences), k)


def encode_sentence(vocab: Vocabulary, tokens: Sequence[str]) -> List[int]:
    return [BOS_ID] + [vocab.id(t) for t in tokens] + [EOS_ID]


def encode_context(vocab: Vocabulary, sentences: Sequence[Sequence[str]]) -> List[int]:
    """Concatenate sentences, each keeping its own BOS/EOS markers."""
    ids: List[int] = []
    for s in sentences:
        ids += encode_sentence(vocab, s)
    return ids


def decode_ids(vocab: Vocabulary, ids: Sequence[int]) -> List[str]:
    """Map ids back to tokens, dropping BOS/EOS markers."""
    return [vocab.token(i) for i in ids if i not in (BOS_ID, EOS_ID)]


@dataclass
class Document:
    sentences: List[List[str]] = field(default_factory=list)
    parses: Optional[List[ParsedSentence]] = None

    def events(self) -> List[List[Event]]:
        if self.parses is None:
            raise ValueError("document has no parses; events are unavailable")
        return [extract_events(p) for p in self.parses]


@dataclass
class SentencePair:
    context: List[List[str]]
    successor: List[str]
    context_events: Optional[List[List[Event]]] = None
    successor_events: Optional[List[Event]] = None


def iter_pairs(docs: Iterable[Document], n_context: int = 1, representation: str = "tokens") -> Iterator[SentencePair]:
    """Yield (previous ``n_context`` sentences, successor) pairs within each document.

    In ``events`` mode the token fields hold linearized events and pairs with
    an event-less side are skipped.
    """
    if n_context < 1:
        raise ValueError("n_context must be >= 1")
    if representation not in ("tokens", "events"):
        raise ValueError(f"unknown representation {representation!r}")
    for doc in docs:
        evs = doc.events() if (representation == "events" or doc.parses is not None) else None
        for j in range(1, len(doc.sentences)):
            lo = max(0, j - n_context)
            if representation == "tokens":
                yield SentencePair(
                    [list(s) for s in doc.sentences[lo:j]],
                    list(doc.sentences[j]),
                    evs[lo:j] if evs else None,
                    evs[j] if evs else None,
                )
                continue
            ctx_events = evs[lo:j]
            if not any(ctx_events) or not evs[j]:
                continue
            yield SentencePair(
                [linearize_events(e) for e in ctx_events],
                linearize_events(evs[j]),
                ctx_events,
                evs[j],
            )


# ---------------------------------------------------------------- file I/O


def read_tokenized_corpus(path) -> List[Document]:
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise FormatError(f"cannot read corpus {path}: {e}") from e
    docs: List[Document] = []
    cur: List[List[str]] = []
    with f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                if cur:
                    docs.append(Document(cur))
                    cur = []
                continue
            toks = line.split(" ")
            if any(t == "" for t in toks):
                raise FormatError(f"{path}:{lineno}: tokens must be separated by single spaces")
            cur.append(toks)
    if cur:
        docs.append(Document(cur))
    return docs


def write_tokenized_corpus(path, docs: Sequence[Document]):
    blocks = ["".join(" ".join(s) + "\n" for s in d.sentences) for d in docs]
    atomic_write_text(path, "\n".join(blocks))


def read_parsed_corpus(path) -> List[Document]:
    """Read the parsed TSV format. ``#doc`` lines separate documents, so
    ``k`` separators always mean ``k + 1`` documents (possibly empty); an
    empty file holds none."""
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
    except OSError as e:
        raise FormatError(f"cannot read parsed corpus {path}: {e}") from e
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        return []

    docs: List[Document] = []
    sents: List[ParsedSentence] = []
    toks: List[Tuple[int, Token]] = []

    def close_sentence():
        if not toks:
            return
        n = len(toks)
        for k, (lineno, t) in enumerate(toks, start=1):
            if t.index != k:
                raise FormatError(f"{path}:{lineno}: token index {t.index}, expected {k}")
            if not 0 <= t.head <= n:
                raise FormatError(f"{path}:{lineno}: head {t.head} outside 0..{n}")
            if (t.head == 0) != (t.deprel == "root"):
                raise FormatError(f"{path}:{lineno}: head 0 is reserved for relation 'root'")
        sents.append(ParsedSentence([t for _, t in toks]))
        toks.clear()

    def close_doc():
        close_sentence()
        docs.append(Document([p.forms for p in sents], list(sents)))
        sents.clear()

    for lineno, line in enumerate(lines, start=1):
        if line == "#doc":
            close_doc()
        elif not line.strip():
            close_sentence()
        else:
            cols = line.split("\t")
            if len(cols) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 tab-separated columns, got {len(cols)}")
            try:
                idx, head = int(cols[0]), int(cols[3])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: index and head must be integers") from None
            toks.append((lineno, Token(idx, cols[1], cols[2], head, cols[4])))
    close_doc()
    return docs


def format_parsed_corpus(docs: Sequence[Document]) -> str:
    blocks = []
    for d in docs:
        blocks.append("".join(
            "".join(f"{t.index}\t{t.form}\t{t.pos}\t{t.head}\t{t.deprel}\n" for t in p.tokens) + "\n"
            for p in d.parses or []
        ))
    return "#doc\n".join(blocks)


def write_parsed_corpus(path, docs: Sequence[Document]):
    atomic_write_text(path, format_parsed_corpus(docs))


def write_pairs(path, pairs: Iterable[SentencePair]):
    lines = ["\t".join([" ".join(s) for s in p.context] + [" ".join(p.successor)]) + "\n" for p in pairs]
    atomic_write_text(path, "".join(lines))


def read_pairs(path) -> List[SentencePair]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            fields = line.split("\t")
            if len(fields) < 2:
                raise FormatError(f"{path}:{lineno}: a pair needs at least a context and a successor field")
            pairs.append(SentencePair([_split(x) for x in fields[:-1]], _split(fields[-1])))
    return pairs


def read_lines(path) -> List[List[str]]:
    with open(path, encoding="utf-8") as f:
        return [_split(line.rstrip("\n")) for line in f]


def _split(s: str) -> List[str]:
    return s.split() if s.strip() else []


def atomic_write(path, data):
    """Write ``data`` (str or bytes) via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        if isinstance(data, bytes):
            with os.fdopen(fd, "wb") as f:
                f.write(data)
        else:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


atomic_write_text = atomic_write
