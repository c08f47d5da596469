"""Verb-argument events: extraction from dependency parses, serialization, matching."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .errors import FormatError

NULL = "<NULL>"
EV = "<EV>"


@dataclass(frozen=True)
class Event:
    """``(verb, subject, object, preps)``; ``preps`` holds ``(pobj, prep)`` pairs."""

    verb: str
    subject: Optional[str] = None
    object: Optional[str] = None
    preps: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.verb is None:
            raise ValueError("an event must have a verb")
        object.__setattr__(self, "preps", tuple(tuple(p) for p in self.preps))

    def key(self):
        """Hashable identity under exact-match semantics (prep order ignored)."""
        return (self.verb, self.subject, self.object, tuple(sorted(self.preps)))

    def __str__(self):
        pp = ", ".join(f"({pobj}, {prep})" for pobj, prep in self.preps)
        return f"({self.verb}, {self.subject}, {self.object}, [{pp}])"


@dataclass(frozen=True)
class Token:
    index: int  # 1-based
    form: str
    pos: str
    head: int  # 0 = root
    deprel: str


@dataclass
class ParsedSentence:
    tokens: List[Token] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        n = len(self.tokens)
        for pos, tok in enumerate(self.tokens, start=1):
            if tok.index != pos:
                raise FormatError(f"token index {tok.index} at position {pos}")
            if not 0 <= tok.head <= n:
                raise FormatError(f"token {tok.index} ({tok.form!r}) has head {tok.head} outside 0..{n}")
            if (tok.head == 0) != (tok.deprel == "root"):
                raise FormatError(f"token {tok.index} ({tok.form!r}): head 0 iff relation 'root'")

    @property
    def forms(self) -> List[str]:
        return [t.form for t in self.tokens]


def extract_events(sent: ParsedSentence) -> List[Event]:
    """One event per VERB token, in sentence order.

    Subject from ``nsubj``; object from ``dobj``, else ``nsubjpass``;
    prepositional pairs from ``prep`` -> ``pobj`` chains and from collapsed
    ``prep_X`` relations. Other relations (iobj, clausal) are ignored.
    """
    toks = sent.tokens
    n = len(toks)
    children: List[List[Token]] = [[] for _ in range(n + 1)]
    for t in toks:
        if not 0 <= t.head <= n:
            raise FormatError(f"token {t.index} has head {t.head} outside 0..{n}")
        children[t.head].append(t)

    events = []
    for verb in toks:
        if verb.pos != "VERB":
            continue
        deps = children[verb.index]
        subj = _first(deps, "nsubj")
        obj = _first(deps, "dobj") or _first(deps, "nsubjpass")
        preps = []  # (position of pobj, pobj, prep)
        for d in deps:
            if d.deprel == "prep":
                for p in children[d.index]:
                    if p.deprel == "pobj":
                        preps.append((p.index, p.form, d.form))
            elif d.deprel.startswith("prep_") and len(d.deprel) > 5:
                preps.append((d.index, d.form, d.deprel[5:]))
        preps.sort()
        events.append(Event(verb.form, subj, obj, tuple((f, p) for _, f, p in preps)))
    return events


def _first(deps, rel):
    for d in deps:
        if d.deprel == rel:
            return d.form
    return None


def linearize_events(events: Sequence[Event]) -> List[str]:
    out: List[str] = []
    for k, ev in enumerate(events):
        if k:
            out.append(EV)
        out += [ev.verb, ev.subject or NULL, ev.object or NULL]
        for pobj, prep in ev.preps:
            out += [prep, pobj]
    return out


def parse_event_tokens(tokens: Sequence[str]) -> Tuple[List[Event], bool]:
    """Inverse of :func:`linearize_events`, total over arbitrary token streams.

    Returns ``(events, well_formed)``. Short segments are padded with nulls,
    a dangling preposition is dropped, and segments with no usable verb are
    skipped; every repair clears ``well_formed``.
    """
    segments: List[List[str]] = [[]]
    for tok in tokens:
        if tok == EV:
            segments.append([])
        else:
            segments[-1].append(tok)
    if not tokens:
        return [], True

    events = []
    ok = True
    for seg in segments:
        if not seg or seg[0] == NULL:
            ok = False
            continue
        if len(seg) < 3:
            ok = False
            seg = seg + [NULL] * (3 - len(seg))
        rest = seg[3:]
        if len(rest) % 2:
            ok = False
            rest = rest[:-1]
        preps = []
        for prep, pobj in zip(rest[0::2], rest[1::2]):
            if prep == NULL or pobj == NULL:
                ok = False
                continue
            preps.append((pobj, prep))
        events.append(Event(seg[0], _nullable(seg[1]), _nullable(seg[2]), tuple(preps)))
    return events, ok


def _nullable(tok):
    return None if tok == NULL else tok


def event_exact_match(pred: Optional[Event], gold: Optional[Event]) -> bool:
    if pred is None or gold is None:
        return False
    return (
        pred.verb == gold.verb
        and pred.subject == gold.subject
        and pred.object == gold.object
        and Counter(pred.preps) == Counter(gold.preps)
    )


def partial_credit(pred: Optional[Event], gold: Optional[Event]) -> float:
    """Fraction of matching component slots.

    Slots are verb, subject, object and ``max(#gold preps, #pred preps)``
    prep pairs. Identical prep pairs are aligned first, so exact matches
    always score 1.0; leftovers can only mismatch.
    """
    if pred is None or gold is None:
        return 0.0
    matched = (pred.verb == gold.verb) + (pred.subject == gold.subject) + (pred.object == gold.object)
    n_prep = max(len(pred.preps), len(gold.preps))
    matched += sum((Counter(pred.preps) & Counter(gold.preps)).values())
    return matched / (3 + n_prep)
