"""Small deterministic corpora shared by the training, CLI and acceptance tests."""

from typing import Dict, List, Optional, Tuple

import numpy as np

from scriptinfer.corpus import Document, SentencePair, Vocabulary
from scriptinfer.events import Event, ParsedSentence, Token

WORDS = [f"w{i:02d}" for i in range(40)]


def overfit_pairs(n: int = 50, seed: int = 0) -> Tuple[List[SentencePair], Vocabulary]:
    """``n`` distinct pairs: the target is a fixed word substitution of the reversed source."""
    rng = np.random.default_rng(seed)
    seen, pairs = set(), []
    while len(pairs) < n:
        src = tuple(int(i) for i in rng.choice(len(WORDS), int(rng.integers(3, 6)), replace=False))
        if src in seen:
            continue
        seen.add(src)
        tgt = [WORDS[(i * 7 + 3) % len(WORDS)] for i in reversed(src)]
        pairs.append(SentencePair([[WORDS[i] for i in src]], tgt))
    return pairs, Vocabulary(WORDS)


SUBJECTS = ["dog", "cat", "man", "girl", "boy"]
VERBS = ["chased", "ate", "saw", "found", "took", "hid"]
OBJECTS = ["ball", "bone", "hat", "box"]
PLACES = [None, "park", "house"]


def event_sentence(ev: Event) -> ParsedSentence:
    """Parse of "the S V the O [to the P] ." whose extraction returns ``ev``."""
    rows = [("the", "DET", 2, "det"), (ev.subject, "NOUN", 3, "nsubj"), (ev.verb, "VERB", 0, "root"),
            ("the", "DET", 5, "det"), (ev.object, "NOUN", 3, "dobj")]
    for pobj, prep in ev.preps:
        rows += [(prep, "ADP", 3, "prep"), ("the", "DET", len(rows) + 3, "det"), (pobj, "NOUN", len(rows) + 1, "pobj")]
    rows.append((".", "PUNCT", 3, "punct"))
    return ParsedSentence([Token(i, f, p, h, r) for i, (f, p, h, r) in enumerate(rows, start=1)])


def script_events(n: int = 12) -> List[Event]:
    """A cycle of ``n`` distinct events; each one's successor is the next in the cycle."""
    out = []
    for k in range(n):
        place = PLACES[k % len(PLACES)]
        out.append(Event(VERBS[k % len(VERBS)], SUBJECTS[k % len(SUBJECTS)], OBJECTS[(k // 2) % len(OBJECTS)],
                         ((place, "to"),) if place else ()))
    assert len({e.key() for e in out}) == n
    return out


def script_corpus(n_events: int = 12, doc_len: int = 4) -> Tuple[List[Document], Dict[str, ParsedSentence]]:
    """Documents walking the event cycle, plus a text -> parse lookup standing in for a parser."""
    events = script_events(n_events)
    docs, parses = [], {}
    for start in range(0, n_events, doc_len - 1):
        sents = [event_sentence(events[(start + j) % n_events]) for j in range(doc_len)]
        docs.append(Document([s.forms for s in sents], sents))
        for s in sents:
            parses[" ".join(s.forms)] = s
    return docs, parses


def lookup_parse(parses: Dict[str, ParsedSentence], tokens: List[str]) -> Optional[ParsedSentence]:
    return parses.get(" ".join(tokens))
