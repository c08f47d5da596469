"""Corpus BLEU (multi-bleu conventions), narrative-cloze event metrics, baselines."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .corpus import BOS, EOS
from .events import Event, event_exact_match, partial_credit


@dataclass
class MetricsReport:
    bleu: Optional[float] = None
    bleu_bp: Optional[float] = None
    unigram_precision: Optional[float] = None
    accuracy: Optional[float] = None
    partial_credit: Optional[float] = None
    n_pairs: int = 0
    candidate_length: int = 0
    reference_length: int = 0
    precisions: Tuple[float, ...] = ()
    brevity_penalty: Optional[float] = None

    KEYS = ("bleu", "bleu_bp", "unigram_precision", "accuracy", "partial_credit", "n_pairs")

    def to_text(self) -> str:
        """Flat ``key = value`` lines; metrics not computed are written as ``na``."""
        lines = []
        for k in self.KEYS:
            v = getattr(self, k)
            if v is None:
                s = "na"
            elif isinstance(v, int):
                s = str(v)
            else:
                s = f"{v:.6f}"
            lines.append(f"{k} = {s}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        vals = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            k, _, v = line.partition("=")
            k, v = k.strip(), v.strip()
            if k not in cls.KEYS:
                raise ValueError(f"unknown metrics key {k!r}")
            vals[k] = None if v == "na" else (int(v) if k == "n_pairs" else float(v))
        return cls(**vals)


def _strip(tokens: Sequence[str]) -> List[str]:
    return [t for t in tokens if t not in (BOS, EOS)]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]], n: int) -> Tuple[int, int]:
    """Corpus-wide (clipped matches, candidate n-gram count) at order ``n``."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    matches = total = 0
    for cand, ref in zip(candidates, references):
        c = _ngrams(_strip(cand), n)
        r = _ngrams(_strip(ref), n)
        matches += sum(min(cnt, r[g]) for g, cnt in c.items())
        total += sum(c.values())
    return matches, total


def brevity_penalty(candidate_len: int, reference_len: int) -> float:
    if candidate_len >= reference_len:
        return 1.0
    if candidate_len == 0:
        return 0.0
    return math.exp(1.0 - reference_len / candidate_len)


def corpus_bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> MetricsReport:
    """Single-reference corpus BLEU without smoothing; scores are percentages.

    ``bleu_bp`` is the geometric mean of precisions without the brevity
    penalty. Any zero precision makes both zero.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("BLEU of an empty corpus is undefined")
    precisions = []
    for n in range(1, max_n + 1):
        m, t = modified_precision(candidates, references, n)
        precisions.append(m / t if t else 0.0)
    c = sum(len(_strip(x)) for x in candidates)
    r = sum(len(_strip(x)) for x in references)
    bp = brevity_penalty(c, r)
    if min(precisions) > 0:
        geo = math.exp(sum(math.log(p) for p in precisions) / max_n)
    else:
        geo = 0.0
    return MetricsReport(
        bleu=100.0 * bp * geo,
        bleu_bp=100.0 * geo,
        unigram_precision=100.0 * precisions[0],
        n_pairs=len(candidates),
        candidate_length=c,
        reference_length=r,
        precisions=tuple(precisions),
        brevity_penalty=bp,
    )


def cloze_scores(predicted: Sequence[Optional[Event]], gold: Sequence[Event]) -> Tuple[float, float]:
    """(accuracy, partial credit) as percentages. A ``None`` prediction scores 0."""
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predictions vs {len(gold)} gold events")
    if not gold:
        raise ValueError("cloze scores need at least one pair")
    exact = sum(event_exact_match(p, g) for p, g in zip(predicted, gold))
    credit = sum(partial_credit(p, g) for p, g in zip(predicted, gold))
    return 100.0 * exact / len(gold), 100.0 * credit / len(gold)


def cloze_report(predicted, gold) -> MetricsReport:
    acc, pc = cloze_scores(predicted, gold)
    return MetricsReport(accuracy=acc, partial_credit=pc, n_pairs=len(gold))


def most_common_event(events: Sequence[Event]) -> Event:
    """Modal event under exact-match equality; ties go to the earliest first occurrence."""
    if not events:
        raise ValueError("most_common_event needs at least one event")
    counts: Counter = Counter()
    first = {}
    for ev in events:
        k = ev.key()
        counts[k] += 1
        first.setdefault(k, ev)
    best = max(counts.values())
    for ev in events:
        if counts[ev.key()] == best:
            return first[ev.key()]
    raise AssertionError("unreachable")


def identity_baseline(contexts: Sequence[Sequence[Sequence[str]]]) -> List[List[str]]:
    """Predict each pair's (last) input sentence as its successor."""
    return [list(ctx[-1]) if ctx else [] for ctx in contexts]
