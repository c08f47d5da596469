"""Batch momentum-SGD training with the windowed learning-rate damping rule."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import (
    Document,
    SentencePair,
    Vocabulary,
    atomic_write,
    build_vocab_from_sentences,
    encode_context,
    encode_sentence,
    decode_ids,
    iter_pairs,
)
from .errors import NonFiniteError
from .events import linearize_events
from .numerics import OptimizerState, sgd_momentum_step
from .seqmodel import DEFAULT_MAX_LEN, SeqModel, backward, init_model, loss, predict, save_model

log = logging.getLogger(__name__)

IdPair = Tuple[List[int], List[int]]


@dataclass
class TrainConfig:
    batch_size: int = 10
    initial_lr: float = 0.1
    momentum: float = 0.95
    lr_damp: float = 0.99
    window: int = 100
    history: int = 10
    max_updates: int = 300_000
    seed: int = 0
    embed_dim: int = 100
    hidden_dim: int = 500
    attention: bool = False
    n_context: int = 1
    level: str = "tokens"
    vocab_size: int = 50_000
    # "gt_min": damp when the new window average exceeds at least one of the
    # previous averages; "gt_max": only when it exceeds all of them.
    damping_rule: str = "gt_min"
    # "train": compare training-batch window averages; "validation": compare
    # the validation loss measured at the end of each window.
    damping_signal: str = "train"
    # "sum" keeps the summed batch loss; "batch_mean" divides it by the batch size.
    loss_normalization: str = "batch_mean"
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if self.damping_rule not in ("gt_min", "gt_max"):
            raise ValueError(f"unknown damping_rule {self.damping_rule!r}")
        if self.damping_signal not in ("train", "validation"):
            raise ValueError(f"unknown damping_signal {self.damping_signal!r}")
        if self.loss_normalization not in ("sum", "batch_mean"):
            raise ValueError(f"unknown loss_normalization {self.loss_normalization!r}")
        if self.batch_size < 1 or self.window < 1 or self.history < 1 or self.max_updates < 0:
            raise ValueError("batch_size, window and history must be positive; max_updates non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class ScheduleState:
    lr: float = 0.1
    damp: float = 0.99
    history_size: int = 10
    rule: str = "gt_min"
    history: Deque[float] = field(default_factory=deque)
    window_losses: List[float] = field(default_factory=list)
    n_damped: int = 0

    def __post_init__(self):
        self.history = deque(self.history)


def schedule_step(state: ScheduleState, new_window_avg: float) -> ScheduleState:
    """Close one window: maybe damp the learning rate, then slide the history."""
    if len(state.history) >= state.history_size:
        ref = min(state.history) if state.rule == "gt_min" else max(state.history)
        if new_window_avg > ref:
            state.lr *= state.damp
            state.n_damped += 1
    state.history.append(new_window_avg)
    while len(state.history) > state.history_size:
        state.history.popleft()
    state.window_losses = []
    return state


@dataclass
class TraceRow:
    update: int
    window_avg_loss: float
    lr: float


@dataclass
class TrainResult:
    model: SeqModel
    trace: List[TraceRow]
    schedule: ScheduleState

    def trace_tsv(self) -> str:
        return "".join(f"{r.update}\t{r.window_avg_loss!r}\t{r.lr!r}\n" for r in self.trace)


def encode_pairs(vocab: Vocabulary, pairs: Sequence[SentencePair]) -> List[IdPair]:
    return [(encode_context(vocab, p.context), encode_sentence(vocab, p.successor)) for p in pairs]


def train(config: TrainConfig, pairs: Sequence[IdPair], vocab: Vocabulary, validation: Sequence[IdPair] = (),
          model: Optional[SeqModel] = None, on_window: Optional[Callable[[TraceRow], None]] = None) -> TrainResult:
    """Run exactly ``config.max_updates`` momentum-SGD updates over ``pairs``.

    Batches are taken in corpus order, wrapping around at the end.
    """
    if not pairs:
        raise ValueError("training needs at least one pair")
    if config.damping_signal == "validation" and not validation:
        raise ValueError("damping_signal='validation' needs validation pairs")
    if model is None:
        model = init_model(vocab, config.embed_dim, config.hidden_dim, config.attention,
                           seed=config.seed, level=config.level)
    params = model.params()
    opt = OptimizerState.for_params(params, config.initial_lr, config.momentum)
    sched = ScheduleState(config.initial_lr, config.lr_damp, config.history, config.damping_rule)
    trace: List[TraceRow] = []
    n = len(pairs)
    B = config.batch_size
    scale = 1.0 / B if config.loss_normalization == "batch_mean" else 1.0

    for update in range(1, config.max_updates + 1):
        start = ((update - 1) * B) % n
        batch = [pairs[(start + j) % n] for j in range(B)]
        batch_loss, grads = backward(model, batch)
        if not np.isfinite(batch_loss):
            raise NonFiniteError(f"non-finite loss at update {update}")
        if scale != 1.0:
            for g in grads.values():
                g *= scale
        sgd_momentum_step(params, grads, opt)
        sched.window_losses.append(batch_loss * scale)

        if update % config.window == 0:
            avg = float(np.mean(sched.window_losses))
            signal = avg
            if config.damping_signal == "validation":
                signal = loss(model, validation) / len(validation)
            schedule_step(sched, signal)
            opt.lr = sched.lr
            row = TraceRow(update, avg, sched.lr)
            trace.append(row)
            log.info("update %d window loss %.4f lr %.6g", update, avg, sched.lr)
            if on_window:
                on_window(row)
        if config.checkpoint_every and config.checkpoint_path and update % config.checkpoint_every == 0:
            save_model(model, config.checkpoint_path)
    return TrainResult(model, trace, sched)


def per_token_loss(model: SeqModel, pairs: Sequence[IdPair]) -> float:
    """Mean teacher-forced cross-entropy per scored target token."""
    n_tokens = sum(len(t) - 1 for _, t in pairs)
    return loss(model, pairs) / n_tokens


def write_trace(path, result: TrainResult):
    atomic_write(path, result.trace_tsv())


# ---------------------------------------------------------------- chained e -> e -> t


def event_text_pairs(docs: Sequence[Document]) -> List[SentencePair]:
    """(linearized events of s, tokens of s) for every sentence with events."""
    out = []
    for d in docs:
        for sent, evs in zip(d.sentences, d.events()):
            if evs:
                out.append(SentencePair([linearize_events(evs)], list(sent)))
    return out


@dataclass
class ChainedModels:
    events: SeqModel  # e1 -> e2
    text: SeqModel  # e2 -> t2

    def predict(self, context_event_tokens: Sequence[Sequence[str]], max_len: int = DEFAULT_MAX_LEN) -> List[str]:
        return chained_predict(self.events, self.text, context_event_tokens, max_len)


def chained_predict(stage1: SeqModel, stage2: SeqModel, context_event_tokens, max_len: int = DEFAULT_MAX_LEN) -> List[str]:
    """Decode successor events with ``stage1``, then expand them to text with ``stage2``."""
    ev_ids = predict(stage1, encode_context(stage1.vocab, context_event_tokens), max_len)
    ev_tokens = decode_ids(stage1.vocab, ev_ids)
    text_ids = predict(stage2, encode_sentence(stage2.vocab, ev_tokens), max_len)
    return decode_ids(stage2.vocab, text_ids)


def train_chained(config: TrainConfig, docs: Sequence[Document]) -> Tuple[ChainedModels, TrainResult, TrainResult]:
    """Train the event model and the event-to-text model independently on gold data."""
    ev_pairs = list(iter_pairs(docs, config.n_context, "events"))
    txt_pairs = event_text_pairs(docs)
    if not ev_pairs or not txt_pairs:
        raise ValueError("corpus yields no event pairs")
    v1 = build_vocab_from_sentences((s for p in ev_pairs for s in p.context + [p.successor]), config.vocab_size)
    v2 = build_vocab_from_sentences((s for p in txt_pairs for s in p.context + [p.successor]), config.vocab_size)
    c1 = TrainConfig(**{**config.to_dict(), "level": "events"})
    c2 = TrainConfig(**{**config.to_dict(), "level": "tokens", "seed": config.seed + 1})
    r1 = train(c1, encode_pairs(v1, ev_pairs), v1)
    r2 = train(c2, encode_pairs(v2, txt_pairs), v2)
    return ChainedModels(r1.model, r2.model), r1, r2
