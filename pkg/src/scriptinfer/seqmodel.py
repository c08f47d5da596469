"""LSTM encoder-decoder with optional additive attention.

The encoder consumes the input ids from a zero state without producing any
output; its final hidden and memory vectors seed a separate decoder LSTM,
which is trained with teacher forcing to predict each next target token
through a linear projection and softmax. The full gradient of the summed
cross-entropy is computed by hand (backpropagation through time).

Gate blocks are stored stacked, rows ordered input, forget, output,
candidate; named per-gate views (``Wxi``, ``Wzf``, ...) are provided.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import BOS_ID, EOS_ID, Vocabulary, atomic_write
from .errors import FormatError, NonFiniteError, ShapeError
from .numerics import LOG_CLAMP, finite_diff_grad, relative_error, sigmoid

GATES = ("i", "f", "o", "g")
FORMAT_MAGIC = b"SCRIPTINFER-MODEL\n"
FORMAT_VERSION = 1
DEFAULT_MAX_LEN = 100


@dataclass
class LSTMParams:
    Wx: np.ndarray  # (4H, D)
    Wz: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        h4 = self.Wz.shape[0]
        if h4 % 4 or self.Wz.shape != (h4, h4 // 4) or self.Wx.shape[0] != h4 or self.b.shape != (h4,):
            raise ShapeError(f"LSTM blocks Wx{self.Wx.shape} Wz{self.Wz.shape} b{self.b.shape} are inconsistent")

    @property
    def hidden_dim(self) -> int:
        return self.Wz.shape[1]

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[1]

    def gate(self, name: str, which: str) -> np.ndarray:
        """View of one gate's block; ``which`` is ``'x'``, ``'z'`` or ``'b'``."""
        k = GATES.index(name)
        H = self.hidden_dim
        arr = {"x": self.Wx, "z": self.Wz, "b": self.b}[which]
        return arr[k * H:(k + 1) * H]

    # named views matching the usual equations
    Wxi = property(lambda s: s.gate("i", "x"))
    Wzi = property(lambda s: s.gate("i", "z"))
    Wxf = property(lambda s: s.gate("f", "x"))
    Wzf = property(lambda s: s.gate("f", "z"))
    Wxo = property(lambda s: s.gate("o", "x"))
    Wzo = property(lambda s: s.gate("o", "z"))
    Wxm = property(lambda s: s.gate("g", "x"))
    Wzm = property(lambda s: s.gate("g", "z"))
    bi = property(lambda s: s.gate("i", "b"))
    bf = property(lambda s: s.gate("f", "b"))
    bo = property(lambda s: s.gate("o", "b"))
    bg = property(lambda s: s.gate("g", "b"))

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LSTMParams":
        return cls(np.zeros((4 * hidden_dim, input_dim)), np.zeros((4 * hidden_dim, hidden_dim)), np.zeros(4 * hidden_dim))


@dataclass
class LSTMState:
    z: np.ndarray
    m: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LSTMState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


@dataclass
class AttentionParams:
    W1: np.ndarray  # (A, H) applied to encoder states
    W2: np.ndarray  # (A, H) applied to the decoder state
    v: np.ndarray  # (A,)
    W_mix: np.ndarray  # (H, 2H)


@dataclass
class SeqModel:
    vocab: Vocabulary
    embedding: np.ndarray  # (V, E)
    encoder: LSTMParams
    decoder: LSTMParams
    W_out: np.ndarray  # (V, H)
    b_out: np.ndarray  # (V,)
    attention: Optional[AttentionParams] = None
    level: str = "tokens"  # or "events"

    def __post_init__(self):
        V, E = self.embedding.shape
        H = self.encoder.hidden_dim
        problems = []
        if V != len(self.vocab):
            problems.append(f"embedding has {V} rows for a vocabulary of {len(self.vocab)}")
        for name, lstm in (("encoder", self.encoder), ("decoder", self.decoder)):
            if lstm.input_dim != E or lstm.hidden_dim != H:
                problems.append(f"{name} is {lstm.input_dim}->{lstm.hidden_dim}, expected {E}->{H}")
        if self.W_out.shape != (V, H) or self.b_out.shape != (V,):
            problems.append(f"projection W{self.W_out.shape} b{self.b_out.shape}, expected ({V}, {H})")
        if self.attention is not None:
            a = self.attention
            A = a.v.shape[0]
            if a.W1.shape != (A, H) or a.W2.shape != (A, H) or a.W_mix.shape != (H, 2 * H):
                problems.append("attention blocks inconsistent with hidden size")
        if self.level not in ("tokens", "events"):
            problems.append(f"unknown level {self.level!r}")
        if problems:
            raise ShapeError("; ".join(problems))

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.encoder.hidden_dim

    def params(self) -> Dict[str, np.ndarray]:
        """Every trainable array by name. The values alias the model's storage."""
        p = {"embedding": self.embedding}
        for prefix, lstm in (("encoder", self.encoder), ("decoder", self.decoder)):
            p[f"{prefix}.Wx"] = lstm.Wx
            p[f"{prefix}.Wz"] = lstm.Wz
            p[f"{prefix}.b"] = lstm.b
        p["out.W"] = self.W_out
        p["out.b"] = self.b_out
        if self.attention is not None:
            for k in ("W1", "W2", "v", "W_mix"):
                p[f"attention.{k}"] = getattr(self.attention, k)
        return p

    def copy(self) -> "SeqModel":
        arrays = {k: v.copy() for k, v in self.params().items()}
        return _assemble(Vocabulary(self.vocab.words), arrays, self.level)


def init_model(vocab: Vocabulary, embed_dim: int = 100, hidden_dim: int = 500, attention: bool = False,
               attn_dim: Optional[int] = None, seed: int = 0, level: str = "tokens", scale: float = 0.1) -> SeqModel:
    """Uniform(-scale, scale) weights from a seeded generator; forget bias 1.0."""
    rng = np.random.default_rng(seed)
    V, E, H = len(vocab), embed_dim, hidden_dim

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    def lstm():
        p = LSTMParams(u(4 * H, E), u(4 * H, H), u(4 * H))
        p.bf[:] = 1.0
        return p

    emb = u(V, E)
    enc, dec = lstm(), lstm()
    W_out, b_out = u(V, H), u(V)
    att = None
    if attention:
        A = attn_dim or H
        att = AttentionParams(u(A, H), u(A, H), u(A), u(H, 2 * H))
    return SeqModel(vocab, emb, enc, dec, W_out, b_out, att, level)


# ---------------------------------------------------------------- LSTM


def lstm_step(params: LSTMParams, x, prev: LSTMState) -> LSTMState:
    x = np.asarray(x, dtype=np.float64)
    H = params.hidden_dim
    if x.shape != (params.input_dim,) or prev.z.shape != (H,) or prev.m.shape != (H,):
        raise ShapeError(f"lstm_step: x{x.shape} z{prev.z.shape} m{prev.m.shape} for a {params.input_dim}->{H} cell")
    a = params.Wx @ x + params.Wz @ prev.z + params.b
    i, f, o = sigmoid(a[:H]), sigmoid(a[H:2 * H]), sigmoid(a[2 * H:3 * H])
    g = np.tanh(a[3 * H:])
    m = f * prev.m + i * g
    return LSTMState(o * np.tanh(m), m)


@dataclass
class _LSTMTrace:
    X: np.ndarray
    Zprev: np.ndarray
    Mprev: np.ndarray
    IFO: np.ndarray  # (T, 3H)
    G: np.ndarray
    TM: np.ndarray  # tanh(m_t)
    Z: np.ndarray
    M: np.ndarray


def _lstm_forward(p: LSTMParams, X: np.ndarray, z0: np.ndarray, m0: np.ndarray) -> _LSTMTrace:
    T = X.shape[0]
    H = p.hidden_dim
    XA = X @ p.Wx.T + p.b
    Zprev, Mprev = np.empty((T, H)), np.empty((T, H))
    IFO, G, TM = np.empty((T, 3 * H)), np.empty((T, H)), np.empty((T, H))
    Z, M = np.empty((T, H)), np.empty((T, H))
    z, m = z0, m0
    Wz = p.Wz
    for t in range(T):
        Zprev[t], Mprev[t] = z, m
        a = XA[t] + Wz @ z
        ifo = IFO[t] = sigmoid(a[:3 * H])
        g = G[t] = np.tanh(a[3 * H:])
        m = M[t] = ifo[H:2 * H] * m + ifo[:H] * g
        tm = TM[t] = np.tanh(m)
        z = Z[t] = ifo[2 * H:] * tm
    return _LSTMTrace(X, Zprev, Mprev, IFO, G, TM, Z, M)


def _lstm_backward(p: LSTMParams, tr: _LSTMTrace, dZ_ext: np.ndarray, dz_last, dm_last, grads: Dict[str, np.ndarray], prefix: str):
    """Accumulate parameter grads; return (dX, dz0, dm0)."""
    T, H = tr.Z.shape
    dA = np.empty((T, 4 * H))
    dz = dz_last.copy()
    dm = dm_last.copy()
    WzT = p.Wz.T
    for t in range(T - 1, -1, -1):
        dz = dz + dZ_ext[t]
        ifo, g, tm = tr.IFO[t], tr.G[t], tr.TM[t]
        i, f, o = ifo[:H], ifo[H:2 * H], ifo[2 * H:]
        dm = dm + dz * o * (1.0 - tm * tm)
        d_ifo = np.concatenate((dm * g, dm * tr.Mprev[t], dz * tm))
        dA[t, :3 * H] = d_ifo * ifo * (1.0 - ifo)
        dA[t, 3 * H:] = dm * i * (1.0 - g * g)
        dm = dm * f
        dz = WzT @ dA[t]
    grads[prefix + ".Wx"] += dA.T @ tr.X
    grads[prefix + ".Wz"] += dA.T @ tr.Zprev
    grads[prefix + ".b"] += dA.sum(axis=0)
    return dA @ p.Wx, dz, dm


# ---------------------------------------------------------------- attention


def _attend(att: AttentionParams, Henc: np.ndarray, D: np.ndarray):
    """Vectorized over decoder steps. ``Henc`` (T, H), ``D`` (L, H)."""
    K = Henc @ att.W1.T  # (T, A)
    Q = D @ att.W2.T  # (L, A)
    S = np.tanh(K[None, :, :] + Q[:, None, :])  # (L, T, A)
    U = S @ att.v  # (L, T)
    U = U - U.max(axis=1, keepdims=True)
    W = np.exp(U)
    W /= W.sum(axis=1, keepdims=True)
    C = W @ Henc  # (L, H)
    DC = np.concatenate((D, C), axis=1)
    Hm = np.tanh(DC @ att.W_mix.T)
    return S, W, C, DC, Hm


def attention_weights(att: AttentionParams, enc_states, dec_state) -> np.ndarray:
    Henc = _as_matrix(enc_states)
    if Henc.shape[0] == 0:
        raise ShapeError("attention needs at least one encoder state")
    return _attend(att, Henc, np.asarray(dec_state, dtype=np.float64)[None, :])[1][0]


def attention_context(att: AttentionParams, enc_states, dec_state) -> np.ndarray:
    """Softmax-weighted sum of encoder hidden vectors given one decoder state."""
    Henc = _as_matrix(enc_states)
    if Henc.shape[0] == 0:
        raise ShapeError("attention needs at least one encoder state")
    return _attend(att, Henc, np.asarray(dec_state, dtype=np.float64)[None, :])[2][0]


def attention_mix(att: AttentionParams, enc_states, dec_state) -> np.ndarray:
    """``tanh(W_mix [d; context])``, the vector fed to the output projection."""
    return _attend(att, _as_matrix(enc_states), np.asarray(dec_state, dtype=np.float64)[None, :])[4][0]


def _as_matrix(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return states
    return np.array([s.z if isinstance(s, LSTMState) else s for s in states], dtype=np.float64)


# ---------------------------------------------------------------- encode / decode


@dataclass
class Encoding:
    final: LSTMState
    states: List[LSTMState]
    Z: np.ndarray  # stacked hidden vectors, (T, H)
    trace: _LSTMTrace


def _check_ids(model: SeqModel, ids: Sequence[int], what: str) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{what} must be a non-empty id sequence")
    if arr.min() < 0 or arr.max() >= model.vocab_size:
        raise IndexError(f"{what} contains an id outside 0..{model.vocab_size - 1}")
    return arr


def encode(model: SeqModel, input_ids: Sequence[int]) -> Encoding:
    ids = _check_ids(model, input_ids, "input_ids")
    H = model.hidden_dim
    tr = _lstm_forward(model.encoder, model.embedding[ids], np.zeros(H), np.zeros(H))
    states = [LSTMState(tr.Z[t].copy(), tr.M[t].copy()) for t in range(len(ids))]
    return Encoding(states[-1], states, tr.Z, tr)


@dataclass
class _DecodeTrace:
    inputs: np.ndarray
    targets: np.ndarray
    lstm: _LSTMTrace
    P: np.ndarray
    Hm: np.ndarray
    att: Optional[tuple] = None


def _decode_forward(model: SeqModel, enc: Encoding, target_ids) -> Tuple[float, np.ndarray, _DecodeTrace]:
    tgt = _check_ids(model, target_ids, "target_ids")
    if tgt.size < 2 or tgt[0] != BOS_ID or tgt[-1] != EOS_ID:
        raise ValueError("target_ids must start with BOS and end with EOS")
    inputs, targets = tgt[:-1], tgt[1:]
    tr = _lstm_forward(model.decoder, model.embedding[inputs], enc.final.z, enc.final.m)
    att = None
    if model.attention is not None:
        att = _attend(model.attention, enc.Z, tr.Z)
        Hm = att[4]
    else:
        Hm = tr.Z
    logits = Hm @ model.W_out.T + model.b_out
    shifted = logits - logits.max(axis=1, keepdims=True)
    P = np.exp(shifted)
    P /= P.sum(axis=1, keepdims=True)
    picked = np.maximum(P[np.arange(len(targets)), targets], LOG_CLAMP)
    loss = float(-np.log(picked).sum())
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite decoder loss")
    return loss, logits, _DecodeTrace(inputs, targets, tr, P, Hm, att)


def decode_teacher_forced(model: SeqModel, enc: Encoding, target_ids) -> Tuple[float, np.ndarray]:
    """Summed cross-entropy of ``target_ids[1:]`` given gold previous tokens, and per-step logits."""
    loss, logits, _ = _decode_forward(model, enc, target_ids)
    return loss, logits


def decode_greedy(model: SeqModel, enc: Encoding, max_len: int = DEFAULT_MAX_LEN) -> List[int]:
    """Argmax decoding from BOS until EOS or ``max_len`` tokens; EOS is kept if emitted."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = enc.final
    tok = BOS_ID
    out: List[int] = []
    for _ in range(max_len):
        state = lstm_step(model.decoder, model.embedding[tok], state)
        h = state.z if model.attention is None else attention_mix(model.attention, enc.Z, state.z)
        logits = model.W_out @ h + model.b_out
        tok = int(np.argmax(logits))  # first maximum = lowest id
        out.append(tok)
        if tok == EOS_ID:
            break
    return out


def predict(model: SeqModel, input_ids: Sequence[int], max_len: int = DEFAULT_MAX_LEN) -> List[int]:
    return decode_greedy(model, encode(model, input_ids), max_len)


# ---------------------------------------------------------------- gradients


def loss(model: SeqModel, batch: Sequence[Tuple[Sequence[int], Sequence[int]]]) -> float:
    return sum(decode_teacher_forced(model, encode(model, src), tgt)[0] for src, tgt in batch)


def zero_grads(model: SeqModel) -> Dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params().items()}


def backward(model: SeqModel, batch: Sequence[Tuple[Sequence[int], Sequence[int]]], grads=None) -> Tuple[float, Dict[str, np.ndarray]]:
    """Exact gradient of the summed batch loss. Returns ``(loss, grads)``.

    Examples are processed in batch order, so accumulation is deterministic.
    """
    if not batch:
        raise ValueError("backward needs a non-empty batch")
    if grads is None:
        grads = zero_grads(model)
    total = 0.0
    for src, tgt in batch:
        total += _backward_one(model, src, tgt, grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}")
    return total, grads


def _backward_one(model: SeqModel, src, tgt, grads) -> float:
    enc = encode(model, src)
    loss_val, _, dec = _decode_forward(model, enc, tgt)
    H = model.hidden_dim
    L = len(dec.targets)

    dlogits = dec.P.copy()
    dlogits[np.arange(L), dec.targets] -= 1.0
    grads["out.W"] += dlogits.T @ dec.Hm
    grads["out.b"] += dlogits.sum(axis=0)
    dHm = dlogits @ model.W_out

    dHenc = np.zeros_like(enc.Z)
    if model.attention is not None:
        a = model.attention
        S, W, C, DC, Hm = dec.att
        dpre = dHm * (1.0 - Hm * Hm)
        grads["attention.W_mix"] += dpre.T @ DC
        dDC = dpre @ a.W_mix
        dZ = dDC[:, :H].copy()
        dC = dDC[:, H:]
        dW = dC @ enc.Z.T  # (L, T)
        dHenc += W.T @ dC
        dU = W * (dW - (W * dW).sum(axis=1, keepdims=True))
        grads["attention.v"] += np.einsum("lt,lta->a", dU, S)
        dS = dU[:, :, None] * a.v[None, None, :] * (1.0 - S * S)
        dK = dS.sum(axis=0)
        dQ = dS.sum(axis=1)
        grads["attention.W1"] += dK.T @ enc.Z
        dHenc += dK @ a.W1
        grads["attention.W2"] += dQ.T @ dec.lstm.Z
        dZ += dQ @ a.W2
    else:
        dZ = dHm

    zeros = np.zeros(H)
    dXdec, dz0, dm0 = _lstm_backward(model.decoder, dec.lstm, dZ, zeros, zeros, grads, "decoder")
    np.add.at(grads["embedding"], dec.inputs, dXdec)
    dXenc, _, _ = _lstm_backward(model.encoder, enc.trace, dHenc, dz0, dm0, grads, "encoder")
    np.add.at(grads["embedding"], np.asarray(src, dtype=np.int64), dXenc)
    return loss_val


def gradient_check(model: SeqModel, batch, eps: float = 1e-5, floor: float = 1e-6) -> Dict[str, float]:
    """Max relative error per parameter block, analytic vs central differences."""
    _, analytic = backward(model, batch)
    numeric = finite_diff_grad(lambda: loss(model, batch), model.params(), eps)
    return {k: relative_error(analytic[k], numeric[k], floor) for k in analytic}


# ---------------------------------------------------------------- serialization


def _assemble(vocab: Vocabulary, arrays: Dict[str, np.ndarray], level: str) -> SeqModel:
    enc = LSTMParams(arrays["encoder.Wx"], arrays["encoder.Wz"], arrays["encoder.b"])
    dec = LSTMParams(arrays["decoder.Wx"], arrays["decoder.Wz"], arrays["decoder.b"])
    att = None
    if "attention.v" in arrays:
        att = AttentionParams(arrays["attention.W1"], arrays["attention.W2"], arrays["attention.v"], arrays["attention.W_mix"])
    return SeqModel(vocab, arrays["embedding"], enc, dec, arrays["out.W"], arrays["out.b"], att, level)


def _expected_shapes(V, E, H, A) -> Dict[str, tuple]:
    shapes = {"embedding": (V, E)}
    for p in ("encoder", "decoder"):
        shapes.update({f"{p}.Wx": (4 * H, E), f"{p}.Wz": (4 * H, H), f"{p}.b": (4 * H,)})
    shapes.update({"out.W": (V, H), "out.b": (V,)})
    if A:
        shapes.update({"attention.W1": (A, H), "attention.W2": (A, H), "attention.v": (A,), "attention.W_mix": (H, 2 * H)})
    return shapes


def model_to_bytes(model: SeqModel) -> bytes:
    params = model.params()
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.values())
    header = {
        "format_version": FORMAT_VERSION,
        "level": model.level,
        "attention": model.attention is not None,
        "vocab_size": model.vocab_size,
        "embed_dim": model.embed_dim,
        "hidden_dim": model.hidden_dim,
        "attn_dim": model.attention.v.shape[0] if model.attention is not None else 0,
        "vocab": model.vocab.words,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return FORMAT_MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload


def model_from_bytes(data: bytes) -> SeqModel:
    if not data.startswith(FORMAT_MAGIC):
        raise FormatError("not a model file (bad magic)")
    off = len(FORMAT_MAGIC)
    if len(data) < off + 8:
        raise FormatError("model file truncated in header")
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) < off + hlen:
        raise FormatError("model file truncated in header")
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except ValueError as e:
        raise FormatError(f"corrupt model header: {e}") from None
    off += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"model format version {header.get('format_version')}, this build reads {FORMAT_VERSION}")
    payload = data[off:]
    if len(payload) != header["payload_bytes"]:
        raise FormatError(f"model payload is {len(payload)} bytes, header declares {header['payload_bytes']} (truncated?)")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise FormatError("model payload checksum mismatch")

    vocab = Vocabulary(header["vocab"])
    V, E, H = header["vocab_size"], header["embed_dim"], header["hidden_dim"]
    A = header["attn_dim"] if header["attention"] else 0
    if len(vocab) != V:
        raise FormatError(f"declared vocab_size {V} but the file lists {len(vocab)} tokens")
    expected = _expected_shapes(V, E, H, A)
    listed = {p["name"]: tuple(p["shape"]) for p in header["params"]}
    if listed != expected:
        raise FormatError(f"parameter shapes {listed} disagree with declared dimensions {expected}")

    arrays = {}
    pos = 0
    for p in header["params"]:
        shape = tuple(p["shape"])
        n = int(np.prod(shape)) * 8
        arrays[p["name"]] = np.frombuffer(payload[pos:pos + n], dtype="<f8").astype(np.float64).reshape(shape)
        pos += n
    if pos != len(payload):
        raise FormatError("model payload size disagrees with parameter shapes")
    try:
        return _assemble(vocab, arrays, header["level"])
    except ShapeError as e:
        raise FormatError(f"inconsistent model dimensions: {e}") from None


def save_model(model: SeqModel, path):
    atomic_write(path, model_to_bytes(model))


def load_model(path) -> SeqModel:
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
