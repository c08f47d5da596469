import json
import math
import struct

import numpy as np
import pytest

from scriptinfer.corpus import BOS_ID, EOS_ID, Vocabulary
from scriptinfer.errors import FormatError, ShapeError
from scriptinfer.seqmodel import (
    FORMAT_MAGIC,
    LSTMParams,
    LSTMState,
    AttentionParams,
    attention_context,
    attention_weights,
    backward,
    decode_greedy,
    decode_teacher_forced,
    encode,
    gradient_check,
    init_model,
    load_model,
    lstm_step,
    model_from_bytes,
    model_to_bytes,
    predict,
    save_model,
)

VOCAB12 = Vocabulary([f"w{i}" for i in range(7)])


def rand_seq(rng, lo=1, hi=4):
    return [BOS_ID] + [int(i) for i in rng.integers(3, 12, size=rng.integers(lo, hi + 1))] + [EOS_ID]


# ---------------------------------------------------------------- lstm_step

# hidden 2, input 3; rows of each gate block are (unit 0, unit 1)
FIXED = {
    "Wx": {
        "i": [[0.3, -0.2, 0.1], [0.05, 0.4, -0.3]],
        "f": [[-0.1, 0.2, 0.25], [0.6, -0.5, 0.0]],
        "o": [[0.2, 0.2, -0.4], [-0.3, 0.1, 0.7]],
        "g": [[0.5, -0.6, 0.3], [0.1, 0.9, -0.2]],
    },
    "Wz": {
        "i": [[0.4, -0.1], [0.2, 0.3]],
        "f": [[-0.2, 0.5], [0.1, -0.4]],
        "o": [[0.3, 0.3], [-0.6, 0.2]],
        "g": [[-0.5, 0.1], [0.7, -0.3]],
    },
    "b": {"i": [0.1, -0.1], "f": [1.0, 0.5], "o": [0.0, 0.2], "g": [-0.3, 0.05]},
}
FIXED_X = [0.7, -1.2, 0.4]
FIXED_Z = [0.25, -0.6]
FIXED_M = [1.1, -0.4]


def scalar_lstm(x, z, m):
    """Plain-Python re-computation of one LSTM step from FIXED."""
    sig = lambda a: 1.0 / (1.0 + math.exp(-a))  # noqa: E731
    gates = {}
    for name in "ifog":
        vals = []
        for u in range(2):
            a = FIXED["b"][name][u]
            a += sum(FIXED["Wx"][name][u][k] * x[k] for k in range(3))
            a += sum(FIXED["Wz"][name][u][k] * z[k] for k in range(2))
            vals.append(math.tanh(a) if name == "g" else sig(a))
        gates[name] = vals
    m_new = [gates["f"][u] * m[u] + gates["i"][u] * gates["g"][u] for u in range(2)]
    z_new = [gates["o"][u] * math.tanh(m_new[u]) for u in range(2)]
    return z_new, m_new


def fixed_params():
    Wx = np.vstack([FIXED["Wx"][g] for g in "ifog"])
    Wz = np.vstack([FIXED["Wz"][g] for g in "ifog"])
    b = np.concatenate([FIXED["b"][g] for g in "ifog"])
    return LSTMParams(Wx, Wz, b)


def test_lstm_step_matches_scalar_oracle():
    out = lstm_step(fixed_params(), FIXED_X, LSTMState(np.array(FIXED_Z), np.array(FIXED_M)))
    z_ref, m_ref = scalar_lstm(FIXED_X, FIXED_Z, FIXED_M)
    assert np.max(np.abs(out.z - z_ref)) <= 1e-12
    assert np.max(np.abs(out.m - m_ref)) <= 1e-12


def test_named_gate_views():
    p = fixed_params()
    assert np.array_equal(p.Wzo, FIXED["Wz"]["o"])
    assert np.array_equal(p.Wxm, FIXED["Wx"]["g"])
    assert np.array_equal(p.bf, FIXED["b"]["f"])
    p.bf[:] = 9.0
    assert np.all(p.b[2:4] == 9.0)  # views alias the stacked storage


def test_lstm_step_all_zero():
    p = LSTMParams.zeros(3, 4)
    out = lstm_step(p, np.array([1.0, -2.0, 3.0]), LSTMState.zeros(4))
    assert np.array_equal(out.m, np.zeros(4))
    assert np.array_equal(out.z, np.zeros(4))


def test_lstm_step_saturated_forget_gate_preserves_memory():
    p = LSTMParams.zeros(3, 4)
    p.bf[:] = 100.0
    m0 = np.ones(4)
    out = lstm_step(p, np.array([0.3, 0.1, -0.2]), LSTMState(np.zeros(4), m0))
    assert np.max(np.abs(out.m - m0)) <= 1e-6


def test_lstm_step_shape_error():
    with pytest.raises(ShapeError):
        lstm_step(LSTMParams.zeros(3, 4), np.zeros(2), LSTMState.zeros(4))


def test_lstm_step_bounds_on_random_params():
    rng = np.random.default_rng(0)
    p = LSTMParams(rng.normal(size=(20, 6)) * 3, rng.normal(size=(20, 5)) * 3, rng.normal(size=20))
    state = LSTMState.zeros(5)
    for _ in range(30):
        state = lstm_step(p, rng.normal(size=6) * 3, state)
        assert np.all(np.abs(state.z) < 1)


# ---------------------------------------------------------------- encode / decode


def zero_model(attention=False):
    m = init_model(VOCAB12, 4, 8, attention=attention, seed=0)
    for arr in m.params().values():
        arr[...] = 0.0
    return m


def test_encode_single_token_zero_model():
    enc = encode(zero_model(), [BOS_ID])
    assert np.array_equal(enc.final.z, np.zeros(8))


def test_encode_is_deterministic_and_stores_every_state():
    m = init_model(VOCAB12, 4, 8, seed=3)
    ids = [1, 5, 6, 7, 2]
    a, b = encode(m, ids), encode(m, ids)
    assert len(a.states) == 5
    assert a.Z.tobytes() == b.Z.tobytes()
    assert a.final.m.tobytes() == b.final.m.tobytes()


def test_encode_errors():
    m = init_model(VOCAB12, 4, 8)
    with pytest.raises(ValueError):
        encode(m, [])
    with pytest.raises(IndexError):
        encode(m, [1, 12, 2])


def test_teacher_forced_shapes_and_errors():
    m = init_model(VOCAB12, 4, 8, seed=1)
    enc = encode(m, [1, 4, 2])
    loss, logits = decode_teacher_forced(m, enc, [BOS_ID, EOS_ID])
    assert logits.shape == (1, 12)
    assert loss > 0
    with pytest.raises(ValueError):
        decode_teacher_forced(m, enc, [BOS_ID, 5])
    with pytest.raises(ValueError):
        decode_teacher_forced(m, enc, [5, EOS_ID])


@pytest.mark.parametrize("attention", [False, True])
def test_fresh_model_loss_near_uniform(attention):
    m = init_model(VOCAB12, 4, 8, attention=attention, seed=2)
    rng = np.random.default_rng(0)
    for _ in range(5):
        tgt = rand_seq(rng)
        loss, _ = decode_teacher_forced(m, encode(m, rand_seq(rng)), tgt)
        bound = (len(tgt) - 1) * math.log(12)
        assert 0 <= loss
        assert abs(loss - bound) <= 0.1 * bound


def test_encoder_length_does_not_change_scored_steps():
    m = init_model(VOCAB12, 4, 8, seed=2)
    tgt = [1, 5, 6, 2]
    _, short = decode_teacher_forced(m, encode(m, [1, 3, 2]), tgt)
    _, long = decode_teacher_forced(m, encode(m, [1, 3, 3, 4, 4, 2]), tgt)
    assert short.shape == long.shape == (3, 12)


def test_greedy_eos_forced():
    m = zero_model()
    m.b_out[EOS_ID] = 100.0
    assert decode_greedy(m, encode(m, [1, 4, 2])) == [EOS_ID]


def test_greedy_respects_cap():
    m = zero_model()
    m.b_out[7] = 5.0
    assert decode_greedy(m, encode(m, [1, 4, 2]), max_len=3) == [7, 7, 7]
    with pytest.raises(ValueError):
        decode_greedy(m, encode(m, [1, 2]), max_len=0)


def test_greedy_ties_go_to_lowest_id():
    m = zero_model()
    m.b_out[[6, 9]] = 3.0
    assert decode_greedy(m, encode(m, [1, 2]), max_len=2) == [6, 6]


@pytest.mark.parametrize("attention", [False, True])
def test_greedy_matches_teacher_forced_argmax(attention):
    # feeding the greedy output back as the teacher-forced target yields the same argmaxes
    m = init_model(VOCAB12, 4, 8, attention=attention, seed=5, scale=0.8)
    src = [1, 4, 9, 2]
    out = decode_greedy(m, encode(m, src), max_len=6)
    tgt = [BOS_ID] + out + ([] if out[-1] == EOS_ID else [EOS_ID])
    _, logits = decode_teacher_forced(m, encode(m, src), tgt)
    assert list(np.argmax(logits, axis=1))[: len(out)] == out


# ---------------------------------------------------------------- attention


def small_attention(rng, H=5, A=4):
    return AttentionParams(rng.normal(size=(A, H)), rng.normal(size=(A, H)), rng.normal(size=A), rng.normal(size=(H, 2 * H)))


def test_attention_singleton_returns_state():
    rng = np.random.default_rng(0)
    att = small_attention(rng)
    h = rng.normal(size=5)
    assert np.allclose(attention_context(att, [h], rng.normal(size=5)), h, atol=1e-15)


def test_attention_equal_scores_gives_mean():
    rng = np.random.default_rng(1)
    att = small_attention(rng)
    att.W1[...] = 0.0
    att.W2[...] = 0.0
    H = rng.normal(size=(6, 5))
    assert np.allclose(attention_context(att, H, rng.normal(size=5)), H.mean(axis=0), atol=1e-14)


def test_attention_weights_form_distribution():
    rng = np.random.default_rng(2)
    att = small_attention(rng)
    w = attention_weights(att, rng.normal(size=(7, 5)), rng.normal(size=5))
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.all(w >= 0)


def test_attention_needs_states():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        attention_context(small_attention(rng), np.zeros((0, 5)), np.zeros(5))


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("attention", [False, True])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backward_matches_finite_differences(attention, seed):
    rng = np.random.default_rng(seed)
    m = init_model(VOCAB12, 4, 8, attention=attention, seed=seed, scale=0.5)
    batch = [(rand_seq(rng), rand_seq(rng)) for _ in range(2)]
    errs = gradient_check(m, batch, eps=1e-4)
    assert max(errs.values()) < 1e-4, errs


def test_backward_zero_loss_gives_zero_gradient():
    m = zero_model(attention=True)
    m.b_out[EOS_ID] = 1000.0  # p(EOS) == 1 exactly in float64
    loss, grads = backward(m, [([1, 5, 2], [BOS_ID, EOS_ID])])
    assert loss == 0.0
    for name, g in grads.items():
        assert not np.any(g), name


@pytest.mark.parametrize("attention", [False, True])
def test_batch_gradient_is_sum_of_examples(attention):
    rng = np.random.default_rng(4)
    m = init_model(VOCAB12, 4, 8, attention=attention, seed=4, scale=0.5)
    batch = [(rand_seq(rng), rand_seq(rng)) for _ in range(3)]
    _, total = backward(m, batch)
    parts = [backward(m, [ex])[1] for ex in batch]
    for name in total:
        assert np.max(np.abs(total[name] - sum(p[name] for p in parts))) <= 1e-10


def test_backward_shapes_cover_every_block():
    m = init_model(VOCAB12, 4, 8, attention=True)
    _, grads = backward(m, [([1, 3, 2], [1, 4, 2])])
    assert set(grads) == set(m.params())
    for k, g in grads.items():
        assert g.shape == m.params()[k].shape


def test_backward_needs_examples():
    with pytest.raises(ValueError):
        backward(init_model(VOCAB12, 4, 8), [])


# ---------------------------------------------------------------- serialization


@pytest.mark.parametrize("attention", [False, True])
def test_save_load_round_trip(tmp_path, attention):
    m = init_model(VOCAB12, 4, 8, attention=attention, seed=9, scale=1.0, level="events")
    path = tmp_path / "m.bin"
    save_model(m, path)
    m2 = load_model(path)
    assert m2.vocab == m.vocab and m2.level == "events"
    assert (m2.attention is None) == (not attention)
    for k, v in m.params().items():
        assert v.tobytes() == m2.params()[k].tobytes()
    rng = np.random.default_rng(0)
    for _ in range(100):
        src = rand_seq(rng, 1, 5)
        assert predict(m, src, 10) == predict(m2, src, 10)


def test_save_is_byte_stable(tmp_path):
    m = init_model(VOCAB12, 4, 8, seed=9)
    save_model(m, tmp_path / "a.bin")
    save_model(m.copy(), tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_load_truncated_file(tmp_path):
    data = model_to_bytes(init_model(VOCAB12, 4, 8))
    for cut in (5, len(FORMAT_MAGIC) + 4, len(data) // 2, len(data) - 1):
        (tmp_path / "t.bin").write_bytes(data[:cut])
        with pytest.raises(FormatError):
            load_model(tmp_path / "t.bin")


def _rewrite_header(data: bytes, **changes) -> bytes:
    off = len(FORMAT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, off)
    header = json.loads(data[off + 8:off + 8 + hlen])
    header.update(changes)
    hb = json.dumps(header, sort_keys=True).encode()
    return FORMAT_MAGIC + struct.pack("<Q", len(hb)) + hb + data[off + 8 + hlen:]


def test_load_rejects_vocab_size_mismatch():
    data = model_to_bytes(init_model(VOCAB12, 4, 8))
    with pytest.raises(FormatError, match="vocab_size"):
        model_from_bytes(_rewrite_header(data, vocab_size=13))


def test_load_rejects_other_version_and_dimension_lies():
    data = model_to_bytes(init_model(VOCAB12, 4, 8))
    with pytest.raises(FormatError, match="version"):
        model_from_bytes(_rewrite_header(data, format_version=99))
    with pytest.raises(FormatError, match="disagree"):
        model_from_bytes(_rewrite_header(data, hidden_dim=9))
    with pytest.raises(FormatError, match="magic"):
        model_from_bytes(b"nope" + data)


def test_model_rejects_inconsistent_blocks():
    m = init_model(VOCAB12, 4, 8)
    with pytest.raises(ShapeError):
        type(m)(Vocabulary(["a"]), m.embedding, m.encoder, m.decoder, m.W_out, m.b_out)
