import numpy as np
import pytest

from hbrnn.gradcheck import check_model, tiny_word_config
from hbrnn.models import (PRESETS, HandMismatchError, LayerSpec, Model, ModelConfig,
                          ModelConfigError, accumulate_logits, build_model, expected_param_count,
                          load_checkpoint, param_count, preset, save_checkpoint, sentence_forward,
                          word_forward, word_forward_batch)
from hbrnn.preprocess import TrajectorySet

CLASSES = tuple(f"c{k}" for k in range(10))


def lstm_count(D, H):
    return 4 * (D * H + H * H + H)


def _traj(rng, T, N, two=True, scale=1.0):
    def m():
        return rng.normal(scale=scale, size=(T, 3 * N))
    return TrajectorySet(m(), m(), m() if two else None, m() if two else None, id="t")


def _zero(model):
    for v in model.params.values():
        v[...] = 0.0
    return model


def test_layer_spec_parse():
    assert LayerSpec.parse("2x4x32") == LayerSpec(2, 4, 32)
    assert str(LayerSpec(1, 2, 64)) == "1x2x64"
    with pytest.raises(ModelConfigError):
        LayerSpec(3, 1, 1)


def test_hbrnn_two_hand_layers():
    m = build_model(preset("hbrnn-2h", CLASSES), 0)
    shapes = m.layer_shapes()
    assert [str(s) for s, _ in shapes] == ["2x4x32", "2x2x32", "2x1x64"]
    assert [d for _, d in shapes] == [69, 128, 128]


def test_hbrnn_one_hand_has_two_layers():
    m = build_model(preset("hbrnn-1h", CLASSES), 0)
    assert [str(s) for s, _ in m.layer_shapes()] == ["2x2x32", "2x1x64"]


def test_ctc_preset_capacity():
    m = build_model(preset("hbrnn-ctc", CLASSES), 0)
    assert [str(s) for s, _ in m.layer_shapes()] == ["2x4x32", "2x2x64", "2x1x128"]
    assert m.params["fc.W"].shape == (256, 11)


def test_topology_validation():
    with pytest.raises(ModelConfigError):
        ModelConfig("hbrnn", "two", ("2x2x32", "2x1x64"), CLASSES)
    with pytest.raises(ModelConfigError):
        ModelConfig("hrnn", "two", ("2x4x64", "2x2x64", "2x1x128"), CLASSES)
    with pytest.raises(ModelConfigError):
        ModelConfig("sbrnn", "two", ("2x2x64",), CLASSES)
    with pytest.raises(ModelConfigError):
        ModelConfig("nope", "two", ("2x1x8",), CLASSES)
    with pytest.raises(ModelConfigError):
        preset("missing", CLASSES)


def test_single_lstm_closed_form():
    cfg = ModelConfig("hrnn", "one", ("1x2x5", "1x1x7"), ("a", "b"), n_joints=1)
    m = build_model(cfg)
    assert m.params["bl1.Wx"].size + m.params["bl1.Wh"].size + m.params["bl1.b"].size \
        == 2 * lstm_count(3, 5)
    assert param_count(m) == 2 * lstm_count(3, 5) + lstm_count(10, 7) + 7 * 2 + 2


def test_bidirectional_doubles_recurrent_count():
    uni = ModelConfig("hrnn", "one", ("1x2x8", "1x1x8"), ("a", "b"), 2)
    bi = ModelConfig("hbrnn", "one", ("2x2x8", "2x1x8"), ("a", "b"), 2)
    n_uni = param_count(build_model(uni)) - (8 * 2 + 2)
    bl1 = 2 * 2 * lstm_count(6, 8)
    assert param_count(build_model(bi)) - (16 * 2 + 2) == bl1 + 2 * lstm_count(32, 8)
    assert n_uni == bl1 // 2 + lstm_count(16, 8)


def test_exact_param_counts():
    hb = param_count(build_model(preset("hbrnn-2h", CLASSES)))
    sb = param_count(build_model(preset("sbrnn-2h", CLASSES)))
    assert hb == 8 * lstm_count(69, 32) + 4 * lstm_count(128, 32) + 2 * lstm_count(128, 64) + 128 * 10 + 10
    assert hb == 286986
    assert sb == 2 * lstm_count(276, 256) + 512 * 10 + 10
    assert sb == 1096714
    for name in PRESETS:
        cfg = preset(name, CLASSES)
        assert param_count(build_model(cfg)) == expected_param_count(cfg)


@pytest.mark.xfail(strict=True, reason="closed forms give 286986 vs 1096714: not within 25%")
def test_hbrnn_and_sbrnn_counts_within_quarter():
    hb = param_count(build_model(preset("hbrnn-2h", CLASSES)))
    sb = param_count(build_model(preset("sbrnn-2h", CLASSES)))
    assert abs(hb - sb) <= 0.25 * max(hb, sb)


def test_posterior_sums_to_one_and_zero_is_uniform():
    rng = np.random.default_rng(0)
    cfg = tiny_word_config()
    m = build_model(cfg, 1)
    p = word_forward(m, _traj(rng, 5, 2))
    assert abs(p.probs.sum() - 1.0) < 1e-12
    z = _zero(m.copy())
    np.testing.assert_allclose(word_forward(z, _traj(rng, 5, 2)).probs, np.full(3, 1 / 3))


def test_accumulation_doubles_with_duplicated_frames():
    rng = np.random.default_rng(1)
    fl = rng.normal(size=(4, 5))
    O = accumulate_logits(fl)
    O2 = accumulate_logits(np.repeat(fl, 2, axis=0))
    np.testing.assert_allclose(O2, 2 * O)
    assert np.argmax(O2) == np.argmax(O)


def test_accumulation_respects_lengths():
    fl = np.ones((3, 2, 4))
    np.testing.assert_array_equal(accumulate_logits(fl, [3, 1]), [[3] * 4, [1] * 4])


def test_sbrnn_input_width_and_hrnn_readout():
    sb = ModelConfig("sbrnn", "two", ("2x1x8",), ("a", "b"), n_joints=4)
    assert sb.layer_inputs() == [4 * 12]
    hr = build_model(ModelConfig("hrnn", "two", ("1x4x3", "1x2x3", "1x1x5"), ("a", "b"), 2))
    assert hr.config.readout_width == 5 and hr.params["fc.W"].shape == (5, 2)


def test_s_model_ignores_movement():
    rng = np.random.default_rng(2)
    m = build_model(tiny_word_config("hbrnn_s"), 3)
    a = _traj(rng, 6, 2)
    b = TrajectorySet(a.s_right, a.m_right * 0 + 99.0, a.s_left, rng.normal(size=a.m_left.shape))
    np.testing.assert_array_equal(word_forward(m, a).probs, word_forward(m, b).probs)


def test_one_hand_model_ignores_left_hand():
    rng = np.random.default_rng(3)
    cfg = ModelConfig("hbrnn", "one", ("2x2x4", "2x1x4"), ("a", "b", "c"), 2)
    m = build_model(cfg, 0)
    a = _traj(rng, 5, 2)
    b = TrajectorySet(a.s_right, a.m_right)
    np.testing.assert_array_equal(word_forward(m, a).probs, word_forward(m, b).probs)


def test_two_hand_model_accepts_missing_left_as_idle():
    rng = np.random.default_rng(4)
    m = build_model(tiny_word_config(), 0)
    a = _traj(rng, 5, 2, two=False)
    p = word_forward(m, a)
    assert abs(p.probs.sum() - 1) < 1e-12


def test_width_mismatch_raises():
    rng = np.random.default_rng(5)
    m = build_model(tiny_word_config(), 0)
    with pytest.raises(HandMismatchError):
        word_forward(m, _traj(rng, 4, 3))


def test_batch_matches_single_with_padding():
    rng = np.random.default_rng(6)
    m = build_model(tiny_word_config(), 2)
    trajs = [_traj(rng, T, 2, two=T != 4) for T in (3, 6, 4)]
    batch = word_forward_batch(m, trajs)
    for tr, p in zip(trajs, batch):
        np.testing.assert_allclose(p.probs, word_forward(m, tr).probs, atol=1e-12)


def test_forward_is_deterministic():
    rng = np.random.default_rng(7)
    m = build_model(tiny_word_config(), 0)
    tr = _traj(rng, 5, 2)
    assert word_forward(m, tr).probs.tobytes() == word_forward(m, tr).probs.tobytes()
    assert build_model(tiny_word_config(), 0).params["bl1.Wx"].tobytes() == m.params["bl1.Wx"].tobytes()


def test_bias_gradient_of_summed_outputs_is_T():
    rng = np.random.default_rng(8)
    m = build_model(tiny_word_config(), 0)
    fl, cache = m.forward_frames([_traj(rng, 6, 2)])
    g = m.backward(cache, np.ones_like(fl))
    np.testing.assert_allclose(g["fc.b"], 6.0)


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(9)
    m = build_model(tiny_word_config(), 0)
    fl, cache = m.forward_frames([_traj(rng, 4, 2)])
    for v in m.backward(cache, np.zeros_like(fl)).values():
        assert not v.any()
    with pytest.raises(RuntimeError):
        m.backward(None, fl)


@pytest.mark.parametrize("kind", ["hbrnn", "hrnn", "sbrnn", "hbrnn_m", "hbrnn_s"])
def test_model_gradient_check(kind):
    assert check_model(0, tiny_word_config(kind)) < 1e-4


def test_ctc_model_gradient_check():
    cfg = ModelConfig("hbrnn_ctc", "two", ("2x4x4", "2x2x4", "2x1x4"), ("a", "b"), 2)
    assert check_model(1, cfg) < 1e-4


def test_sentence_forward_rows():
    rng = np.random.default_rng(10)
    cfg = ModelConfig("hbrnn_ctc", "two", ("2x4x3", "2x2x3", "2x1x3"), ("a", "b", "c"), 2)
    m = build_model(cfg, 0)
    lp = sentence_forward(m, _traj(rng, 7, 2))
    assert lp.shape == (7, 4)
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(sentence_forward(_zero(m), _traj(rng, 3, 2))), 0.25)
    with pytest.raises(ModelConfigError):
        word_forward(m, _traj(rng, 3, 2))


def test_checkpoint_round_trip(tmp_path):
    m = build_model(tiny_word_config(), 5)
    save_checkpoint(m, tmp_path / "m.json")
    back = load_checkpoint(tmp_path / "m.json")
    assert back.config == m.config
    for k, v in m.params.items():
        assert back.params[k].tobytes() == v.tobytes()
