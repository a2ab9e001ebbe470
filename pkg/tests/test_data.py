import json

import numpy as np
import pytest

from hbrnn.data import (TEMPLATE_SLOTS, Alphabet, ConfigError, DatasetError, GeneratorConfig,
                        SkeletonSequence, enumerate_template_sentences, gen_sentences,
                        gen_synthetic, read_dataset, template_sentences, write_dataset)


def _seq(T=5, N=4, hands=("right",), seed=0, sid="r0"):
    rng = np.random.default_rng(seed)
    return SkeletonSequence(sid, "s1", ("hello",),
                            {h: rng.normal(size=(T, N, 3)) * 100 for h in hands}, n_joints=N)


def test_one_record_round_trip(tmp_path):
    path = tmp_path / "d.jsonl"
    write_dataset([_seq()], path)
    back = read_dataset(path)
    assert len(back) == 1 and back[0].T == 5
    assert back[0] == _seq()


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_dataset([], path)
    assert path.read_text() == ""
    assert read_dataset(path) == []


def test_two_records_two_lines(tmp_path):
    path = tmp_path / "d.jsonl"
    write_dataset([_seq(sid="a"), _seq(hands=("right", "left"), sid="b")], path)
    assert len(path.read_text().splitlines()) == 2


def test_round_trip_is_bitwise(tmp_path):
    recs = gen_synthetic(GeneratorConfig(classes=3, samples=2, n_joints=5), seed=3)
    path = tmp_path / "d.jsonl"
    write_dataset(recs, path)
    back = read_dataset(path)
    assert back == recs
    for a, b in zip(recs, back):
        for h in a.hands:
            assert a.joints[h].tobytes() == b.joints[h].tobytes()


def test_short_joint_list_names_record(tmp_path):
    rec = _seq(sid="bad-one").to_record()
    rec["frames"][2]["right"] = rec["frames"][2]["right"][:-1]
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DatasetError, match="bad-one"):
        read_dataset(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(_seq().to_record()) + "\n{not json\n")
    with pytest.raises(DatasetError, match=":2:"):
        read_dataset(path)


def test_hand_appearing_mid_sequence_rejected():
    rec = _seq(hands=("right",)).to_record()
    rec["frames"][1]["left"] = rec["frames"][1]["right"]
    with pytest.raises(DatasetError):
        SkeletonSequence.from_record(rec)


def test_arrays_are_read_only():
    s = _seq()
    with pytest.raises(ValueError):
        s.joints["right"][0, 0, 0] = 1.0


def test_alphabet_blank_and_encoding(tmp_path):
    a = Alphabet(("x", "y", "z"))
    assert a.blank_index == 3 and a.extended_size == 4
    assert a.encode(["z", "x"]) == (2, 0)
    with pytest.raises(ConfigError):
        Alphabet(("x", "x"))
    a.save(tmp_path / "a.json")
    assert Alphabet.load(tmp_path / "a.json") == a


def test_default_template_has_256_sentences():
    sents = enumerate_template_sentences(TEMPLATE_SLOTS)
    assert len(sents) == 256 and len(set(sents)) == 256
    assert sents[0] == ("I", "dontwant", "big", "time")
    assert all(len(s) == 4 for s in sents)


def test_template_rejects_repeated_slot_words():
    with pytest.raises(ConfigError):
        enumerate_template_sentences([("a",) * 4] * 4)


def test_template_rejects_wrong_slot_size():
    with pytest.raises(ConfigError):
        enumerate_template_sentences([("a", "b", "c")] * 4)


def test_template_with_alphabet_gives_indices():
    words = tuple(w for s in TEMPLATE_SLOTS for w in s)
    sents = enumerate_template_sentences(TEMPLATE_SLOTS, Alphabet(words))
    assert sents[0] == (0, 4, 8, 12)


def test_generator_is_deterministic():
    cfg = GeneratorConfig(classes=4, subjects=2, samples=3, n_joints=5)
    a, b = gen_synthetic(cfg, 11), gen_synthetic(cfg, 11)
    assert a == b
    assert gen_synthetic(cfg, 12) != a


def test_generator_counts():
    recs = gen_synthetic(GeneratorConfig(classes=10, samples=20, n_joints=3), 0)
    assert len(recs) == 200
    assert {r.labels[0] for r in recs} == {f"w{k:02d}" for k in range(10)}


def test_zero_noise_class_samples_identical_up_to_length():
    cfg = GeneratorConfig(classes=3, samples=12, n_joints=4, noise=0.0, t_min=5, t_max=7)
    recs = gen_synthetic(cfg, 2)
    by = {}
    for r in recs:
        by.setdefault((r.labels, r.T), []).append(r)
    assert any(len(v) > 1 for v in by.values())
    for group in by.values():
        for r in group[1:]:
            for h in r.hands:
                np.testing.assert_array_equal(r.joints[h], group[0].joints[h])
    # resampling the same prototype: first and last frames agree across lengths
    for label in {r.labels for r in recs}:
        rs = [r for r in recs if r.labels == label]
        for r in rs[1:]:
            np.testing.assert_allclose(r.joints["right"][[0, -1]], rs[0].joints["right"][[0, -1]])


def test_generator_config_errors():
    with pytest.raises(ConfigError):
        GeneratorConfig(classes=0)
    with pytest.raises(ConfigError):
        GeneratorConfig(samples=0)


def test_one_hand_generation():
    recs = gen_synthetic(GeneratorConfig(classes=2, samples=1, hands="one", n_joints=3), 0)
    assert all(r.hands == ("right",) for r in recs)


def test_sentences_concatenate_words_with_transitions():
    cfg = GeneratorConfig(classes=4, n_joints=3, noise=0.0, t_min=6, t_max=6)
    sents = template_sentences([("w00", "w01"), ("w02", "w03")])
    recs = gen_sentences(cfg, sents, 2, seed=0)
    assert len(recs) == 8
    for r in recs:
        assert len(r.labels) == 2
        assert 6 + 3 + 6 <= r.T <= 6 + 8 + 6
