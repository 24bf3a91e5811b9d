import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dmmg.errors import ConfigError, DimensionError, FormatError
from dmmg.skeleton import (BODY11_BONES, LabeledDataset, SyntheticConfig, center_sequence, check_sequence,
                           decode_skl, default_bones, encode_skl, generate_synthetic_dataset, motion_stream,
                           read_skl, resample_temporal, to_stream, write_skl)

coords = st.floats(-10, 10, allow_nan=False, width=32)


def seq_strategy(max_j=5, max_t=6):
    return st.tuples(st.integers(1, max_j), st.integers(1, max_t)).flatmap(
        lambda s: arrays(np.float32, (s[0], 3, s[1]), elements=coords))


# ------------------------------------------------------------------ streams


def test_constant_sequence_has_zero_motion():
    x = np.ones((4, 3, 6), dtype=np.float32) * 2.5
    np.testing.assert_array_equal(motion_stream(x), 0)


def test_single_joint_moving_along_x():
    t = np.arange(5, dtype=np.float32)
    x = np.zeros((1, 3, 5), dtype=np.float32)
    x[0, 0] = 0.1 * t
    m = motion_stream(x)
    assert m[0, 0, 0] == 0
    np.testing.assert_allclose(m[0, 0, 1:], 0.1, rtol=1e-5)
    np.testing.assert_array_equal(m[0, 1:], 0)


def test_single_frame_motion_is_zero():
    m = motion_stream(np.ones((3, 3, 1)))
    assert m.shape == (3, 3, 1) and not m.any()


@settings(max_examples=40, deadline=None)
@given(seq_strategy())
def test_motion_of_centered_keeps_shape_and_zero_first_frame(x):
    m = motion_stream(center_sequence(x, 0))
    assert m.shape == x.shape
    assert not m[..., 0].any()


def test_to_stream():
    x = np.random.default_rng(0).normal(size=(2, 3, 3, 4)).astype(np.float32)
    np.testing.assert_array_equal(to_stream(x, "joint"), x)
    np.testing.assert_array_equal(to_stream(x, "motion"), motion_stream(x))
    with pytest.raises(ConfigError):
        to_stream(x, "bone")


# --------------------------------------------------------------- resample


def test_resample_identity():
    x = np.random.default_rng(0).normal(size=(2, 3, 7)).astype(np.float32)
    np.testing.assert_array_equal(resample_temporal(x, 7), x)


@pytest.mark.parametrize("target", [1, 3, 11, 40])
def test_resample_constant(target):
    out = resample_temporal(np.full((2, 3, 5), 1.75, dtype=np.float32), target)
    assert out.shape == (2, 3, target)
    np.testing.assert_allclose(out, 1.75, rtol=1e-6)


def test_resample_linear_ramp():
    x = np.zeros((1, 3, 5), dtype=np.float32)
    x[0, 0] = np.linspace(0, 1, 5)
    out = resample_temporal(x, 9)
    np.testing.assert_allclose(out[0, 0], np.arange(9) * 0.125, atol=1e-6)


def test_resample_endpoints_preserved():
    x = np.random.default_rng(3).normal(size=(3, 3, 6)).astype(np.float32)
    out = resample_temporal(x, 13)
    np.testing.assert_allclose(out[..., 0], x[..., 0], rtol=1e-6)
    np.testing.assert_allclose(out[..., -1], x[..., -1], rtol=1e-6)


def test_resample_rejects_zero_length():
    with pytest.raises(ConfigError):
        resample_temporal(np.zeros((1, 3, 4)), 0)


# ------------------------------------------------------------------ centering


def test_centering_fixed_point():
    x = np.random.default_rng(0).normal(size=(4, 3, 5)).astype(np.float32)
    c = center_sequence(x, 0)
    np.testing.assert_array_equal(center_sequence(c, 0), c)


def test_centering_translation_invariant():
    x = np.random.default_rng(1).normal(size=(4, 3, 5)).astype(np.float32)
    shifted = x + np.array([1, 2, 3], dtype=np.float32)[None, :, None]
    np.testing.assert_allclose(center_sequence(shifted, 2), center_sequence(x, 2), atol=1e-5)


def test_centered_root_is_zero():
    x = np.random.default_rng(2).normal(size=(4, 3, 5)).astype(np.float32)
    assert not center_sequence(x, 1)[1].any()


def test_center_bad_root():
    with pytest.raises(ConfigError):
        center_sequence(np.zeros((2, 3, 3)), 2)


def test_check_sequence():
    with pytest.raises(DimensionError):
        check_sequence(np.zeros((2, 2, 3)))
    with pytest.raises(DimensionError):
        check_sequence(np.full((2, 3, 3), np.inf))


# ------------------------------------------------------------------ generator


def test_generator_is_deterministic():
    cfg = SyntheticConfig(num_classes=3, sequences_per_class=5, frames=8)
    a, b = generate_synthetic_dataset(cfg), generate_synthetic_dataset(cfg)
    assert a[0] == b[0] and a[1] == b[1]


def test_generator_seed_changes_data():
    a = generate_synthetic_dataset(SyntheticConfig(num_classes=2, sequences_per_class=3, frames=4))
    b = generate_synthetic_dataset(SyntheticConfig(seed=8, num_classes=2, sequences_per_class=3, frames=4))
    assert not np.array_equal(a[0].sequences, b[0].sequences)


def test_noise_free_unrotated_samples_identical():
    train, test = generate_synthetic_dataset(
        SyntheticConfig(num_classes=2, sequences_per_class=4, frames=6, noise_std=0.0, viewpoint_jitter=0.0))
    for c in range(2):
        seqs = np.concatenate([train.sequences[train.labels == c], test.sequences[test.labels == c]])
        for s in seqs[1:]:
            np.testing.assert_array_equal(s, seqs[0])


def test_split_counts_25_per_class():
    # 37 per class -> ceil(2*37/3) = 25 train and 12 test
    train, test = generate_synthetic_dataset(SyntheticConfig(sequences_per_class=37, frames=4))
    assert len(train) == 8 * 25 and len(test) == 8 * 12
    assert np.bincount(train.labels).tolist() == [25] * 8
    assert np.bincount(test.labels).tolist() == [12] * 8


def test_train_count_for_25_per_class():
    train, test = generate_synthetic_dataset(SyntheticConfig(sequences_per_class=25, frames=4))
    assert len(train) == 8 * math.ceil(2 * 25 / 3) and sorted(set(train.labels)) == list(range(8))
    assert len(test) == 8 * (25 - 17)


def test_default_shapes():
    train, test = generate_synthetic_dataset(SyntheticConfig())
    assert train.sequences.shape == (200, 11, 3, 32) and test.sequences.shape == (96, 11, 3, 32)
    assert train.sequences.dtype == np.float32


def test_bone_lengths_constant_before_noise():
    train, _ = generate_synthetic_dataset(
        SyntheticConfig(num_classes=3, sequences_per_class=3, noise_std=0.0))
    for seq in train.sequences:
        for i, j in BODY11_BONES:
            lengths = np.linalg.norm(seq[i] - seq[j], axis=0)
            np.testing.assert_allclose(lengths, lengths[0], rtol=1e-5)


def test_rotation_bounded_by_jitter():
    # root-relative coordinates of a noise-free sample are a rotation of the class template
    base_cfg = SyntheticConfig(num_classes=2, sequences_per_class=3, frames=6, noise_std=0.0, viewpoint_jitter=0.0)
    ref, _ = generate_synthetic_dataset(base_cfg)
    jit = 0.3
    rot, _ = generate_synthetic_dataset(SyntheticConfig(num_classes=2, sequences_per_class=3, frames=6,
                                                        noise_std=0.0, viewpoint_jitter=jit))
    for a, b in zip(ref.sequences, rot.sequences):
        p = a.transpose(0, 2, 1).reshape(-1, 3).astype(np.float64)
        q = b.transpose(0, 2, 1).reshape(-1, 3).astype(np.float64)
        u, _, vt = np.linalg.svd(p.T @ q)
        r = (u @ vt).T
        angle = math.acos(np.clip((np.trace(r) - 1) / 2, -1, 1))
        assert angle <= jit + 1e-4
        np.testing.assert_allclose(p @ r.T, q, atol=1e-4)


def test_class_separability_without_noise():
    train, _ = generate_synthetic_dataset(
        SyntheticConfig(num_classes=4, sequences_per_class=6, frames=16, noise_std=0.0))
    flat = train.sequences.reshape(len(train), -1).astype(np.float64)
    d = np.linalg.norm(flat[:, None] - flat[None], axis=2)
    same = train.labels[:, None] == train.labels[None]
    off = ~np.eye(len(train), dtype=bool)
    assert d[same & off].mean() < d[~same].mean()


@pytest.mark.parametrize("field,value", [("num_classes", 1), ("noise_std", -0.1), ("sequences_per_class", 1)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        generate_synthetic_dataset(SyntheticConfig(**{field: value}))


def test_default_bones_tree():
    assert default_bones(11) == BODY11_BONES
    assert default_bones(4) == [(0, 1), (0, 2), (1, 3)]


# ----------------------------------------------------------------- dataset


def test_dataset_validation():
    with pytest.raises(DimensionError):
        LabeledDataset(np.zeros((2, 3, 3, 4)), [0], 2)
    with pytest.raises(ConfigError):
        LabeledDataset(np.zeros((1, 3, 3, 4)), [5], 2)


def test_subset(tiny_data):
    train, _ = tiny_data
    sub = train.subset([0, 3])
    assert len(sub) == 2 and sub.labels.tolist() == train.labels[[0, 3]].tolist()


# -------------------------------------------------------------------- SKL1


@st.composite
def datasets(draw):
    n = draw(st.integers(0, 4))
    j, t, c = draw(st.integers(1, 4)), draw(st.integers(1, 5)), draw(st.integers(1, 5))
    seqs = draw(arrays(np.float32, (n, j, 3, t), elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
    labels = draw(st.lists(st.integers(0, c - 1), min_size=n, max_size=n))
    return LabeledDataset(seqs, labels, c)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_skl_round_trip(ds):
    assert decode_skl(encode_skl(ds)) == ds


def test_empty_dataset_round_trips():
    ds = LabeledDataset(np.zeros((0, 11, 3, 32)), [], 8)
    out = decode_skl(encode_skl(ds))
    assert len(out) == 0 and out.sequences.shape == (0, 11, 3, 32)


def test_skl_header_layout(tiny_data):
    blob = encode_skl(tiny_data[0])
    assert blob[:4] == b"SKL1"
    assert np.frombuffer(blob[4:28], dtype="<u4").tolist() == [1, 12, 11, 3, 8, 3]
    first = np.frombuffer(blob[32:32 + 4 * 11 * 3 * 8], dtype="<f4")
    np.testing.assert_array_equal(first, tiny_data[0].sequences[0].ravel())


def test_wrong_magic(tiny_data):
    blob = b"SKL2" + encode_skl(tiny_data[0])[4:]
    with pytest.raises(FormatError, match="offset 0"):
        decode_skl(blob)


def test_truncated_payload_names_offset(tiny_data):
    blob = encode_skl(tiny_data[0])
    with pytest.raises(FormatError, match="offset"):
        decode_skl(blob[:-7])
    with pytest.raises(FormatError, match="offset"):
        decode_skl(blob[:10])


def test_trailing_bytes_rejected(tiny_data):
    with pytest.raises(FormatError):
        decode_skl(encode_skl(tiny_data[0]) + b"\0")


def test_label_out_of_range_rejected(tiny_data):
    blob = bytearray(encode_skl(tiny_data[0]))
    blob[28:32] = (9).to_bytes(4, "little")
    with pytest.raises(FormatError, match="offset 28"):
        decode_skl(bytes(blob))


def test_file_round_trip(tmp_path, tiny_data):
    write_skl(tiny_data[1], tmp_path / "t.skl")
    assert read_skl(tmp_path / "t.skl", "test") == tiny_data[1]
