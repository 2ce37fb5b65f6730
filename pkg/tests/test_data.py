import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ascnet.data import (HEADER, Dataset, Split, SyntheticSpec, VideoSample, decode_features,
                         encode_features, generate_synthetic, load_features, progress_ratio,
                         synthetic_prototypes, write_features)
from ascnet.errors import (BadMagicError, FormatError, LabelRangeError, ParameterError,
                           TruncatedFileError, UnsupportedVersionError)


def dataset(rng, count=3, n=2, d=3, c=4):
    samples = [VideoSample(rng.standard_normal((n, d)).astype(np.float32).astype(float), k % c, f"clip-{k}")
               for k in range(count)]
    return Dataset(samples, c, n, d)


def nearest_prototype_accuracy(ds, protos):
    feats = ds.features
    pred = np.argmax(feats @ protos.T, axis=2)
    return (pred == ds.labels[:, None]).mean(axis=0)


class TestProgressRatio:
    def test_examples(self):
        assert progress_ratio(1, 10) == 0.1
        assert progress_ratio(10, 10) == 1.0
        assert progress_ratio(5, 10) == 0.5

    @pytest.mark.parametrize("n", [0, 11, -1])
    def test_range(self, n):
        with pytest.raises(ParameterError):
            progress_ratio(n, 10)


class TestDatasetValidation:
    def test_label_range(self):
        with pytest.raises(ParameterError):
            Dataset([VideoSample(np.zeros((2, 3)), 4)], 4, 2, 3)

    def test_shape(self):
        with pytest.raises(ParameterError):
            Dataset([VideoSample(np.zeros((3, 3)), 0)], 4, 2, 3)

    def test_finite(self):
        with pytest.raises(ParameterError):
            Dataset([VideoSample(np.full((2, 3), np.nan), 0)], 4, 2, 3)

    def test_batch_stacks_rows(self, rng):
        ds = dataset(rng)
        x, y = ds.batch([2, 0])
        np.testing.assert_array_equal(x, np.vstack([ds.samples[2].features, ds.samples[0].features]))
        assert y.tolist() == [2, 0]


class TestAscf:
    def test_empty_is_header_only(self, tmp_path):
        assert write_features(Dataset([], 3, 2, 3), tmp_path / "e.ascf") == 24
        assert HEADER.size == 24

    def test_record_size(self, tmp_path, rng):
        assert write_features(dataset(rng, count=1), tmp_path / "one.ascf") == 24 + (4 + 8 + 2 * 3 * 4)

    def test_header_layout(self, rng):
        blob = encode_features(dataset(rng, count=2))
        assert struct.unpack("<4sIIIII", blob[:24]) == (b"ASCF", 1, 2, 2, 3, 4)
        assert struct.unpack("<I", blob[24:28]) == (0,)

    def test_round_trip_bitwise(self, tmp_path, rng):
        ds = dataset(rng, count=5)
        path = tmp_path / "d.ascf"
        write_features(ds, path)
        back = load_features(path, Split.TEST)
        assert back.split is Split.TEST
        assert (back.n_classes, back.n_levels, back.feat_dim) == (4, 2, 3)
        for a, b in zip(ds.samples, back.samples):
            assert a.features.tobytes() == b.features.tobytes()
            assert a.label == b.label
        assert encode_features(back) == encode_features(ds)

    def test_hex_ids_survive(self, rng):
        ds = Dataset([VideoSample(np.zeros((2, 3)), 1, "00ff00ff00ff00ff")], 4, 2, 3)
        assert decode_features(encode_features(ds)).samples[0].source_id == "00ff00ff00ff00ff"

    def test_deterministic(self, tmp_path, rng):
        ds = dataset(rng)
        write_features(ds, tmp_path / "a")
        write_features(ds, tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_full_scale_dims_accepted(self, rng):
        ds = Dataset([VideoSample(np.zeros((10, 1024)), 0)], 101, 10, 1024)
        back = decode_features(encode_features(ds))
        assert back.samples[0].features.shape == (10, 1024)

    def test_bad_magic(self, rng):
        blob = b"XSCF" + encode_features(dataset(rng))[4:]
        with pytest.raises(BadMagicError) as err:
            decode_features(blob)
        assert err.value.offset == 0

    def test_bad_version(self, rng):
        blob = bytearray(encode_features(dataset(rng)))
        blob[4:8] = struct.pack("<I", 2)
        with pytest.raises(UnsupportedVersionError) as err:
            decode_features(bytes(blob))
        assert err.value.offset == 4

    def test_truncated_header(self, rng):
        with pytest.raises(TruncatedFileError) as err:
            decode_features(encode_features(dataset(rng))[:20])
        assert err.value.offset == 20

    def test_truncated_record(self, rng):
        blob = encode_features(dataset(rng, count=2))
        record = 4 + 8 + 24
        with pytest.raises(TruncatedFileError) as err:
            decode_features(blob[:24 + record + 6])
        assert err.value.offset == 24 + record
        with pytest.raises(TruncatedFileError) as err:
            decode_features(blob[:24 + record + 12 + 5])
        assert err.value.offset == 24 + record + 12

    def test_label_out_of_range(self, rng):
        blob = bytearray(encode_features(dataset(rng, count=2)))
        offset = 24 + 36
        blob[offset:offset + 4] = struct.pack("<I", 9)
        with pytest.raises(LabelRangeError) as err:
            decode_features(bytes(blob))
        assert err.value.offset == offset

    def test_trailing_bytes(self, rng):
        with pytest.raises(FormatError):
            decode_features(encode_features(dataset(rng)) + b"\0")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 4), st.integers(1, 4), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31))
    def test_round_trip_property(self, count, n, d, c, seed):
        ds = dataset(np.random.default_rng(seed), count, n, d, c)
        blob = encode_features(ds)
        assert len(blob) == 24 + count * (12 + 4 * n * d)
        assert encode_features(decode_features(blob)) == blob


class TestSynthetic:
    def test_degenerate_spec_is_exact(self):
        spec = SyntheticSpec(noise_sigma=0.0, convergence_rate=1.0, samples_per_class=5)
        train, test = generate_synthetic(spec)
        protos, _ = synthetic_prototypes(spec)
        for ds in (train, test):
            want = protos[ds.labels].astype(np.float32).astype(float)
            np.testing.assert_array_equal(ds.features, np.repeat(want[:, None], 10, axis=1))
            assert np.all(nearest_prototype_accuracy(ds, protos) == 1.0)

    def test_deterministic(self):
        a, b = generate_synthetic(), generate_synthetic()
        assert encode_features(a[0]) == encode_features(b[0])
        assert encode_features(a[1]) == encode_features(b[1])

    def test_seed_matters(self):
        assert encode_features(generate_synthetic(SyntheticSpec(seed=1))[1]) != \
            encode_features(generate_synthetic()[1])

    def test_split_and_balance(self):
        train, test = generate_synthetic()
        assert (len(train), len(test)) == (960, 240)
        assert train.class_counts() == [160] * 6
        assert test.class_counts() == [40] * 6

    def test_float32_exact(self):
        train, _ = generate_synthetic(SyntheticSpec(samples_per_class=5))
        assert np.array_equal(train.features, train.features.astype(np.float32))

    def test_pair_starts_coincide(self):
        protos, starts = synthetic_prototypes(SyntheticSpec())
        np.testing.assert_array_equal(starts[0], starts[1])
        assert not np.array_equal(starts[0], starts[2])
        np.testing.assert_allclose(np.linalg.norm(starts, axis=1), 1.0)
        np.testing.assert_allclose(np.linalg.norm(protos, axis=1), 1.0)

    def test_later_levels_are_easier(self):
        spec = SyntheticSpec()
        train, test = generate_synthetic(spec)
        protos, _ = synthetic_prototypes(spec)
        acc = (nearest_prototype_accuracy(train, protos) * len(train)
               + nearest_prototype_accuracy(test, protos) * len(test)) / (len(train) + len(test))
        assert acc[0] < acc[-1]
        assert np.all(np.diff(acc) >= -0.01)

    @pytest.mark.parametrize("change", [
        {"samples_per_class": 0}, {"noise_sigma": -0.1}, {"convergence_rate": 0.0},
        {"convergence_rate": 1.5}, {"ambiguity_pairs": ((0, 6),)}, {"ambiguity_pairs": ((1, 1),)},
        {"ambiguity_pairs": ((0, 1), (1, 2))}, {"n_levels": 0},
    ])
    def test_invalid_spec(self, change):
        with pytest.raises(ParameterError):
            generate_synthetic(SyntheticSpec(**change))
