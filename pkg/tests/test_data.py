import numpy as np
import pytest

from eris.data import (
    DatasetFormatError,
    SyntheticConfig,
    TimeSeriesDataset,
    domain_scales_offsets,
    gen_synthetic,
    load_dataset,
    lodo_split,
    save_dataset,
)


def small_config(**overrides) -> SyntheticConfig:
    spec = dict(n_classes=4, n_domains=4, channels=3, length=32,
                samples_per_domain_class=5, noise_stddev=0.1, seed=3)
    spec.update(overrides)
    return SyntheticConfig(**spec)


class TestGenSynthetic:
    def test_counts_and_balance(self):
        ds = gen_synthetic(small_config(samples_per_domain_class=50))
        assert ds.num_samples == 4 * 4 * 50
        assert np.array_equal(np.bincount(ds.class_labels), [200] * 4)
        assert np.array_equal(np.bincount(ds.domain_labels), [200] * 4)

    def test_zero_noise_cell_determinism(self):
        ds = gen_synthetic(small_config(noise_stddev=0.0, samples_per_domain_class=2))
        for j in range(4):
            for k in range(4):
                cell = ds.samples[(ds.class_labels == k) & (ds.domain_labels == j)]
                assert np.array_equal(cell[0], cell[1])

    def test_domain_means_equal_offsets(self):
        # class patterns are full sinusoid periods, so with zero noise the
        # per-domain mean over samples/channels/time is exactly the offset
        cfg = small_config(noise_stddev=0.0, domain_offset_range=(-1.0, 1.0))
        ds = gen_synthetic(cfg)
        _, offsets = domain_scales_offsets(cfg)
        for j in range(4):
            mean_j = ds.samples[ds.domain_labels == j].mean()
            assert mean_j == pytest.approx(offsets[j], abs=1e-12)
        gaps = np.diff(offsets)
        means = [ds.samples[ds.domain_labels == j].mean() for j in range(4)]
        assert np.all(np.diff(means) >= gaps - 1e-9)

    def test_pure_function_of_config(self):
        a = gen_synthetic(small_config())
        b = gen_synthetic(small_config())
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.class_labels, b.class_labels)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            gen_synthetic(small_config(noise_stddev=-0.1))
        with pytest.raises(ValueError):
            gen_synthetic(small_config(n_classes=0))
        with pytest.raises(ValueError):
            gen_synthetic(small_config(domain_scale_range=(2.0, 1.0)))

    def test_shortcut_and_emphasis_change_data_only_when_enabled(self):
        base = gen_synthetic(small_config(noise_stddev=0.0))
        with_extras = gen_synthetic(small_config(noise_stddev=0.0, shortcut_strength=1.0,
                                                 class_channel_emphasis=0.5))
        assert not np.array_equal(base.samples, with_extras.samples)
        again = gen_synthetic(small_config(noise_stddev=0.0))
        assert np.array_equal(base.samples, again.samples)


class TestLodoSplit:
    def test_counts(self):
        ds = gen_synthetic(small_config(samples_per_domain_class=25))  # 100 per domain
        train, test = lodo_split(ds, 2)
        assert train.num_samples == 300
        assert test.num_samples == 100

    def test_test_set_is_pure_target(self):
        ds = gen_synthetic(small_config())
        _, test = lodo_split(ds, 2)
        assert np.all(test.domain_labels == 2)

    def test_partition_disjoint_exhaustive_order_preserving(self):
        ds = gen_synthetic(small_config())
        train, test = lodo_split(ds, 1)
        assert train.num_samples + test.num_samples == ds.num_samples
        rebuilt = np.concatenate([train.samples, test.samples])
        original = np.concatenate([ds.samples[ds.domain_labels != 1],
                                   ds.samples[ds.domain_labels == 1]])
        assert np.array_equal(rebuilt, original)

    def test_out_of_range_target(self):
        ds = gen_synthetic(small_config())
        with pytest.raises(ValueError):
            lodo_split(ds, 4)
        with pytest.raises(ValueError):
            lodo_split(ds, -1)


class TestCsvRoundTrip:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = gen_synthetic(small_config(samples_per_domain_class=50))  # 800 samples
        path = tmp_path / "ds.csv"
        save_dataset(ds, str(path))
        loaded = load_dataset(str(path))
        assert np.array_equal(ds.samples, loaded.samples)
        assert np.array_equal(ds.class_labels, loaded.class_labels)
        assert np.array_equal(ds.domain_labels, loaded.domain_labels)
        assert (loaded.n_classes, loaded.n_domains) == (ds.n_classes, ds.n_domains)

    def test_save_load_save_identical_bytes(self, tmp_path):
        ds = gen_synthetic(small_config())
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_dataset(ds, str(p1))
        save_dataset(load_dataset(str(p1)), str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_format(self, tmp_path):
        ds = gen_synthetic(small_config())
        path = tmp_path / "ds.csv"
        save_dataset(ds, str(path))
        header = path.read_text().splitlines()[0]
        assert header == f"ERIS-CSV,1,{ds.num_samples},3,32,4,4"

    def test_missing_domain_column_error_names_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("ERIS-CSV,1,1,1,2,2,2\n0,0.5,0.25\n")  # 3 fields, need 4
        with pytest.raises(DatasetFormatError, match=r"line 2.*domain"):
            load_dataset(str(path))

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("NOT-A-HEADER\n")
        with pytest.raises(DatasetFormatError, match="line 1"):
            load_dataset(str(path))

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("ERIS-CSV,1,1,1,2,2,2\n5,0,0.5,0.25\n")
        with pytest.raises(DatasetFormatError, match=r"line 2.*class label 5"):
            load_dataset(str(path))

    def test_row_length_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("ERIS-CSV,1,1,1,2,2,2\n0,0,0.5,0.25,0.125\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_dataset(str(path))

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("ERIS-CSV,1,2,1,2,2,2\n0,0,0.5,0.25\n")
        with pytest.raises(DatasetFormatError, match="ended early"):
            load_dataset(str(path))


class TestDatasetInvariants:
    def test_label_ranges_enforced(self):
        with pytest.raises(ValueError):
            TimeSeriesDataset(np.zeros((2, 1, 4)), [0, 3], [0, 0], n_classes=2, n_domains=1)

    def test_shape_enforced(self):
        with pytest.raises(ValueError):
            TimeSeriesDataset(np.zeros((2, 4)), [0, 1], [0, 0], n_classes=2, n_domains=1)

    def test_non_finite_rejected(self):
        bad = np.zeros((1, 1, 4))
        bad[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            TimeSeriesDataset(bad, [0], [0], n_classes=1, n_domains=1)
