import numpy as np
import pytest

from whittlecast import data as dt
from whittlecast.errors import (CheckpointCorruptError, CheckpointVersionError,
                                InputError, NormalizationError, ParseError)


def test_time_series_validation():
    with pytest.raises(InputError):
        dt.TimeSeries(values=np.array([]))
    with pytest.raises(InputError):
        dt.TimeSeries(values=np.array([1.0, np.nan]))


def test_norm_stats_rejects_constant():
    with pytest.raises(NormalizationError):
        dt.NormStats.from_values(np.full(10, 3.0))


def test_synth_deterministic():
    sizes = dt.SynthSizes(n_train=8, n_val=4, n_test=8, context_len=16, forecast_len=8)
    a = dt.synth_dataset("regime-switch", seed=3, sizes=sizes)
    b = dt.synth_dataset("regime-switch", seed=3, sizes=sizes)
    np.testing.assert_array_equal(a.train.contexts, b.train.contexts)
    np.testing.assert_array_equal(a.test.targets, b.test.targets)
    np.testing.assert_array_equal(a.test.flags, b.test.flags)
    c = dt.synth_dataset("regime-switch", seed=4, sizes=sizes)
    assert not np.array_equal(a.train.contexts, c.train.contexts)


def test_synth_unknown_kind():
    with pytest.raises(InputError):
        dt.synth_dataset("nope", 0, dt.SynthSizes())


def test_synth_train_split_is_zscored():
    sizes = dt.SynthSizes(n_train=64, n_val=8, n_test=8)
    ds = dt.synth_dataset("multi-sine", seed=0, sizes=sizes)
    values = np.concatenate([ds.train.contexts.reshape(-1), ds.train.targets.reshape(-1)])
    assert abs(values.mean()) < 1e-9
    assert abs(values.std() - 1.0) < 1e-9


def test_regime_switch_flags_only_on_test():
    sizes = dt.SynthSizes(n_train=32, n_val=8, n_test=200, anomaly_fraction=0.3)
    ds = dt.synth_dataset("regime-switch", seed=1, sizes=sizes)
    assert ds.train.flags is None and ds.val.flags is None
    frac = ds.test.flags.mean()
    assert 0.15 < frac < 0.45


def test_synth_long_targets():
    sizes = dt.SynthSizes(n_test=4, long_factor=3, forecast_len=8)
    ds = dt.synth_dataset("multi-sine", seed=0, sizes=sizes)
    assert ds.test.long_targets.shape == (4, 24)
    np.testing.assert_array_equal(ds.test.long_targets[:, :8], ds.test.targets)


def test_white_noise_variance():
    sizes = dt.SynthSizes(n_train=200, context_len=64, forecast_len=32,
                          wn_sigma=1.5, normalize=False)
    ds = dt.synth_dataset("white-noise", seed=5, sizes=sizes)
    pooled = np.concatenate([ds.train.contexts.reshape(-1), ds.train.targets.reshape(-1)])
    assert abs(pooled.std() - 1.5) < 0.05


def csv_file(tmp_path, rows, header="t,value"):
    path = tmp_path / "series.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def test_csv_window_counting(tmp_path):
    rows = [f"{i},{np.sin(i * 0.3):.6f}" for i in range(100)]
    path = csv_file(tmp_path, rows)
    cfg = dt.CsvLoadConfig(context_len=40, forecast_len=20, stride=20,
                           train_frac=1.0, val_frac=0.0)
    ds = dt.load_csv(path, "value", cfg)
    assert len(ds.train) + len(ds.val) + len(ds.test) == 3
    assert ds.train.contexts.shape[1] == 40
    assert ds.train.targets.shape[1] == 20


def test_csv_train_split_zscored(tmp_path):
    rng = np.random.default_rng(0)
    rows = [f"{i},{float(v)!r}" for i, v in enumerate(rng.normal(size=300) * 4 + 10)]
    path = csv_file(tmp_path, rows)
    cfg = dt.CsvLoadConfig(context_len=30, forecast_len=10, stride=10,
                           train_frac=1.0, val_frac=0.0)
    ds = dt.load_csv(path, "value", cfg)
    pooled = np.concatenate([ds.train.contexts.reshape(-1), ds.train.targets.reshape(-1)])
    assert abs(pooled.mean()) < 1e-9
    assert abs(pooled.std() - 1.0) < 1e-9


def test_csv_parse_error_carries_line_number(tmp_path):
    rows = ["0,1.0", "1,2.0", "2,oops", "3,4.0"]
    path = csv_file(tmp_path, rows)
    cfg = dt.CsvLoadConfig(context_len=2, forecast_len=1, stride=1)
    with pytest.raises(ParseError, match="line 4"):
        dt.load_csv(path, "value", cfg)


def test_csv_missing_column(tmp_path):
    path = csv_file(tmp_path, ["0,1.0"])
    with pytest.raises(ParseError):
        dt.load_csv(path, "watts", dt.CsvLoadConfig(1, 1, 1))


def test_csv_constant_series_rejected(tmp_path):
    rows = [f"{i},5.0" for i in range(50)]
    path = csv_file(tmp_path, rows)
    cfg = dt.CsvLoadConfig(context_len=10, forecast_len=5, stride=5)
    with pytest.raises(NormalizationError):
        dt.load_csv(path, "value", cfg)


def test_csv_row_filter(tmp_path):
    rows = [f"{i % 7},{float(i)!r}" for i in range(140)]
    path = csv_file(tmp_path, rows, header="dow,value")
    cfg = dt.CsvLoadConfig(context_len=30, forecast_len=10, stride=40,
                           row_filter=lambda row: row["dow"] != "0")
    ds = dt.load_csv(path, "value", cfg)
    total = len(ds.train) + len(ds.val) + len(ds.test)
    assert total == (120 - 40) // 40 + 1


def test_csv_normalization_ignores_test_rows(tmp_path):
    rng = np.random.default_rng(1)
    base = rng.normal(size=200).cumsum()
    rows = [f"{i},{float(v)!r}" for i, v in enumerate(base)]
    cfg = dt.CsvLoadConfig(context_len=20, forecast_len=10, stride=30,
                           train_frac=0.5, val_frac=0.2)
    ds1 = dt.load_csv(csv_file(tmp_path, rows), "value", cfg)

    # mutate only rows that fall beyond every training window
    mutated = base.copy()
    mutated[-30:] += 500.0
    rows2 = [f"{i},{float(v)!r}" for i, v in enumerate(mutated)]
    ds2 = dt.load_csv(csv_file(tmp_path, rows2), "value", cfg)
    assert ds1.norm.mean == ds2.norm.mean
    assert ds1.norm.std == ds2.norm.std
    np.testing.assert_array_equal(ds1.train.contexts, ds2.train.contexts)


def test_csv_too_short(tmp_path):
    path = csv_file(tmp_path, ["0,1.0", "1,2.0"])
    with pytest.raises(InputError):
        dt.load_csv(path, "value", dt.CsvLoadConfig(context_len=10, forecast_len=5, stride=1))


def test_container_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.arange(5, dtype=np.int64),
              "c": np.array([True, False])}
    path = tmp_path / "blob.bin"
    dt.write_container(path, "dataset", {"note": "x"}, arrays)
    meta, back = dt.read_container(path, expect_kind="dataset")
    assert meta == {"note": "x"}
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        np.testing.assert_array_equal(back[k], arrays[k])
    # identical bytes when written twice
    path2 = tmp_path / "blob2.bin"
    dt.write_container(path2, "dataset", {"note": "x"}, arrays)
    assert path.read_bytes() == path2.read_bytes()


def test_container_truncation_detected(tmp_path):
    path = tmp_path / "blob.bin"
    dt.write_container(path, "dataset", {}, {"a": np.zeros((4, 4))})
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(CheckpointCorruptError):
        dt.read_container(path)


def test_container_bad_magic(tmp_path):
    path = tmp_path / "blob.bin"
    path.write_bytes(b"NOTAFILE" + b"\x00" * 32)
    with pytest.raises(CheckpointCorruptError):
        dt.read_container(path)


def test_container_version_mismatch(tmp_path):
    import struct

    path = tmp_path / "blob.bin"
    dt.write_container(path, "dataset", {}, {"a": np.zeros(2)})
    raw = bytearray(path.read_bytes())
    raw[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        dt.read_container(path)


def test_dataset_save_load_roundtrip(tmp_path):
    sizes = dt.SynthSizes(n_train=6, n_val=3, n_test=5, long_factor=2)
    ds = dt.synth_dataset("regime-switch", seed=9, sizes=sizes)
    path = tmp_path / "ds.bin"
    dt.save_dataset(path, ds)
    back = dt.load_dataset(path)
    np.testing.assert_array_equal(back.train.contexts, ds.train.contexts)
    np.testing.assert_array_equal(back.test.flags, ds.test.flags)
    np.testing.assert_array_equal(back.test.long_targets, ds.test.long_targets)
    assert back.norm.mean == ds.norm.mean and back.norm.std == ds.norm.std
