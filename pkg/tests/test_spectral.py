import math

import numpy as np
import pytest

from whittlecast import autodiff as ad
from whittlecast import spectral as sp
from whittlecast.errors import ContractError, CoverageError, InputError

from conftest import assert_grads_close, central_difference


def naive_stft(x, window, window_len, hop, kept):
    """O(W^2) loop-based windowed DFT, the reference the fast path must match."""
    t_total = len(x)
    assert t_total % hop == 0
    n_frames = t_total // hop
    out = np.zeros((n_frames, kept), dtype=complex)
    for m in range(n_frames):
        for k in range(kept):
            acc = 0.0 + 0.0j
            for t in range(window_len):
                pos = m * hop + t
                xt = x[pos] if pos < t_total else 0.0
                acc += window[t] * xt * np.exp(-2j * np.pi * k * t / window_len)
            out[m, k] = acc
    return out


def hermitian_full(re, im, window_len):
    """Expand kept bins (assumed = full) back to the length-W spectrum."""
    kept = re.shape[-1]
    full = np.zeros(re.shape[:-1] + (window_len,), dtype=complex)
    full[..., :kept] = re + 1j * im
    for k in range(1, window_len - kept + 1):
        full[..., window_len - k] = np.conj(full[..., k])
    return full


def test_window_peak_is_one():
    params = sp.WindowParams(window_len=8, hop=4, sigma=0.7)
    assert gaussian_at(params, 4) == 1.0


def gaussian_at(params, n):
    return sp.gaussian_window(params, n)


def test_window_flattens_for_large_sigma():
    params = sp.WindowParams(window_len=16, hop=8, sigma=1e6)
    w = sp.gaussian_window(params).data
    assert np.all(np.abs(w - 1.0) < 1e-9)


def test_window_value_formula():
    params = sp.WindowParams(window_len=4, hop=2, sigma=1.0)
    assert abs(sp.gaussian_window(params, 0) - math.exp(-0.5)) < 1e-12
    w = sp.gaussian_window(params).data
    assert abs(w[0] - math.exp(-0.5)) < 1e-12


def test_window_rejects_out_of_range_index():
    params = sp.WindowParams(window_len=4, hop=2)
    with pytest.raises(ContractError):
        sp.gaussian_window(params, 4)


def test_stft_dc_signal():
    params = sp.WindowParams(window_len=4, hop=4)
    frames = sp.stft(np.ones(4), params, window=np.ones(4))
    np.testing.assert_allclose(frames.re.data, [[4.0, 0.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(frames.im.data, [[0.0, 0.0, 0.0]], atol=1e-12)


def test_stft_pure_cosine():
    params = sp.WindowParams(window_len=4, hop=4)
    frames = sp.stft(np.array([1.0, 0.0, -1.0, 0.0]), params, window=np.ones(4))
    np.testing.assert_allclose(frames.re.data, [[0.0, 2.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(frames.im.data, [[0.0, 0.0, 0.0]], atol=1e-12)


def test_stft_matches_naive_dft():
    rng = np.random.default_rng(42)
    params = sp.WindowParams(window_len=16, hop=8, sigma=0.8)
    window = sp.gaussian_window(params).data
    for _ in range(20):
        x = rng.normal(size=64)
        frames = sp.stft(x, params)
        expected = naive_stft(x, window, 16, 8, params.kept_bins)
        np.testing.assert_allclose(frames.re.data, expected.real, atol=1e-9)
        np.testing.assert_allclose(frames.im.data, expected.imag, atol=1e-9)


def test_stft_rejects_short_series():
    params = sp.WindowParams(window_len=16, hop=8)
    with pytest.raises(InputError):
        sp.stft(np.zeros(8), params)


def test_roundtrip_reconstruction():
    rng = np.random.default_rng(7)
    x = rng.normal(size=256)
    params = sp.WindowParams(window_len=16, hop=8, sigma=0.9)
    rec = sp.istft(sp.stft(x, params), params)
    assert rec.shape == (256,)
    assert np.max(np.abs(rec.data - x)) < 1e-6


def test_roundtrip_batched():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(3, 64))
    params = sp.WindowParams(window_len=8, hop=4, sigma=1.2)
    rec = sp.istft(sp.stft(x, params), params)
    assert np.max(np.abs(rec.data - x)) < 1e-6


def test_reconstruction_is_real_vs_complex_oracle():
    rng = np.random.default_rng(11)
    x = rng.normal(size=64)
    params = sp.WindowParams(window_len=8, hop=8, sigma=1e6)
    frames = sp.stft(x, params)
    full = hermitian_full(frames.re.data, frames.im.data, 8)
    per_frame = np.fft.ifft(full, axis=-1)
    assert np.max(np.abs(per_frame.imag)) < 1e-10
    np.testing.assert_allclose(per_frame.real.reshape(-1), x, atol=1e-9)


def test_constant_series_preserved():
    params = sp.WindowParams(window_len=12, hop=4, sigma=0.6)
    x = np.full(48, 3.25)
    rec = sp.istft(sp.stft(x, params), params)
    np.testing.assert_allclose(rec.data, x, atol=1e-9)


def test_zero_frames_give_zero_series():
    params = sp.WindowParams(window_len=8, hop=4)
    frames = sp.SpectralFrames(
        re=ad.Tensor(np.zeros((6, 5))), im=ad.Tensor(np.zeros((6, 5))),
        window_len=8, hop=4)
    rec = sp.istft(frames, params)
    np.testing.assert_array_equal(rec.data, np.zeros(24))


def test_parseval_per_frame():
    rng = np.random.default_rng(13)
    w_len = 16
    params = sp.WindowParams(window_len=w_len, hop=w_len)
    x = rng.normal(size=w_len * 4)
    frames = sp.stft(x, params, window=np.ones(w_len))
    full = hermitian_full(frames.re.data, frames.im.data, w_len)
    for m in range(4):
        seg = x[m * w_len:(m + 1) * w_len]
        energy_time = np.sum(seg ** 2)
        energy_freq = np.sum(np.abs(full[m]) ** 2) / w_len
        assert abs(energy_time - energy_freq) < 1e-9


def test_lowpass_bin_counts():
    assert sp.WindowParams(window_len=96, hop=48, lowpass_factor=4).kept_bins == 13
    assert sp.WindowParams(window_len=12, hop=6, lowpass_factor=2).kept_bins == 4
    assert sp.WindowParams(window_len=96, hop=48, lowpass_factor=1).kept_bins == 49


def test_lowpass_factor_one_is_identity():
    rng = np.random.default_rng(3)
    params = sp.WindowParams(window_len=8, hop=4)
    frames = sp.stft(rng.normal(size=32), params)
    assert sp.lowpass(frames, 1) is frames


def test_lowpass_truncates():
    rng = np.random.default_rng(3)
    params = sp.WindowParams(window_len=8, hop=4)
    frames = sp.stft(rng.normal(size=32), params)
    low = sp.lowpass(frames, 2)
    assert low.kept == 3
    np.testing.assert_array_equal(low.re.data, frames.re.data[:, :3])


def test_stft_consistent_with_lowpass_of_full():
    rng = np.random.default_rng(5)
    x = rng.normal(size=32)
    full_params = sp.WindowParams(window_len=8, hop=4, sigma=0.8)
    lp_params = sp.WindowParams(window_len=8, hop=4, sigma=0.8, lowpass_factor=2)
    direct = sp.stft(x, lp_params)
    via_full = sp.lowpass(sp.stft(x, full_params), 2)
    np.testing.assert_allclose(direct.re.data, via_full.re.data, atol=1e-12)
    np.testing.assert_allclose(direct.im.data, via_full.im.data, atol=1e-12)


def test_padding_for_non_multiple_length():
    params = sp.WindowParams(window_len=8, hop=4)
    frames = sp.stft(np.ones(30), params)
    assert frames.n_frames == 8  # padded to 32 samples, 32 / 4 windows


def test_sigma_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    x = rng.normal(size=48)
    params = sp.WindowParams(window_len=8, hop=4)
    target = rng.normal(size=(12, 5))

    def f(p):
        frames = sp.stft(x, params, sigma=float(p["sigma"]))
        return float(np.sum((frames.re.data - target) ** 2) + np.sum(frames.im.data ** 2))

    tape = ad.Tape()
    sigma = tape.variable(0.85)
    frames = sp.stft(x, params, sigma=sigma)
    loss = ad.add(ad.reduce_sum(ad.square(ad.sub(frames.re, ad.Tensor(target)))),
                  ad.reduce_sum(ad.square(frames.im)))
    tape.backward(loss)
    numeric = central_difference(f, {"sigma": np.array(0.85)})
    assert_grads_close({"sigma": tape.grad(sigma)}, numeric)


def test_sigma_gradient_through_istft():
    rng = np.random.default_rng(19)
    re = rng.normal(size=(6, 5))
    im = rng.normal(size=(6, 5))
    params = sp.WindowParams(window_len=8, hop=4)

    def f(p):
        frames = sp.SpectralFrames(ad.Tensor(re), ad.Tensor(im), 8, 4)
        rec = sp.istft(frames, params, sigma=float(p["sigma"]))
        return float(np.sum(rec.data ** 2))

    tape = ad.Tape()
    sigma = tape.variable(0.85)
    frames = sp.SpectralFrames(ad.Tensor(re), ad.Tensor(im), 8, 4)
    rec = sp.istft(frames, params, sigma=sigma)
    tape.backward(ad.reduce_sum(ad.square(rec)))
    numeric = central_difference(f, {"sigma": np.array(0.85)})
    assert_grads_close({"sigma": tape.grad(sigma)}, numeric)


def test_series_gradient_through_stft():
    rng = np.random.default_rng(23)
    params = sp.WindowParams(window_len=4, hop=2, sigma=0.9)
    x0 = rng.normal(size=12)

    def f(p):
        frames = sp.stft(p["x"], params)
        return float(np.sum(frames.re.data ** 2) + np.sum(frames.im.data ** 2))

    tape = ad.Tape()
    x = tape.variable(x0)
    frames = sp.stft(x, params)
    tape.backward(ad.add(ad.reduce_sum(ad.square(frames.re)),
                         ad.reduce_sum(ad.square(frames.im))))
    assert_grads_close({"x": tape.grad(x)}, central_difference(f, {"x": x0.copy()}))


def test_tiny_sigma_raises_coverage_error():
    params = sp.WindowParams(window_len=16, hop=8, sigma=0.05)
    frames = sp.SpectralFrames(ad.Tensor(np.zeros((4, 9))), ad.Tensor(np.zeros((4, 9))), 16, 8)
    with pytest.raises(CoverageError):
        sp.istft(frames, params)
