"""Short-time Fourier analysis with a learnable truncated-Gaussian window.

A series is cut into windows of length ``window_len`` every ``hop`` samples,
each window is multiplied by w(n) = exp(-0.5 * ((n - W/2) / (sigma * W/2))^2)
and transformed by a direct DFT. Real input makes the negative frequencies
redundant, so only the first floor(W/2)+1 bins are produced, optionally
truncated further by an integer low-pass factor. The inverse transform
rebuilds the series by window-weighted overlap-add,

    x_t = sum_m w(t - mS) * idft(D_m)_{t - mS} / sum_m w(t - mS)^2,

which inverts the forward transform exactly when no low-pass is applied.

Everything here runs on ``autodiff.Tensor`` values, so both the window width
sigma and the coefficients themselves stay differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, CoverageError, InputError

_COVERAGE_FLOOR = 1e-10


@dataclass
class WindowParams:
    """Analysis/synthesis window configuration.

    ``sigma`` is the initial window width; during training the live value is
    a tensor passed alongside these params, so the field here acts as the
    default for untracked use.
    """

    window_len: int
    hop: int
    sigma: float = 1.0
    lowpass_factor: int = 1

    def __post_init__(self):
        if not 1 <= self.hop <= self.window_len:
            raise ContractError(f"hop must lie in [1, window_len], got {self.hop}/{self.window_len}")
        if self.sigma <= 0:
            raise ContractError("sigma must be positive")
        if self.lowpass_factor < 1:
            raise ContractError("lowpass_factor must be >= 1")

    @property
    def full_bins(self) -> int:
        """Number of non-redundant DFT bins for a real signal."""
        return self.window_len // 2 + 1

    @property
    def kept_bins(self) -> int:
        """Bins surviving the low-pass: ceil(full_bins / factor)."""
        return -(-self.full_bins // self.lowpass_factor)


@dataclass
class SpectralFrames:
    """Complex coefficients per (window, frequency), stored as (re, im) pairs.

    ``re`` and ``im`` have shape [n_frames, kept] or [batch, n_frames, kept]
    and may be tracked tensors when they flow through training.
    """

    re: Tensor
    im: Tensor
    window_len: int
    hop: int

    @property
    def n_frames(self) -> int:
        return self.re.shape[-2]

    @property
    def kept(self) -> int:
        return self.re.shape[-1]

    @property
    def batched(self) -> bool:
        return self.re.ndim == 3


def gaussian_window(params: WindowParams, n: int | None = None, *, sigma=None):
    """Truncated Gaussian window value(s), differentiable in sigma.

    With ``n`` given, returns the scalar w(n) as a float. Without it,
    returns the full window as a tensor of shape [window_len]. ``sigma``
    may be a tracked tensor overriding ``params.sigma``.
    """
    w = params.window_len
    if n is not None:
        if not 0 <= n < w:
            raise ContractError(f"sample index {n} outside window of length {w}")
        sig = float(sigma.data) if isinstance(sigma, Tensor) else (params.sigma if sigma is None else float(sigma))
        z = (n - w / 2.0) / (sig * w / 2.0)
        return math.exp(-0.5 * z * z)
    sig = sigma if sigma is not None else Tensor(params.sigma)
    sig = ad.as_tensor(sig)
    offsets = Tensor(np.arange(w, dtype=np.float64) - w / 2.0)
    z = ad.div(offsets, ad.mul(sig, Tensor(w / 2.0)))
    return ad.exp(ad.mul(Tensor(-0.5), ad.square(z)))


def _forward_bases(window_len: int, kept: int) -> tuple[np.ndarray, np.ndarray]:
    """[W, kept] matrices so that re = seg @ C and im = seg @ S."""
    t = np.arange(window_len)[:, None]
    k = np.arange(kept)[None, :]
    ang = 2.0 * np.pi * k * t / window_len
    return np.cos(ang), -np.sin(ang)


def _inverse_bases(window_len: int, kept: int) -> tuple[np.ndarray, np.ndarray]:
    """[kept, W] matrices giving the real inverse DFT with Hermitian
    extension folded in; dropped (low-passed) bins contribute zero."""
    n = np.arange(window_len)[None, :]
    k = np.arange(kept)[:, None]
    ang = 2.0 * np.pi * k * n / window_len
    scale = np.full((kept, 1), 2.0)
    scale[0] = 1.0
    if window_len % 2 == 0 and kept - 1 == window_len // 2:
        scale[-1] = 1.0
    return scale * np.cos(ang) / window_len, -scale * np.sin(ang) / window_len


def _as_series_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    values = getattr(x, "values", x)
    return Tensor(np.asarray(values, dtype=np.float64))


def _segment(x: Tensor, window_len: int, hop: int) -> tuple[Tensor, int]:
    """Cut [.., T] into [.., n_frames, window_len] segments.

    The series is left-padded by edge replication to a multiple of ``hop``;
    windows running past the end are zero-padded. Tracked inputs go through
    slice ops so gradients flow back into the series.
    """
    t_len = x.shape[-1]
    if t_len < window_len:
        raise InputError(f"series of length {t_len} shorter than one window ({window_len})")
    pad_left = (-t_len) % hop
    total = t_len + pad_left
    n_frames = total // hop
    pad_right = (n_frames - 1) * hop + window_len - total

    if x.node_id is None:
        data = x.data
        if pad_left or pad_right:
            widths = [(0, 0)] * (data.ndim - 1) + [(pad_left, pad_right)]
            data = np.pad(data, widths, mode="edge")
            if pad_right:
                data[..., total:] = 0.0
        idx = np.arange(window_len)[None, :] + hop * np.arange(n_frames)[:, None]
        return Tensor(data[..., idx]), n_frames

    parts = []
    if pad_left:
        first = ad.narrow(x, -1, 0, 1)
        parts.extend([first] * pad_left)
    parts.append(x)
    if pad_right:
        zshape = x.shape[:-1] + (pad_right,)
        parts.append(Tensor(np.zeros(zshape)))
    padded = ad.concat(parts, axis=-1) if len(parts) > 1 else x
    frames = [ad.narrow(padded, -1, m * hop, window_len) for m in range(n_frames)]
    stacked = ad.concat([ad.reshape(f, f.shape[:-1] + (1, window_len)) for f in frames], axis=-2)
    return stacked, n_frames


def stft(x, params: WindowParams, *, sigma=None, window=None) -> SpectralFrames:
    """Windowed DFT of a real series, Hermitian-reduced and low-passed.

    ``x`` may be a 1-D series or a [batch, T] stack; accepts raw arrays,
    ``TimeSeries`` objects or (possibly tracked) tensors. ``window``
    overrides the Gaussian window with an explicit [window_len] vector,
    which the tests use to force a rectangular window.
    """
    xt = _as_series_tensor(x)
    segments, n_frames = _segment(xt, params.window_len, params.hop)
    if window is None:
        window = gaussian_window(params, sigma=sigma)
    window = ad.as_tensor(window)
    weighted = ad.mul(segments, window)
    kept = params.kept_bins
    cos_b, sin_b = _forward_bases(params.window_len, kept)
    flat = ad.reshape(weighted, (-1, params.window_len))
    re = ad.reshape(ad.matmul(flat, Tensor(cos_b)), segments.shape[:-1] + (kept,))
    im = ad.reshape(ad.matmul(flat, Tensor(sin_b)), segments.shape[:-1] + (kept,))
    return SpectralFrames(re=re, im=im, window_len=params.window_len, hop=params.hop)


def istft(frames: SpectralFrames, params: WindowParams, *, sigma=None, window=None,
          length: int | None = None) -> Tensor:
    """Overlap-add reconstruction; output length defaults to n_frames * hop.

    Low-passed bins are treated as zero. Positions whose squared-window
    coverage falls below 1e-10 raise ``CoverageError`` instead of dividing
    by almost-zero.
    """
    if frames.window_len != params.window_len or frames.hop != params.hop:
        raise ContractError("frames were produced with different window geometry")
    w_len, hop = params.window_len, params.hop
    n_frames = frames.n_frames
    out_len = n_frames * hop if length is None else length

    inv_cos, inv_sin = _inverse_bases(w_len, frames.kept)
    re2 = ad.reshape(frames.re, (-1, frames.kept))
    im2 = ad.reshape(frames.im, (-1, frames.kept))
    time_frames = ad.add(ad.matmul(re2, Tensor(inv_cos)), ad.matmul(im2, Tensor(inv_sin)))
    time_frames = ad.reshape(time_frames, frames.re.shape[:-1] + (w_len,))

    if window is None:
        window = gaussian_window(params, sigma=sigma)
    window = ad.as_tensor(window)
    weighted = ad.mul(time_frames, window)
    numer = ad.overlap_add(weighted, hop=hop, length=out_len)

    w_sq = ad.reshape(ad.square(window), (1, w_len))
    tile = ad.mul(w_sq, Tensor(np.ones((n_frames, 1))))
    denom = ad.overlap_add(tile, hop=hop, length=out_len)
    if np.min(denom.data) < _COVERAGE_FLOOR:
        raise CoverageError("window coverage below 1e-10; reconstruction undefined at some samples")
    return ad.div(numer, denom)


def lowpass(frames: SpectralFrames, factor: int) -> SpectralFrames:
    """Keep the lowest ceil(kept / factor) frequency bins; factor 1 is identity."""
    if factor < 1:
        raise ContractError("lowpass factor must be >= 1")
    if factor == 1:
        return frames
    keep = -(-frames.kept // factor)
    return SpectralFrames(
        re=ad.narrow(frames.re, -1, 0, keep),
        im=ad.narrow(frames.im, -1, 0, keep),
        window_len=frames.window_len,
        hop=frames.hop,
    )
