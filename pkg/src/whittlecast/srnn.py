"""Recurrent forecaster over Fourier frames.

Instead of stepping over raw samples, a GRU consumes one spectral frame per
step (hop-length stride), so a length-T input costs T/hop recurrence steps.
Complex frames enter and leave the real-valued cell through concatenation
projections: a frame of K complex coefficients becomes the 2K-vector
(Re || Im), and the output projection is split back into halves.

Forecasting is autoregressive: the context frames are encoded, then each
emitted frame is fed back as the next step's input until the horizon is
covered, and the emitted frames are converted to the time domain by
overlap-add synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from . import spectral as sp
from .autodiff import Tape, Tensor
from .errors import ContractError, InputError


@dataclass
class SrnnConfig:
    hidden_size: int
    window: sp.WindowParams
    context_len: int
    forecast_len: int

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ContractError("hidden_size must be positive")
        if self.forecast_len % self.window.hop != 0:
            raise ContractError("forecast_len must be a multiple of the hop size")
        if self.context_len < self.window.window_len:
            raise ContractError("context must cover at least one window")

    @property
    def input_size(self) -> int:
        return 2 * self.window.kept_bins

    @property
    def forecast_frames(self) -> int:
        return self.forecast_len // self.window.hop


@dataclass
class GruWeights:
    """Gate matrices for a single-layer GRU plus the frame output projection."""

    w_z: np.ndarray
    u_z: np.ndarray
    b_z: np.ndarray
    w_r: np.ndarray
    u_r: np.ndarray
    b_r: np.ndarray
    w_c: np.ndarray
    u_c: np.ndarray
    b_c: np.ndarray
    w_out: np.ndarray

    _FIELDS = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_c", "u_c", "b_c", "w_out")

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self._FIELDS}

    def bind(self, tape: Tape | None) -> SimpleNamespace:
        """Wrap every array as a (tracked) tensor for one forward pass."""
        wrap = tape.variable if tape is not None else Tensor
        return SimpleNamespace(**{name: wrap(getattr(self, name)) for name in self._FIELDS})


def init_gru_weights(cfg: SrnnConfig, rng: np.random.Generator) -> GruWeights:
    """Gates uniform in +-1/sqrt(hidden); output projection starts at zero so
    an untrained model forecasts a flat zero series in normalized space."""
    n_in, n_h = cfg.input_size, cfg.hidden_size
    bound = 1.0 / np.sqrt(n_h)

    def u(shape):
        return rng.uniform(-bound, bound, size=shape)

    return GruWeights(
        w_z=u((n_in, n_h)), u_z=u((n_h, n_h)), b_z=np.zeros(n_h),
        w_r=u((n_in, n_h)), u_r=u((n_h, n_h)), b_r=np.zeros(n_h),
        w_c=u((n_in, n_h)), u_c=u((n_h, n_h)), b_c=np.zeros(n_h),
        w_out=np.zeros((n_h, 2 * cfg.window.kept_bins)),
    )


def project_in(re, im) -> Tensor:
    """(Re || Im) concatenation along the last axis."""
    return ad.concat([ad.as_tensor(re), ad.as_tensor(im)], axis=-1)


def project_out(h) -> tuple[Tensor, Tensor]:
    """Split an even-length last axis back into (Re, Im) halves."""
    h = ad.as_tensor(h)
    width = h.shape[-1]
    if width % 2 != 0:
        raise ContractError(f"projection needs an even last axis, got {width}")
    half = width // 2
    return ad.narrow(h, -1, 0, half), ad.narrow(h, -1, half, half)


def gru_cell(x: Tensor, h: Tensor, w: SimpleNamespace) -> Tensor:
    """Standard GRU update: h' = (1 - z) * h + z * candidate."""
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, w.w_z), ad.matmul(h, w.u_z)), w.b_z))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, w.w_r), ad.matmul(h, w.u_r)), w.b_r))
    cand = ad.tanh(ad.add(ad.add(ad.matmul(x, w.w_c), ad.matmul(ad.mul(r, h), w.u_c)), w.b_c))
    one = Tensor(1.0)
    return ad.add(ad.mul(ad.sub(one, z), h), ad.mul(z, cand))


@dataclass
class ForecastOutput:
    series: Tensor                     # [batch, forecast_len]
    frames: sp.SpectralFrames          # predicted coefficients
    context_frames: sp.SpectralFrames  # analysis frames of the context
    gru_steps: int                     # recurrence count, for the T/hop contract


def forecast(context, cfg: SrnnConfig, weights, *,
             tape: Tape | None = None, sigma=None,
             horizon: int | None = None,
             context_frames: sp.SpectralFrames | None = None) -> ForecastOutput:
    """Encode the context spectrally, then decode future frames one hop at a time.

    ``context`` is [T] or [batch, T]; ``horizon`` (samples, multiple of hop)
    defaults to the trained forecast length and may exceed it. ``weights`` is
    either a ``GruWeights`` bundle (bound here, tracked when ``tape`` is
    given) or an already-bound namespace of tensors, which lets callers keep
    handles on the tracked parameters.
    """
    horizon = cfg.forecast_len if horizon is None else horizon
    if horizon % cfg.window.hop != 0 or horizon <= 0:
        raise ContractError("horizon must be a positive multiple of the hop size")

    w = weights.bind(tape) if isinstance(weights, GruWeights) else weights
    if sigma is None:
        sigma = Tensor(cfg.window.sigma)
    window = sp.gaussian_window(cfg.window, sigma=sigma)

    if context_frames is None:
        ct = sp._as_series_tensor(context)
        if ct.shape[-1] < cfg.window.window_len:
            raise InputError("context shorter than one analysis window")
        context_frames = sp.stft(ct, cfg.window, window=window)
    frames = context_frames

    batched = frames.batched
    if not batched:
        frames = sp.SpectralFrames(
            re=ad.reshape(frames.re, (1,) + frames.re.shape),
            im=ad.reshape(frames.im, (1,) + frames.im.shape),
            window_len=frames.window_len, hop=frames.hop)
    batch, n_ctx, kept = frames.re.shape
    if kept != cfg.window.kept_bins:
        raise ContractError("context frames disagree with the configured window")

    h = Tensor(np.zeros((batch, cfg.hidden_size)))
    steps = 0
    for m in range(n_ctx):
        x = project_in(ad.reshape(ad.narrow(frames.re, 1, m, 1), (batch, kept)),
                       ad.reshape(ad.narrow(frames.im, 1, m, 1), (batch, kept)))
        h = gru_cell(x, h, w)
        steps += 1

    n_future = horizon // cfg.window.hop
    emitted = []
    for j in range(n_future):
        out = ad.matmul(h, w.w_out)
        emitted.append(ad.reshape(out, (batch, 1, 2 * kept)))
        if j < n_future - 1:
            h = gru_cell(out, h, w)
            steps += 1

    flat = ad.concat(emitted, axis=1)
    re = ad.narrow(flat, 2, 0, kept)
    im = ad.narrow(flat, 2, kept, kept)
    pred_frames = sp.SpectralFrames(re=re, im=im, window_len=cfg.window.window_len,
                                    hop=cfg.window.hop)
    series = sp.istft(pred_frames, cfg.window, window=window)

    if not batched:
        series = ad.reshape(series, (horizon,))
        pred_frames = sp.SpectralFrames(
            re=ad.reshape(pred_frames.re, (n_future, kept)),
            im=ad.reshape(pred_frames.im, (n_future, kept)),
            window_len=cfg.window.window_len, hop=cfg.window.hop)
        context_frames = sp.SpectralFrames(
            re=ad.reshape(frames.re, (n_ctx, kept)),
            im=ad.reshape(frames.im, (n_ctx, kept)),
            window_len=frames.window_len, hop=frames.hop)
    return ForecastOutput(series=series, frames=pred_frames,
                          context_frames=context_frames, gru_steps=steps)
