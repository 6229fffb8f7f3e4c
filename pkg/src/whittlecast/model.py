"""Full forecaster: spectral GRU, conditioning network, and likelihood circuit.

The three parts share one window configuration. The circuit's variables are
the (window, frequency) coefficient pairs of the forecast horizon in
window-major order, and the conditioner consumes the context's frames
flattened as per-frame (Re || Im) blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import circuit as cc
from . import spectral as sp
from . import srnn
from .autodiff import Tensor
from .data import NormStats
from .errors import ContractError
from .uncertainty import TrainLikelihoodStats, likelihood_ratio


@dataclass
class ModelConfig:
    window_len: int = 8
    hop: int = 4
    lowpass_factor: int = 1
    sigma_init: float = 1.0
    hidden_size: int = 24
    context_len: int = 32
    forecast_len: int = 16
    depth: int = 2
    repetitions: int = 4
    sums_per_region: int = 4
    leaf_components: int = 4
    conditioner_hidden: tuple[int, ...] | None = None  # None: two layers, 2x input

    def window(self) -> sp.WindowParams:
        return sp.WindowParams(window_len=self.window_len, hop=self.hop,
                               sigma=self.sigma_init, lowpass_factor=self.lowpass_factor)


def _context_frame_count(context_len: int, hop: int) -> int:
    return (context_len + (-context_len) % hop) // hop


class WhittleForecaster:
    """Trained state of the joint model; weights are plain mutable arrays."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        window = config.window()
        self.srnn_cfg = srnn.SrnnConfig(hidden_size=config.hidden_size, window=window,
                                        context_len=config.context_len,
                                        forecast_len=config.forecast_len)
        rng = np.random.default_rng(seed)
        self.gru = srnn.init_gru_weights(self.srnn_cfg, rng)
        self.sigma = np.asarray(float(config.sigma_init))

        kept = window.kept_bins
        self.num_vars = self.srnn_cfg.forecast_frames * kept
        self.structure = cc.build_structure(
            seed=seed, num_vars=self.num_vars, depth=config.depth,
            repetitions=config.repetitions, sums_per_region=config.sums_per_region,
            leaf_components=config.leaf_components)

        n_ctx = _context_frame_count(config.context_len, config.hop)
        in_dim = n_ctx * 2 * kept
        hidden = config.conditioner_hidden
        if hidden is None:
            hidden = (2 * in_dim, 2 * in_dim)
        self.conditioner = cc.Conditioner(in_dim, tuple(hidden), self.structure.n_slots,
                                          rng=rng)

        self.norm: NormStats | None = None
        self.ll_stats: TrainLikelihoodStats | None = None

    # parameter access

    def srnn_parameters(self) -> dict[str, np.ndarray]:
        params = {f"gru.{k}": v for k, v in self.gru.parameters().items()}
        params["sigma"] = self.sigma
        return params

    def cwspn_parameters(self) -> dict[str, np.ndarray]:
        return {f"cond.{k}": v for k, v in self.conditioner.parameters().items()}

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.srnn_parameters(), **self.cwspn_parameters()}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # inference

    def forecast(self, contexts, horizon: int | None = None) -> srnn.ForecastOutput:
        return srnn.forecast(contexts, self.srnn_cfg, self.gru,
                             sigma=Tensor(self.sigma), horizon=horizon)

    def cwll(self, pred_frames: sp.SpectralFrames, context_frames: sp.SpectralFrames,
             *, bound=None) -> Tensor:
        return cc.cwll(pred_frames, context_frames, self.structure, self.conditioner,
                       bound=bound)

    def predict_scored(self, contexts, targets=None):
        """Forecast plus per-sequence conditional log-likelihood (no tape).

        Returns (series [B, F], ll [B], se [B] or None).
        """
        out = self.forecast(contexts)
        ll = self.cwll(out.frames, out.context_frames).data
        se = None
        if targets is not None:
            targets = np.asarray(targets, dtype=float)
            pred = out.series.data
            se = np.mean((pred - targets) ** 2, axis=-1)
        return out.series.data, ll, se

    # per-step likelihood localization

    def window_masks(self) -> np.ndarray:
        """[forecast_frames, num_vars] boolean masks, one per predicted window."""
        kept = self.srnn_cfg.window.kept_bins
        n_f = self.srnn_cfg.forecast_frames
        masks = np.zeros((n_f, self.num_vars), dtype=bool)
        for m in range(n_f):
            masks[m, m * kept:(m + 1) * kept] = True
        return masks

    def _window_lls(self, params: cc.CircuitParams, values) -> np.ndarray:
        """Per-window marginal log-likelihood, normalized per variable and
        rescaled to the full variable count so it is comparable with the
        whole-sequence training extremes. Returns [B, forecast_frames]."""
        masks = self.window_masks()
        cols = []
        for mask in masks:
            marg = cc.marginal_cwll(self.structure, params, values, mask).data
            cols.append(marg / mask.sum() * self.num_vars)
        return np.stack(cols, axis=1)

    def local_lls(self, contexts, horizon: int | None = None
                  ) -> tuple[np.ndarray, np.ndarray]:
        """(pred [B, H], per-window localized ll [B, H/hop]).

        Horizons beyond the trained forecast length are scored by sliding
        the (context, forecast) template: block b of forecast frames is
        conditioned on the frames immediately preceding it in the combined
        context+prediction frame sequence; partial final blocks are handled
        by marginalizing the missing windows out.
        """
        out = self.forecast(contexts, horizon=horizon)
        pred = out.series.data
        if pred.ndim == 1:
            pred = pred[None, :]
        ctx_re, ctx_im = out.context_frames.re.data, out.context_frames.im.data
        pf_re, pf_im = out.frames.re.data, out.frames.im.data
        if ctx_re.ndim == 2:
            ctx_re, ctx_im = ctx_re[None], ctx_im[None]
            pf_re, pf_im = pf_re[None], pf_im[None]

        roll_re = np.concatenate([ctx_re, pf_re], axis=1)
        roll_im = np.concatenate([ctx_im, pf_im], axis=1)
        n_ctx = ctx_re.shape[1]
        n_f = self.srnn_cfg.forecast_frames
        kept = self.srnn_cfg.window.kept_bins
        m_total = pf_re.shape[1]
        batch = pf_re.shape[0]

        window_ll = np.zeros((batch, m_total))
        masks = self.window_masks()
        for b in range(-(-m_total // n_f)):
            lo = b * n_f
            hi = min(lo + n_f, m_total)
            ctx_slice = sp.SpectralFrames(
                re=Tensor(roll_re[:, lo:lo + n_ctx]),
                im=Tensor(roll_im[:, lo:lo + n_ctx]),
                window_len=self.config.window_len, hop=self.config.hop)
            params = cc.condition(ctx_slice, self.conditioner, self.structure)
            vals = np.zeros((batch, self.num_vars, 2))
            span = hi - lo
            vals[:, :span * kept, 0] = pf_re[:, lo:hi].reshape(batch, -1)
            vals[:, :span * kept, 1] = pf_im[:, lo:hi].reshape(batch, -1)
            for j in range(span):
                marg = cc.marginal_cwll(self.structure, params, vals, masks[j]).data
                window_ll[:, lo + j] = marg / masks[j].sum() * self.num_vars
        return pred, window_ll

    def llrs_curve(self, contexts, horizon: int | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
        """(pred [B, H], per-step score [B, H]).

        Each covered step combines the ratios of its overlapping windows by
        window-weighted overlap-add before the square root.
        """
        if self.ll_stats is None:
            raise ContractError("model has no training likelihood stats; train first")
        pred, window_ll = self.local_lls(contexts, horizon=horizon)
        batch, h_len = pred.shape
        m_total = window_ll.shape[1]
        hop, w_len = self.config.hop, self.config.window_len
        wvec = sp.gaussian_window(self.srnn_cfg.window, sigma=Tensor(self.sigma)).data

        lam_num = np.zeros((batch, h_len))
        w_sum = np.zeros(h_len)
        for m in range(m_total):
            start = m * hop
            stop = min(start + w_len, h_len)
            if start >= h_len:
                break
            w_part = wvec[: stop - start]
            lam_m = likelihood_ratio(window_ll[:, m:m + 1], self.ll_stats,
                                     w_part[None, :])
            lam_num[:, start:stop] += w_part[None, :] * lam_m
            w_sum[start:stop] += w_part
        lam = lam_num / w_sum[None, :]
        if self.ll_stats.lr_max <= 0:
            raise ContractError("degenerate training likelihood range")
        return pred, np.sqrt(lam / self.ll_stats.lr_max)
