"""Alternating optimization of the forecaster and the likelihood circuit.

Every batch runs two phases: first the recurrent forecaster (including the
window width) takes a gradient step on the mean squared forecast error;
then, with the forecaster frozen, the conditioning network takes a step on
the error-weighted negative log-likelihood

    -(1/M) * sum_i ll_i / max(SE_i, floor)^2,

where SE_i is the per-sequence mean squared error of the fresh prediction.
The weights down-rank badly predicted sequences, so the circuit concentrates
its mass where the forecaster is reliable; the weights are constants, no
gradient flows back into the forecaster.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import circuit as cc
from . import srnn
from .autodiff import Tape, Tensor, reduce_mean, reduce_sum, square, sub
from .data import DatasetSplits
from .errors import ContractError, InputError, NumericDomainError, TrainingDivergedError
from .model import WhittleForecaster
from .uncertainty import TrainLikelihoodStats


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr_srnn: float = 1e-3
    lr_cwspn: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    se_floor: float = 1e-4
    clip_norm: float = 5.0
    sigma_min: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.lr_srnn <= 0 or self.lr_cwspn <= 0:
            raise ContractError("learning rates must be positive")
        if self.se_floor <= 0:
            raise ContractError("se_floor must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("bad epoch/batch configuration")


class Adam:
    """Adaptive-moment gradient descent over a named parameter dict."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None]):
        self.t += 1
        for name in sorted(params):
            g = grads.get(name)
            if g is None:
                continue
            p = params[name]
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray | None], max_norm: float) -> None:
    """In-place global-norm clipping; None entries are untouched."""
    total = 0.0
    for g in grads.values():
        if g is not None:
            total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            if g is not None:
                g *= scale


def mse_loss(pred, gt) -> Tensor:
    """Mean squared difference over all forecast entries."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction {pred.shape} and target {gt.shape} differ")
    return reduce_mean(square(sub(pred, Tensor(gt))))


def weighted_nll_loss(ll: Tensor, se: np.ndarray, se_floor: float) -> Tensor:
    """-(1/M) sum ll_i / max(SE_i, floor)^2; SE enters as a constant weight."""
    se = np.asarray(se, dtype=float)
    if se.ndim != 1 or ll.shape != se.shape:
        raise ContractError("per-sample likelihoods and errors must align")
    if np.any(se < 0):
        raise ContractError("squared errors cannot be negative")
    weights = 1.0 / np.maximum(se, se_floor) ** 2
    weighted = ll * Tensor(weights)
    return reduce_sum(weighted) * Tensor(-1.0 / len(se))


def _param_norms(model: WhittleForecaster) -> str:
    parts = [f"{k}={float(np.linalg.norm(v)):.3e}" for k, v in model.parameters().items()]
    return ", ".join(parts)


def coordinate_step(contexts: np.ndarray, targets: np.ndarray,
                    model: WhittleForecaster, opt_srnn: Adam, opt_cwspn: Adam,
                    cfg: TrainConfig, batch_id: int = 0) -> dict:
    """One alternation: forecaster step on MSE, then circuit step on the
    weighted NLL of fresh predictions with the forecaster frozen."""
    if len(contexts) == 0:
        raise InputError("empty batch")

    # phase 1: forecaster on MSE
    tape = Tape()
    bound = model.gru.bind(tape)
    sigma_t = tape.variable(model.sigma)
    out = srnn.forecast(contexts, model.srnn_cfg, bound, sigma=sigma_t)
    loss_mse = mse_loss(out.series, targets)
    try:
        tape.backward(loss_mse)
    except NumericDomainError as e:
        raise TrainingDivergedError(
            f"non-finite forecast loss at batch {batch_id}; {_param_norms(model)}") from e
    grads = {f"gru.{name}": tape.grad(getattr(bound, name))
             for name in model.gru._FIELDS}
    grads["sigma"] = tape.grad(sigma_t)
    clip_gradients(grads, cfg.clip_norm)
    opt_srnn.step(model.srnn_parameters(), grads)
    if model.sigma < cfg.sigma_min:
        model.sigma[...] = cfg.sigma_min

    # phase 2: circuit on weighted NLL of fresh (frozen) predictions
    out2 = srnn.forecast(contexts, model.srnn_cfg, model.gru, sigma=Tensor(model.sigma))
    se = np.mean((out2.series.data - targets) ** 2, axis=-1)
    tape2 = Tape()
    cbound = model.conditioner.bind(tape2)
    ll = model.cwll(out2.frames, out2.context_frames, bound=cbound)
    loss_nll = weighted_nll_loss(ll, se, cfg.se_floor)
    try:
        tape2.backward(loss_nll)
    except NumericDomainError as e:
        raise TrainingDivergedError(
            f"non-finite likelihood loss at batch {batch_id}; {_param_norms(model)}") from e
    cgrads = {f"cond.{name}": tape2.grad(t) for name, t in cbound.items()}
    clip_gradients(cgrads, cfg.clip_norm)
    opt_cwspn.step(model.cwspn_parameters(), cgrads)

    return {"mse": loss_mse.item(), "cwll": float(np.mean(ll.data)),
            "loss": loss_nll.item()}


def validation_mse(model: WhittleForecaster, contexts, targets) -> float:
    out = model.forecast(contexts)
    return float(np.mean((out.series.data - np.asarray(targets)) ** 2))


def train(dataset: DatasetSplits, model: WhittleForecaster, cfg: TrainConfig
          ) -> tuple[WhittleForecaster, list[dict]]:
    """Run the alternation over shuffled batches for the configured epochs.

    Keeps the forecaster weights of the best validation epoch together with
    the final circuit, then fits the training likelihood extremes used by
    the uncertainty score. The log is a list of per-batch and per-epoch
    records; a fixed seed fixes it exactly.
    """
    n = len(dataset.train)
    if n == 0:
        raise InputError("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    opt_s = Adam(cfg.lr_srnn, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_c = Adam(cfg.lr_cwspn, cfg.beta1, cfg.beta2, cfg.adam_eps)
    log: list[dict] = []
    best_val = np.inf
    best_weights: dict[str, np.ndarray] | None = None

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            metrics = coordinate_step(dataset.train.contexts[idx],
                                      dataset.train.targets[idx],
                                      model, opt_s, opt_c, cfg, batch_id=bi)
            log.append({"epoch": epoch, "batch": bi, **metrics})
        val = validation_mse(model, dataset.val.contexts, dataset.val.targets) \
            if len(dataset.val) else float("nan")
        log.append({"epoch": epoch, "val_mse": val})
        if len(dataset.val) and val < best_val:
            best_val = val
            best_weights = {k: v.copy() for k, v in model.srnn_parameters().items()}

    if best_weights is not None:
        for k, v in model.srnn_parameters().items():
            v[...] = best_weights[k]

    _, ll_train, _ = model.predict_scored(dataset.train.contexts)
    model.ll_stats = TrainLikelihoodStats.from_values(ll_train)
    model.norm = dataset.norm
    return model, log


def write_log(path, log: list[dict]) -> None:
    """Line-delimited JSON records with exact float round-trip."""
    with open(path, "w") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
