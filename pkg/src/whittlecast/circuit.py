"""Conditional probabilistic circuit over (Re, Im) Fourier coefficient pairs.

The circuit is a complete and decomposable sum/product graph generated from a
seed: every repetition splits the variable set into balanced random halves
down to a fixed depth, leaf regions carry a small bank of bivariate Gaussian
components per coefficient pair, internal regions mix the cross-products of
their halves, and one root sum mixes all repetitions. Each (window,
frequency) coefficient is a single scope atom, so its real and imaginary
parts are never separated by a product node.

None of the circuit's parameters are free. A conditioning network maps the
context's spectral frames to one flat parameter vector per input; fixed slot
ranges of that vector hold the leaf Gaussian parameters and the sum weights
(softmax-normalized per sum node), so validity holds for any network output.
Evaluation runs bottom-up in log-space, which makes marginals a single pass
with masked leaves. With zero-mean leaves of covariance (s/2) * I, a leaf
term equals the classical Whittle log-density log(1/(pi*s) * exp(-|d|^2/s)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ContractError
from .spectral import SpectralFrames

VARIANCE_FLOOR = 1e-6
LEAF_PARAMS = 5  # mu_re, mu_im, raw diag 1, off-diagonal, raw diag 2


@dataclass
class RegionNode:
    """One region of a repetition's split tree.

    Leaf regions (no children) emit ``leaf_components`` factorized Gaussian
    components over their scope. Internal regions emit ``sums_per_region``
    mixtures of the cross-products of their two halves, except the
    repetition root, which passes its product vector up to the global root.
    """

    scope: tuple[int, ...]
    left: "RegionNode | None" = None
    right: "RegionNode | None" = None
    sum_base: int | None = None
    out_size: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def n_children(self) -> int:
        return self.left.out_size * self.right.out_size


@dataclass
class CircuitStructure:
    """Region trees plus the slot table mapping conditioner outputs to nodes."""

    seed: int
    num_vars: int
    depth: int
    repetitions: int
    sums_per_region: int
    leaf_components: int
    trees: list[RegionNode] = field(default_factory=list)
    root_base: int = 0
    root_children: int = 0
    n_slots: int = 0

    @property
    def leaf_slot_count(self) -> int:
        return self.num_vars * self.repetitions * self.leaf_components * LEAF_PARAMS

    def leaf_param_shape(self) -> tuple[int, int, int, int]:
        return (self.num_vars, self.repetitions, self.leaf_components, LEAF_PARAMS)

    def pack_params(self, batch: int = 1, *, mu=0.0, chol_diag_raw=0.0,
                    chol_off=0.0, sum_logits=0.0) -> np.ndarray:
        """Assemble a raw parameter vector directly, bypassing any conditioner.

        ``mu`` broadcasts to [num_vars, repetitions, leaf_components, 2] and
        the Cholesky entries to [..., 1]; ``sum_logits`` fills every sum
        weight slot. Used by tests and by analytic reference circuits.
        """
        v, r, l, _ = self.leaf_param_shape()
        leaf = np.zeros((v, r, l, LEAF_PARAMS))
        leaf[..., 0:2] = np.broadcast_to(np.asarray(mu, dtype=float), (v, r, l, 2))
        leaf[..., 2] = np.broadcast_to(np.asarray(chol_diag_raw, dtype=float), (v, r, l))
        leaf[..., 3] = np.broadcast_to(np.asarray(chol_off, dtype=float), (v, r, l))
        leaf[..., 4] = np.broadcast_to(np.asarray(chol_diag_raw, dtype=float), (v, r, l))
        raw = np.zeros((batch, self.n_slots))
        raw[:, : self.leaf_slot_count] = leaf.reshape(-1)
        raw[:, self.leaf_slot_count:] = sum_logits
        return raw


def inverse_softplus(y: float) -> float:
    """Raw value whose softplus equals y (> 0)."""
    if y <= 0:
        raise ContractError("softplus output must be positive")
    return float(np.log(np.expm1(y)))


def chol_raw_for_variance(var: float) -> float:
    """Raw diagonal slot so that a zero off-diagonal leaf has variance ``var``."""
    if var <= VARIANCE_FLOOR:
        raise ContractError(f"variance must exceed the floor {VARIANCE_FLOOR}")
    return inverse_softplus(math.sqrt(var - VARIANCE_FLOOR))


def build_structure(seed: int, num_vars: int, depth: int, repetitions: int,
                    sums_per_region: int, leaf_components: int) -> CircuitStructure:
    """Deterministic random structure for a fixed seed and hyperparameters.

    Depth is clamped (with a warning) when 2**depth exceeds the variable
    count; a single-variable input degenerates to one leaf region under the
    root sum.
    """
    if num_vars < 1:
        raise ContractError("need at least one variable")
    if depth < 1 or repetitions < 1 or sums_per_region < 1 or leaf_components < 1:
        raise ContractError("structure hyperparameters must be positive")
    max_depth = int(math.floor(math.log2(num_vars))) if num_vars > 1 else 0
    if depth > max_depth:
        warnings.warn(
            f"depth {depth} too deep for {num_vars} variables; clamped to {max_depth}",
            stacklevel=2)
        depth = max_depth

    rng = np.random.default_rng(seed)
    st = CircuitStructure(seed=seed, num_vars=num_vars, depth=depth,
                          repetitions=repetitions, sums_per_region=sums_per_region,
                          leaf_components=leaf_components)
    cursor = st.leaf_slot_count

    def split(scope: tuple[int, ...], level: int, is_rep_root: bool) -> RegionNode:
        nonlocal cursor
        if level >= depth or len(scope) < 2:
            return RegionNode(scope=scope, out_size=leaf_components)
        perm = rng.permutation(len(scope))
        half = len(scope) // 2
        left_scope = tuple(sorted(scope[i] for i in perm[:half]))
        right_scope = tuple(sorted(scope[i] for i in perm[half:]))
        left = split(left_scope, level + 1, False)
        right = split(right_scope, level + 1, False)
        node = RegionNode(scope=scope, left=left, right=right)
        if is_rep_root:
            node.out_size = node.n_children
        else:
            node.sum_base = cursor
            cursor += node.n_children * sums_per_region
            node.out_size = sums_per_region
        return node

    full_scope = tuple(range(num_vars))
    for _ in range(repetitions):
        st.trees.append(split(full_scope, 0, True))

    st.root_children = sum(t.out_size for t in st.trees)
    st.root_base = cursor
    st.n_slots = cursor + st.root_children
    return st


def check_completeness(st: CircuitStructure) -> bool:
    """Every sum mixes children of identical scope; the root covers all vars."""
    full = tuple(range(st.num_vars))

    def walk(node: RegionNode) -> bool:
        if node.is_leaf:
            return True
        # the sums of this region consume products whose scope is the
        # union of the halves, which must equal the region scope
        prod_scope = tuple(sorted(node.left.scope + node.right.scope))
        if prod_scope != node.scope:
            return False
        return walk(node.left) and walk(node.right)

    if any(t.scope != full for t in st.trees):
        return False
    return all(walk(t) for t in st.trees)


def check_decomposability(st: CircuitStructure) -> bool:
    """Product halves never share a variable."""

    def walk(node: RegionNode) -> bool:
        if node.is_leaf:
            return True
        if set(node.left.scope) & set(node.right.scope):
            return False
        return walk(node.left) and walk(node.right)

    return all(walk(t) for t in st.trees)


def validate_structure(st: CircuitStructure) -> None:
    if not check_completeness(st):
        raise ContractError("structure violates completeness")
    if not check_decomposability(st):
        raise ContractError("structure violates decomposability")


class Conditioner:
    """MLP emitting the circuit's full parameter vector from context features.

    Hidden layers use tanh; the output layer starts at zero, which makes an
    untrained circuit produce uniform sum weights and unit-scale zero-mean
    leaves for every input.
    """

    def __init__(self, input_size: int, hidden_sizes: tuple[int, ...], output_size: int,
                 rng: np.random.Generator | None = None):
        self.sizes = (input_size, *hidden_sizes, output_size)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: dict[str, np.ndarray] = {}
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            bound = 0.0 if last else 1.0 / np.sqrt(n_in)
            self.weights[f"w{i}"] = rng.uniform(-bound, bound, size=(n_in, n_out))
            self.weights[f"b{i}"] = np.zeros(n_out)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.weights)

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        wrap = tape.variable if tape is not None else Tensor
        return {name: wrap(arr) for name, arr in self.weights.items()}

    def forward(self, features: Tensor, bound: dict[str, Tensor] | None = None) -> Tensor:
        bound = bound if bound is not None else self.bind(None)
        h = features
        for i in range(self.n_layers):
            h = ad.add(ad.matmul(h, bound[f"w{i}"]), bound[f"b{i}"])
            if i < self.n_layers - 1:
                h = ad.tanh(h)
        return h


@dataclass
class CircuitParams:
    """Flat per-input parameter vector [batch, n_slots]."""

    raw: Tensor

    @property
    def batch(self) -> int:
        return self.raw.shape[0]


def context_features(frames: SpectralFrames) -> Tensor:
    """Flatten context frames frame-by-frame as (Re || Im) blocks."""
    re, im = frames.re, frames.im
    if re.ndim == 2:
        re = ad.reshape(re, (1,) + re.shape)
        im = ad.reshape(im, (1,) + im.shape)
    joined = ad.concat([re, im], axis=-1)
    batch, n_frames, width = joined.shape
    return ad.reshape(joined, (batch, n_frames * width))


def condition(frames: SpectralFrames, conditioner: Conditioner, st: CircuitStructure,
              *, bound: dict[str, Tensor] | None = None) -> CircuitParams:
    """Emit circuit parameters for each context in the batch."""
    feats = context_features(frames)
    if feats.shape[1] != conditioner.sizes[0]:
        raise ContractError(
            f"context features of width {feats.shape[1]} do not match "
            f"conditioner input {conditioner.sizes[0]}")
    raw = conditioner.forward(feats, bound)
    if raw.shape[1] != st.n_slots:
        raise ContractError("conditioner output does not match the circuit slot table")
    return CircuitParams(raw=raw)


def frames_to_values(frames: SpectralFrames) -> Tensor:
    """Stack frames as [batch, n_frames * kept, 2] in window-major variable order."""
    re, im = frames.re, frames.im
    if re.ndim == 2:
        re = ad.reshape(re, (1,) + re.shape)
        im = ad.reshape(im, (1,) + im.shape)
    batch, n_frames, kept = re.shape
    v = n_frames * kept
    re = ad.reshape(re, (batch, v, 1))
    im = ad.reshape(im, (batch, v, 1))
    return ad.concat([re, im], axis=2)


def _leaf_loglik(values: Tensor, leaf: Tensor) -> Tensor:
    """Bivariate Gaussian log-density per (value, repetition, component).

    ``values`` is [B, V, 2]; ``leaf`` is [B, V, R, L, 5]. The covariance is
    L_chol @ L_chol.T + floor * I with softplus-positive diagonal, evaluated
    through the explicit 2x2 determinant and inverse.
    """
    def comp(i):
        return ad.reshape(ad.narrow(leaf, 4, i, 1), leaf.shape[:-1])

    mu1, mu2 = comp(0), comp(1)
    d1 = ad.softplus(comp(2))
    off = comp(3)
    d2 = ad.softplus(comp(4))

    shape = values.shape[:2] + (1, 1)
    x1 = ad.reshape(ad.narrow(values, 2, 0, 1), shape)
    x2 = ad.reshape(ad.narrow(values, 2, 1, 1), shape)

    floor = Tensor(VARIANCE_FLOOR)
    s11 = ad.add(ad.square(d1), floor)
    s12 = ad.mul(d1, off)
    s22 = ad.add(ad.add(ad.square(off), ad.square(d2)), floor)
    det = ad.sub(ad.mul(s11, s22), ad.square(s12))

    dx1 = ad.sub(x1, mu1)
    dx2 = ad.sub(x2, mu2)
    quad_num = ad.add(ad.sub(ad.mul(s22, ad.square(dx1)),
                             ad.mul(Tensor(2.0), ad.mul(s12, ad.mul(dx1, dx2)))),
                      ad.mul(s11, ad.square(dx2)))
    quad = ad.div(quad_num, det)
    log_det = ad.log(det)
    half = Tensor(-0.5)
    return ad.add(Tensor(-math.log(2.0 * math.pi)),
                  ad.add(ad.mul(half, log_det), ad.mul(half, quad)))


def leaf_logdensity(mu, chol_raw, value) -> float:
    """Log-density of one pairwise Gaussian leaf at one (re, im) value.

    ``chol_raw`` is (diag1_raw, off, diag2_raw) before the softplus/floor
    parameterization. With mu = 0 and both raw diagonals set via
    ``chol_raw_for_variance(s / 2)``, this equals the Whittle term
    -log(pi * s) - |value|^2 / s.
    """
    mu = np.asarray(mu, dtype=float).reshape(2)
    a, c, b = (float(x) for x in chol_raw)
    value = np.asarray(value, dtype=float).reshape(2)
    leaf = Tensor(np.array([mu[0], mu[1], a, c, b]).reshape(1, 1, 1, 1, LEAF_PARAMS))
    vals = Tensor(value.reshape(1, 1, 2))
    return _leaf_loglik(vals, leaf).item()


def _eval_region(node: RegionNode, leaf_ll: Tensor, params: CircuitParams,
                 st: CircuitStructure, rep: int) -> Tensor:
    batch = leaf_ll.shape[0]
    if node.is_leaf:
        got = ad.gather(leaf_ll, np.asarray(node.scope, dtype=np.intp), axis=1)
        got = ad.narrow(got, 2, rep, 1)
        summed = ad.reduce_sum(got, axis=1)
        return ad.reshape(summed, (batch, st.leaf_components))
    left = _eval_region(node.left, leaf_ll, params, st, rep)
    right = _eval_region(node.right, leaf_ll, params, st, rep)
    a, b = left.shape[1], right.shape[1]
    prod = ad.add(ad.reshape(left, (batch, a, 1)), ad.reshape(right, (batch, 1, b)))
    prod = ad.reshape(prod, (batch, a * b))
    if node.sum_base is None:
        return prod
    return _sum_mix(prod, params, node.sum_base, st.sums_per_region)


def _sum_mix(children: Tensor, params: CircuitParams, base: int, k_out: int) -> Tensor:
    batch, c = children.shape
    logits = ad.reshape(ad.narrow(params.raw, 1, base, c * k_out),
                        (params.batch, c, k_out))
    log_w = ad.log_softmax(logits, axis=1)
    combined = ad.add(log_w, ad.reshape(children, (batch, c, 1)))
    return ad.logsumexp(combined, axis=1)


def log_likelihood(st: CircuitStructure, params: CircuitParams, values,
                   observed: np.ndarray | None = None) -> Tensor:
    """Bottom-up log-density of ``values`` [B, V, 2] under the circuit.

    ``observed`` is an optional boolean mask over variables; unobserved
    leaves contribute log 1 = 0, which yields the exact marginal thanks to
    completeness and decomposability.
    """
    values = ad.as_tensor(values)
    if values.ndim == 2:
        values = ad.reshape(values, (1,) + values.shape)
    if values.shape[1] != st.num_vars or values.shape[2] != 2:
        raise ContractError(
            f"values of shape {values.shape} do not cover the circuit's "
            f"{st.num_vars} coefficient pairs")
    batch = max(values.shape[0], params.batch)

    leaf = ad.reshape(ad.narrow(params.raw, 1, 0, st.leaf_slot_count),
                      (params.batch,) + st.leaf_param_shape())
    leaf_ll = _leaf_loglik(values, leaf)
    if observed is not None:
        observed = np.asarray(observed)
        if observed.shape != (st.num_vars,):
            raise ContractError("observed mask must cover every variable once")
        mask = observed.astype(float).reshape(1, st.num_vars, 1, 1)
        leaf_ll = ad.mul(leaf_ll, Tensor(mask))

    rep_vectors = [_eval_region(tree, leaf_ll, params, st, rep)
                   for rep, tree in enumerate(st.trees)]
    children = ad.concat(rep_vectors, axis=1) if len(rep_vectors) > 1 else rep_vectors[0]
    root = _sum_mix(children, params, st.root_base, 1)
    return ad.reshape(root, (batch,))


def cwll(pred_frames: SpectralFrames, context_frames: SpectralFrames,
         st: CircuitStructure, conditioner: Conditioner, *,
         bound: dict[str, Tensor] | None = None) -> Tensor:
    """Conditional Whittle log-likelihood of predicted frames given the context."""
    params = condition(context_frames, conditioner, st, bound=bound)
    return log_likelihood(st, params, frames_to_values(pred_frames))


def marginal_cwll(st: CircuitStructure, params: CircuitParams, values,
                  observed) -> Tensor:
    """Marginal over a subset of variables; the full set reproduces
    ``log_likelihood`` and the empty set gives exactly zero."""
    observed = np.asarray(observed, dtype=bool)
    if not observed.any():
        batch = max(ad.as_tensor(values).shape[0] if ad.as_tensor(values).ndim == 3 else 1,
                    params.batch)
        return Tensor(np.zeros(batch))
    return log_likelihood(st, params, values, observed=observed)
