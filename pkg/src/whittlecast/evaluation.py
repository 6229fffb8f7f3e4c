"""Sequence-level agreement between forecast error and assigned likelihood.

Each test sequence gets a squared error SE and a conditional log-likelihood
ll. Min-max normalization with a square root (the likelihood curve is
exponentially shaped, the root linearizes it) turns both into [0, 1] scores,

    s_pred = sqrt((SE - min SE) / (max SE - min SE)),
    s_ll   = sqrt((ll - max ll) / (min ll - max ll)),

so 0 marks the best sequence on both scales. The correlation error of a
sequence is (s_pred - s_ll)^2 and the reported figure is its mean; the
random baseline replaces s_ll by uniform draws. Risk selection sorts by
likelihood alone, which is available before ground truth exists.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateRangeError, ParseError

RECORD_HEADER = ("id", "se", "cwll", "s_pred", "s_ll", "ce")


@dataclass
class ForecastRecord:
    """Evaluation unit for one test sequence."""

    seq_id: int
    se: float
    cwll: float
    s_pred: float | None = None
    s_ll: float | None = None
    ce: float | None = None


def _checked_range(values: np.ndarray, what: str) -> tuple[float, float]:
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        raise DegenerateRangeError(f"all {what} values identical; scores undefined")
    return lo, hi


def prediction_score(records: list[ForecastRecord]) -> np.ndarray:
    """Root-normalized squared error; fills each record's ``s_pred``."""
    if len(records) < 2:
        raise ContractError("need at least two records")
    se = np.array([r.se for r in records])
    lo, hi = _checked_range(se, "SE")
    scores = np.sqrt((se - lo) / (hi - lo))
    for r, s in zip(records, scores):
        r.s_pred = float(s)
    return scores


def likelihood_score(records: list[ForecastRecord]) -> np.ndarray:
    """Root-normalized likelihood, 0 for the best (highest) likelihood."""
    if len(records) < 2:
        raise ContractError("need at least two records")
    ll = np.array([r.cwll for r in records])
    lo, hi = _checked_range(ll, "likelihood")
    scores = np.sqrt((ll - hi) / (lo - hi))
    for r, s in zip(records, scores):
        r.s_ll = float(s)
    return scores


def correlation_error(records: list[ForecastRecord]) -> tuple[np.ndarray, float]:
    """(per-record CE, mean CE); computes the scores if absent."""
    if any(r.s_pred is None for r in records):
        prediction_score(records)
    if any(r.s_ll is None for r in records):
        likelihood_score(records)
    ce = np.array([(r.s_pred - r.s_ll) ** 2 for r in records])
    for r, c in zip(records, ce):
        r.ce = float(c)
    return ce, float(ce.mean())


def random_baseline(records: list[ForecastRecord], seed: int, draws: int = 1) -> float:
    """Mean CE when likelihood scores are replaced by uniform(0, 1) draws.

    ``draws`` repeats the experiment to tighten the estimate; the analytic
    expectation is mean(s_pred^2 - s_pred + 1/3) over records.
    """
    if any(r.s_pred is None for r in records):
        prediction_score(records)
    s_pred = np.array([r.s_pred for r in records])
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(draws, len(records)))
    return float(np.mean((s_pred[None, :] - u) ** 2))


def expected_random_ce(records: list[ForecastRecord]) -> float:
    """Closed-form E[(s_pred - U)^2] with U ~ uniform(0, 1)."""
    if any(r.s_pred is None for r in records):
        prediction_score(records)
    s = np.array([r.s_pred for r in records])
    return float(np.mean(s * s - s + 1.0 / 3.0))


def risk_selection(records: list[ForecastRecord], q: float,
                   worst_frac: float = 0.05) -> dict:
    """Coverage of the worst-SE tail by the lowest-likelihood fraction.

    Flags the q-fraction of records with the lowest likelihood and reports
    which share of the worst ``worst_frac``-by-SE records it contains.
    Under random ranking the expected coverage is q.
    """
    if not 0 < q <= 1:
        raise ContractError("q must lie in (0, 1]")
    n = len(records)
    if n == 0:
        raise ContractError("no records")
    n_selected = max(1, int(round(q * n)))
    n_worst = max(1, int(round(worst_frac * n)))
    by_ll = np.argsort([r.cwll for r in records], kind="stable")[:n_selected]
    by_se = np.argsort([-r.se for r in records], kind="stable")[:n_worst]
    covered = len(set(by_ll.tolist()) & set(by_se.tolist()))
    return {
        "q": q,
        "worst_frac": worst_frac,
        "n_selected": n_selected,
        "n_worst": n_worst,
        "coverage": covered / n_worst,
        "expected_random": q,
    }


def make_records(se: np.ndarray, cwll: np.ndarray) -> list[ForecastRecord]:
    if len(se) != len(cwll):
        raise ContractError("per-sequence arrays must align")
    return [ForecastRecord(seq_id=i, se=float(s), cwll=float(l))
            for i, (s, l) in enumerate(zip(se, cwll))]


def moving_average(values: np.ndarray, window: int = 12) -> np.ndarray:
    """Plot-time smoothing only; metrics never use this."""
    if window <= 1:
        return np.asarray(values, dtype=float)
    kernel = np.ones(window) / window
    padded = np.concatenate([np.repeat(values[0], window - 1), values])
    return np.convolve(padded, kernel, mode="valid")


def write_records(path, records: list[ForecastRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_HEADER)
        for r in records:
            writer.writerow([r.seq_id, repr(r.se), repr(r.cwll),
                             "" if r.s_pred is None else repr(r.s_pred),
                             "" if r.s_ll is None else repr(r.s_ll),
                             "" if r.ce is None else repr(r.ce)])


def read_records(path) -> list[ForecastRecord]:
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RECORD_HEADER:
            raise ParseError(f"{path}: unexpected record header {header}")
        for line_no, row in enumerate(reader, start=2):
            try:
                records.append(ForecastRecord(
                    seq_id=int(row[0]), se=float(row[1]), cwll=float(row[2]),
                    s_pred=float(row[3]) if row[3] else None,
                    s_ll=float(row[4]) if row[4] else None,
                    ce=float(row[5]) if row[5] else None))
            except (ValueError, IndexError):
                raise ParseError(f"{path}: line {line_no}: malformed record") from None
    return records
