"""Retrieval-style metrics for a generated set of attribute vectors, judged
against a reference table of known group biases.

Ranking score of a generated item: its reference bias when the attribute is
in the reference table, otherwise its predicted bias. Ties are broken by
ascending integer code. High-bias membership always requires presence in the
reference with bias at least ``tau``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from unfairgen.attrspace import GroupBiasTable, round_half_up
from unfairgen.bggn import GeneratedSet

METRIC_NAMES = ("bias_ratio", "precision_at_k", "recall_at_k", "avg_dcg_at_k", "rr_at_k_score")


def _check_gen(gen: GeneratedSet):
    if len(gen) == 0:
        raise ValueError("generated set is empty")


def _lookup(gen: GeneratedSet, reference: GroupBiasTable):
    present, ref_bias = reference.lookup_codes(gen.codes)
    return present, ref_bias


def item_scores(gen: GeneratedSet, reference: GroupBiasTable) -> np.ndarray:
    present, ref_bias = _lookup(gen, reference)
    return np.where(present, ref_bias, gen.predicted)


def ranked_order(gen: GeneratedSet, reference: GroupBiasTable) -> np.ndarray:
    """Item indices by descending score, then ascending code, then position."""
    scores = item_scores(gen, reference)
    return np.lexsort((np.arange(len(gen)), gen.codes, -scores))


def distinct_ranking(gen: GeneratedSet, reference: GroupBiasTable) -> np.ndarray:
    """Indices of the first (best-ranked) occurrence of each distinct attribute."""
    order = ranked_order(gen, reference)
    _, first = np.unique(gen.codes[order], return_index=True)
    return order[np.sort(first)]


def _high(gen, reference, tau) -> np.ndarray:
    present, ref_bias = _lookup(gen, reference)
    return present & (np.nan_to_num(ref_bias, nan=-np.inf) >= tau)


def reference_high_count(reference: GroupBiasTable, tau: float) -> int:
    return reference.high_bias_count(tau)


def bias_number_and_ratio(gen: GeneratedSet, reference: GroupBiasTable, tau: float) -> tuple[int, float]:
    _check_gen(gen)
    n = int(_high(gen, reference, tau).sum())
    return n, n / len(gen)


def precision_k(n_gen: int, reference: GroupBiasTable, tau: float) -> int:
    r_gt = reference.high_bias_count(tau) / len(reference) if len(reference) else 0.0
    if r_gt == 0:
        raise ValueError("reference has no group at or above tau; Precision@K is undefined")
    return max(1, round_half_up(n_gen * r_gt))


def precision_at_k(gen: GeneratedSet, reference: GroupBiasTable, tau: float, k: int | None = None) -> float:
    """Share of the top-K ranked items (with repeats) that are reference-high-bias.

    ``K = round(N_gen * r_gt)`` unless overridden.
    """
    _check_gen(gen)
    k = precision_k(len(gen), reference, tau) if k is None else int(k)
    if k < 1:
        raise ValueError("K must be >= 1")
    top = ranked_order(gen, reference)[:k]
    return float(_high(gen, reference, tau)[top].sum()) / k


def recall_at_k(gen: GeneratedSet, reference: GroupBiasTable, tau: float) -> float:
    """Distinct reference-high-bias attributes among the top ``N_gt^B`` items, over ``N_gt^B``."""
    _check_gen(gen)
    k = reference.high_bias_count(tau)
    if k == 0:
        raise ValueError("reference has no group at or above tau; Recall@K is undefined")
    top = ranked_order(gen, reference)[:k]
    hits = top[_high(gen, reference, tau)[top]]
    return len(set(gen.codes[hits].tolist())) / k


def _dcg_terms(gen, reference, k, log_base):
    idx = distinct_ranking(gen, reference)[:k]
    gains = item_scores(gen, reference)[idx]
    ranks = np.arange(1, len(idx) + 1, dtype=np.float64)
    disc = np.log(ranks + 2.0)
    if log_base != "e":
        disc = disc / math.log(float(log_base))
    return gains, disc


def avg_dcg_at_k(gen: GeneratedSet, reference: GroupBiasTable, k: int = 20, log_base="e") -> float:
    """Mean of ``gain_i / log(i + 2)`` over the top ``min(K, distinct)`` attributes."""
    if len(gen) == 0:
        raise ValueError("generated set is empty")
    gains, disc = _dcg_terms(gen, reference, k, log_base)
    return float(np.sum(gains / disc) / len(gains))


def dcg_k_used(gen: GeneratedSet, k: int = 20) -> int:
    return min(k, len(np.unique(gen.codes)))


def rr_k(reference: GroupBiasTable, tau: float) -> int:
    n_high = reference.high_bias_count(tau)
    if n_high == 0:
        raise ValueError("reference has no group at or above tau; RR@K is undefined")
    return max(1, round_half_up(0.05 * n_high))


def rr_at_k_score(gen: GeneratedSet, reference: GroupBiasTable, tau: float) -> float:
    """Rank alignment ``mean exp(-|i_gt - i|)`` over the top-K reference-high-bias attributes."""
    _check_gen(gen)
    k = rr_k(reference, tau)
    high = np.flatnonzero(reference.bias >= tau)
    ref_order = high[np.lexsort((reference.codes[high], -reference.bias[high]))][:k]
    gen_rank = {}
    for pos, i in enumerate(distinct_ranking(gen, reference), start=1):
        gen_rank[int(gen.codes[i])] = pos
    total = 0.0
    for i_gt, row in enumerate(ref_order, start=1):
        pos = gen_rank.get(int(reference.codes[row]))
        if pos is not None:
            total += math.exp(-abs(i_gt - pos))
    return total / k


def bias_histogram(gen: GeneratedSet, reference: GroupBiasTable, bins: int = 10):
    """Normalised counts of item biases (reference, else predicted) over ``[0, max]``."""
    _check_gen(gen)
    values = item_scores(gen, reference)
    top = float(values.max())
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts / counts.sum()


@dataclass
class MetricReport:
    tau: float
    n_gen: int
    bias_number: int
    bias_ratio: float
    precision_at_k: float | None
    precision_k: int | None
    recall_at_k: float | None
    recall_k: int
    avg_dcg_at_k: float
    dcg_k: int
    rr_at_k_score: float | None
    rr_k: int | None
    hist_edges: list
    hist_density: list
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        return cls(**doc)

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "density"])
        for lo, hi, dens in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_density):
            w.writerow([repr(lo), repr(hi), repr(dens)])
        return buf.getvalue()

    def value(self, name: str):
        return getattr(self, name)


def evaluate(gen: GeneratedSet, reference: GroupBiasTable, tau: float, dcg_k: int = 20, log_base="e",
             precision_override: int | None = None, bins: int = 10, strict: bool = True,
             metadata: dict | None = None) -> MetricReport:
    """All metrics plus the bias histogram in one report.

    With ``strict=False`` metrics that are undefined because the reference has
    no group at or above ``tau`` are reported as ``None`` instead of raising.
    """
    _check_gen(gen)
    n_b, ratio = bias_number_and_ratio(gen, reference, tau)
    n_high = reference.high_bias_count(tau)
    if n_high == 0 and strict:
        raise ValueError("reference has no group at or above tau")
    defined = n_high > 0
    edges, dens = bias_histogram(gen, reference, bins)
    return MetricReport(
        tau=float(tau),
        n_gen=len(gen),
        bias_number=n_b,
        bias_ratio=ratio,
        precision_at_k=precision_at_k(gen, reference, tau, precision_override) if defined else None,
        precision_k=(precision_override or precision_k(len(gen), reference, tau)) if defined else None,
        recall_at_k=recall_at_k(gen, reference, tau) if defined else None,
        recall_k=n_high,
        avg_dcg_at_k=avg_dcg_at_k(gen, reference, dcg_k, log_base),
        dcg_k=dcg_k_used(gen, dcg_k),
        rr_at_k_score=rr_at_k_score(gen, reference, tau) if defined else None,
        rr_k=rr_k(reference, tau) if defined else None,
        hist_edges=[float(e) for e in edges],
        hist_density=[float(x) for x in dens],
        metadata=dict(metadata or {}),
    )


def radar_rows(reports: dict) -> list[tuple]:
    """``(method, metric, normalised value)`` with each metric scaled by its maximum across methods."""
    rows = []
    for metric in METRIC_NAMES:
        vals = {m: r.value(metric) for m, r in reports.items()}
        top = max((v for v in vals.values() if v is not None), default=0.0)
        for m in reports:
            v = vals[m]
            rows.append((m, metric, None if v is None else (v / top if top > 0 else 0.0)))
    return rows
