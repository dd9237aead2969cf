"""Adversarial saliency maps built from an input-output Jacobian.

Writing d_t[i] for the target class derivative dF_t/dx_i and o[i] for the
summed derivative of every other class, the single-feature maps are

    increase: 0 if d_t[i] < 0 or o[i] > 0, else  d_t[i] * |o[i]|
    decrease: 0 if d_t[i] > 0 or o[i] < 0, else |d_t[i]| *  o[i]

and the pair heuristic scores a feature pair by -alpha * beta with
alpha = d_t[p1] + d_t[p2], beta = o[p1] + o[p2], subject to alpha > 0,
beta < 0 for the increase variant (signs flipped for decrease).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .jacobian import jacobian_matrix

VARIANTS = ("increase", "decrease")


@dataclass
class SaliencyMap:
    values: np.ndarray  # (M,), non-negative
    target: int
    variant: str


@dataclass(frozen=True)
class PairSelection:
    p1: int
    p2: int
    score: float


def _target_and_others(j, target: int) -> tuple[np.ndarray, np.ndarray]:
    values = jacobian_matrix(j)
    if not 0 <= target < values.shape[0]:
        raise IndexError(f"target {target} out of range for {values.shape[0]} classes")
    d_t = values[target]
    others = values.sum(axis=0) - d_t
    return d_t, others


def saliency_increase(j, target: int) -> SaliencyMap:
    d_t, others = _target_and_others(j, target)
    if jacobian_matrix(j).shape[0] == 1:
        # single-output network: no competing classes, rank by d_t alone
        values = np.where(d_t > 0, d_t, 0.0)
    else:
        reject = (d_t < 0) | (others > 0)
        values = np.where(reject, 0.0, d_t * np.abs(others))
    return SaliencyMap(values, target, "increase")


def saliency_decrease(j, target: int) -> SaliencyMap:
    d_t, others = _target_and_others(j, target)
    if jacobian_matrix(j).shape[0] == 1:
        values = np.where(d_t < 0, -d_t, 0.0)
    else:
        reject = (d_t > 0) | (others < 0)
        values = np.where(reject, 0.0, np.abs(d_t) * others)
    return SaliencyMap(values, target, "decrease")


def pairwise_saliency(j, domain, target: int, variant: str = "increase",
                      prefilter_k: int | None = None) -> PairSelection | None:
    """Best qualifying feature pair in ``domain``, or None when no pair
    satisfies the variant's sign constraints (or fewer than two features
    remain, which signals an exhausted search domain).

    The search is exhaustive over unordered pairs; score ties resolve to
    the lexicographically smallest (p1, p2). ``prefilter_k`` optionally
    narrows the domain to the k features with the best single-feature
    standing before pairing; it trades exactness for speed and is off by
    default.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    d_t, others = _target_and_others(j, target)
    dom = np.unique(np.asarray(list(domain), dtype=int))
    if dom.size < 2:
        return None
    if prefilter_k is not None and prefilter_k < dom.size:
        merit = d_t[dom] - others[dom] if variant == "increase" else others[dom] - d_t[dom]
        keep = np.sort(np.argsort(-merit, kind="stable")[:prefilter_k])
        dom = dom[keep]
        if dom.size < 2:
            return None
    td = d_t[dom]
    od = others[dom]
    alpha = td[:, None] + td[None, :]
    beta = od[:, None] + od[None, :]
    if variant == "increase":
        ok = (alpha > 0) & (beta < 0)
    else:
        ok = (alpha < 0) & (beta > 0)
    ok &= np.triu(np.ones((dom.size, dom.size), dtype=bool), k=1)
    if not ok.any():
        return None
    score = -(alpha * beta)
    masked = np.where(ok, score, -np.inf)
    flat = int(np.argmax(masked))  # first max in row-major order: lexicographic
    i, k = divmod(flat, dom.size)
    return PairSelection(int(dom[i]), int(dom[k]), float(score[i, k]))


def export_saliency_csv(smap: SaliencyMap, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "value"])
        for i, v in enumerate(smap.values):
            writer.writerow([i, repr(float(v))])


def export_saliency_pgm(smap: SaliencyMap, side: int, path) -> None:
    """Min-max scaled heatmap of a saliency map laid out as side x side."""
    from .dataio import write_pgm

    values = smap.values.reshape(side, side)
    top = values.max()
    scaled = values / top if top > 0 else np.zeros_like(values)
    write_pgm(scaled, path)
