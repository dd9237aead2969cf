"""Campaign statistics and the hardness / distance / robustness measures.

Hardness integrates mean distortion over success rate across a grid of
distortion budgets (trapezoidal rule); adversarial distance counts how
much of the first-iteration saliency map is dead, which predicts hardness
without running the attack.
"""

from dataclasses import dataclass

import numpy as np

from .craft import CraftParams, CraftResult, craft, result_at_budget
from .errors import DataError, DimensionError
from .jacobian import forward_derivative
from .network import Network
from .saliency import saliency_increase
from .train import LabeledDataset


@dataclass
class ClassPairStats:
    source: int
    target: int
    count: int
    successes: int
    success_rate: float
    mean_distortion: float | None  # over successful results; None without any


@dataclass
class CampaignSummary:
    total: int
    successes: int
    success_rate: float
    mean_distortion_all: float
    mean_distortion_successful: float | None
    pairs: dict


def campaign_stats(results) -> CampaignSummary:
    results = list(results)
    if not results:
        raise DataError("no results to aggregate")
    by_pair: dict[tuple[int, int], list[CraftResult]] = {}
    for r in results:
        by_pair.setdefault((r.source, r.target), []).append(r)
    pairs = {}
    for (s, t), group in sorted(by_pair.items()):
        wins = [r.distortion_pct for r in group if r.success]
        pairs[(s, t)] = ClassPairStats(
            source=s,
            target=t,
            count=len(group),
            successes=len(wins),
            success_rate=len(wins) / len(group),
            mean_distortion=float(np.mean(wins)) if wins else None,
        )
    wins = [r.distortion_pct for r in results if r.success]
    return CampaignSummary(
        total=len(results),
        successes=len(wins),
        success_rate=len(wins) / len(results),
        mean_distortion_all=float(np.mean([r.distortion_pct for r in results])),
        mean_distortion_successful=float(np.mean(wins)) if wins else None,
        pairs=pairs,
    )


def hardness(sweep) -> float:
    """Trapezoidal integral of distortion over success rate.

    ``sweep`` is a list of (success_rate, mean_distortion) pairs ordered
    by non-decreasing success rate; a distortion may be None only while
    its success rate is 0 (no successful samples yet), in which case the
    segment borrows the first observed distortion.
    """
    points = list(sweep)
    if len(points) < 2:
        raise DataError(f"need at least 2 sweep points, got {len(points)}")
    taus = [p[0] for p in points]
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise DataError("sweep success rates must be non-decreasing")
    known = [e for _, e in points if e is not None]
    for tau, eps in points:
        if eps is None and tau > 0:
            raise DataError("missing distortion at a non-zero success rate")
    total = 0.0
    for (t0, e0), (t1, e1) in zip(points, points[1:]):
        if t1 == t0:
            continue
        if e0 is None:
            e0 = e1 if e1 is not None else 0.0
        if e1 is None:  # unreachable given the checks above; defensive
            e1 = e0
        total += (t1 - t0) * (e1 + e0) / 2.0
    return total


def _check_grid(grid) -> list[float]:
    grid = [float(g) for g in grid]
    if len(grid) < 2:
        raise DataError(f"budget grid needs at least 2 values, got {len(grid)}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DataError("budget grid must be strictly increasing")
    return grid


def distortion_sweeps(net: Network, dataset: LabeledDataset, grid,
                      params: CraftParams, progress=None):
    """Per-class-pair (success rate, distortion) series across a budget grid.

    Each sample/target pair is crafted once at the top budget and replayed
    at the smaller ones, which is exact because the greedy loop's picks do
    not depend on the budget.
    """
    grid = _check_grid(grid)
    top = CraftParams(upsilon=grid[-1], theta=params.theta,
                      variant=params.variant, tap=params.tap)
    budgets = [
        CraftParams(upsilon=u, theta=params.theta, variant=params.variant,
                    tap=params.tap)
        for u in grid
    ]
    classes = dataset.class_count
    wins = np.zeros((classes, classes, len(grid)), dtype=int)
    counts = np.zeros((classes, classes), dtype=int)
    dist_sum = np.zeros((classes, classes, len(grid)))
    for i in range(len(dataset)):
        x = dataset.sample(i, net.input_shape)
        s = int(dataset.labels[i])
        for t in range(classes):
            if t == s:
                continue
            master = craft(net, x, t, top)
            counts[s, t] += 1
            for k, bp in enumerate(budgets):
                replayed = result_at_budget(master, x, top, bp)
                if replayed.success:
                    wins[s, t, k] += 1
                    dist_sum[s, t, k] += replayed.distortion_pct
        if progress is not None:
            progress(i + 1, len(dataset))
    sweeps = {}
    for s in range(classes):
        for t in range(classes):
            if s == t or counts[s, t] == 0:
                continue
            series = []
            for k in range(len(grid)):
                tau = wins[s, t, k] / counts[s, t]
                eps = dist_sum[s, t, k] / wins[s, t, k] if wins[s, t, k] else None
                series.append((tau, eps))
            sweeps[(s, t)] = series
    return sweeps


def hardness_matrix(sweeps, class_count: int) -> np.ndarray:
    """Per-pair hardness; the diagonal is undefined and stored as 0."""
    h = np.zeros((class_count, class_count))
    for (s, t), series in sweeps.items():
        h[s, t] = hardness(series)
    return h


def hardness_campaign(net: Network, dataset: LabeledDataset, grid,
                      params: CraftParams, progress=None) -> np.ndarray:
    sweeps = distortion_sweeps(net, dataset, grid, params, progress)
    return hardness_matrix(sweeps, dataset.class_count)


def adversarial_distance(net: Network, x, target: int, mode: str = "single",
                         tap: str = "logits") -> float:
    """1 minus the live fraction of the first-iteration saliency map.

    ``single`` counts strictly positive entries of the increase map over
    all M features; ``pairwise`` counts feature pairs meeting the pair
    heuristic's sign constraints over all M-choose-2 pairs.
    """
    jac = forward_derivative(net, x, tap)
    if mode == "single":
        values = saliency_increase(jac, target).values
        m = values.size
        return 1.0 - float(np.count_nonzero(values > 0)) / m
    if mode == "pairwise":
        d_t = jac.values[target]
        others = jac.values.sum(axis=0) - d_t
        alpha = d_t[:, None] + d_t[None, :]
        beta = others[:, None] + others[None, :]
        ok = (alpha > 0) & (beta < 0)
        ok &= np.triu(np.ones(ok.shape, dtype=bool), k=1)
        m = d_t.size
        return 1.0 - float(np.count_nonzero(ok)) / (m * (m - 1) // 2)
    raise DataError(f"mode must be 'single' or 'pairwise', got {mode!r}")


def distance_matrix(net: Network, dataset: LabeledDataset, mode: str = "single",
                    tap: str = "logits", progress=None) -> np.ndarray:
    """Adversarial distance averaged per (source, target) class pair."""
    classes = dataset.class_count
    total = np.zeros((classes, classes))
    counts = np.zeros((classes, classes), dtype=int)
    for i in range(len(dataset)):
        x = dataset.sample(i, net.input_shape)
        s = int(dataset.labels[i])
        for t in range(classes):
            if t == s:
                continue
            total[s, t] += adversarial_distance(net, x, t, mode, tap)
            counts[s, t] += 1
        if progress is not None:
            progress(i + 1, len(dataset))
    with np.errstate(invalid="ignore"):
        out = np.where(counts > 0, total / np.maximum(counts, 1), 0.0)
    return out


def robustness(net: Network, dataset: LabeledDataset, mode: str = "min",
               distance_mode: str = "single", tap: str = "logits") -> float:
    """Min (or mean) adversarial distance over samples and foreign targets."""
    if len(dataset) == 0:
        raise DataError("dataset must be non-empty")
    values = []
    for i in range(len(dataset)):
        x = dataset.sample(i, net.input_shape)
        label = net.predict_label(x)
        for t in range(net.output_dim):
            if t == label:
                continue
            values.append(adversarial_distance(net, x, t, distance_mode, tap))
    if mode == "min":
        return float(min(values))
    if mode == "mean":
        return float(np.mean(values))
    raise DataError(f"mode must be 'min' or 'mean', got {mode!r}")


def regularity_score(image) -> float:
    """Sum of squared differences between every pair of adjacent pixels."""
    a = np.asarray(image, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {a.shape}")
    horizontal = np.diff(a, axis=1)
    vertical = np.diff(a, axis=0)
    return float((horizontal * horizontal).sum() + (vertical * vertical).sum())
