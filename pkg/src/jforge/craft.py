"""Greedy crafting of adversarial samples under a distortion budget.

``craft`` drives the pixel-pair loop: recompute the Jacobian at the
current sample, pick the best qualifying feature pair, push both features
by theta (clamped to [0, 1]), retire saturated features from the search
domain, and stop on success, an exhausted iteration budget, an empty
domain, or no qualifying pair. ``craft_general`` is the single-feature
variant that chases an arbitrary target output vector within a given
tolerance instead of a class label.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .jacobian import forward_derivative
from .network import Network
from .saliency import (
    VARIANTS,
    pairwise_saliency,
    saliency_decrease,
    saliency_increase,
)

BUDGET_EXHAUSTED = "budget_exhausted"
DOMAIN_EXHAUSTED = "domain_exhausted"
NO_VALID_PAIR = "no_valid_pair"


def max_iterations(upsilon: float, feature_count: int) -> int:
    """Iteration budget for pair crafting: floor(M * upsilon / 200),
    i.e. two features per iteration against a budget of upsilon percent."""
    if not 0 < upsilon <= 100:
        raise ConfigError(f"upsilon must lie in (0, 100], got {upsilon}")
    if feature_count < 2:
        raise ConfigError(f"need at least 2 features, got {feature_count}")
    return math.floor(feature_count * upsilon / 200.0)


@dataclass
class CraftParams:
    upsilon: float = 14.5  # percent of features the loop may touch
    theta: float = 1.0
    variant: str = "increase"
    tap: str = "logits"
    max_iter: int | None = None  # explicit budget; None derives from upsilon

    def __post_init__(self):
        if self.theta == 0:
            raise ConfigError("theta must be non-zero")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0 < self.upsilon <= 100:
            raise ConfigError(f"upsilon must lie in (0, 100], got {self.upsilon}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")

    def pair_budget(self, feature_count: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        budget = max_iterations(self.upsilon, feature_count)
        if budget < 1:
            raise ConfigError(
                f"upsilon {self.upsilon}% yields no iterations for {feature_count} features"
            )
        return budget

    def single_budget(self, feature_count: int) -> int:
        # one feature per iteration, so twice the pair budget
        if self.max_iter is not None:
            return self.max_iter
        budget = math.floor(feature_count * self.upsilon / 100.0)
        if budget < 1:
            raise ConfigError(
                f"upsilon {self.upsilon}% yields no iterations for {feature_count} features"
            )
        return budget


@dataclass(frozen=True)
class CraftStep:
    """One loop iteration: features pushed, label after, changed count."""

    picks: tuple[int, ...]
    label: int
    changed: int


@dataclass
class CraftResult:
    x_star: np.ndarray
    delta: np.ndarray
    success: bool
    iterations: int
    distortion_pct: float
    failure_reason: str | None
    source: int
    target: int
    history: list[CraftStep] = field(default_factory=list)


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != net.input_shape:
        raise DataError(
            f"input shape {x.shape} does not match network input {net.input_shape}"
        )
    if not np.isfinite(x).all() or x.min() < 0.0 or x.max() > 1.0:
        raise DataError("input features must lie in [0, 1]")
    return x


def _result(net, x, x_star, target, source, iterations, reason, history) -> CraftResult:
    changed = int(np.count_nonzero(x_star != x))
    label = net.predict_label(x_star)  # independent re-check
    success = label == target
    return CraftResult(
        x_star=x_star,
        delta=x_star - x,
        success=success,
        iterations=iterations,
        distortion_pct=100.0 * changed / x.size,
        failure_reason=None if success else reason,
        source=source,
        target=target,
        history=history,
    )


def craft(net: Network, x, target: int, params: CraftParams) -> CraftResult:
    """Pixel-pair crafting toward class ``target``."""
    x = _check_input(net, x)
    if not 0 <= target < net.output_dim:
        raise IndexError(f"target {target} out of range for {net.output_dim} classes")
    source = net.predict_label(x)
    x_star = x.copy()
    history: list[CraftStep] = []
    if source == target:
        return _result(net, x, x_star, target, source, 0, None, history)

    m = x.size
    flat = x_star.reshape(-1)
    original = x.reshape(-1)
    in_domain = np.ones(m, dtype=bool)
    budget = params.pair_budget(m)
    label = source
    iterations = 0
    reason = None
    while label != target and iterations < budget:
        domain = np.flatnonzero(in_domain)
        if domain.size < 2:
            reason = DOMAIN_EXHAUSTED
            break
        jac = forward_derivative(net, x_star, params.tap)
        pair = pairwise_saliency(jac, domain, target, params.variant)
        if pair is None:
            reason = NO_VALID_PAIR
            break
        for p in (pair.p1, pair.p2):
            flat[p] = min(1.0, max(0.0, flat[p] + params.theta))
            if flat[p] == 0.0 or flat[p] == 1.0:
                in_domain[p] = False
        label = net.predict_label(x_star)
        iterations += 1
        history.append(
            CraftStep(
                picks=(pair.p1, pair.p2),
                label=label,
                changed=int(np.count_nonzero(flat != original)),
            )
        )
    if label != target and reason is None:
        reason = BUDGET_EXHAUSTED
    return _result(net, x, x_star, target, source, iterations, reason, history)


def craft_from_empty(net: Network, target: int, params: CraftParams) -> CraftResult:
    """Run the pair loop starting from an all-zero input."""
    return craft(net, np.zeros(net.input_shape), target, params)


def craft_general(net: Network, x, target_output, params: CraftParams,
                  match_tolerance: float) -> CraftResult:
    """Single-feature crafting toward an arbitrary output vector.

    Success means the max-norm gap between F(x*) and ``target_output``
    is within ``match_tolerance``; the saliency argmax picks one feature
    per iteration.
    """
    x = _check_input(net, x)
    y_star = np.asarray(target_output, dtype=float)
    if y_star.shape != (net.output_dim,):
        raise DataError(
            f"target output shape {y_star.shape} does not match {net.output_dim} outputs"
        )
    if match_tolerance < 0:
        raise ConfigError(f"match tolerance must be >= 0, got {match_tolerance}")
    target = int(np.argmax(y_star))
    select = saliency_increase if params.variant == "increase" else saliency_decrease

    def matched(sample):
        return float(np.abs(net.forward(sample)[-1] - y_star).max()) <= match_tolerance

    source = net.predict_label(x)
    x_star = x.copy()
    history: list[CraftStep] = []
    m = x.size
    flat = x_star.reshape(-1)
    original = x.reshape(-1)
    in_domain = np.ones(m, dtype=bool)
    budget = params.single_budget(m)
    iterations = 0
    reason = None
    done = matched(x_star)
    while not done and iterations < budget:
        domain = np.flatnonzero(in_domain)
        if domain.size == 0:
            reason = DOMAIN_EXHAUSTED
            break
        jac = forward_derivative(net, x_star, params.tap)
        values = select(jac, target).values[domain]
        pick = int(domain[int(np.argmax(values))])
        flat[pick] = min(1.0, max(0.0, flat[pick] + params.theta))
        if flat[pick] == 0.0 or flat[pick] == 1.0:
            in_domain[pick] = False
        done = matched(x_star)
        iterations += 1
        history.append(
            CraftStep(
                picks=(pick,),
                label=net.predict_label(x_star),
                changed=int(np.count_nonzero(flat != original)),
            )
        )
    if not done and reason is None:
        reason = BUDGET_EXHAUSTED
    changed = int(np.count_nonzero(x_star != x))
    return CraftResult(
        x_star=x_star,
        delta=x_star - x,
        success=matched(x_star),
        iterations=iterations,
        distortion_pct=100.0 * changed / m,
        failure_reason=None if done else reason,
        source=source,
        target=target,
        history=history,
    )


def result_at_budget(result: CraftResult, x, params: CraftParams,
                     budget_params: CraftParams, net: Network | None = None) -> CraftResult:
    """What ``craft`` would have returned under a smaller iteration budget.

    The pair loop's feature picks do not depend on the budget, so a run
    recorded at a large budget replays exactly at any smaller one;
    ``params`` must match the original run in theta/variant/tap. Passing
    ``net`` re-checks the replayed label instead of trusting the history.
    """
    x = np.asarray(x, dtype=float)
    m = x.size
    k = budget_params.pair_budget(m)
    if budget_params.theta != params.theta or budget_params.variant != params.variant \
            or budget_params.tap != params.tap:
        raise ConfigError("replay params must match the original run")
    if result.iterations == 0 and result.success:
        return result
    full = params.pair_budget(m)
    if k > full and len(result.history) < k and result.failure_reason == BUDGET_EXHAUSTED:
        raise ConfigError(f"budget {k} exceeds the recorded run's budget {full}")

    steps = result.history[:k]
    hit = next((i for i, s in enumerate(steps) if s.label == result.target), None)
    if hit is not None:
        steps = steps[:hit + 1]
    flat = x.reshape(-1).copy()
    for step in steps:
        for p in step.picks:
            flat[p] = min(1.0, max(0.0, flat[p] + params.theta))
    x_star = flat.reshape(x.shape)
    changed = int(np.count_nonzero(flat != x.reshape(-1)))
    if hit is not None:
        success = True
        reason = None
    else:
        success = False
        if len(result.history) > k:
            reason = BUDGET_EXHAUSTED  # the longer run kept going past k
        else:
            reason = result.failure_reason
    if net is not None:
        label = net.predict_label(x_star)
        success = label == result.target
        reason = None if success else reason
    return CraftResult(
        x_star=x_star,
        delta=x_star - x,
        success=success,
        iterations=len(steps),
        distortion_pct=100.0 * changed / m,
        failure_reason=None if success else reason,
        source=result.source,
        target=result.target,
        history=list(steps),
    )


def run_campaign(net: Network, features: np.ndarray, labels: np.ndarray,
                 params: CraftParams, class_count: int | None = None,
                 progress=None) -> list[tuple[int, CraftResult]]:
    """Craft every (sample, target != source label) pair.

    Returns (sample_id, result) rows ordered by sample id then target.
    """
    classes = class_count if class_count is not None else net.output_dim
    rows = []
    for i in range(features.shape[0]):
        x = features[i].reshape(net.input_shape)
        for t in range(classes):
            if t == int(labels[i]):
                continue
            rows.append((i, craft(net, x, t, params)))
        if progress is not None:
            progress(i + 1, features.shape[0])
    return rows
