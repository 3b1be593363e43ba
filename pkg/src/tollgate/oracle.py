"""Independent brute-force evaluators backing every derived value and
structural property test.

These deliberately do NOT share code paths with the engine modules they
cross-check. The terminal-law enumerator walks concrete paths one at a time
(action branches included) instead of merging distributions node by node; the
static risk evaluator goes through scipy's log-sum-exp and the minimisation
form of expected shortfall instead of the engine's shifted sums and sorted
tail averages. Agreement between the two routes is itself a tested property.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Mapping

from scipy.special import logsumexp

from .envmodel import EnvironmentModel, Intervention, Policy
from .exceptions import EnumerationBudgetError
from .risk import RiskSpec


@dataclass(frozen=True)
class EnumerationBudget:
    """Hard caps for brute-force enumeration; exceeding any cap is an error."""

    max_paths: int = 1_000_000
    max_policies: int = 1_000_000
    max_partitions: int = 1_000_000

    def __post_init__(self) -> None:
        if min(self.max_paths, self.max_policies, self.max_partitions) < 1:
            raise ValueError("all enumeration caps must be >= 1")


def enumerate_terminal_law(
    model: EnvironmentModel,
    iv: Intervention,
    cont: Policy,
    budget: EnumerationBudget | None = None,
    terminal_loss: Mapping[str, float] | None = None,
) -> dict[float, float]:
    """Exact terminal-loss law by exhaustive path walk.

    Every (action choice, transition) pair opens its own path, so the path
    count is the raw tree size rather than the merged node count. Losses are
    aggregated only once all paths have been collected.
    """
    budget = budget or EnumerationBudget()
    paths: list[tuple[float, float]] = []
    # stack entries: (time, state, probability_so_far)
    stack: list[tuple[int, str, float]] = [(iv.time, iv.state, 1.0)]
    first = True
    while stack:
        t, s, prob = stack.pop()
        if t == model.horizon:
            loss = terminal_loss[s] if terminal_loss is not None else model.terminal_loss(s)
            paths.append((float(loss), prob))
            if len(paths) > budget.max_paths:
                raise EnumerationBudgetError(
                    f"path enumeration exceeded cap {budget.max_paths}"
                )
            continue
        if first and (t, s) == (iv.time, iv.state):
            choices = [(iv.action, 1.0)]
            first = False
        else:
            choices = list(cont.action_dist(t, s))
        for action, ap in choices:
            if ap <= 0.0:
                continue
            for nxt, tp in model.kernel(t, s, action):
                if tp <= 0.0:
                    continue
                stack.append((t + 1, nxt, prob * ap * tp))
    law: dict[float, float] = {}
    for loss, p in sorted(paths):
        law[loss] = law.get(loss, 0.0) + p
    return law


def static_risk(dist: Mapping[float, float], spec: RiskSpec) -> float:
    """Direct one-shot evaluation of the risk functional on a terminal law."""
    values = list(dist.keys())
    probs = [dist[v] for v in values]
    if spec.kind == "expectation":
        return float(sum(v * p for v, p in zip(values, probs)))
    if spec.kind == "entropic":
        scaled = [spec.gamma * v for v in values]
        return float(logsumexp(scaled, b=probs) / spec.gamma)
    return _shortfall_by_minimisation(values, probs, spec.alpha)


def _shortfall_by_minimisation(values: list[float], probs: list[float], alpha: float) -> float:
    # ES_alpha(X) = min_z  z + E[(X - z)^+] / (1 - alpha); the minimum is
    # attained at an atom of a discrete law, so scanning the support is exact.
    tail = 1.0 - alpha
    best = math.inf
    for z in values:
        excess = sum(p * (v - z) for v, p in zip(values, probs) if v > z)
        best = min(best, z + excess / tail)
    return float(best)


def enumerate_policies(
    model: EnvironmentModel,
    from_time: int,
    from_state: str,
    budget: EnumerationBudget | None = None,
    first_action: str | None = None,
) -> Iterator[Policy]:
    """All deterministic Markov continuation policies on the subtree hanging
    off (from_time, from_state).

    Decision nodes are the (time, state) pairs reachable under some action
    sequence, the root included; the yield is the full product of their
    action sets, duplicate-free by construction. ``first_action`` pins the
    root step to one action instead, pruning both the root's choice and the
    reachable set, which is the shape continuation hedging needs.
    """
    budget = budget or EnumerationBudget()
    nodes = _reachable_decision_nodes(model, from_time, from_state, first_action)
    count = 1
    action_sets = []
    for t, s in nodes:
        acts = model.actions(t, s)
        count *= len(acts)
        if count > budget.max_policies:
            raise EnumerationBudgetError(
                f"policy enumeration exceeded cap {budget.max_policies}"
            )
        action_sets.append(acts)
    for combo in itertools.product(*action_sets):
        yield Policy.deterministic(dict(zip(nodes, combo)))


def count_policies(
    model: EnvironmentModel,
    from_time: int,
    from_state: str,
    first_action: str | None = None,
) -> int:
    nodes = _reachable_decision_nodes(model, from_time, from_state, first_action)
    count = 1
    for t, s in nodes:
        count *= len(model.actions(t, s))
    return count


def _reachable_decision_nodes(
    model: EnvironmentModel,
    from_time: int,
    from_state: str,
    first_action: str | None,
) -> list[tuple[int, str]]:
    frontier = {from_state}
    nodes: list[tuple[int, str]] = []
    for t in range(from_time, model.horizon):
        nxt: set[str] = set()
        for s in sorted(frontier, key=model.state_index):
            root_pinned = t == from_time and first_action is not None
            if not root_pinned:
                nodes.append((t, s))
            actions = (first_action,) if root_pinned else model.actions(t, s)
            for a in actions:
                for target, p in model.kernel(t, s, a):
                    if p > 0.0:
                        nxt.add(target)
        frontier = nxt
    return nodes
