"""Budgeted execution gate: quote, compare, execute or fall back, charge,
log.

One gate instance runs one episode, strictly sequentially. Each proposed
action is quoted through the configured envelope; an affordable quote
executes and is charged against the remaining budget, an unaffordable one
walks the configured fallback chain:

* ``downgrade``  re-quotes the contractual safe default and executes it
  uncharged when its own quote is affordable,
* ``escalate``   consults the scripted approver; on approval the proposal is
  re-quoted at the exact tier and executes, charged, only if that refined
  quote fits the budget,
* ``block``      executes the no-op and charges nothing.

A chain that exhausts without resolving blocks implicitly. The budget only
ever decreases by charged quotes, so the running sum of charges equals the
initial budget minus the final budget, entry by entry. Boundary exposure of
whatever action actually executed is committed atomically with the ledger
entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .boundary import BoundaryLedger, BoundarySpec
from .envelope import Envelope
from .envmodel import EnvironmentModel, Policy, SafeDefaultMap
from .exceptions import ModelValidationError

FALLBACK_MODES = ("downgrade", "escalate", "block")


class Verdict(str, Enum):
    EXECUTE = "EXECUTE"
    DOWNGRADE = "DOWNGRADE"
    ESCALATE_APPROVED = "ESCALATE_APPROVED"
    ESCALATE_DENIED = "ESCALATE_DENIED"
    BLOCK = "BLOCK"


@dataclass(frozen=True)
class GateDecision:
    verdict: Verdict
    executed_action: str
    charged: float


@dataclass(frozen=True)
class GateEntry:
    step: int
    time: int
    state: str
    proposed: str
    envelope_value: float
    verdict: Verdict
    executed: str
    budget_after: float
    boundary_version: int


@dataclass(frozen=True)
class GateLedger:
    """Running budget plus the strictly ordered decision trail."""

    budget: float
    entries: tuple[GateEntry, ...] = ()

    def with_entry(self, entry: GateEntry, charged: float) -> "GateLedger":
        return GateLedger(budget=self.budget - charged, entries=self.entries + (entry,))


@dataclass(frozen=True)
class GateConfig:
    """Wiring for one gate: budget, fallback chain, approver, and quoting.

    ``escalation_policy`` maps action ids to "approve" or "deny", with an
    optional "default" key; the approver is scripted because runs are batch.
    ``exact_quoter`` is the deep-simulation tier used to re-quote approved
    escalations; without it an approved escalation keeps the original quote
    and therefore cannot execute (the budget test already failed once).
    """

    initial_budget: float
    fallback_order: tuple[str, ...]
    envelope: Envelope
    safe_defaults: SafeDefaultMap
    escalation_policy: Mapping[str, str] = field(default_factory=dict)
    exact_quoter: Envelope | None = None
    boundaries: tuple[BoundarySpec, ...] = ()
    exposure: Mapping[tuple[int, str, str], Mapping[str, tuple[float, ...]]] = field(
        default_factory=dict
    )

    def __post_init__(self) -> None:
        if not self.initial_budget >= 0.0:
            raise ModelValidationError("initial budget must be >= 0", path="gate.initial_budget")
        if not self.fallback_order:
            raise ModelValidationError("fallback order must be nonempty", path="gate.fallback_order")
        seen = set()
        for mode in self.fallback_order:
            if mode not in FALLBACK_MODES:
                raise ModelValidationError(
                    f"unknown fallback mode {mode!r}", path="gate.fallback_order"
                )
            if mode in seen:
                raise ModelValidationError(
                    f"duplicate fallback mode {mode!r}", path="gate.fallback_order"
                )
            seen.add(mode)

    def approves(self, action: str) -> bool:
        ruling = self.escalation_policy.get(action, self.escalation_policy.get("default", "deny"))
        return ruling == "approve"


def gate_step(
    ledger: GateLedger,
    cfg: GateConfig,
    model: EnvironmentModel,
    boundary_ledger: BoundaryLedger | None,
    time: int,
    state: str,
    proposed: str,
) -> tuple[GateDecision, GateLedger]:
    """Decide one proposal and return the decision plus the updated ledger.

    The envelope comparison is non-strict: a quote exactly equal to the
    remaining budget executes. Exposure of the executed action is committed
    to the boundary ledger in the same step as the entry is appended.
    """
    quoted = cfg.envelope.query(time, state, proposed)
    decision: GateDecision | None = None

    if quoted <= ledger.budget:
        decision = GateDecision(Verdict.EXECUTE, proposed, quoted)
    else:
        last_denied = False
        for mode in cfg.fallback_order:
            last_denied = False
            if mode == "downgrade":
                fallback = cfg.safe_defaults.default_for(time, state, proposed)
                if fallback not in model.actions(time, state):
                    continue
                fallback_quote = cfg.envelope.query(time, state, fallback)
                if fallback_quote <= ledger.budget:
                    decision = GateDecision(Verdict.DOWNGRADE, fallback, 0.0)
                    break
            elif mode == "escalate":
                if cfg.approves(proposed):
                    refiner = cfg.exact_quoter
                    refined = (
                        refiner.query(time, state, proposed) if refiner is not None else quoted
                    )
                    if refined <= ledger.budget:
                        decision = GateDecision(Verdict.ESCALATE_APPROVED, proposed, refined)
                        break
                else:
                    last_denied = True
            elif mode == "block":
                decision = GateDecision(Verdict.BLOCK, model.null_action, 0.0)
                break
        if decision is None:
            # chain exhausted: block implicitly, tagged with the denial if
            # an approver had the last word
            verdict = Verdict.ESCALATE_DENIED if last_denied else Verdict.BLOCK
            decision = GateDecision(verdict, model.null_action, 0.0)

    version = _commit_exposure(cfg, boundary_ledger, time, state, decision.executed_action)
    entry = GateEntry(
        step=len(ledger.entries),
        time=time,
        state=state,
        proposed=proposed,
        envelope_value=quoted,
        verdict=decision.verdict,
        executed=decision.executed_action,
        budget_after=ledger.budget - decision.charged,
        boundary_version=version,
    )
    return decision, ledger.with_entry(entry, decision.charged)


def _commit_exposure(
    cfg: GateConfig,
    boundary_ledger: BoundaryLedger | None,
    time: int,
    state: str,
    executed: str,
) -> int:
    if boundary_ledger is None:
        return 0
    increments = cfg.exposure.get((time, state, executed), {})
    for boundary_id, inc in increments.items():
        boundary_ledger.commit(boundary_id, inc)
    ids = boundary_ledger.boundary_ids()
    return boundary_ledger.state(ids[0]).version if ids else 0


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    seed: int
    entries: tuple[GateEntry, ...]
    terminal_state: str
    terminal_loss: float
    budget_initial: float
    budget_final: float
    boundary_records: tuple[dict, ...]

    @property
    def charged_total(self) -> float:
        return math.fsum(e_prev - e.budget_after for e_prev, e in _budget_steps(self))

    def decision_counts(self) -> dict[str, int]:
        counts = {v.value: 0 for v in Verdict}
        for e in self.entries:
            counts[e.verdict.value] += 1
        return counts


def _budget_steps(log: EpisodeLog):
    prev = log.budget_initial
    for entry in log.entries:
        yield prev, entry
        prev = entry.budget_after


def run_episode(
    model: EnvironmentModel,
    proposal_policy: Policy,
    cfg: GateConfig,
    seed: int,
    episode: int = 0,
) -> EpisodeLog:
    """Gate one sampled trajectory from the model's initial state.

    Deterministic for a fixed (seed, episode): proposals and transitions draw
    from one generator in a fixed call order. The executed action, not the
    proposed one, drives the transition.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, episode]))
    boundary_ledger = BoundaryLedger(cfg.boundaries)
    ledger = GateLedger(budget=cfg.initial_budget)
    state = model.initial_state
    for t in range(model.horizon):
        dist = proposal_policy.action_dist(t, state)
        actions = [a for a, _ in dist]
        probs = np.asarray([p for _, p in dist])
        proposed = actions[int(rng.choice(len(actions), p=probs / probs.sum()))]
        decision, ledger = gate_step(ledger, cfg, model, boundary_ledger, t, state, proposed)
        kernel = model.kernel(t, state, decision.executed_action)
        targets = [s for s, _ in kernel]
        tprobs = np.asarray([p for _, p in kernel])
        state = targets[int(rng.choice(len(targets), p=tprobs / tprobs.sum()))]
    return EpisodeLog(
        episode=episode,
        seed=seed,
        entries=ledger.entries,
        terminal_state=state,
        terminal_loss=model.terminal_loss(state),
        budget_initial=cfg.initial_budget,
        budget_final=ledger.budget,
        boundary_records=tuple(boundary_ledger.export_records()),
    )


# ---------------------------------------------------------------------------
# audit


@dataclass(frozen=True)
class EpisodeAudit:
    episode: int
    executed_true_toll_sum: float
    all_quotes_covered: bool
    overrun: bool
    replay_exact: bool


@dataclass(frozen=True)
class AuditReport:
    """Outcome of recomputing true tolls over a batch of episode logs."""

    episodes: int
    overruns: int
    overrun_fraction: float
    violation_fraction: float
    threshold: float
    passed: bool
    accounting_exact: bool
    per_episode: tuple[EpisodeAudit, ...]


def audit_budget_guarantee(
    logs: Sequence[EpisodeLog],
    true_positive_toll: Callable[[int, str, str], float],
    initial_budget: float,
    delta: float,
) -> AuditReport:
    """Recompute every executed action's true positive toll and check the
    budget guarantee.

    An episode violates coverage when some quoted proposal's true toll
    exceeds its logged envelope value; it overruns when the executed true
    tolls sum above the initial budget. The batch passes when the overrun
    fraction stays within delta plus three binomial sigmas (exactly zero
    when delta is zero, the exact-envelope case). Charge accounting is
    replayed entry by entry and must reproduce the final budget bit for bit.
    """
    audits = []
    n = len(logs)
    overruns = 0
    violations = 0
    accounting_exact = True
    for log in logs:
        true_sum = 0.0
        covered = True
        budget = log.budget_initial
        for prev_budget, entry in _budget_steps(log):
            charged = prev_budget - entry.budget_after
            budget = budget - charged
            true_sum += true_positive_toll(entry.time, entry.state, entry.executed)
            if true_positive_toll(entry.time, entry.state, entry.proposed) > entry.envelope_value + 1e-9:
                covered = False
        replay_exact = budget == log.budget_final
        accounting_exact &= replay_exact
        over = true_sum > initial_budget + 1e-9
        overruns += over
        violations += not covered
        audits.append(
            EpisodeAudit(
                episode=log.episode,
                executed_true_toll_sum=true_sum,
                all_quotes_covered=covered,
                overrun=over,
                replay_exact=replay_exact,
            )
        )
    overrun_fraction = overruns / n if n else 0.0
    violation_fraction = violations / n if n else 0.0
    if delta == 0.0:
        threshold = 0.0
        passed = overruns == 0 and violations == 0
    else:
        slack = 3.0 * math.sqrt(delta * (1.0 - delta) / n) if n else 0.0
        threshold = delta + slack
        passed = violation_fraction <= threshold and overrun_fraction <= violation_fraction + 1e-12
    return AuditReport(
        episodes=n,
        overruns=overruns,
        overrun_fraction=overrun_fraction,
        violation_fraction=violation_fraction,
        threshold=threshold,
        passed=passed and accounting_exact,
        accounting_exact=accounting_exact,
        per_episode=tuple(audits),
    )
