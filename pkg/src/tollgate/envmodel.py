"""Finite-horizon tabular environments with forced-action rollout semantics.

A model is a layered tree over named states. Components are declared once per
model and flag which parts of a state are externally visible (ledgers, sent
messages, open positions) versus internal bookkeeping. Transition kernels are
indexed by (time, state, action), terminal states carry nonnegative losses,
and a no-op action exists at every decision node so that "do nothing" is
always a priceable alternative. Everything is immutable after construction;
all operations are pure and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

from .exceptions import (
    KernelSumError,
    ModelValidationError,
    NegativeLossError,
    PolicyUndefinedError,
    SafeDefaultError,
    UnreachableNodeError,
)

KERNEL_TOL = 1e-12
SIDE_EFFECT_TV_TOL = 1e-12


@dataclass(frozen=True)
class ComponentSpec:
    """A named state component, flagged external if contractually visible."""

    name: str
    external: bool


@dataclass(frozen=True)
class Intervention:
    """A forced action at a (time, state) decision node."""

    time: int
    state: str
    action: str


Kernel = tuple[tuple[str, float], ...]


class EnvironmentModel:
    """Immutable layered-tree environment. Construct via :func:`build_model`."""

    def __init__(
        self,
        horizon: int,
        components: Sequence[ComponentSpec],
        state_components: Mapping[str, Mapping[str, object]],
        state_order: Sequence[str],
        nodes: Mapping[tuple[int, str], Mapping[str, Kernel]],
        terminal_losses: Mapping[str, float],
        initial_state: str,
        null_action: str,
        safe_defaults: "SafeDefaultMap | None" = None,
    ) -> None:
        self.horizon = horizon
        self.components = tuple(components)
        self._state_components = {s: dict(c) for s, c in state_components.items()}
        self._state_index = {s: i for i, s in enumerate(state_order)}
        self._nodes = {k: dict(v) for k, v in nodes.items()}
        self._terminal_losses = dict(terminal_losses)
        self.initial_state = initial_state
        self.null_action = null_action
        self.safe_defaults = safe_defaults
        self._external_names = tuple(c.name for c in self.components if c.external)

    # -- structure ---------------------------------------------------------

    def has_node(self, time: int, state: str) -> bool:
        return (time, state) in self._nodes

    def nodes_at(self, time: int) -> tuple[str, ...]:
        found = [s for (t, s) in self._nodes if t == time]
        found.sort(key=self._state_index.__getitem__)
        return tuple(found)

    def all_nodes(self) -> Iterator[tuple[int, str]]:
        for t in range(self.horizon):
            for s in self.nodes_at(t):
                yield (t, s)

    def actions(self, time: int, state: str) -> tuple[str, ...]:
        node = self._nodes.get((time, state))
        if node is None:
            raise UnreachableNodeError(f"no decision node at time {time}, state {state!r}")
        return tuple(node.keys())

    def kernel(self, time: int, state: str, action: str) -> Kernel:
        node = self._nodes.get((time, state))
        if node is None:
            raise UnreachableNodeError(f"no decision node at time {time}, state {state!r}")
        try:
            return node[action]
        except KeyError:
            raise UnreachableNodeError(
                f"action {action!r} unavailable at time {time}, state {state!r}"
            ) from None

    @property
    def terminal_states(self) -> tuple[str, ...]:
        names = sorted(self._terminal_losses, key=self._state_index.__getitem__)
        return tuple(names)

    def terminal_loss(self, state: str) -> float:
        try:
            return self._terminal_losses[state]
        except KeyError:
            raise UnreachableNodeError(f"{state!r} is not a terminal state") from None

    @property
    def terminal_losses(self) -> dict[str, float]:
        return dict(self._terminal_losses)

    def state_index(self, state: str) -> int:
        return self._state_index[state]

    def external_signature(self, state: str) -> tuple:
        comps = self._state_components[state]
        return tuple(comps.get(name) for name in self._external_names)

    def state_record(self, state: str) -> dict:
        return dict(self._state_components[state])

    # -- dynamics ----------------------------------------------------------

    def effective_next(
        self,
        time: int,
        state: str,
        policy: "Policy",
        forced: str | None = None,
    ) -> Kernel:
        """Next-state law at a node: either a forced action's kernel or the
        policy mixture of kernels. Entries keep canonical state order."""
        if forced is not None:
            return self.kernel(time, state, forced)
        mix: dict[str, float] = {}
        for action, ap in policy.action_dist(time, state):
            if ap <= 0.0:
                continue
            for nxt, tp in self.kernel(time, state, action):
                mix[nxt] = mix.get(nxt, 0.0) + ap * tp
        ordered = sorted(mix.items(), key=lambda kv: self._state_index[kv[0]])
        return tuple(ordered)


class Policy:
    """Probability map (time, state) -> distribution over available actions."""

    def __init__(self, dist: Mapping[tuple[int, str], Sequence[tuple[str, float]]]) -> None:
        self._dist = {k: tuple(v) for k, v in dist.items()}

    @classmethod
    def from_entries(
        cls,
        entries: Mapping[tuple[int, str], Mapping[str, float]],
        model: EnvironmentModel,
    ) -> "Policy":
        dist: dict[tuple[int, str], tuple[tuple[str, float], ...]] = {}
        for (t, s), probs in entries.items():
            avail = model.actions(t, s)
            total = 0.0
            row = []
            for a, p in probs.items():
                if a not in avail:
                    raise ModelValidationError(
                        f"policy puts mass on unavailable action {a!r}",
                        path=f"policy[{t},{s}]",
                    )
                if p < 0:
                    raise ModelValidationError(
                        "policy probability is negative", path=f"policy[{t},{s}].{a}"
                    )
                row.append((a, float(p)))
                total += p
            if abs(total - 1.0) > KERNEL_TOL:
                raise ModelValidationError(
                    f"policy row sums to {total!r}, expected 1", path=f"policy[{t},{s}]"
                )
            dist[(t, s)] = tuple(row)
        return cls(dist)

    @classmethod
    def deterministic(cls, choices: Mapping[tuple[int, str], str]) -> "Policy":
        return cls({node: ((action, 1.0),) for node, action in choices.items()})

    def action_dist(self, time: int, state: str) -> tuple[tuple[str, float], ...]:
        try:
            return self._dist[(time, state)]
        except KeyError:
            raise PolicyUndefinedError(
                f"policy undefined at time {time}, state {state!r}"
            ) from None

    def defined_at(self, time: int, state: str) -> bool:
        return (time, state) in self._dist

    def nodes(self) -> tuple[tuple[int, str], ...]:
        return tuple(sorted(self._dist.keys()))


class SafeDefaultMap:
    """Fixed map (time, state, action) -> substitute action.

    Actions without an explicit entry default to themselves, which keeps the
    map total and idempotent. The map is frozen at construction; re-querying
    never changes an answer.
    """

    def __init__(self, entries: Mapping[tuple[int, str, str], str]) -> None:
        self._entries = dict(entries)

    @classmethod
    def from_entries(
        cls,
        entries: Mapping[tuple[int, str, str], str],
        model: EnvironmentModel,
    ) -> "SafeDefaultMap":
        for (t, s, a), d in entries.items():
            avail = model.actions(t, s)
            if a not in avail:
                raise SafeDefaultError(
                    f"safe default declared for unavailable action {a!r}",
                    path=f"safe_defaults[{t},{s},{a}]",
                )
            if d not in avail:
                raise SafeDefaultError(
                    f"safe default {d!r} is not available at the same node",
                    path=f"safe_defaults[{t},{s},{a}]",
                )
        sdm = cls(entries)
        for (t, s, a), d in entries.items():
            if sdm.default_for(t, s, d) != d:
                raise SafeDefaultError(
                    f"safe default {d!r} must map to itself",
                    path=f"safe_defaults[{t},{s},{a}]",
                )
        return sdm

    def default_for(self, time: int, state: str, action: str) -> str:
        return self._entries.get((time, state, action), action)

    def entries(self) -> dict[tuple[int, str, str], str]:
        return dict(self._entries)


# ---------------------------------------------------------------------------
# construction


def build_model(spec: Mapping) -> EnvironmentModel:
    """Build and validate an :class:`EnvironmentModel` from a plain dict.

    Expected keys: ``horizon``, ``components``, ``states``, ``nodes``,
    ``terminal_losses``, ``initial_state``; optional ``null_action``
    (default ``"noop"``) and ``safe_defaults``. Construction is deterministic
    and raises a distinct validation error per invariant class.
    """
    try:
        horizon = int(spec["horizon"])
    except KeyError:
        raise ModelValidationError("missing horizon", path="horizon") from None
    if horizon < 1:
        raise ModelValidationError(f"horizon must be >= 1, got {horizon}", path="horizon")

    components = tuple(
        ComponentSpec(name=str(c["name"]), external=bool(c.get("external", False)))
        for c in spec.get("components", [])
    )

    state_components: dict[str, dict] = {}
    state_order: list[str] = []
    for i, rec in enumerate(spec.get("states", [])):
        sid = str(rec["id"])
        if sid in state_components:
            raise ModelValidationError(f"duplicate state id {sid!r}", path=f"states[{i}]")
        state_components[sid] = dict(rec.get("components", {}))
        state_order.append(sid)

    null_action = str(spec.get("null_action", "noop"))

    nodes: dict[tuple[int, str], dict[str, Kernel]] = {}
    for i, nrec in enumerate(spec.get("nodes", [])):
        t = int(nrec["time"])
        s = str(nrec["state"])
        path = f"nodes[{i}]"
        if not 0 <= t < horizon:
            raise ModelValidationError(f"node time {t} outside horizon", path=path)
        if s not in state_components:
            raise ModelValidationError(f"unknown state {s!r}", path=path)
        if (t, s) in nodes:
            raise ModelValidationError(f"duplicate node ({t}, {s!r})", path=path)
        actions: dict[str, Kernel] = {}
        for a, arec in nrec.get("actions", {}).items():
            kpath = f"{path}.actions[{a}].kernel"
            kernel_map = arec.get("kernel", {})
            if not kernel_map:
                raise ModelValidationError("empty kernel row", path=kpath)
            row = []
            total = 0.0
            for nxt, p in kernel_map.items():
                if nxt not in state_components:
                    raise ModelValidationError(f"kernel targets unknown state {nxt!r}", path=kpath)
                p = float(p)
                if p < 0:
                    raise ModelValidationError("negative kernel probability", path=kpath)
                row.append((str(nxt), p))
                total += p
            if abs(total - 1.0) > KERNEL_TOL:
                raise KernelSumError(f"kernel row sums to {total!r}, expected 1", path=kpath)
            row.sort(key=lambda kv: state_order.index(kv[0]))
            actions[str(a)] = tuple(row)
        if not actions:
            raise ModelValidationError("node has an empty action set", path=path)
        if null_action not in actions:
            raise ModelValidationError(
                f"null action {null_action!r} missing from node", path=path
            )
        nodes[(t, s)] = actions

    terminal_losses: dict[str, float] = {}
    for sid, loss in spec.get("terminal_losses", {}).items():
        if sid not in state_components:
            raise ModelValidationError(
                f"terminal loss for unknown state {sid!r}", path=f"terminal_losses[{sid}]"
            )
        loss = float(loss)
        if not loss >= 0.0 or loss != loss or loss == float("inf"):
            raise NegativeLossError(
                f"terminal loss must be finite and >= 0, got {loss!r}",
                path=f"terminal_losses[{sid}]",
            )
        terminal_losses[str(sid)] = loss

    initial_state = str(spec.get("initial_state", state_order[0] if state_order else ""))
    if initial_state not in state_components:
        raise ModelValidationError(
            f"initial state {initial_state!r} unknown", path="initial_state"
        )

    # Every kernel target at the last decision layer must carry a loss, and
    # every intermediate target must itself be a decision node.
    for (t, s), actions in nodes.items():
        for a, row in actions.items():
            for nxt, p in row:
                if p <= 0.0:
                    continue
                if t + 1 == horizon:
                    if nxt not in terminal_losses:
                        raise ModelValidationError(
                            f"leaf state {nxt!r} has no terminal loss",
                            path=f"nodes[{t},{s}].actions[{a}]",
                        )
                elif (t + 1, nxt) not in nodes:
                    raise ModelValidationError(
                        f"kernel targets {nxt!r} but no node exists at time {t + 1}",
                        path=f"nodes[{t},{s}].actions[{a}]",
                    )

    model = EnvironmentModel(
        horizon=horizon,
        components=components,
        state_components=state_components,
        state_order=state_order,
        nodes=nodes,
        terminal_losses=terminal_losses,
        initial_state=initial_state,
        null_action=null_action,
    )

    raw_sdm = spec.get("safe_defaults")
    if raw_sdm:
        entries: dict[tuple[int, str, str], str] = {}
        for i, rec in enumerate(raw_sdm):
            key = (int(rec["time"]), str(rec["state"]), str(rec["action"]))
            entries[key] = str(rec["default"])
        model.safe_defaults = SafeDefaultMap.from_entries(entries, model)
    return model


# ---------------------------------------------------------------------------
# operations


def _check_intervention(model: EnvironmentModel, iv: Intervention) -> None:
    if not model.has_node(iv.time, iv.state):
        raise UnreachableNodeError(
            f"intervention at time {iv.time}, state {iv.state!r} is not a model node"
        )
    if iv.action not in model.actions(iv.time, iv.state):
        raise UnreachableNodeError(
            f"intervention action {iv.action!r} unavailable at ({iv.time}, {iv.state!r})"
        )


def terminal_loss_distribution(
    model: EnvironmentModel,
    iv: Intervention,
    cont: Policy,
) -> dict[float, float]:
    """Exact law of the terminal loss when ``iv.action`` is forced at the
    intervention node and ``cont`` is followed afterwards.

    Returns a dict mapping loss value to probability; probabilities sum to
    one up to accumulated float error (bounded by KERNEL_TOL per row).
    """
    _check_intervention(model, iv)
    memo: dict[tuple[int, str], dict[float, float]] = {}

    def node_law(t: int, s: str) -> dict[float, float]:
        if t == model.horizon:
            return {model.terminal_loss(s): 1.0}
        key = (t, s)
        cached = memo.get(key)
        if cached is not None:
            return cached
        forced = iv.action if (t, s) == (iv.time, iv.state) else None
        law: dict[float, float] = {}
        for nxt, p in model.effective_next(t, s, cont, forced=forced):
            if p <= 0.0:
                continue
            for loss, q in node_law(t + 1, nxt).items():
                law[loss] = law.get(loss, 0.0) + p * q
        memo[key] = law
        return law

    return node_law(iv.time, iv.state)


def is_side_effect_bearing(
    model: EnvironmentModel, time: int, state: str, action: str
) -> bool:
    """True iff the next-state law restricted to external components differs
    from the null action's law by more than SIDE_EFFECT_TV_TOL in total
    variation."""
    marginal = _external_marginal(model, model.kernel(time, state, action))
    null_marginal = _external_marginal(model, model.kernel(time, state, model.null_action))
    support = set(marginal) | set(null_marginal)
    tv = 0.5 * sum(abs(marginal.get(k, 0.0) - null_marginal.get(k, 0.0)) for k in support)
    return tv > SIDE_EFFECT_TV_TOL


def _external_marginal(model: EnvironmentModel, kernel: Kernel) -> dict[tuple, float]:
    out: dict[tuple, float] = {}
    for nxt, p in kernel:
        sig = model.external_signature(nxt)
        out[sig] = out.get(sig, 0.0) + p
    return out
