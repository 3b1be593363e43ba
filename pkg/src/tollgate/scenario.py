"""Scenario documents: loading, validation, runtime assembly, calibration.

A scenario is one JSON document with an explicit schema version tying
together every primitive a run needs: the environment model, the ambiguity
variants, the frozen policy (it is both the pricing continuation and the
proposal stream), the risk mapping, safe defaults, boundaries with their
potentials, per-action exposure increments, the gate parameters, and the
envelope configuration. All randomness is seeded through the document or the
CLI; nothing ambient.

Loader failures carry distinct codes: ``parse`` for unreadable documents,
``unresolved-reference`` for ids that do not resolve, and ``invariant`` (or
a model validation subclass) for structural violations. Every error names
the offending field path.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .boundary import BoundarySpec, PotentialSpec
from .envelope import (
    Envelope,
    Predictor,
    exact_envelope,
    fit_conformal_envelope,
    least_squares_predictor,
)
from .envmodel import (
    EnvironmentModel,
    Policy,
    SafeDefaultMap,
    build_model,
    is_side_effect_bearing,
)
from .exceptions import (
    ScenarioInvariantError,
    ScenarioParseError,
    ScenarioReferenceError,
)
from .gate import GateConfig
from .risk import RiskSpec
from .tolls import AmbiguitySet, counterfactual_toll

SCHEMA_VERSION = 1
BUNDLED_SCENARIOS = ("payments", "database", "trading")


@dataclass(frozen=True)
class GateParams:
    initial_budget: float
    fallback_order: tuple[str, ...]
    escalation_policy: dict[str, str]


@dataclass(frozen=True)
class Scenario:
    """Fully resolved scenario: every id checked, every object built."""

    name: str
    schema_version: int
    seed: int
    model: EnvironmentModel
    ambiguity: AmbiguitySet
    policy: Policy
    risk_spec: RiskSpec
    safe_defaults: SafeDefaultMap
    boundaries: tuple[BoundarySpec, ...]
    exposure: dict[tuple[int, str, str], dict[str, tuple[float, ...]]]
    gate: GateParams
    envelope_config: dict
    action_categories: dict[str, str]
    category_order: tuple[str, ...]
    raw: dict = field(repr=False, default_factory=dict)


def bundled_scenario_path(name: str) -> Path:
    """Filesystem path of a scenario shipped with the package."""
    if name not in BUNDLED_SCENARIOS:
        raise ScenarioReferenceError(f"no bundled scenario named {name!r}", path="name")
    return Path(str(resources.files("tollgate").joinpath(f"scenarios/{name}.scn.json")))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file: {exc}", path=str(path)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"invalid JSON: {exc}", path=str(path)) from exc
    return resolve_scenario(doc)


def resolve_scenario(doc: Mapping) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioParseError("scenario document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioInvariantError(
            f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}",
            path="schema_version",
        )
    name = str(doc.get("name", "unnamed"))
    seed = int(doc.get("seed", 0))

    model = build_model(doc.get("model", {}))

    sdm = _resolve_safe_defaults(doc, model)
    ambiguity = _resolve_ambiguity(doc, model)
    policy = _resolve_policy(doc, model)
    risk_spec = _resolve_risk(doc)
    boundaries = _resolve_boundaries(doc)
    exposure = _resolve_exposure(doc, model, boundaries)
    gate = _resolve_gate(doc)
    envelope_config = dict(doc.get("envelope", {"kind": "exact"}))
    if envelope_config.get("kind") not in ("exact", "conformal"):
        raise ScenarioInvariantError(
            f"unknown envelope kind {envelope_config.get('kind')!r}", path="envelope.kind"
        )

    categories = {str(a): str(c) for a, c in doc.get("action_categories", {}).items()}
    seen = set()
    for t, s in model.all_nodes():
        for a in model.actions(t, s):
            seen.add(categories.get(a, a))
    category_order = tuple(sorted(seen))

    return Scenario(
        name=name,
        schema_version=SCHEMA_VERSION,
        seed=seed,
        model=model,
        ambiguity=ambiguity,
        policy=policy,
        risk_spec=risk_spec,
        safe_defaults=sdm,
        boundaries=boundaries,
        exposure=exposure,
        gate=gate,
        envelope_config=envelope_config,
        action_categories=categories,
        category_order=category_order,
        raw=_canonical(doc),
    )


def _resolve_safe_defaults(doc: Mapping, model: EnvironmentModel) -> SafeDefaultMap:
    entries: dict[tuple[int, str, str], str] = {}
    for i, rec in enumerate(doc.get("safe_defaults", [])):
        try:
            key = (int(rec["time"]), str(rec["state"]), str(rec["action"]))
            entries[key] = str(rec["default"])
        except KeyError as exc:
            raise ScenarioParseError(
                f"safe default entry missing field {exc}", path=f"safe_defaults[{i}]"
            ) from exc
    sdm = SafeDefaultMap.from_entries(entries, model)
    for t, s in model.all_nodes():
        for a in model.actions(t, s):
            if a == model.null_action:
                continue
            if is_side_effect_bearing(model, t, s, a) and (t, s, a) not in entries:
                raise ScenarioInvariantError(
                    f"action {a!r} at ({t}, {s!r}) bears side effects but has no "
                    "safe-default entry; every priced action needs its contractual "
                    "minimal-authority substitute declared up front",
                    path=f"safe_defaults[{t},{s},{a}]",
                )
    return sdm


def _resolve_ambiguity(doc: Mapping, base: EnvironmentModel) -> AmbiguitySet:
    models = [base]
    base_spec = doc.get("model", {})
    for i, variant in enumerate(doc.get("ambiguity", [])):
        spec = copy.deepcopy(dict(base_spec))
        for j, ov in enumerate(variant.get("kernel_overrides", [])):
            t, s, a = int(ov["time"]), str(ov["state"]), str(ov["action"])
            found = False
            for node in spec.get("nodes", []):
                if int(node["time"]) == t and str(node["state"]) == s:
                    if a not in node.get("actions", {}):
                        raise ScenarioReferenceError(
                            f"override names unknown action {a!r}",
                            path=f"ambiguity[{i}].kernel_overrides[{j}]",
                        )
                    node["actions"][a]["kernel"] = dict(ov["kernel"])
                    found = True
                    break
            if not found:
                raise ScenarioReferenceError(
                    f"override names unknown node ({t}, {s!r})",
                    path=f"ambiguity[{i}].kernel_overrides[{j}]",
                )
        for leaf, loss in variant.get("loss_overrides", {}).items():
            if leaf not in spec.get("terminal_losses", {}):
                raise ScenarioReferenceError(
                    f"loss override names unknown leaf {leaf!r}",
                    path=f"ambiguity[{i}].loss_overrides[{leaf}]",
                )
            spec["terminal_losses"][leaf] = float(loss)
        models.append(build_model(spec))
    return AmbiguitySet(models=tuple(models))


def _resolve_policy(doc: Mapping, model: EnvironmentModel) -> Policy:
    entries: dict[tuple[int, str], dict[str, float]] = {}
    for i, rec in enumerate(doc.get("policy", [])):
        t, s = int(rec["time"]), str(rec["state"])
        if not model.has_node(t, s):
            raise ScenarioReferenceError(
                f"policy names unknown node ({t}, {s!r})", path=f"policy[{i}]"
            )
        entries[(t, s)] = {str(a): float(p) for a, p in rec["probs"].items()}
    for t, s in model.all_nodes():
        if (t, s) not in entries:
            raise ScenarioInvariantError(
                f"policy undefined at node ({t}, {s!r}); the frozen policy must "
                "cover every decision node",
                path=f"policy[{t},{s}]",
            )
    return Policy.from_entries(entries, model)


def _resolve_risk(doc: Mapping) -> RiskSpec:
    rec = doc.get("risk", {"kind": "expectation"})
    return RiskSpec(
        kind=str(rec.get("kind", "expectation")),
        gamma=float(rec["gamma"]) if "gamma" in rec else None,
        alpha=float(rec["alpha"]) if "alpha" in rec else None,
    )


def _resolve_boundaries(doc: Mapping) -> tuple[BoundarySpec, ...]:
    out = []
    for i, rec in enumerate(doc.get("boundaries", [])):
        pot_rec = rec.get("potential", {})
        pot = PotentialSpec(
            kind=str(pot_rec.get("kind", "linear")),
            weights=tuple(float(w) for w in pot_rec.get("weights", ())),
            exponent=float(pot_rec.get("exponent", 1.0)),
            knots=tuple(
                tuple((float(x), float(y)) for x, y in dim) for dim in pot_rec.get("knots", ())
            ),
        )
        out.append(
            BoundarySpec(
                boundary_id=str(rec["id"]),
                dimension=int(rec.get("dimension", pot.dimension)),
                potential=pot,
                outside_state=str(rec.get("outside_state", "")),
            )
        )
    return tuple(out)


def _resolve_exposure(
    doc: Mapping, model: EnvironmentModel, boundaries: Sequence[BoundarySpec]
) -> dict[tuple[int, str, str], dict[str, tuple[float, ...]]]:
    dims = {b.boundary_id: b.dimension for b in boundaries}
    out: dict[tuple[int, str, str], dict[str, tuple[float, ...]]] = {}
    for i, nrec in enumerate(doc.get("model", {}).get("nodes", [])):
        t, s = int(nrec["time"]), str(nrec["state"])
        for a, arec in nrec.get("actions", {}).items():
            for bid, inc in arec.get("exposure", {}).items():
                if bid not in dims:
                    raise ScenarioReferenceError(
                        f"exposure names unknown boundary {bid!r}",
                        path=f"model.nodes[{i}].actions[{a}].exposure",
                    )
                vec = tuple(float(x) for x in inc)
                if len(vec) != dims[bid]:
                    raise ScenarioInvariantError(
                        f"exposure increment has dimension {len(vec)}, boundary "
                        f"{bid!r} expects {dims[bid]}",
                        path=f"model.nodes[{i}].actions[{a}].exposure",
                    )
                if any(x < 0 for x in vec):
                    raise ScenarioInvariantError(
                        "exposure increments must be componentwise >= 0",
                        path=f"model.nodes[{i}].actions[{a}].exposure",
                    )
                out.setdefault((t, s, str(a)), {})[bid] = vec
    return out


def _resolve_gate(doc: Mapping) -> GateParams:
    rec = doc.get("gate", {})
    budget = float(rec.get("initial_budget", 0.0))
    order = tuple(str(m) for m in rec.get("fallback_order", ("downgrade", "block")))
    policy = {str(k): str(v) for k, v in rec.get("escalation_policy", {}).items()}
    if budget < 0:
        raise ScenarioInvariantError("initial budget must be >= 0", path="gate.initial_budget")
    return GateParams(initial_budget=budget, fallback_order=order, escalation_policy=policy)


def _canonical(doc: Mapping) -> dict:
    return json.loads(json.dumps(doc, sort_keys=True))


def config_hash(scenario: Scenario) -> str:
    """Hash of the resolved document; any change to the model family, policy,
    risk mapping, safe defaults, or boundaries changes the digest."""
    blob = json.dumps(scenario.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# runtime assembly


def true_toll_fn(scenario: Scenario):
    """Exact positive-toll closure in the scenario's own risk mapping."""
    cache: dict[tuple[int, str, str], float] = {}

    def true_positive_toll(time: int, state: str, action: str) -> float:
        key = (time, state, action)
        if key not in cache:
            cache[key] = counterfactual_toll(
                scenario.model, time, state, action, scenario.policy,
                scenario.risk_spec, scenario.safe_defaults,
            ).positive_toll
        return cache[key]

    return true_positive_toll


def make_exact_envelope(scenario: Scenario) -> Envelope:
    return exact_envelope(
        scenario.model, scenario.policy, scenario.risk_spec, scenario.safe_defaults
    )


def build_gate_config(
    scenario: Scenario,
    envelope: Envelope,
    exact_quoter: Envelope | None = None,
    budget_override: float | None = None,
) -> GateConfig:
    budget = scenario.gate.initial_budget if budget_override is None else budget_override
    return GateConfig(
        initial_budget=budget,
        fallback_order=scenario.gate.fallback_order,
        envelope=envelope,
        safe_defaults=scenario.safe_defaults,
        escalation_policy=scenario.gate.escalation_policy,
        exact_quoter=exact_quoter,
        boundaries=scenario.boundaries,
        exposure=scenario.exposure,
    )


def feature_vector(scenario: Scenario, time: int, state: str, action: str) -> tuple[float, ...]:
    """Features for the envelope predictor: bias, total exposure increment,
    time, and a one-hot action category."""
    incs = scenario.exposure.get((time, state, action), {})
    total_exposure = sum(sum(vec) for vec in incs.values())
    category = scenario.action_categories.get(action, action)
    onehot = tuple(1.0 if c == category else 0.0 for c in scenario.category_order)
    return (1.0, float(total_exposure), float(time)) + onehot


def frozen_rollout_quotes(
    scenario: Scenario,
    episodes: int,
    seed: int,
    episode_offset: int = 0,
) -> list[list[tuple[tuple[int, str, str], float]]]:
    """Per-episode proposal quotes under the frozen policy with no gating.

    Each episode contributes its list of ((time, state, action), true
    positive toll) pairs, one per step, in step order. The executed action is
    always the proposal, so the trajectory law matches an evaluation run
    whose budget never binds.
    """
    truth = true_toll_fn(scenario)
    model = scenario.model
    out = []
    for ep in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, episode_offset + ep]))
        state = model.initial_state
        quotes: list[tuple[tuple[int, str, str], float]] = []
        for t in range(model.horizon):
            dist = scenario.policy.action_dist(t, state)
            actions = [a for a, _ in dist]
            probs = np.asarray([p for _, p in dist])
            proposed = actions[int(rng.choice(len(actions), p=probs / probs.sum()))]
            quotes.append(((t, state, proposed), truth(t, state, proposed)))
            kernel = model.kernel(t, state, proposed)
            targets = [s for s, _ in kernel]
            tprobs = np.asarray([p for _, p in kernel])
            state = targets[int(rng.choice(len(targets), p=tprobs / tprobs.sum()))]
        out.append(quotes)
    return out


@dataclass(frozen=True)
class CalibrationArtifacts:
    envelope: Envelope
    predictor: Predictor
    rows: tuple[dict, ...]
    inflation: float
    quantile_rank: int
    sample_count: int
    delta: float
    training_episodes: int


def calibrate_conformal(
    scenario: Scenario,
    n: int,
    delta: float,
    seed: int,
    training_episodes: int = 200,
) -> CalibrationArtifacts:
    """Fit the fast-tier envelope from frozen-policy rollouts.

    A linear predictor is fit on pooled quotes from a training block of
    episodes; the conformal margin is then calibrated on one score per
    calibration episode, namely the quote with the largest one-sided
    residual, so the fitted margin covers an evaluation episode's whole
    query set at the requested confidence.
    """
    feature = lambda t, s, a: feature_vector(scenario, t, s, a)
    train = frozen_rollout_quotes(scenario, training_episodes, seed, episode_offset=0)
    pooled = [q for ep in train for q in ep]
    predictor = least_squares_predictor(feature, pooled)

    calib = frozen_rollout_quotes(scenario, n, seed, episode_offset=training_episodes)
    picked: list[tuple[tuple[int, str, str], float]] = []
    rows: list[dict] = []
    for ep_quotes in calib:
        scored = [
            (true - predictor(t, s, a), (t, s, a), true) for (t, s, a), true in ep_quotes
        ]
        scored.sort(key=lambda item: item[0])
        _, key, true = scored[-1]
        picked.append((key, true))
        rows.append(
            {
                "time": key[0],
                "state": key[1],
                "action": key[2],
                "features": list(feature(*key)),
                "true_positive_toll": true,
            }
        )
    env = fit_conformal_envelope(predictor, picked, delta)
    return CalibrationArtifacts(
        envelope=env,
        predictor=predictor,
        rows=tuple(rows),
        inflation=env.inflation,
        quantile_rank=int(env.calibration_meta["quantile_rank"]),
        sample_count=n,
        delta=delta,
        training_episodes=training_episodes,
    )
