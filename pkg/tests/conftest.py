"""Shared tiny models used across the test modules."""

from __future__ import annotations

import pytest

from tollgate.envmodel import Policy, build_model


@pytest.fixture
def coin_model():
    """Single step: one action splits evenly between losses 0 and 1."""
    return build_model(
        {
            "horizon": 1,
            "components": [{"name": "x", "external": True}],
            "states": [
                {"id": "start", "components": {"x": 0}},
                {"id": "win", "components": {"x": 0}},
                {"id": "lose", "components": {"x": 1}},
            ],
            "initial_state": "start",
            "nodes": [
                {"time": 0, "state": "start", "actions": {
                    "flip": {"kernel": {"win": 0.5, "lose": 0.5}},
                    "noop": {"kernel": {"win": 1.0}},
                }},
            ],
            "terminal_losses": {"win": 0.0, "lose": 1.0},
        }
    )


@pytest.fixture
def chain_model():
    """Deterministic two-step chain ending at loss 5."""
    return build_model(
        {
            "horizon": 2,
            "components": [{"name": "x", "external": True}],
            "states": [
                {"id": "a", "components": {"x": 0}},
                {"id": "b", "components": {"x": 1}},
                {"id": "c", "components": {"x": 2}},
            ],
            "initial_state": "a",
            "nodes": [
                {"time": 0, "state": "a", "actions": {"noop": {"kernel": {"b": 1.0}}}},
                {"time": 1, "state": "b", "actions": {"noop": {"kernel": {"c": 1.0}}}},
            ],
            "terminal_losses": {"c": 5.0},
        }
    )


@pytest.fixture
def bernoulli_sum_model():
    """Two independent fair increments; terminal loss is their sum."""
    return build_model(
        {
            "horizon": 2,
            "components": [{"name": "total", "external": True}],
            "states": [
                {"id": "s", "components": {"total": 0}},
                {"id": "sum0", "components": {"total": 0}},
                {"id": "sum1", "components": {"total": 1}},
                {"id": "total0", "components": {"total": 0}},
                {"id": "total1", "components": {"total": 1}},
                {"id": "total2", "components": {"total": 2}},
            ],
            "initial_state": "s",
            "nodes": [
                {"time": 0, "state": "s", "actions": {
                    "noop": {"kernel": {"sum0": 0.5, "sum1": 0.5}},
                }},
                {"time": 1, "state": "sum0", "actions": {
                    "noop": {"kernel": {"total0": 0.5, "total1": 0.5}},
                }},
                {"time": 1, "state": "sum1", "actions": {
                    "noop": {"kernel": {"total1": 0.5, "total2": 0.5}},
                }},
            ],
            "terminal_losses": {"total0": 0.0, "total1": 1.0, "total2": 2.0},
        }
    )


@pytest.fixture
def noop_policy():
    def make(model):
        return Policy.from_entries(
            {(t, s): {"noop": 1.0} for t, s in model.all_nodes()}, model
        )

    return make
