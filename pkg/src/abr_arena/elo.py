"""Elo rating bookkeeping for agents and baseline policies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .rule import MatchOutcome, judge, match_scores
from .simulator import Observation, SessionConfig, run_session
from .workload import Manifest, Trace

INITIAL_RATING = 1000.0
K_FACTOR = 10.0

VALID_SCORES = (0.0, 0.5, 1.0)


@dataclass
class Rating:
    value: float = INITIAL_RATING
    k_factor: float = K_FACTOR


def expected_score(rating_a: float, rating_b: float) -> float:
    """Logistic expected score of player a against player b (400-point scale)."""
    if not (math.isfinite(rating_a) and math.isfinite(rating_b)):
        raise ValueError("ratings must be finite")
    return 1.0 / (1.0 + 10.0 ** ((rating_b - rating_a) / 400.0))


def update(rating_a: float, rating_b: float, score_a: float,
           k: float = K_FACTOR) -> tuple[float, float]:
    """One head-to-head update; the rating sum is conserved."""
    if score_a not in VALID_SCORES:
        raise ValueError(f"score must be one of {VALID_SCORES}, got {score_a}")
    new_a = rating_a + k * (score_a - expected_score(rating_a, rating_b))
    new_b = rating_b + k * ((1.0 - score_a) - expected_score(rating_b, rating_a))
    return new_a, new_b


def anchor_baselines(
    policies: Mapping[str, Callable[[Observation], int]],
    traces: Sequence[Trace],
    manifest: Manifest,
    cfg: SessionConfig = SessionConfig(),
    k: float = K_FACTOR,
) -> dict[str, float]:
    """Round-robin every unordered policy pair over every trace.

    Ratings start at 1000 and are updated sequentially in pair-major,
    trace-minor order.
    """
    names = list(policies)
    if len(names) < 2:
        raise ValueError(f"need at least 2 policies, got {len(names)}")
    if not traces:
        raise ValueError("empty trace set")
    ratings = {name: INITIAL_RATING for name in names}
    for i, name_a in enumerate(names):
        for name_b in names[i + 1:]:
            for trace in traces:
                t_a = run_session(policies[name_a], manifest, trace, cfg)
                t_b = run_session(policies[name_b], manifest, trace, cfg)
                outcome = judge(t_a.metrics, t_b.metrics)
                score_a, _ = match_scores(outcome)
                ratings[name_a], ratings[name_b] = update(
                    ratings[name_a], ratings[name_b], score_a, k
                )
    return ratings


def rate_agent(
    agent_rating: float,
    baseline_ratings: Mapping[str, float],
    outcomes: Mapping[str, Sequence[MatchOutcome]],
    k: float = K_FACTOR,
) -> float:
    """Update the agent's rating from matches against frozen baselines.

    The agent is agent0 in every outcome. Baseline ratings are anchors and
    are never modified.
    """
    rating = agent_rating
    for name, outcome_list in outcomes.items():
        if name not in baseline_ratings:
            raise KeyError(f"unknown baseline {name!r}")
        anchor = baseline_ratings[name]
        for outcome in outcome_list:
            score, _ = match_scores(outcome)
            rating = rating + k * (score - expected_score(rating, anchor))
    return rating
