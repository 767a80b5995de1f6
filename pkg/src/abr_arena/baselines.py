"""Classical ABR policies used as rating anchors and opponents.

All policies are pure functions of (observation, ladder): deterministic,
total over valid observations, and always returning a level in [0, n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .simulator import Observation, SessionConfig
from .workload import Manifest

POLICY_NAMES = ("constrained", "throughput", "bola", "dynamic")


def constrained(obs: Observation, ladder) -> int:
    """Always pick the intermediate ladder level (lower middle for even n)."""
    return (len(ladder) - 1) // 2


def throughput_rule(obs: Observation, ladder) -> int:
    """Highest level not exceeding the harmonic mean of recent throughput.

    Uses up to the 5 most recent nonzero throughput samples; with no history
    the prediction is 0 and the lowest level is chosen.
    """
    recent = [x for x in reversed(obs.throughput_kbps.tolist()) if x > 0][:5]
    if not recent:
        return 0
    prediction = len(recent) / sum(1.0 / x for x in recent)
    level = int(np.searchsorted(np.asarray(ladder, dtype=np.float64), prediction, side="right")) - 1
    return max(level, 0)


@dataclass(frozen=True)
class BolaParams:
    """Utility-maximization parameters.

    ``gain`` (the Lyapunov V) and ``offset`` (gp) are derived so that at an
    empty buffer the lowest level's score dominates (its zero-cross happens
    at a small buffer level), while the top level's score crosses zero right
    at buffer capacity:

        offset = 1.25 * max_m ln(rho_m) / (rho_m - 1),  rho_m = ladder_m / ladder_0
        gain   = capacity_in_chunks / (ln(rho_top) + offset)

    The 1.25 margin keeps the empty-buffer argmax strictly at level 0.
    """

    gain: float
    offset: float
    chunk_duration_s: float

    @classmethod
    def derive(cls, ladder, buffer_capacity_s: float, chunk_duration_s: float) -> "BolaParams":
        ladder = np.asarray(ladder, dtype=np.float64)
        if ladder.size < 2:
            return cls(gain=1.0, offset=1.0, chunk_duration_s=chunk_duration_s)
        rho = ladder / ladder[0]
        utility = np.log(rho)
        offset = 1.25 * float(np.max(utility[1:] / (rho[1:] - 1.0)))
        cap_chunks = buffer_capacity_s / chunk_duration_s
        gain = cap_chunks / (float(utility[-1]) + offset)
        return cls(gain=gain, offset=offset, chunk_duration_s=chunk_duration_s)


def bola(obs: Observation, ladder, params: BolaParams) -> int:
    """Buffer-based utility maximization over the next chunk's sizes."""
    sizes = np.asarray(obs.next_sizes_bits, dtype=np.float64)
    if sizes.size == 1:
        return 0
    utility = np.log(sizes / sizes[0])
    buffer_chunks = obs.buffer_s / params.chunk_duration_s
    scores = (params.gain * (utility + params.offset) - buffer_chunks) / sizes
    return int(np.argmax(scores))


@dataclass(frozen=True)
class DynamicDashParams:
    bola: BolaParams
    switch_buffer_s: float = 10.0


def dynamic_dash(obs: Observation, ladder, params: DynamicDashParams) -> int:
    """Throughput rule below the switch buffer level, BOLA at or above it."""
    if obs.buffer_s < params.switch_buffer_s:
        return throughput_rule(obs, ladder)
    return bola(obs, ladder, params.bola)


def make_policy(name: str, manifest: Manifest, cfg: SessionConfig) -> Callable[[Observation], int]:
    """Build a ready-to-run policy closure for one video/session setup."""
    ladder = manifest.ladder_kbps
    if name == "constrained":
        return lambda obs: constrained(obs, ladder)
    if name == "throughput":
        return lambda obs: throughput_rule(obs, ladder)
    bola_params = BolaParams.derive(ladder, cfg.buffer_capacity_s, manifest.chunk_duration_s)
    if name == "bola":
        return lambda obs: bola(obs, ladder, bola_params)
    if name == "dynamic":
        params = DynamicDashParams(bola=bola_params)
        return lambda obs: dynamic_dash(obs, ladder, params)
    raise ValueError(f"unknown policy {name!r}; valid names: {', '.join(POLICY_NAMES)}")
