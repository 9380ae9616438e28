"""Gilbert-Elliott packet delivery model, one independent chain per sensor."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np


@dataclass(frozen=True)
class ChannelParams:
    k_gb: np.ndarray  # P(good -> bad) per sensor
    k_bg: np.ndarray  # P(bad -> good) per sensor

    def __post_init__(self):
        k_gb = np.atleast_1d(np.asarray(self.k_gb, dtype=float))
        k_bg = np.atleast_1d(np.asarray(self.k_bg, dtype=float))
        if k_gb.shape != k_bg.shape:
            raise ValueError("k_gb and k_bg must have the same length")
        if np.any((k_gb < 0) | (k_gb > 1) | (k_bg < 0) | (k_bg > 1)):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.any(k_gb + k_bg <= 0):
            raise ValueError("chain is reducible: k_gb + k_bg must be positive")
        object.__setattr__(self, "k_gb", k_gb)
        object.__setattr__(self, "k_bg", k_bg)

    @classmethod
    def uniform(cls, n_sensors: int, k_gb: float, k_bg: float) -> "ChannelParams":
        return cls(np.full(n_sensors, k_gb), np.full(n_sensors, k_bg))

    @property
    def n_sensors(self) -> int:
        return len(self.k_gb)

    @property
    def pi_good(self) -> np.ndarray:
        return stationary(self.k_gb, self.k_bg)[0]


def stationary(k_gb, k_bg):
    """Stationary (good, bad) probabilities of the two-state chain."""
    k_gb = np.asarray(k_gb, dtype=float)
    k_bg = np.asarray(k_bg, dtype=float)
    total = k_gb + k_bg
    if np.any(total <= 0):
        raise ValueError("both transition probabilities are zero")
    return k_bg / total, k_gb / total


def ber_to_params(ber: float, payload_bits: int = 32):
    """Memoryless chain with per-slot loss rate ``1 - (1 - ber)**payload_bits``."""
    if not 0 <= ber <= 1:
        raise ValueError("ber must lie in [0, 1]")
    if payload_bits < 1:
        raise ValueError("payload_bits must be positive")
    p_loss = 1.0 - (1.0 - ber) ** payload_bits
    return p_loss, 1.0 - p_loss


def initial_states(params: ChannelParams, rng: np.random.Generator) -> np.ndarray:
    """Draw chain states from the stationary law (True = good)."""
    return rng.random(params.n_sensors) < params.pi_good


def sample_outcome(params: ChannelParams, prev_states, rng: np.random.Generator):
    """Advance every chain one slot; returns (phi, new_states) with phi in {0, 1}."""
    prev = np.asarray(prev_states, dtype=bool)
    if prev.shape != (params.n_sensors,):
        raise ValueError(f"expected {params.n_sensors} chain states")
    u = rng.random(params.n_sensors)
    new = np.where(prev, u >= params.k_gb, u < params.k_bg)
    return new.astype(np.int8), new


def outcome_prob(phi, params: ChannelParams) -> float:
    phi = np.asarray(phi).astype(bool)
    pg, pb = stationary(params.k_gb, params.k_bg)
    return float(np.prod(np.where(phi, pg, pb)))


def all_outcomes(n_sensors: int) -> np.ndarray:
    """Every binary outcome vector, rows ordered so row i encodes i in binary
    with sensor 0 as the most significant bit."""
    return np.array(list(product((0, 1), repeat=n_sensors)), dtype=np.int8).reshape(-1, n_sensors)


def outcome_probs(outcomes, params: ChannelParams) -> np.ndarray:
    pg, pb = stationary(params.k_gb, params.k_bg)
    outcomes = np.asarray(outcomes).astype(bool)
    return np.prod(np.where(outcomes, pg, pb), axis=1)
