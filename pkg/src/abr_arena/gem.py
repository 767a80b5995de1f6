"""Hidden-feature GAN: a generator rolls the streaming history into a fixed
16-dim vector, and a discriminator scores how much that vector looks like
ones harvested from winning sessions. Least-squares losses, RMSProp updates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .neural import DTYPE, BatchNorm, Dense, LeakyRelu, RMSProp, Sequential
from .simulator import HIDDEN_SIZE, Trajectory

GEM_LR = 1e-4
GEM_BATCH = 64
WIN_BUFFER_CAPACITY = 10_000


def init_hidden() -> np.ndarray:
    """Hidden feature before any history exists: the zero vector."""
    return np.zeros(HIDDEN_SIZE, dtype=DTYPE)


def build_generator(input_dim: int, rng: np.random.Generator) -> Sequential:
    return Sequential([
        Dense(input_dim, 64, rng=rng), BatchNorm(64), LeakyRelu(),
        Dense(64, 32, rng=rng), BatchNorm(32), LeakyRelu(),
        Dense(32, HIDDEN_SIZE, rng=rng),
    ])


def build_discriminator(rng: np.random.Generator) -> Sequential:
    # Least-squares convention: the score head is linear, not squashed.
    # A sigmoid output caps how fast generated samples can be re-scored and
    # saturates the generator's gradients once the discriminator is ahead.
    return Sequential([
        Dense(HIDDEN_SIZE, 64, rng=rng), BatchNorm(64), LeakyRelu(),
        Dense(64, 32, rng=rng), BatchNorm(32), LeakyRelu(),
        Dense(32, 1, rng=rng),
    ])


def gen_hidden(gen: Sequential, state_flat: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """Next hidden feature from (previous normalized state, previous hidden).

    Inference-mode forward pass; deterministic.
    """
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    if h_prev.shape != (HIDDEN_SIZE,):
        raise ValueError(f"h_prev must have shape ({HIDDEN_SIZE},), got {h_prev.shape}")
    x = np.concatenate([np.asarray(state_flat, dtype=DTYPE), h_prev])[None, :]
    out, _ = gen.forward(x, training=False)
    return out[0]


def d_loss(disc: Sequential, win_batch: np.ndarray, gen_batch: np.ndarray,
           training: bool = True) -> float:
    """Least-squares discriminator loss: real samples toward 1, generated
    samples toward 0.

    Both halves pass through the discriminator as one mixed batch, so
    training-mode batch normalization sees winning and generated samples
    together and their contrast survives the per-batch standardization.
    """
    if len(win_batch) == 0 or len(gen_batch) == 0:
        raise ValueError("empty batch")
    stacked = np.concatenate([
        np.asarray(win_batch, dtype=DTYPE), np.asarray(gen_batch, dtype=DTYPE),
    ])
    p, _ = disc.forward(stacked, training=training)
    p_win, p_gen = p[:len(win_batch)], p[len(win_batch):]
    return float(0.5 * np.mean((p_win - 1.0) ** 2) + 0.5 * np.mean(p_gen ** 2))


def g_loss(gen: Sequential, disc: Sequential, inputs: np.ndarray,
           training: bool = True) -> float:
    """Least-squares generator loss: push D(G(s, h)) toward 1."""
    if len(inputs) == 0:
        raise ValueError("empty batch")
    fake, _ = gen.forward(np.asarray(inputs, dtype=DTYPE), training=training)
    p, _ = disc.forward(fake, training=training)
    return float(0.5 * np.mean((p - 1.0) ** 2))


class WinBuffer:
    """Bounded FIFO of hidden-feature vectors from winning sessions."""

    def __init__(self, capacity: int = WIN_BUFFER_CAPACITY):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque[np.ndarray] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def append(self, h: np.ndarray) -> None:
        h = np.asarray(h, dtype=DTYPE)
        if h.shape != (HIDDEN_SIZE,):
            raise ValueError(f"hidden feature must have shape ({HIDDEN_SIZE},), got {h.shape}")
        self._items.append(h.copy())

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if not self._items:
            raise ValueError("sampling from an empty buffer")
        idx = rng.integers(len(self._items), size=size)
        stacked = np.stack(list(self._items))
        return stacked[idx]


def collect_winning(buffer: WinBuffer, trajectory: Trajectory, won: bool) -> None:
    """Harvest every per-step hidden vector of a winning trajectory."""
    if not won:
        return
    for step in trajectory.steps:
        buffer.append(step.hidden)


@dataclass(frozen=True)
class GemReport:
    d_loss: float
    g_loss: float
    skipped: bool


class GemModule:
    """One agent's generator/discriminator pair plus its winning-sample buffer."""

    def __init__(self, input_dim: int, *, rng: np.random.Generator,
                 buffer_capacity: int = WIN_BUFFER_CAPACITY,
                 lr: float = GEM_LR, batch_size: int = GEM_BATCH):
        self.input_dim = input_dim
        self.gen = build_generator(input_dim + HIDDEN_SIZE, rng)
        self.disc = build_discriminator(rng)
        self.buffer = WinBuffer(buffer_capacity)
        self.batch_size = batch_size
        self.gen_opt = RMSProp(self.gen.params(), lr=lr)
        self.disc_opt = RMSProp(self.disc.params(), lr=lr)

    def hidden_for(self, state_flat: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
        return gen_hidden(self.gen, state_flat, h_prev)

    def collect(self, trajectory: Trajectory, won: bool) -> None:
        collect_winning(self.buffer, trajectory, won)

    def disc_gradients(self, real: np.ndarray, fake: np.ndarray):
        """(L_d, discriminator gradients); the generated batch is a constant.

        Real and generated samples go through as one mixed batch (see
        :func:`d_loss`).
        """
        stacked = np.concatenate([real, fake])
        p, cache = self.disc.forward(stacked, training=True)
        p_real, p_fake = p[:len(real)], p[len(real):]
        loss = float(0.5 * np.mean((p_real - 1.0) ** 2) + 0.5 * np.mean(p_fake ** 2))
        if not np.isfinite(loss):
            return loss, None
        d_p = np.concatenate([(p_real - 1.0) / len(real), p_fake / len(fake)])
        _, grads = self.disc.backward(cache, d_p)
        return loss, grads

    def gen_gradients(self, inputs: np.ndarray):
        """(L_g, generator gradients) through the frozen discriminator."""
        batch = len(inputs)
        fake, gen_cache = self.gen.forward(inputs, training=True)
        p, disc_cache = self.disc.forward(fake, training=True)
        loss = float(0.5 * np.mean((p - 1.0) ** 2))
        if not np.isfinite(loss):
            return loss, None
        d_fake, _ = self.disc.backward(disc_cache, (p - 1.0) / batch)
        _, grads = self.gen.backward(gen_cache, d_fake)
        return loss, grads

    def update(self, gen_inputs: np.ndarray, rng: np.random.Generator) -> GemReport:
        """One discriminator descent step on L_d, then one generator step on
        L_g with the discriminator's parameters frozen.

        Skips (no parameter writes) while the winning-sample buffer is empty;
        a non-finite loss also aborts without writing.
        """
        if len(self.buffer) == 0:
            return GemReport(d_loss=float("nan"), g_loss=float("nan"), skipped=True)
        gen_inputs = np.asarray(gen_inputs, dtype=DTYPE)
        if gen_inputs.ndim != 2 or gen_inputs.shape[1] != self.input_dim + HIDDEN_SIZE:
            raise ValueError(f"generator inputs must be (n, {self.input_dim + HIDDEN_SIZE})")
        batch = self.batch_size

        real = self.buffer.sample(rng, batch)
        fake_in = gen_inputs[rng.integers(len(gen_inputs), size=batch)]
        fake, _ = self.gen.forward(fake_in, training=True)
        d_value, disc_grads = self.disc_gradients(real, fake)
        if disc_grads is not None:
            self.disc_opt.step(disc_grads)

        gen_in = gen_inputs[rng.integers(len(gen_inputs), size=batch)]
        g_value, gen_grads = self.gen_gradients(gen_in)
        if gen_grads is not None:
            self.gen_opt.step(gen_grads)

        return GemReport(d_loss=d_value, g_loss=g_value, skipped=False)
