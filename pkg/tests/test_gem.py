import numpy as np
import pytest
from gradcheck import gradient_errors, to_float64

from abr_arena.gem import (
    GemModule, WinBuffer, collect_winning, d_loss, g_loss, gen_hidden, init_hidden,
)
from abr_arena.simulator import HIDDEN_SIZE, SessionMetrics, Trajectory, TrajectoryStep

STATE_DIM = 20


def make_gem(seed=0):
    return GemModule(STATE_DIM, rng=np.random.default_rng(seed), batch_size=16)


def make_trajectory(num_steps, fill=1.0):
    steps = tuple(
        TrajectoryStep(observation=None, action=0, download_time_s=1.0,
                       hidden=np.full(HIDDEN_SIZE, fill * (i + 1), dtype=np.float32))
        for i in range(num_steps)
    )
    return Trajectory(steps=steps, metrics=SessionMetrics(1.0, 0.0, 0.0))


def test_init_hidden_is_zero_vector():
    h = init_hidden()
    assert h.shape == (HIDDEN_SIZE,)
    assert np.all(h == 0.0)
    assert np.array_equal(init_hidden(), h)  # no randomness involved


def test_gen_hidden_deterministic_and_finite():
    gem = make_gem()
    state = np.random.default_rng(1).normal(size=STATE_DIM).astype(np.float32)
    h0 = init_hidden()
    h1 = gem.hidden_for(state, h0)
    assert h1.shape == (HIDDEN_SIZE,)
    assert np.all(np.isfinite(h1))
    assert np.array_equal(gem.hidden_for(state, h0), h1)
    with pytest.raises(ValueError):
        gen_hidden(gem.gen, state, np.zeros(4, dtype=np.float32))


class StubDisc:
    """Scores the first ``n_win`` rows of a batch one way and the rest another."""

    def __init__(self, win_value, gen_value=None, n_win=8):
        self.win_value = win_value
        self.gen_value = win_value if gen_value is None else gen_value
        self.n_win = n_win

    def forward(self, x, training=False):
        out = np.full((len(x), 1), self.gen_value, dtype=np.float32)
        out[:self.n_win] = self.win_value
        return out, None


class StubGen:
    def forward(self, x, training=False):
        return np.zeros((len(x), HIDDEN_SIZE), dtype=np.float32), None


def test_d_loss_constants():
    win = np.zeros((8, HIDDEN_SIZE), dtype=np.float32)
    gen = np.zeros((8, HIDDEN_SIZE), dtype=np.float32)
    assert d_loss(StubDisc(1.0, 0.0), win, gen) == pytest.approx(0.0)
    assert d_loss(StubDisc(0.5), win, gen) == pytest.approx(0.25)
    assert d_loss(StubDisc(0.0), win, gen) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        d_loss(StubDisc(0.5), np.zeros((0, HIDDEN_SIZE)), gen)


def test_g_loss_constants():
    inputs = np.zeros((8, STATE_DIM + HIDDEN_SIZE), dtype=np.float32)
    assert g_loss(StubGen(), StubDisc(1.0), inputs) == pytest.approx(0.0)
    assert g_loss(StubGen(), StubDisc(0.0), inputs) == pytest.approx(0.5)
    assert g_loss(StubGen(), StubDisc(0.5), inputs) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        g_loss(StubGen(), StubDisc(0.5), inputs[:0])


def test_d_loss_mixed_halves():
    win = np.zeros((8, HIDDEN_SIZE), dtype=np.float32)
    gen = np.zeros((8, HIDDEN_SIZE), dtype=np.float32)
    # D(win)=0.5, D(gen)=0 -> 0.5*0.25 + 0.5*0 = 0.125
    assert d_loss(StubDisc(0.5, 0.0), win, gen) == pytest.approx(0.125)


def test_losses_nonnegative_and_finite():
    gem = make_gem(3)
    rng = np.random.default_rng(4)
    win = rng.normal(size=(32, HIDDEN_SIZE)).astype(np.float32)
    inputs = rng.normal(size=(32, STATE_DIM + HIDDEN_SIZE)).astype(np.float32)
    fake, _ = gem.gen.forward(inputs, training=True)
    d_value = d_loss(gem.disc, win, fake)
    g_value = g_loss(gem.gen, gem.disc, inputs)
    assert d_value >= 0.0 and np.isfinite(d_value)
    assert g_value >= 0.0 and np.isfinite(g_value)


def test_win_buffer_fifo():
    buf = WinBuffer(capacity=5)
    traj = make_trajectory(10)
    collect_winning(buf, traj, won=False)
    assert len(buf) == 0
    collect_winning(buf, traj, won=True)
    assert len(buf) == 5  # last five hidden vectors survive
    kept = buf.sample(np.random.default_rng(0), 64)
    assert kept.min() >= 6.0
    with pytest.raises(ValueError):
        WinBuffer(0)
    with pytest.raises(ValueError):
        WinBuffer(4).sample(np.random.default_rng(0), 2)


def test_collect_appends_all_steps():
    buf = WinBuffer()
    collect_winning(buf, make_trajectory(10), won=True)
    assert len(buf) == 10


def test_update_skips_on_empty_buffer():
    gem = make_gem(5)
    inputs = np.zeros((4, STATE_DIM + HIDDEN_SIZE), dtype=np.float32)
    before = [p.copy() for p in gem.gen.params() + gem.disc.params()]
    report = gem.update(inputs, np.random.default_rng(0))
    assert report.skipped
    for old, new in zip(before, gem.gen.params() + gem.disc.params()):
        assert np.array_equal(old, new)


def test_update_applies_and_moments_advance():
    gem = make_gem(6)
    rng_data = np.random.default_rng(7)
    collect_winning(gem.buffer, make_trajectory(12, fill=0.3), won=True)
    inputs = rng_data.normal(size=(30, STATE_DIM + HIDDEN_SIZE)).astype(np.float32)

    p0 = [p.copy() for p in gem.gen.params() + gem.disc.params()]
    report1 = gem.update(inputs, np.random.default_rng(42))
    assert not report1.skipped and np.isfinite(report1.d_loss) and np.isfinite(report1.g_loss)
    p1 = [p.copy() for p in gem.gen.params() + gem.disc.params()]
    gem.update(inputs, np.random.default_rng(42))  # identical inputs and draws
    p2 = [p.copy() for p in gem.gen.params() + gem.disc.params()]

    delta1 = [b - a for a, b in zip(p0, p1)]
    delta2 = [b - a for a, b in zip(p1, p2)]
    assert any(np.any(a != b) for a, b in zip(delta1, delta2))
    with pytest.raises(ValueError):
        gem.update(np.zeros((3, 5), dtype=np.float32), np.random.default_rng(0))


def test_disc_gradients_match_finite_differences():
    gem = make_gem(8)
    rng = np.random.default_rng(9)
    real = rng.normal(0.4, 0.2, size=(8, HIDDEN_SIZE)).astype(np.float32)
    fake = rng.normal(-0.2, 0.3, size=(8, HIDDEN_SIZE)).astype(np.float32)
    loss, grads = gem.disc_gradients(real, fake)
    assert np.isfinite(loss)

    twin = to_float64(gem.disc)
    stacked64 = np.concatenate([real, fake]).astype(np.float64)

    def loss64():
        p, _ = twin.forward(stacked64, training=True)
        p_r, p_f = p[:len(real)], p[len(real):]
        return float(0.5 * np.mean((p_r - 1.0) ** 2) + 0.5 * np.mean(p_f ** 2))

    errors = []
    for param, grad in zip(twin.params(), grads):
        errors += gradient_errors(loss64, param, grad, rng=rng, max_coords=30)
    assert max(errors) < 1e-2


def test_gen_gradients_match_finite_differences():
    gem = make_gem(10)
    rng = np.random.default_rng(11)
    inputs = rng.normal(size=(8, STATE_DIM + HIDDEN_SIZE)).astype(np.float32)
    loss, grads = gem.gen_gradients(inputs)
    assert np.isfinite(loss)

    gen_twin = to_float64(gem.gen)
    disc_twin = to_float64(gem.disc)
    inputs64 = inputs.astype(np.float64)

    def loss64():
        fake, _ = gen_twin.forward(inputs64, training=True)
        p, _ = disc_twin.forward(fake, training=True)
        return float(0.5 * np.mean((p - 1.0) ** 2))

    errors = []
    for param, grad in zip(gen_twin.params(), grads):
        errors += gradient_errors(loss64, param, grad, rng=rng, max_coords=30)
    assert max(errors) < 1e-2
