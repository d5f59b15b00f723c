import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from diffordinal.diffusion import (
    Denoiser, binarize, diffusion_loss, forward_noise, make_schedule, reverse_sample, timestep_embedding,
)
from diffordinal.errors import ConfigError, NumericalError
from oracles import central_differences, relative_error


@pytest.fixture(scope="module")
def sched():
    return make_schedule(1000, 100)


def test_first_alpha_bar(sched):
    assert sched.alpha_bars[0] == pytest.approx(0.9999, abs=1e-15)


def test_last_alpha_bar_matches_product_loop(sched):
    prod = 1.0
    for t in range(1000):
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 999)
    assert sched.alpha_bars[-1] == pytest.approx(prod, rel=1e-10)
    assert sched.alpha_bars[-1] < 0.01


def test_schedule_invariants(sched):
    assert np.all(np.diff(sched.betas) > 0) and sched.betas[0] > 0 and sched.betas[-1] < 1
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert np.all(sched.chain_sigmas >= 0)
    assert sched.chain_sigmas[0] == 0.0


def test_respaced_timesteps(sched):
    ts = sched.timesteps
    assert len(ts) == 100
    assert ts[0] == 1 and ts[-1] == 1000
    assert np.all(np.diff(ts[::-1]) < 0)


@pytest.mark.parametrize("T, S", [(10, 10), (10, 1), (7, 3), (1000, 999)])
def test_respacing_edge_cases(T, S):
    s = make_schedule(T, S)
    assert len(s.timesteps) == S and s.timesteps[0] == 1
    assert len(set(s.timesteps.tolist())) == S


@pytest.mark.parametrize("T, S", [(0, 1), (10, 0), (10, 11)])
def test_schedule_rejects_bad_counts(T, S):
    with pytest.raises(ConfigError):
        make_schedule(T, S)


def test_forward_noise_zero_noise(sched):
    t = torch.tensor([1, 250, 1000])
    n = forward_noise(torch.ones(3, dtype=torch.float64), t, torch.zeros(3, dtype=torch.float64), sched)
    np.testing.assert_allclose(n.numpy(), np.sqrt(sched.alpha_bars[t.numpy() - 1]), rtol=1e-15)


def test_forward_noise_zero_signal(sched):
    t = torch.tensor([3, 999])
    eps = torch.tensor([0.7, -1.3], dtype=torch.float64)
    n = forward_noise(torch.zeros(2, dtype=torch.float64), t, eps, sched)
    np.testing.assert_allclose(n.numpy(), np.sqrt(1 - sched.alpha_bars[t.numpy() - 1]) * eps.numpy(), rtol=1e-15)


def test_forward_noise_variance_at_T(sched):
    g = torch.Generator().manual_seed(0)
    eps = torch.randn(10_000, generator=g, dtype=torch.float64)
    n = forward_noise(torch.zeros(10_000, dtype=torch.float64), torch.full((10_000,), 1000), eps, sched)
    assert n.var().item() == pytest.approx(1 - sched.alpha_bars[-1], rel=0.05)


def test_timestep_embedding_shape_and_range():
    e = timestep_embedding(torch.tensor([1, 500, 1000]), 7)
    assert e.shape == (3, 7)
    assert e.abs().max() <= 1


def _randomize(module, std=0.4, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * std)
    return module


def test_zero_denoiser_outputs_zero():
    net = Denoiser(8, 2)
    for p in net.parameters():
        torch.nn.init.zeros_(p)
    out = net(torch.randn(4), torch.tensor([1, 2, 3, 4]), torch.randn(4, 8))
    assert torch.equal(out, torch.zeros(4))


def test_zero_gates_pass_input_projection_through():
    net = _randomize(Denoiser(8, 3))
    with torch.no_grad():
        for block in net.blocks:
            block.modulation.weight[16:].zero_()
            block.modulation.bias[16:].zero_()
    n_t = torch.randn(5)
    out = net(n_t, torch.tensor([1, 10, 100, 500, 1000]), torch.randn(5, 8))
    expected = net.out_proj(net.in_proj(n_t.unsqueeze(-1))).squeeze(-1)
    torch.testing.assert_close(out, expected, rtol=0, atol=0)


def test_fresh_denoiser_blocks_are_identity():
    net = Denoiser(8, 2)
    n_t = torch.randn(3)
    expected = net.out_proj(net.in_proj(n_t.unsqueeze(-1))).squeeze(-1)
    torch.testing.assert_close(net(n_t, torch.tensor([5, 6, 7]), torch.randn(3, 8)), expected, rtol=0, atol=0)


def test_denoiser_deterministic():
    torch.manual_seed(4)
    net = _randomize(Denoiser(16, 2))
    args = (torch.randn(6), torch.randint(1, 1001, (6,)), torch.randn(6, 16))
    assert torch.equal(net(*args), net(*args))


def test_loss_with_exact_oracle_is_zero(sched):
    y = torch.tensor([0.0, 1.0, 1.0, 0.0], dtype=torch.float64)
    t = torch.tensor([1, 10, 500, 1000])
    eps = torch.randn(4, dtype=torch.float64)
    ab = torch.from_numpy(sched.alpha_bars)[t - 1]

    def oracle(n_t, t_, cond):
        return (n_t - (1 - ab).sqrt() * eps) / ab.sqrt()

    loss = diffusion_loss(oracle, y, torch.zeros(4, 3, dtype=torch.float64), sched, t=t, eps=eps)
    assert loss.max().item() < 1e-20


def test_loss_of_zero_denoiser_on_ones_is_one(sched):
    loss = diffusion_loss(lambda n, t, c: torch.zeros_like(n), torch.ones(16), torch.zeros(16, 2), sched,
                          torch.Generator().manual_seed(0))
    assert loss.mean().item() == 1.0


def test_loss_rejects_empty_batch(sched):
    with pytest.raises(ValueError):
        diffusion_loss(lambda n, t, c: n, torch.zeros(0), torch.zeros(0, 2), sched)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3).map(lambda v: round(v, 6)), min_size=1, max_size=8), st.data())
def test_loss_nonnegative_and_zero_iff_exact(preds, data):
    sched = make_schedule(50, 5)
    y = torch.tensor(data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=len(preds), max_size=len(preds))),
                     dtype=torch.float64)
    p = torch.tensor(preds, dtype=torch.float64)
    loss = diffusion_loss(lambda n, t, c: p, y, torch.zeros(len(p), 1), sched, torch.Generator().manual_seed(1))
    assert (loss >= 0).all()
    assert ((loss == 0) == (p == y)).all()


def test_denoiser_loss_gradient_matches_finite_differences():
    sched = make_schedule(100, 10)
    net = _randomize(Denoiser(6, 2).double(), seed=3)
    g = torch.Generator().manual_seed(5)
    y = torch.tensor([0.0, 1.0, 1.0], dtype=torch.float64)
    cond = torch.randn(3, 6, generator=g, dtype=torch.float64, requires_grad=True)
    t = torch.tensor([2, 40, 97])
    eps = torch.randn(3, generator=g, dtype=torch.float64)

    def scalar():
        return diffusion_loss(net, y, cond, sched, t=t, eps=eps).mean()

    params = [*net.parameters(), cond]
    net.zero_grad()
    scalar().backward()
    analytic = [p.grad.clone() for p in params]
    numeric = central_differences(scalar, params)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) <= 1e-4


@pytest.mark.parametrize("steps", [1000, 100])
@pytest.mark.parametrize("value", [0.0, 1.0, 0.37])
def test_sampler_recovers_oracle_value(steps, value):
    sched = make_schedule(1000, steps)
    oracle = lambda n, t, c: torch.full_like(n, value)
    y = reverse_sample(oracle, torch.zeros(64, 2, dtype=torch.float64), sched,
                       torch.Generator().manual_seed(0), deterministic=True)
    assert (y - value).abs().max().item() <= 1e-3


def test_sampler_reproducible_with_seed():
    sched = make_schedule(1000, 100)
    torch.manual_seed(0)
    net = Denoiser(8, 1)
    cond = torch.randn(10, 8)
    a = reverse_sample(net, cond, sched, torch.Generator().manual_seed(11))
    b = reverse_sample(net, cond, sched, torch.Generator().manual_seed(11))
    assert torch.equal(a, b)


def test_sampler_reports_non_finite():
    sched = make_schedule(100, 10)
    with pytest.raises(NumericalError):
        reverse_sample(lambda n, t, c: torch.full_like(n, math.inf), torch.zeros(2, 1), sched)


def test_binarize_examples():
    assert binarize(torch.tensor([0.9, 0.1, 0.5, 0.4999])).tolist() == [1, 0, 1, 0]
