import math

import pytest
import torch

from diffusion import denoise, elbo_loss, make_schedule, posterior_mean, q_sample, reverse_step
from utils import ConfigError, DomainError, ShapeError


def test_single_step_schedule():
    sched = make_schedule(1, 0.5, 0.5)
    assert float(sched.alpha_bar[1]) == pytest.approx(0.5)
    assert float(sched.beta_tilde[1]) == 0.0


def test_two_step_schedule():
    sched = make_schedule(2, 0.1, 0.2)
    assert sched.alpha_bar[1:].tolist() == pytest.approx([0.9, 0.72])
    assert sched.beta_tilde[1:].tolist() == pytest.approx([0.0, 0.1 / 0.28 * 0.2])
    assert float(sched.alpha_bar[0]) == 1.0


def test_default_schedule_is_monotone():
    sched = make_schedule(100)
    assert bool((sched.alpha_bar[1:] < sched.alpha_bar[:-1]).all())
    assert float(sched.beta[1]) == pytest.approx(1e-4)
    assert float(sched.beta[100]) == pytest.approx(0.02)


@pytest.mark.parametrize("steps, start, end", [(0, 1e-4, 0.02), (2, 0.3, 0.2), (2, 0.0, 0.1), (2, 0.1, 1.0)])
def test_schedule_rejects_bad_bounds(steps, start, end):
    with pytest.raises(ConfigError):
        make_schedule(steps, start, end)


def test_q_sample_closed_form():
    sched = make_schedule(2, 0.1, 0.2)
    out = q_sample(torch.tensor([1.0], dtype=torch.float64), 2, torch.tensor([1.0], dtype=torch.float64), sched)
    assert float(out) == pytest.approx(math.sqrt(0.72) + math.sqrt(0.28))


def test_q_sample_with_zero_noise_scales_the_state():
    sched = make_schedule(10)
    h0 = torch.randn(3, 5, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    out = q_sample(h0, 10, torch.zeros_like(h0), sched)
    torch.testing.assert_close(out, sched.alpha_bar[10].sqrt() * h0)


def test_q_sample_per_row_steps():
    sched = make_schedule(2, 0.1, 0.2)
    h0 = torch.ones(2, 1, dtype=torch.float64)
    out = q_sample(h0, torch.tensor([1, 2]), torch.zeros_like(h0), sched)
    assert out[:, 0].tolist() == pytest.approx([math.sqrt(0.9), math.sqrt(0.72)])


def test_q_sample_errors():
    sched = make_schedule(2)
    with pytest.raises(ShapeError):
        q_sample(torch.zeros(2), 1, torch.zeros(3), sched)
    with pytest.raises(DomainError):
        q_sample(torch.zeros(2), 3, torch.zeros(2), sched)
    with pytest.raises(DomainError):
        q_sample(torch.zeros(2, 1), torch.tensor([0, 1]), torch.zeros(2, 1), sched)


def test_posterior_mean_two_steps():
    sched = make_schedule(2, 0.1, 0.2)
    one = torch.tensor([1.0], dtype=torch.float64)
    coef_n = math.sqrt(0.8) * 0.1 / 0.28
    coef_0 = math.sqrt(0.9) * 0.2 / 0.28
    assert float(posterior_mean(one, one, 2, sched)) == pytest.approx(coef_n + coef_0)
    with pytest.raises(DomainError):
        posterior_mean(one, one, 1, sched)


def test_elbo_loss_vanishes_for_an_exact_noise_predictor():
    sched = make_schedule(20)
    h0 = torch.zeros(8, 6, dtype=torch.float64)

    def exact(state, n):
        return state / (1.0 - sched.alpha_bar[n]).sqrt().unsqueeze(-1)

    loss = elbo_loss(h0, exact, sched, torch.Generator().manual_seed(3))
    assert float(loss) == pytest.approx(0.0, abs=1e-20)


def test_elbo_loss_with_zero_predictor_is_noise_energy():
    sched = make_schedule(5)
    h0 = torch.zeros(4000, 3, dtype=torch.float64)
    loss = elbo_loss(h0, lambda state, n: torch.zeros_like(state), sched, torch.Generator().manual_seed(0))
    assert float(loss) == pytest.approx(3.0, rel=0.05)


def test_reverse_step_rejects_noise_at_the_last_step():
    sched = make_schedule(3)
    h = torch.zeros(2, dtype=torch.float64)
    with pytest.raises(DomainError):
        reverse_step(h, 1, lambda state, n: torch.zeros_like(state), torch.ones(2, dtype=torch.float64), sched)


def test_reverse_step_with_zero_predictor_rescales():
    sched = make_schedule(1, 0.5, 0.5)
    h = torch.tensor([1.0, -2.0], dtype=torch.float64)
    out = reverse_step(h, 1, lambda state, n: torch.zeros_like(state), None, sched)
    torch.testing.assert_close(out, h / math.sqrt(0.5))


def test_denoise_inverts_the_forward_process_with_exact_noise():
    sched = make_schedule(100)
    h0 = torch.randn(16, generator=torch.Generator().manual_seed(1), dtype=torch.float64)

    def exact(state, n):
        alpha_bar = sched.alpha_bar[n].unsqueeze(-1)
        return (state - alpha_bar.sqrt() * h0) / (1.0 - alpha_bar).sqrt()

    recovered = denoise(sched.alpha_bar[100].sqrt() * h0, exact, sched, stochastic=False)
    assert float(torch.linalg.vector_norm(recovered - h0) / torch.linalg.vector_norm(h0)) < 1e-5


def test_denoise_is_reproducible_under_a_seed():
    sched = make_schedule(10)
    h = torch.zeros(3, 4, dtype=torch.float64)
    zero = lambda state, n: torch.zeros_like(state)  # noqa: E731
    first = denoise(h, zero, sched, torch.Generator().manual_seed(5))
    second = denoise(h, zero, sched, torch.Generator().manual_seed(5))
    torch.testing.assert_close(first, second)
    assert float(first.abs().sum()) > 0


def test_stochastic_denoise_needs_a_generator():
    sched = make_schedule(3)
    with pytest.raises(ConfigError):
        denoise(torch.zeros(2), lambda state, n: torch.zeros_like(state), sched)
