import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from avsepchain.config import ExperimentConfig
from avsepchain.errors import DegenerateInputError, InvalidArgumentError, NumericError
from avsepchain.losses import (
    LossWeights,
    hinge,
    matching_loss,
    sdri,
    si_snr,
    si_snr_loss,
    si_snri,
    total_loss,
)
from avsepchain.model import AVSepChain

from conftest import gradient_rel_error


def brute_force_si_snr_loss(u, u_hat, n_grid=200001):
    """Scan the target scale on a grid instead of using the closed-form projection."""
    u = np.asarray(u, float) - np.mean(u)
    u_hat = np.asarray(u_hat, float) - np.mean(u_hat)
    alphas = np.linspace(-5, 5, n_grid)
    err = ((u_hat[None, :] - alphas[:, None] * u[None, :]) ** 2).sum(1)
    a = alphas[np.argmin(err)]
    target = a * u
    return -10 * math.log10((target @ target) / ((u_hat - target) @ (u_hat - target)))


class TestSiSnr:
    def test_worked_value(self):
        oracle = brute_force_si_snr_loss([1, -1, 0], [1, 0, -1])
        assert abs(oracle - 4.771) < 1e-3
        got = float(si_snr_loss(torch.tensor([1.0, -1, 0], dtype=torch.float64),
                                torch.tensor([1.0, 0, -1], dtype=torch.float64)))
        assert abs(got - oracle) < 1e-3
        assert abs(got - 10 * math.log10(3)) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), alpha=st.floats(0.1, 10.0), beta=st.floats(0.1, 10.0))
    def test_scale_invariance(self, seed, alpha, beta):
        # eps breaks exact invariance once the energies approach it; stay well above
        g = torch.Generator().manual_seed(seed)
        u = torch.randn(64, generator=g, dtype=torch.float64)
        u_hat = u + torch.randn(64, generator=g, dtype=torch.float64)
        ref = si_snr_loss(u, u_hat)
        assert abs(float(si_snr_loss(u, alpha * u_hat) - ref)) < 1e-6
        assert abs(float(si_snr_loss(beta * u, u_hat) - ref)) < 1e-6

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            u = rng.standard_normal(16)
            u_hat = rng.uniform(0.3, 2) * u + rng.standard_normal(16)
            got = float(si_snr_loss(torch.from_numpy(u), torch.from_numpy(u_hat)))
            assert abs(got - brute_force_si_snr_loss(u, u_hat)) < 1e-2

    def test_orthogonal_estimate(self):
        u = torch.tensor([1.0, -1.0, 0.0], dtype=torch.float64)
        u_hat = torch.tensor([1.0, 1.0, -2.0], dtype=torch.float64)
        expected = -10 * math.log10(1e-8 / 6.0)
        assert abs(float(si_snr_loss(u, u_hat)) - expected) < 1e-3

    def test_zero_reference(self):
        with pytest.raises(DegenerateInputError):
            si_snr_loss(torch.ones(10), torch.randn(10))

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            si_snr_loss(torch.randn(10), torch.randn(11))

    def test_gradient(self, double):
        u = torch.randn(2, 12, requires_grad=True)
        u_hat = torch.randn(2, 12, requires_grad=True)
        assert gradient_rel_error(lambda: si_snr_loss(u, u_hat).sum(), [u, u_hat], max_coords=24) < 1e-4


class TestImprovement:
    def test_mixture_over_itself(self):
        mix, ref = torch.randn(3, 100), torch.randn(3, 100)
        assert torch.all(si_snri(mix, mix, ref) == 0)
        assert torch.all(sdri(mix, mix, ref) == 0)

    def test_perfect_estimate_hits_ceiling(self):
        ref = torch.randn(3, 100, dtype=torch.float64)
        mix = ref + torch.randn(3, 100, dtype=torch.float64)
        assert torch.all(si_snri(mix, ref, ref) == 30.0)

    def test_twenty_db_case(self):
        t = np.arange(16000) / 16000
        ref = np.sqrt(2) * np.sin(2 * np.pi * 440 * t)
        itf = np.sqrt(2) * np.sin(2 * np.pi * 1130 * t + 0.3)
        mix, est = ref + itf, ref + 0.1 * itf

        def oracle(r, e):
            r, e = r - r.mean(), e - e.mean()
            proj = (e @ r) / (r @ r) * r
            return 10 * math.log10((proj @ proj) / ((e - proj) @ (e - proj)))

        expected = oracle(ref, est) - oracle(ref, mix)
        assert abs(expected - 20.0) < 0.5
        as_t = [torch.from_numpy(a) for a in (mix, est, ref)]
        assert abs(float(si_snri(*as_t)) - expected) < 1e-6
        assert abs(float(si_snr(as_t[2], as_t[1])) - oracle(ref, est)) < 1e-6


class TestMatching:
    def test_hinge_cases(self):
        assert float(hinge(torch.tensor(0.3), torch.tensor(1.0), 0.5)) == 0.0
        assert float(hinge(torch.tensor(0.9, dtype=torch.float64),
                           torch.tensor(0.2, dtype=torch.float64), 0.5)) == pytest.approx(1.2, abs=1e-12)

    def test_identical_embeddings(self):
        g = torch.Generator().manual_seed(0)
        f_v = torch.randn(8, 10, generator=g, dtype=torch.float64)
        f_neg = torch.randn(8, 10, generator=g, dtype=torch.float64)
        from avsepchain.losses import frame_distance

        d_neg = float(frame_distance(f_v, f_neg))
        assert float(matching_loss(f_v, f_v.clone(), f_neg, 0.5)) == pytest.approx(max(0.5 - d_neg, 0), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), a=st.floats(1e-2, 1e2), b=st.floats(1e-2, 1e2),
           c=st.floats(1e-2, 1e2), margin=st.floats(0, 2))
    def test_non_negative_and_scale_free(self, seed, a, b, c, margin):
        g = torch.Generator().manual_seed(seed)
        f_v, f_a, f_n = (torch.randn(6, 5, generator=g, dtype=torch.float64) for _ in range(3))
        base = matching_loss(f_v, f_a, f_n, margin)
        assert float(base) >= 0
        assert abs(float(matching_loss(a * f_v, b * f_a, c * f_n, margin) - base)) < 1e-9

    def test_rate_alignment(self):
        f_v = torch.randn(4, 5, dtype=torch.float64)
        f_a = f_v.repeat_interleave(4, dim=-1)
        f_n = torch.randn(4, 20, dtype=torch.float64)
        loss = matching_loss(f_v, f_a, f_n, 0.5, video_rate=25, audio_rate=100)
        ref = matching_loss(f_v, f_v, f_n[..., ::4], 0.5)
        assert torch.allclose(loss, ref)

    def test_gradient(self, double):
        f_v = torch.randn(5, 4, requires_grad=True)
        f_a = torch.randn(5, 4, requires_grad=True)
        f_n = torch.randn(5, 4, requires_grad=True)
        # a large margin keeps the hinge active
        assert gradient_rel_error(lambda: matching_loss(f_v, f_a, f_n, 5.0), [f_v, f_a, f_n], max_coords=20) < 1e-4


class TestTotal:
    def test_arithmetic(self):
        assert total_loss(2.0, 1.0, 0.5, LossWeights(lam=1.0)) == 3.5
        assert total_loss(2.0, 1.0, 0.5, LossWeights(lam=0.0)) == 3.0

    def test_non_finite(self):
        with pytest.raises(NumericError):
            total_loss(torch.tensor(float("nan")), 1.0, 0.5, LossWeights())

    def test_bad_weights(self):
        with pytest.raises(InvalidArgumentError):
            LossWeights(lam=-1)

    def test_gradient_reaches_every_stage(self):
        torch.manual_seed(0)
        model = AVSepChain(ExperimentConfig.toy())
        x = torch.randn(2, 3200) * 0.1
        s = torch.randn(2, 3200) * 0.1
        f_v = model.embed_video(torch.randint(0, 12, (2, 5)))
        out = model.losses(x, s, f_v)
        (g_fin,) = torch.autograd.grad(out["L_mat"], out["s_fin"], retain_graph=True)
        assert g_fin.abs().sum() > 0
        out["total"].backward()
        for name, module in (("separator", model.separator), ("synthesizer", model.synthesizer)):
            dead = [n for n, p in module.named_parameters()
                    if p.grad is None or not p.grad.abs().sum() > 0]
            assert dead == [], f"{name}: {dead}"
