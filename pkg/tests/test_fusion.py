import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from avsepchain.errors import InvalidArgumentError
from avsepchain.fusion import (
    AUDIO_DOMINANT,
    DOMINANCE_GRID,
    VISUAL_DOMINANT,
    DominanceConfig,
    Fusion,
    FusionLayer,
    FusionStrategy,
    Modality,
    attention_weights,
    cross_modal_attention,
    fuse,
)

from conftest import gradient_rel_error


def _weights(d, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(d, d, generator=g, dtype=dtype) / d**0.5 for _ in range(3)]


class TestCrossAttention:
    def test_single_key(self):
        q = torch.randn(5, 4, dtype=torch.float64)
        kv = torch.randn(1, 4, dtype=torch.float64)
        w_q, w_k, w_v = _weights(4)
        out = cross_modal_attention(q, kv, w_q, w_k, w_v)
        assert torch.allclose(out, (kv @ w_v).expand(5, 4))

    @settings(max_examples=40, deadline=None)
    @given(tq=st.integers(1, 12), tkv=st.integers(1, 12), d=st.integers(1, 8),
           seed=st.integers(0, 10_000))
    def test_rows_stochastic_and_length(self, tq, tkv, d, seed):
        g = torch.Generator().manual_seed(seed)
        q = torch.randn(tq, d, generator=g, dtype=torch.float64)
        kv = torch.randn(tkv, d, generator=g, dtype=torch.float64)
        w_q, w_k, w_v = _weights(d, seed)
        a = attention_weights(q, kv, w_q, w_k)
        assert torch.all(a >= 0)
        assert torch.allclose(a.sum(-1), torch.ones(tq, dtype=torch.float64), atol=1e-6)
        assert cross_modal_attention(q, kv, w_q, w_k, w_v).shape == (tq, d)

    @settings(max_examples=25, deadline=None)
    @given(tkv=st.integers(2, 10), seed=st.integers(0, 10_000))
    def test_kv_permutation_invariance(self, tkv, seed):
        g = torch.Generator().manual_seed(seed)
        q = torch.randn(3, 4, generator=g, dtype=torch.float64)
        kv = torch.randn(tkv, 4, generator=g, dtype=torch.float64)
        w = _weights(4, seed)
        perm = torch.randperm(tkv, generator=g)
        assert torch.allclose(cross_modal_attention(q, kv, *w), cross_modal_attention(q, kv[perm], *w))

    def test_gradient_3x4_5x4(self, double):
        g = torch.Generator().manual_seed(1)
        q = torch.randn(3, 4, generator=g, requires_grad=True)
        kv = torch.randn(5, 4, generator=g, requires_grad=True)
        w = [t.requires_grad_() for t in _weights(4, 2)]
        probe = torch.randn(3, 4, generator=g)

        def fn():
            return (cross_modal_attention(q, kv, *w) * probe).sum()

        assert gradient_rel_error(fn, [q, kv, *w], max_coords=64) < 1e-4

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            cross_modal_attention(torch.ones(2, 3), torch.ones(2, 4), *_weights(3, dtype=torch.float32))


class TestStrategies:
    @pytest.mark.parametrize("strategy", list(FusionStrategy))
    def test_gradient_every_strategy(self, double, strategy):
        torch.manual_seed(0)
        f = Fusion(4, strategy, AUDIO_DOMINANT)
        audio = torch.randn(2, 5, 4, requires_grad=True)
        video = torch.randn(2, 5, 4, requires_grad=True)
        probe = torch.randn(2, 5, 4)

        def fn():
            return (f(audio, video) * probe).sum()

        assert gradient_rel_error(fn, [audio, video, *f.parameters()], max_coords=40) < 1e-4

    def test_summation_zero_projection(self):
        f = Fusion(6, FusionStrategy.SUMMATION, VISUAL_DOMINANT)
        torch.nn.init.zeros_(f.proj.weight)
        audio, video = torch.randn(7, 6), torch.randn(7, 6)
        assert torch.equal(f(audio, video), video)

    def test_concatenation_width(self):
        f = Fusion(6, FusionStrategy.CONCATENATION)
        assert f(torch.randn(2, 7, 6), torch.randn(2, 7, 6)).shape == (2, 7, 6)

    def test_misaligned_streams_rejected(self):
        f = Fusion(6, FusionStrategy.SUMMATION)
        with pytest.raises(InvalidArgumentError):
            f(torch.randn(7, 6), torch.randn(5, 6))

    def test_fuse_checks_params(self):
        f = Fusion(4, FusionStrategy.SUMMATION, AUDIO_DOMINANT)
        a, v = torch.randn(3, 4), torch.randn(3, 4)
        assert torch.equal(fuse(a, v, "summation", AUDIO_DOMINANT, f), f(a, v))
        with pytest.raises(InvalidArgumentError):
            fuse(a, v, "concatenation", AUDIO_DOMINANT, f)


class TestDominance:
    def test_same_modality_rejected(self):
        with pytest.raises(InvalidArgumentError):
            DominanceConfig(Modality.AUDIO, Modality.AUDIO)

    def test_parse_round_trip(self):
        for d in (AUDIO_DOMINANT, VISUAL_DOMINANT):
            assert DominanceConfig.parse(str(d)) == d
        with pytest.raises(InvalidArgumentError):
            DominanceConfig.parse("audio")

    def test_grid_pairs_distinct_outputs(self):
        assert len(set(DOMINANCE_GRID)) == 4
        torch.manual_seed(0)
        audio, video = torch.randn(2, 6, 8), torch.randn(2, 6, 8)
        outs = []
        for sep, syn in DOMINANCE_GRID:
            torch.manual_seed(1)
            first = FusionLayer(8, 16, dominance=sep)
            second = FusionLayer(8, 16, dominance=syn)
            with torch.no_grad():
                outs.append(second(first(audio, video), video))
        for i in range(4):
            for j in range(i + 1, 4):
                assert not torch.allclose(outs[i], outs[j], atol=1e-4)

    def test_query_and_kv_roles(self):
        torch.manual_seed(0)
        f = Fusion(4, dominance=AUDIO_DOMINANT)
        audio, video = torch.randn(1, 4), torch.randn(3, 4)
        # a single audio frame as the only key: output is its value for every video query
        out = f(audio, video)
        assert out.shape == (3, 4)
        assert torch.allclose(out, (audio @ f.attention.w_v).expand(3, 4))
