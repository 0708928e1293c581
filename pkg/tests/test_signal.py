import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from avsepchain import signal
from avsepchain.errors import InvalidArgumentError, InvalidStateError


def brute_force_chunks(x, k):
    """Enumerate chunk starts 0, k/2, ... until the tail is covered; zero-pad."""
    t = x.shape[-1]
    starts = [0]
    while starts[-1] + k < t:
        starts.append(starts[-1] + k // 2)
    out = np.zeros((x.shape[0], k, len(starts)))
    for j, s0 in enumerate(starts):
        seg = x[:, s0 : s0 + k]
        out[:, : seg.shape[1], j] = seg
    return out


class TestChunk:
    def test_exact_fit(self):
        x = torch.arange(16.0).reshape(2, 8)
        cf = signal.chunk(signal.FeatureMap(x), 4)
        assert tuple(cf.data.shape) == (2, 4, 3)
        for j, s0 in enumerate((0, 2, 4)):
            assert torch.equal(cf.data[:, :, j], x[:, s0 : s0 + 4])

    def test_single_chunk(self):
        cf = signal.chunk(signal.FeatureMap(torch.ones(1, 4)), 4)
        assert tuple(cf.data.shape) == (1, 4, 1)

    def test_padded_tail_matches_enumeration(self):
        x = torch.randn(3, 9, dtype=torch.float64)
        cf = signal.chunk(signal.FeatureMap(x), 4)
        assert tuple(cf.data.shape) == (3, 4, 4)
        assert np.array_equal(cf.data.numpy(), brute_force_chunks(x.numpy(), 4))
        assert torch.all(cf.data[:, 3, 3] == 0)

    def test_ones_stay_ones(self):
        out = signal.unchunk(signal.chunk(signal.FeatureMap(torch.ones(1, 8)), 4))
        assert torch.equal(out.data, torch.ones(1, 8))

    def test_single_chunk_identity(self):
        x = torch.randn(2, 7)
        out = signal.unchunk(signal.chunk(signal.FeatureMap(x), 8))
        assert torch.equal(out.data, x)

    def test_odd_chunk_len_rejected(self):
        with pytest.raises(InvalidArgumentError):
            signal.chunk(signal.FeatureMap(torch.ones(1, 8)), 3)

    def test_bad_original_time(self):
        cf = signal.ChunkedFeature(torch.ones(1, 4, 2), original_time=9)
        with pytest.raises(InvalidStateError):
            signal.unchunk(cf)

    def test_empty_feature_rejected(self):
        with pytest.raises(InvalidArgumentError):
            signal.FeatureMap(torch.ones(2, 0))

    @settings(max_examples=60, deadline=None)
    @given(
        n=st.integers(1, 5),
        t=st.integers(1, 200),
        half=st.integers(1, 32),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_round_trip_property(self, n, t, half, seed):
        k = 2 * half
        x = torch.randn(n, t, generator=torch.Generator().manual_seed(seed))
        cf = signal.chunk(signal.FeatureMap(x), k)
        assert torch.allclose(signal.unchunk(cf).data, x, atol=1e-6, rtol=0)
        # verbatim content and exact zero padding
        assert np.array_equal(cf.data.numpy(), brute_force_chunks(x.numpy(), k))


class TestLogMel:
    def test_two_seconds(self):
        assert tuple(signal.log_mel(signal.Waveform(torch.randn(32000))).data.shape) == (80, 200)

    def test_silence_floor(self):
        mel = signal.log_mel(signal.Waveform(torch.zeros(32000, dtype=torch.float64))).data
        assert torch.all(mel == math.log(1e-10))

    def test_tone_lands_in_filter_containing_1khz(self):
        t = torch.arange(32000, dtype=torch.float64) / 16000
        mel = signal.log_mel(signal.Waveform(torch.sin(2 * math.pi * 1000 * t))).data
        arg = mel.argmax(dim=0)
        # interior frames (edge frames see reflect padding)
        assert torch.all(arg[2:-2] == arg[2])
        # independent check: band whose centre frequency is nearest 1 kHz
        centers = signal.mel_to_hz(
            np.linspace(0, signal.hz_to_mel(8000), signal.N_MELS + 2)
        )[1:-1]
        assert int(arg[2]) == int(np.argmin(np.abs(centers - 1000)))

    def test_deterministic(self):
        w = torch.randn(16000)
        a = signal.log_mel_spectrogram(w)
        b = signal.log_mel_spectrogram(w.clone())
        assert torch.equal(a, b)

    def test_batched_matches_single(self):
        w = torch.randn(3, 8000, dtype=torch.float64)
        batched = signal.log_mel_spectrogram(w)
        for i in range(3):
            assert torch.allclose(batched[i], signal.log_mel_spectrogram(w[i]))

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            signal.log_mel_spectrogram(torch.zeros(100))

    def test_filterbank_unit_peak(self):
        fb = signal.mel_filterbank()
        assert fb.shape == (80, 513)
        assert np.all(fb >= 0) and fb.max() <= 1.0 + 1e-12


class TestResample:
    def test_midpoint(self):
        e = signal.EmbeddingSeq(torch.tensor([[0.0, 2.0]]), 25.0)
        out = signal.resample_embedding(e, 3)
        assert torch.allclose(out.data, torch.tensor([[0.0, 1.0, 2.0]]))

    def test_identity(self):
        x = torch.randn(4, 7)
        assert torch.equal(signal.interpolate_frames(x, 7), x)

    @settings(max_examples=40, deadline=None)
    @given(src=st.integers(1, 30), dst=st.integers(1, 60), c=st.floats(-5, 5))
    def test_constants_and_endpoints(self, src, dst, c):
        x = torch.full((2, src), c, dtype=torch.float64)
        assert torch.allclose(signal.interpolate_frames(x, dst), torch.full((2, dst), c, dtype=torch.float64))
        if src > 1 and dst > 1:
            y = torch.randn(2, src, dtype=torch.float64)
            out = signal.interpolate_frames(y, dst)
            assert torch.allclose(out[:, 0], y[:, 0]) and torch.allclose(out[:, -1], y[:, -1])

    @settings(max_examples=30, deadline=None)
    @given(src=st.integers(1, 20), dst=st.integers(1, 40),
           a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_linearity(self, src, dst, a, b):
        e1 = torch.randn(3, src, dtype=torch.float64)
        e2 = torch.randn(3, src, dtype=torch.float64)
        lhs = signal.interpolate_frames(a * e1 + b * e2, dst)
        rhs = a * signal.interpolate_frames(e1, dst) + b * signal.interpolate_frames(e2, dst)
        assert torch.allclose(lhs, rhs, atol=1e-10)

    def test_video_to_mel_rate(self):
        e = signal.EmbeddingSeq(torch.randn(8, 50), 25.0)
        out = signal.upsample_to_mel(e, 200)
        assert out.frames == 200 and out.frame_rate == 100

    def test_single_frame_repeated(self):
        e = signal.EmbeddingSeq(torch.tensor([[3.0]]), 25.0)
        assert torch.equal(signal.upsample_to_mel(e, 4).data, torch.full((1, 4), 3.0))

    def test_repetition_order(self):
        e = signal.EmbeddingSeq(torch.tensor([[1.0, 2.0]]), 25.0)
        out = signal.upsample_to_mel(e, 8).data
        assert out.tolist() == [[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]]

    def test_non_integer_ratio(self):
        with pytest.raises(InvalidArgumentError):
            signal.upsample_to_mel(signal.EmbeddingSeq(torch.ones(1, 3), 30.0), 10)


class TestFold:
    def test_two_seconds(self):
        w = signal.fold_frames(signal.FeatureMap(torch.randn(160, 200)))
        assert len(w) == 32000

    def test_zero_column(self):
        f = torch.randn(160, 5)
        f[:, 2] = 0
        w = signal.fold(f)
        assert torch.all(w[320:480] == 0)
        assert torch.equal(w[160:320], f[:, 1])

    @settings(max_examples=30, deadline=None)
    @given(t=st.integers(1, 50), seed=st.integers(0, 1000))
    def test_bijection(self, t, seed):
        f = torch.randn(160, t, generator=torch.Generator().manual_seed(seed))
        assert torch.equal(signal.unfold(signal.fold(f)), f)
        w = torch.randn(160 * t)
        assert torch.equal(signal.fold(signal.unfold(w)), w)

    def test_wrong_channel_count(self):
        with pytest.raises(InvalidArgumentError):
            signal.fold_frames(signal.FeatureMap(torch.ones(80, 3)))
