import numpy as np
import pytest

from slimsiam.errors import DomainError
from slimsiam.features import SAMPLE_RATE, feature_cube, load_wav
from slimsiam.metrics import make_trials
from slimsiam.synth import (
    FORMANT_BANDS,
    SpeakerProfile,
    envelope,
    speaker_id,
    synth_dataset,
    synth_speaker,
    synth_utterance,
    utt_id,
    utterance_f0,
    write_dataset,
)


class TestSpeakerProfile:
    def test_deterministic(self):
        assert synth_speaker(7) == synth_speaker(7)

    def test_ranges(self):
        for seed in range(200):
            p = synth_speaker(seed)
            assert 90.0 <= p.f0 <= 255.0
            for (lo, hi), f in zip(FORMANT_BANDS, p.formants):
                assert lo <= f <= hi
            for g in p.gains:
                assert 0.5 <= g <= 1.0

    def test_formants_strictly_increasing(self):
        for seed in range(1000):
            f = synth_speaker(seed).formants
            assert f[0] < f[1] < f[2]

    def test_profiles_distinct(self):
        profiles = [synth_speaker(s) for s in range(100)]
        f0s = {p.f0 for p in profiles}
        assert len(f0s) == 100

    def test_invalid_profile_rejected(self):
        with pytest.raises(DomainError):
            SpeakerProfile(50.0, (500.0, 1500.0, 2500.0), (1.0, 1.0, 1.0), 0)
        with pytest.raises(DomainError):
            SpeakerProfile(120.0, (1500.0, 500.0, 2500.0), (1.0, 1.0, 1.0), 0)


class TestUtterance:
    def test_deterministic(self):
        p = synth_speaker(3)
        a = synth_utterance(p, 0)
        b = synth_utterance(p, 0)
        assert np.array_equal(a.samples, b.samples)

    def test_one_second_peak_normalized(self):
        clip = synth_utterance(synth_speaker(1), 4)
        assert clip.samples.shape == (SAMPLE_RATE,)
        assert np.max(np.abs(clip.samples)) == pytest.approx(0.9)

    def test_utterances_differ_within_speaker(self):
        p = synth_speaker(5)
        a = synth_utterance(p, 0)
        b = synth_utterance(p, 1)
        assert not np.array_equal(a.samples, b.samples)

    def test_realized_f0_matches_helper(self):
        for seed in range(20):
            p = synth_speaker(seed)
            f0 = utterance_f0(p, seed + 100)
            assert abs(f0 - p.f0) <= 0.03 * p.f0 + 1e-9
            assert f0 != p.f0 or seed is None  # jitter draw is generic

    def test_spectral_peak_on_harmonic(self):
        # 1 s at 16 kHz gives 1 Hz bins, so the dominant partial should
        # land within 2 bins of a multiple of the realized fundamental.
        for seed in (0, 1, 2, 3, 4):
            p = synth_speaker(seed)
            clip = synth_utterance(p, 9)
            f0 = utterance_f0(p, 9)
            mag = np.abs(np.fft.rfft(clip.samples))
            peak_hz = float(np.argmax(mag[: 4100]))
            k = round(peak_hz / f0)
            assert k >= 1
            assert abs(peak_hz - k * f0) <= 2.0

    def test_envelope_shared_across_utterances(self):
        # Smoothed log spectra of two utterances of one speaker should
        # correlate far better than spectra of different speakers.
        def smooth_logspec(clip):
            mag = np.abs(np.fft.rfft(clip.samples))[:4000]
            kern = np.ones(101) / 101.0
            return np.log(np.convolve(mag, kern, mode="same") + 1e-10)

        pa = synth_speaker(11)
        pb = synth_speaker(12)
        sa0 = smooth_logspec(synth_utterance(pa, 0))
        sa1 = smooth_logspec(synth_utterance(pa, 1))
        sb0 = smooth_logspec(synth_utterance(pb, 0))
        same = np.corrcoef(sa0, sa1)[0, 1]
        cross = np.corrcoef(sa0, sb0)[0, 1]
        assert same > cross

    def test_envelope_raised_at_formants(self):
        for seed in range(10):
            p = synth_speaker(seed)
            at_centers = envelope(p, np.array(p.formants))
            for v, g in zip(at_centers, p.gains):
                assert v >= g  # own Gaussian contributes its full gain
            # far from every formant only the floor and distant tails remain
            far = float(envelope(p, np.array([7000.0]))[0])
            assert far < 0.06


class TestDataset:
    def test_shape_and_determinism(self):
        a = synth_dataset(4, 3, master_seed=42)
        b = synth_dataset(4, 3, master_seed=42)
        assert len(a.speakers) == 4
        assert all(len(u) == 3 for u in a.utterances)
        for ua, ub in zip(a.utterances, b.utterances):
            for ca, cb in zip(ua, ub):
                assert np.array_equal(ca.samples, cb.samples)

    def test_master_seed_changes_everything(self):
        a = synth_dataset(2, 2, master_seed=0)
        b = synth_dataset(2, 2, master_seed=1)
        assert a.speakers[0].f0 != b.speakers[0].f0

    def test_bad_counts_rejected(self):
        with pytest.raises(DomainError):
            synth_dataset(0, 5, master_seed=0)
        with pytest.raises(DomainError):
            synth_dataset(5, 0, master_seed=0)

    def test_wav_tree_roundtrip(self, tmp_path):
        ds = synth_dataset(2, 2, master_seed=9)
        rows = write_dataset(ds, tmp_path)
        assert len(rows) == 4
        assert rows[0] == ("spk000", "utt000", str(tmp_path / "spk000" / "utt000.wav"))
        clip = load_wav(tmp_path / speaker_id(1) / f"{utt_id(1)}.wav")
        # 16-bit quantization only
        assert np.max(np.abs(clip.samples - ds.utterances[1][1].samples)) <= 1.0 / 32768.0

    def test_feature_space_separability(self):
        # Same-speaker cube distances should sit below cross-speaker ones
        # on average, otherwise no verifier could learn from this data.
        ds = synth_dataset(10, 4, master_seed=7)
        cubes = {}
        by_speaker = {}
        for i, clips in enumerate(ds.utterances):
            sid = speaker_id(i)
            by_speaker[sid] = []
            for j, clip in enumerate(clips):
                uid = f"{sid}/{utt_id(j)}"
                by_speaker[sid].append(uid)
                cubes[uid] = feature_cube(clip)
        trials = make_trials(by_speaker, n_genuine=50, n_impostor=50, seed=3)
        genuine, impostor = [], []
        for t in trials.trials:
            d = float(np.linalg.norm(cubes[t.utt_a] - cubes[t.utt_b]))
            (genuine if t.label == 1 else impostor).append(d)
        assert np.mean(genuine) < np.mean(impostor)
