"""Deterministic synthetic speakers: harmonic series shaped by formants.

Each speaker is a fundamental frequency plus three formant resonances.
An utterance is one second of the speaker's harmonic stack with random
phases, a small fundamental jitter, and additive white noise, so two
utterances of one speaker differ sample-wise but share their spectral
envelope. Everything derives from integer seeds; regenerating with the
same seeds is bit-identical.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .features import SAMPLE_RATE, AudioClip, write_wav

F0_LOW, F0_HIGH = 90.0, 255.0
FORMANT_BANDS = ((300.0, 1000.0), (1000.0, 2200.0), (2200.0, 3400.0))
FORMANT_WIDTH = 150.0          # Gaussian envelope std dev, Hz
ENVELOPE_FLOOR = 0.05          # keeps every partial audible
MAX_PARTIAL_HZ = 4000.0
F0_JITTER = 0.03
SNR_DB = 20.0
PEAK = 0.9


@dataclass(frozen=True)
class SpeakerProfile:
    f0: float
    formants: tuple
    gains: tuple
    seed: int

    def __post_init__(self):
        if not F0_LOW <= self.f0 <= F0_HIGH:
            raise DomainError(f"f0 {self.f0} outside [{F0_LOW}, {F0_HIGH}]")
        if list(self.formants) != sorted(set(self.formants)):
            raise DomainError("formants must be strictly increasing")


@dataclass
class SynthDataset:
    speakers: list
    utterances: list          # utterances[i][j] is clip j of speaker i
    master_seed: int


def synth_speaker(seed):
    """Draw a speaker profile from fixed uniform ranges."""
    rng = np.random.Generator(np.random.PCG64(seed))
    f0 = float(rng.uniform(F0_LOW, F0_HIGH))
    formants = tuple(float(rng.uniform(lo, hi)) for lo, hi in FORMANT_BANDS)
    gains = tuple(float(rng.uniform(0.5, 1.0)) for _ in FORMANT_BANDS)
    return SpeakerProfile(f0, formants, gains, int(seed))


def _utterance_rng(profile, utterance_seed):
    ss = np.random.SeedSequence((profile.seed, int(utterance_seed)))
    return np.random.Generator(np.random.PCG64(ss))


def utterance_f0(profile, utterance_seed):
    """The jittered fundamental actually used by synth_utterance."""
    rng = _utterance_rng(profile, utterance_seed)
    return profile.f0 * (1.0 + float(rng.uniform(-F0_JITTER, F0_JITTER)))


def envelope(profile, freqs):
    """Formant amplitude envelope evaluated at freqs (Hz)."""
    freqs = np.asarray(freqs, dtype=np.float64)
    env = np.full(freqs.shape, ENVELOPE_FLOOR)
    for fc, g in zip(profile.formants, profile.gains):
        env = env + g * np.exp(-0.5 * ((freqs - fc) / FORMANT_WIDTH) ** 2)
    return env


def synth_utterance(profile, utterance_seed):
    """One second at 16 kHz: jittered harmonics, formant-shaped, noisy.

    Draw order (jitter, phases, noise) is fixed so utterance_f0 can
    recover the realized fundamental independently.
    """
    rng = _utterance_rng(profile, utterance_seed)
    f0 = profile.f0 * (1.0 + float(rng.uniform(-F0_JITTER, F0_JITTER)))
    n_partials = int(MAX_PARTIAL_HZ // f0)
    freqs = f0 * np.arange(1, n_partials + 1)
    amps = envelope(profile, freqs)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_partials)
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    sig = (amps[:, None]
           * np.sin(2.0 * np.pi * freqs[:, None] * t[None, :]
                    + phases[:, None])).sum(axis=0)
    p_sig = float(np.mean(sig ** 2))
    sigma = np.sqrt(p_sig / 10.0 ** (SNR_DB / 10.0))
    x = sig + rng.normal(0.0, sigma, size=SAMPLE_RATE)
    x = PEAK * x / np.max(np.abs(x))
    return AudioClip(x)


def _child_seed(*entropy):
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def synth_dataset(n_speakers, n_utt, master_seed):
    """Expand a master seed into n_speakers x n_utt deterministic clips."""
    if n_speakers < 1 or n_utt < 1:
        raise DomainError("need at least one speaker and one utterance")
    speakers = []
    utterances = []
    for i in range(n_speakers):
        profile = synth_speaker(_child_seed(master_seed, 1, i))
        speakers.append(profile)
        utterances.append([synth_utterance(profile, j)
                           for j in range(n_utt)])
    return SynthDataset(speakers, utterances, master_seed)


def speaker_id(i):
    return f"spk{i:03d}"


def utt_id(j):
    return f"utt{j:03d}"


def write_dataset(ds, out_dir):
    """Write <out>/<speaker_id>/<utt_id>.wav; returns manifest rows."""
    rows = []
    for i, clips in enumerate(ds.utterances):
        sid = speaker_id(i)
        d = out_dir / sid
        d.mkdir(parents=True, exist_ok=True)
        for j, clip in enumerate(clips):
            uid = utt_id(j)
            path = d / f"{uid}.wav"
            write_wav(path, clip)
            rows.append((sid, uid, str(path)))
    return rows
