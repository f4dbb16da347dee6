"""Audio front end: WAV parsing, energy VAD, log-spectrogram, deltas.

Produces the 3x256x100 feature cube for one second of 16 kHz speech:
channel 0 the log magnitude spectrogram, channels 1 and 2 its first and
second order regression deltas, normalized per channel.
"""

import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import (DomainError, EmptyVoiceError, FormatError, ShapeError,
                     UnsupportedFormatError, UnsupportedRateError,
                     VersionError)

SAMPLE_RATE = 16000
FRAME_LEN = 400          # 25 ms analysis window
HOP = 160                # 10 ms hop, i.e. 15 ms overlap
N_FFT = 512
N_BINS = 256             # bins 0..255, Nyquist bin dropped
TARGET_FRAMES = 100
VAD_FRAME = 160          # 10 ms VAD frames
DEFAULT_VAD_THRESHOLD = 0.05
LOG_FLOOR = 1e-10
DELTA_WINDOW = 2
CUBE_SHAPE = (3, N_BINS, TARGET_FRAMES)

FCUB_MAGIC = b"FCUB"
FCUB_VERSION = 1


@dataclass(frozen=True)
class AudioClip:
    """Mono float64 audio at 16 kHz, sample values in [-1, 1]."""
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedRateError(
                f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("clip contains non-finite samples")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise DomainError("clip samples exceed [-1, 1]")


def load_wav(path):
    """Read a 16-bit PCM mono 16 kHz WAV file as an AudioClip."""
    try:
        with wave.open(str(path), "rb") as wf:
            nch = wf.getnchannels()
            width = wf.getsampwidth()
            comp = wf.getcomptype()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as e:
        raise FormatError(f"{path}: not a RIFF/WAVE file ({e})") from e
    if comp != "NONE" or width != 2 or nch != 1:
        raise UnsupportedFormatError(
            f"{path}: need 16-bit PCM mono, got "
            f"comp={comp} width={width} channels={nch}")
    if rate != SAMPLE_RATE:
        raise UnsupportedRateError(
            f"{path}: sample rate {rate}, need {SAMPLE_RATE}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0)


def write_wav(path, clip):
    """Write an AudioClip as 16-bit PCM mono WAV."""
    pcm = np.clip(np.rint(clip.samples * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())


def _frame_energies(samples):
    """Mean-square energy of consecutive 10 ms frames, tail included."""
    n_full = samples.size // VAD_FRAME
    bounds = [(i * VAD_FRAME, (i + 1) * VAD_FRAME) for i in range(n_full)]
    if samples.size % VAD_FRAME:
        bounds.append((n_full * VAD_FRAME, samples.size))
    energies = np.array([np.mean(samples[a:b] ** 2) for a, b in bounds])
    return energies, bounds


def vad_trim(clip, rel_threshold=DEFAULT_VAD_THRESHOLD):
    """Drop frames quieter than rel_threshold times the loudest frame."""
    if not 0.0 < rel_threshold < 1.0:
        raise DomainError(f"rel_threshold must be in (0,1): {rel_threshold}")
    if clip.samples.size == 0:
        raise EmptyVoiceError("empty clip")
    energies, bounds = _frame_energies(clip.samples)
    max_e = energies.max()
    if max_e <= 0.0:
        raise EmptyVoiceError("no frame with nonzero energy")
    keep = energies >= rel_threshold * max_e
    kept = np.concatenate(
        [clip.samples[a:b] for (a, b), k in zip(bounds, keep) if k])
    return AudioClip(kept)


def spectrogram(clip):
    """Log magnitude spectrogram, shape (256, T), T = (len-400)//160 + 1."""
    x = clip.samples
    if x.size < FRAME_LEN:
        raise ShapeError(f"clip too short: {x.size} < {FRAME_LEN} samples")
    frames = np.lib.stride_tricks.sliding_window_view(x, FRAME_LEN)[::HOP]
    window = np.hamming(FRAME_LEN)
    spec = np.fft.rfft(frames * window, n=N_FFT, axis=1)
    mag = np.abs(spec[:, :N_BINS]).T
    return np.log(mag + LOG_FLOOR)


def fit_time(spec):
    """Reflect-pad or center-crop the time axis to exactly 100 columns."""
    if spec.ndim != 2 or spec.shape[0] != N_BINS:
        raise ShapeError(f"expected (256, T) spectrogram, got {spec.shape}")
    T = spec.shape[1]
    if T == TARGET_FRAMES:
        return spec.copy()
    if T > TARGET_FRAMES:
        start = (T - TARGET_FRAMES) // 2
        return spec[:, start:start + TARGET_FRAMES].copy()
    left = (TARGET_FRAMES - T) // 2
    right = TARGET_FRAMES - T - left
    if max(left, right) >= T:
        raise ShapeError(f"too few frames ({T}) to reflect-pad to 100")
    return np.pad(spec, ((0, 0), (left, right)), mode="reflect")


def deltas(spec):
    """Regression deltas over time, window N=2, edge frames replicated.

    delta_t = sum_{n=1..2} n*(c_{t+n} - c_{t-n}) / (2 * sum n^2)
    """
    if spec.ndim != 2:
        raise ShapeError(f"expected 2-d spectrogram, got {spec.ndim}-d")
    W = spec.shape[1]
    p = np.pad(spec, ((0, 0), (DELTA_WINDOW, DELTA_WINDOW)), mode="edge")
    return (1.0 * (p[:, 3:W + 3] - p[:, 1:W + 1])
            + 2.0 * (p[:, 4:W + 4] - p[:, 0:W])) / 10.0


def feature_cube(clip, rel_threshold=DEFAULT_VAD_THRESHOLD):
    """Full pipeline: VAD, first voiced second, spectrogram, deltas, stack.

    The stacked cube is normalized per channel to zero mean and unit
    variance (variance floor 1e-8).
    """
    voiced = vad_trim(clip, rel_threshold)
    if voiced.samples.size < SAMPLE_RATE:
        raise ShapeError(
            f"voiced audio shorter than 1 s: {voiced.samples.size} samples")
    one_sec = AudioClip(voiced.samples[:SAMPLE_RATE])
    static = fit_time(spectrogram(one_sec))
    d1 = deltas(static)
    d2 = deltas(d1)
    cube = np.stack([static, d1, d2])
    mean = cube.mean(axis=(1, 2), keepdims=True)
    var = cube.var(axis=(1, 2), keepdims=True)
    return (cube - mean) / np.sqrt(np.maximum(var, 1e-8))


def write_fcub(path, cube):
    """Serialize a feature cube: FCUB magic, version, dims, shape, f64 data."""
    cube = np.asarray(cube, dtype=np.float64)
    if cube.shape != CUBE_SHAPE:
        raise ShapeError(f"cube shape {cube.shape} != {CUBE_SHAPE}")
    with open(path, "wb") as f:
        f.write(FCUB_MAGIC)
        f.write(struct.pack("<II", FCUB_VERSION, 3))
        f.write(struct.pack("<3I", *CUBE_SHAPE))
        f.write(np.ascontiguousarray(cube, dtype="<f8").tobytes())


def read_fcub(path):
    """Read a feature cube written by write_fcub."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 24 or blob[:4] != FCUB_MAGIC:
        raise FormatError(f"{path}: missing FCUB magic")
    version, dims = struct.unpack_from("<II", blob, 4)
    if version != FCUB_VERSION:
        raise VersionError(f"{path}: FCUB version {version}, expected 1")
    if dims != 3:
        raise FormatError(f"{path}: FCUB dims {dims}, expected 3")
    shape = struct.unpack_from("<3I", blob, 12)
    if shape != CUBE_SHAPE:
        raise FormatError(f"{path}: FCUB shape {shape} != {CUBE_SHAPE}")
    n = 3 * 256 * 100
    if len(blob) != 24 + 8 * n:
        raise FormatError(f"{path}: truncated FCUB payload")
    data = np.frombuffer(blob, dtype="<f8", offset=24, count=n)
    return data.reshape(CUBE_SHAPE).copy()
