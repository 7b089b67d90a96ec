"""Synthetic binaural acoustics on the grid world.

The propagation model is deliberately simple: a direct pulse whose delay and
level follow the geodesic (through-doorway) distance, a handful of early
reflections, and a diffuse exponentially decaying tail. Direction of arrival
is the first edge of a shortest path to the source, expressed in the agent
frame, and is encoded as an interaural level difference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

from .env import (
    HEADING_VECTORS,
    AgentPose,
    Cell,
    EnvError,
    GridEnvironment,
    first_path_step,
)

SAMPLE_RATE = 16000
SPEED_OF_SOUND = 343.0
STFT_HOP = 160
STFT_WINDOW = 512
DOWNSAMPLE = 4
LOG_EPS = 1e-8
DIRECT_WINDOW_S = 0.003
RIR_SECONDS = 0.3
NUM_DOA_BINS = 36
# |x| at or below this counts as silence (FFT round-off)
SILENCE_ATOL = 1e-12
_DIRECT_CONV_MAX = 256  # below this many output samples direct convolution beats the FFT


class AudioError(Exception):
    pass


@dataclass
class ImpulseResponse:
    left: np.ndarray
    right: np.ndarray
    sample_rate: int = SAMPLE_RATE
    direct_onset: int = 0
    unreachable: bool = False


@dataclass
class BinauralAudio:
    left: np.ndarray
    right: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if len(self.left) != len(self.right):
            raise AudioError("channel lengths differ")


@dataclass
class Sound:
    name: str
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    split: str = "train"
    generator: str = ""
    params: dict = field(default_factory=dict)


@dataclass
class Spectrogram:
    data: np.ndarray  # (freq, time, 2)

    @property
    def freq_bins(self) -> int:
        return self.data.shape[0]

    @property
    def time_frames(self) -> int:
        return self.data.shape[1]


# propagation ----------------------------------------------------------------


def arrival_angle(env: GridEnvironment, source: Cell, pose: AgentPose) -> float | None:
    """Direct-path arrival angle in degrees, clockwise from straight ahead.

    0 at the source itself; ``None`` when the source is unreachable.
    """
    if pose.cell == source:
        return 0.0
    nxt = first_path_step(env, pose.cell, source)
    if nxt is None:
        return None
    d = (nxt[0] - pose.cell[0], nxt[1] - pose.cell[1])
    world_heading = HEADING_VECTORS.index(d)
    return float(((world_heading - pose.heading) % 4) * 90)


def ild_gains(angle_deg: float) -> tuple[float, float]:
    """Left/right gains summing to one; equal for sources ahead or behind."""
    phi = math.pi / 4 * (1.0 + math.sin(math.radians(angle_deg)))
    return math.cos(phi) ** 2, math.sin(phi) ** 2


def _local_openness(env: GridEnvironment, cell: Cell, radius: int = 3) -> int:
    x, y = cell
    win = env.occupancy[max(0, y - radius) : y + radius + 1, max(0, x - radius) : x + radius + 1]
    return int((~win).sum())


def synthesize_rir(env: GridEnvironment, source: Cell, pose: AgentPose,
                   sample_rate: int = SAMPLE_RATE) -> ImpulseResponse:
    n = int(RIR_SECONDS * sample_rate)
    if not (env.is_free(source) and env.is_free(pose.cell)):
        raise EnvError("source and agent must be on free cells")
    hops = int(env.distance_field(source)[pose.cell[1], pose.cell[0]])
    if hops < 0:
        return ImpulseResponse(np.zeros(n), np.zeros(n), sample_rate, 0, unreachable=True)
    dist = hops * env.cell_size
    onset = int(round(dist / SPEED_OF_SOUND * sample_rate))
    amp = 1.0 / (1.0 + dist)
    g_left, g_right = ild_gains(arrival_angle(env, source, pose))
    n = max(n, onset + int(0.1 * sample_rate))
    left, right = np.zeros(n), np.zeros(n)
    left[onset] += amp * g_left
    right[onset] += amp * g_right

    rng = np.random.default_rng(
        [env.seed & 0xFFFFFFFF, source[0], source[1], pose.cell[0], pose.cell[1], pose.heading]
    )
    openness = _local_openness(env, pose.cell)
    # reflections start after the direct-sound window so they never leak into it
    first_refl = onset + int(math.ceil(DIRECT_WINDOW_S * sample_rate)) + 16
    refl_span = int((0.004 + 0.0004 * openness) * sample_rate)
    n_refl = int(rng.integers(2, 6))
    delays = np.sort(rng.integers(0, refl_span, size=n_refl)) + first_refl
    for k, dly in enumerate(delays):
        a = amp * rng.uniform(0.15, 0.45) * 0.8**k
        split = rng.uniform(0.25, 0.75)
        left[dly] += a * split
        right[dly] += a * (1 - split)

    tail_start = int(delays[-1]) + 1
    tau = 0.02 + 0.004 * openness
    t = np.arange(n - tail_start) / sample_rate
    env_curve = 0.08 * amp * np.exp(-t / tau)
    left[tail_start:] += env_curve * rng.standard_normal(len(t))
    right[tail_start:] += env_curve * rng.standard_normal(len(t))
    return ImpulseResponse(left, right, sample_rate, onset)


# rendering ------------------------------------------------------------------


def _convolve_exact_prefix(x: np.ndarray, h: np.ndarray, length: int) -> np.ndarray:
    """FFT convolution truncated to ``length`` with an exactly silent prefix before h's first tap."""
    out = np.zeros(length)
    nz = np.flatnonzero(h)
    if len(nz) == 0 or len(x) == 0:
        return out
    k0 = int(nz[0])
    if k0 >= length:
        return out
    need = length - k0
    if need <= _DIRECT_CONV_MAX:
        y = np.convolve(x[:need], h[k0 : k0 + need])[:need]
    else:
        y = fftconvolve(x[:need], h[k0 : k0 + need])[:need]
    out[k0 : k0 + len(y)] = y
    return out


def _as_samples(src, sample_rate: int) -> np.ndarray:
    if isinstance(src, Sound):
        if src.sample_rate != sample_rate:
            raise AudioError(f"sample rate mismatch: {src.sample_rate} vs {sample_rate}")
        return np.asarray(src.samples, dtype=np.float64)
    return np.asarray(src, dtype=np.float64)


def render_audio(rir: ImpulseResponse, src, distractors=(), mic_noise_sigma: float = 0.0,
                 rng: np.random.Generator | None = None, length: int | None = None) -> BinauralAudio:
    """Convolve each source with its response, sum, add microphone noise; 1 second out.

    ``length`` truncates the output. Noise is drawn for the full second either
    way, so a prefix render matches the full render up to rounding.
    """
    sr = rir.sample_rate
    full = sr
    length = full if length is None else min(int(length), full)
    left = np.zeros(length)
    right = np.zeros(length)
    for r, s in [(rir, src), *distractors]:
        if r.sample_rate != sr:
            raise AudioError("impulse responses disagree on sample rate")
        x = _as_samples(s, sr)
        left += _convolve_exact_prefix(x, r.left, length)
        right += _convolve_exact_prefix(x, r.right, length)
    if mic_noise_sigma > 0:
        if rng is None:
            raise AudioError("microphone noise needs an rng")
        left += rng.normal(0.0, mic_noise_sigma, full)[:length]
        right += rng.normal(0.0, mic_noise_sigma, full)[:length]
    return BinauralAudio(left, right, sr)


def stft_magnitude(x: np.ndarray, hop: int = STFT_HOP, win: int = STFT_WINDOW) -> np.ndarray:
    """Centered (reflect-padded) Hann STFT magnitude, shape (win//2+1, 1 + len//hop)."""
    pad = win // 2
    xp = np.pad(np.asarray(x, dtype=np.float64), pad, mode="reflect")
    n_frames = 1 + len(x) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, win)[::hop][:n_frames]
    window = np.hanning(win + 1)[:-1]  # periodic Hann
    return np.abs(np.fft.rfft(frames * window, axis=1)).T


def block_mean(m: np.ndarray, k: int) -> np.ndarray:
    """Mean over k x k blocks; ragged edge blocks average only the entries they hold."""
    r, c = m.shape
    rr, cc = -(-r // k), -(-c // k)
    padded = np.zeros((rr * k, cc * k))
    padded[:r, :c] = m
    ones = np.zeros_like(padded)
    ones[:r, :c] = 1.0
    sums = padded.reshape(rr, k, cc, k).sum(axis=(1, 3))
    counts = ones.reshape(rr, k, cc, k).sum(axis=(1, 3))
    return sums / counts


def spectrogram(audio: BinauralAudio) -> Spectrogram:
    if audio.sample_rate != SAMPLE_RATE:
        raise AudioError(f"spectrograms are defined for {SAMPLE_RATE} Hz audio, got {audio.sample_rate} Hz")
    if len(audio.left) != audio.sample_rate:
        raise AudioError(f"expected 1 s of audio ({audio.sample_rate} samples), got {len(audio.left)}")
    chans = []
    for x in (audio.left, audio.right):
        mag = block_mean(stft_magnitude(x), DOWNSAMPLE)
        chans.append(np.log(mag + LOG_EPS))
    return Spectrogram(np.stack(chans, axis=-1).astype(np.float32))


def direct_window_length(sample_rate: int) -> int:
    return int(round(DIRECT_WINDOW_S * sample_rate))


def direct_onset_sample(audio: BinauralAudio) -> int | None:
    """Earliest non-silent sample over both ears, or None for silence."""
    firsts = []
    for x in (audio.left, audio.right):
        nz = np.flatnonzero(np.abs(x) > SILENCE_ATOL)
        if len(nz):
            firsts.append(int(nz[0]))
    return min(firsts) if firsts else None


def direct_intensity(audio: BinauralAudio) -> float:
    """RMS of the first 3 ms after the earliest non-silent sample, averaged over both ears."""
    n0 = direct_onset_sample(audio)
    if n0 is None:
        return 0.0
    w = direct_window_length(audio.sample_rate)
    rms = [math.sqrt(float(np.mean(np.square(x[n0 : n0 + w])))) for x in (audio.left, audio.right)]
    return 0.5 * (rms[0] + rms[1])


def ground_truth_doa(env: GridEnvironment, source: Cell, pose: AgentPose,
                     noise_sigma_deg: float = 0.0, rng: np.random.Generator | None = None) -> int:
    """Direct-path arrival direction binned into 36 ten-degree bins (0 = ahead, 9 = right)."""
    angle = arrival_angle(env, source, pose)
    if angle is None:
        raise AudioError("source unreachable")
    if noise_sigma_deg > 0:
        if rng is None:
            raise AudioError("angular noise needs an rng")
        angle += float(rng.normal(0.0, noise_sigma_deg))
    return int(round(angle / (360 / NUM_DOA_BINS))) % NUM_DOA_BINS


def doa_bin_angle(bin_index: int) -> float:
    return bin_index * 360.0 / NUM_DOA_BINS


# source library ------------------------------------------------------------


def _normalize(x: np.ndarray, rms: float = 0.1) -> np.ndarray:
    return x * (rms / math.sqrt(float(np.mean(x**2))))


def make_sound(generator: str, params: dict, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Procedural 1-second mono waveform; every generator starts away from zero."""
    t = np.arange(sample_rate) / sample_rate
    if generator == "tone":
        f0 = params["f0"]
        x = sum(
            (0.6**k) * np.sin(2 * np.pi * f0 * (k + 1) * t + 0.7 + k)
            for k in range(params.get("harmonics", 3))
        )
    elif generator == "ring":
        # two-tone ring with amplitude modulation that never fully closes
        x = (np.sin(2 * np.pi * params["f1"] * t + 0.9) + np.sin(2 * np.pi * params["f2"] * t + 0.4))
        x *= 0.6 + 0.4 * np.sin(2 * np.pi * params["am"] * t + 1.2)
    elif generator == "chirp":
        f0, f1 = params["f0"], params["f1"]
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t**2) + 0.8
        x = np.sin(phase)
    elif generator == "noise_band":
        rng = np.random.default_rng(params["seed"])
        spec = np.fft.rfft(rng.standard_normal(sample_rate))
        freqs = np.fft.rfftfreq(sample_rate, 1.0 / sample_rate)
        spec[(freqs < params["lo"]) | (freqs > params["hi"])] = 0
        x = np.fft.irfft(spec, n=sample_rate)
        if abs(x[0]) < 1e-3 * np.abs(x).max():
            x = np.roll(x, -int(np.argmax(np.abs(x) > 0.1 * np.abs(x).max())))
    else:
        raise AudioError(f"unknown generator {generator!r}")
    return _normalize(np.asarray(x, dtype=np.float64))


def _library_specs() -> list[tuple[str, str, dict, str]]:
    specs = [("telephone", "ring", {"f1": 440.0, "f2": 480.0, "am": 20.0}, "train")]
    # splits use disjoint parameter ranges so test sounds are genuinely unheard
    ranges = {"train": (150.0, 1200.0), "val": (1300.0, 1900.0), "test": (2000.0, 3400.0)}
    counts = {"train": 23, "val": 6, "test": 10}
    for split, (lo, hi) in ranges.items():
        n = counts[split]
        freqs = np.linspace(lo, hi, n)
        for i, f in enumerate(freqs):
            kind = ("tone", "chirp", "noise_band", "ring")[i % 4]
            f = float(round(f, 1))
            if kind == "tone":
                specs.append((f"tone_{f:g}", kind, {"f0": f, "harmonics": 3}, split))
            elif kind == "chirp":
                specs.append((f"chirp_{f:g}", kind, {"f0": f, "f1": f * 1.8}, split))
            elif kind == "noise_band":
                specs.append((f"noise_{f:g}", kind, {"lo": f, "hi": f * 1.5, "seed": int(f)}, split))
            else:
                specs.append((f"ring_{f:g}", kind, {"f1": f, "f2": f * 1.09, "am": 15.0 + i}, split))
    return specs


class SourceLibrary:
    """Named procedural sounds with disjoint train/val/test splits."""

    def __init__(self, sample_rate: int = SAMPLE_RATE):
        self.sample_rate = sample_rate
        self._sounds: dict[str, Sound] = {}
        for name, gen, params, split in _library_specs():
            self._sounds[name] = Sound(name, make_sound(gen, params, sample_rate), sample_rate,
                                       split, gen, params)

    def __getitem__(self, name: str) -> Sound:
        return self._sounds[name]

    def names(self, split: str | None = None) -> list[str]:
        return [n for n, s in self._sounds.items() if split is None or s.split == split]

    def manifest(self) -> list[dict]:
        return [{"name": s.name, "generator": s.generator, "params": s.params, "split": s.split}
                for s in self._sounds.values()]

    def write_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=1) + "\n")


def write_wav(path: str | Path, audio: BinauralAudio) -> None:
    data = np.stack([audio.left, audio.right], axis=1)
    peak = max(1e-9, float(np.abs(data).max()))
    scale = min(1.0, 0.99 / peak)
    wavfile.write(str(path), audio.sample_rate, np.round(data * scale * 32767).astype(np.int16))
