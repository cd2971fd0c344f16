"""Synthetic multichannel trials, preprocessing, trial files, spectrograms.

A trial is C channels x T timepoints with a binary class label.  The
generator plants band-limited oscillatory bursts into class-specific
channels on top of 1/f background noise and records a ground-truth mask of
the planted (informative) timepoints.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

TRIAL_MAGIC = b"SGTR"
TRIAL_FORMAT_VERSION = 1


class TrialFormatError(ValueError):
    """Raised on malformed or truncated trial files."""


@dataclass
class Trial:
    """One labeled recording: signal (C, T), label in {0, 1}, optional mask."""

    signal: np.ndarray
    label: int
    sample_rate: float
    ground_truth_mask: np.ndarray | None = None

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if self.signal.ndim != 2 or self.signal.shape[0] < 1 or self.signal.shape[1] < 1:
            raise ValueError(f"signal must be (C, T) with C,T >= 1, got shape {self.signal.shape}")
        if not np.all(np.isfinite(self.signal)):
            raise ValueError("signal contains non-finite values")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.ground_truth_mask is not None:
            self.ground_truth_mask = np.asarray(self.ground_truth_mask, dtype=bool)
            if self.ground_truth_mask.shape != (self.signal.shape[1],):
                raise ValueError(
                    f"mask length {self.ground_truth_mask.shape} != T={self.signal.shape[1]}")

    @property
    def n_channels(self) -> int:
        return self.signal.shape[0]

    @property
    def n_timepoints(self) -> int:
        return self.signal.shape[1]


def default_channel_map(n_channels: int) -> dict[int, tuple[int, ...]]:
    """Class 0 bursts on the leading third of channels, class 1 on the trailing third."""
    k = max(1, n_channels // 3)
    return {0: tuple(range(k)), 1: tuple(range(n_channels - k, n_channels))}


@dataclass
class GeneratorConfig:
    n_channels: int = 8
    n_timepoints: int = 400
    sample_rate: float = 100.0
    burst_band: tuple[float, float] = (10.0, 26.0)
    burst_count: tuple[int, int] = (1, 3)
    burst_duration: tuple[float, float] = (0.4, 0.9)
    snr: float = 1.5
    class_channel_map: dict[int, tuple[int, ...]] | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_channels < 1 or self.n_timepoints < 1:
            raise ValueError("n_channels and n_timepoints must be >= 1")
        lo, hi = self.burst_band
        if not 0.0 < lo < hi < self.sample_rate / 2:
            raise ValueError(f"burst_band {self.burst_band} must lie within "
                             f"(0, {self.sample_rate / 2})")
        if self.snr <= 0:
            raise ValueError(f"snr must be positive, got {self.snr}")
        if self.burst_count[0] < 0 or self.burst_count[0] > self.burst_count[1]:
            raise ValueError(f"bad burst_count range {self.burst_count}")
        if self.burst_duration[0] <= 0 or self.burst_duration[0] > self.burst_duration[1]:
            raise ValueError(f"bad burst_duration range {self.burst_duration}")
        if self.class_channel_map is None:
            self.class_channel_map = default_channel_map(self.n_channels)
        for lab, chans in self.class_channel_map.items():
            if lab not in (0, 1):
                raise ValueError(f"class_channel_map keys must be 0/1, got {lab!r}")
            for c in chans:
                if not 0 <= c < self.n_channels:
                    raise ValueError(f"channel {c} out of range for C={self.n_channels}")


def _pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Gaussian noise with ~1/f power shaping."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    shaping = np.arange(spec.size, dtype=np.float64)
    shaping[0] = 1.0
    shaping = shaping ** -0.5
    shaping[0] = 0.0  # no DC offset
    x = np.fft.irfft(spec * shaping, n=n)
    std = x.std()
    return x / std if std > 0 else x


def generate_trial(cfg: GeneratorConfig, label: int, trial_index: int = 0) -> Trial:
    """One synthetic trial; deterministic in (cfg.rng_seed, trial_index).

    Background is per-channel 1/f noise; bursts are Hann-windowed sinusoids
    at random frequencies within ``burst_band`` injected into the channels
    mapped to ``label``, scaled so the mean burst power over its window is
    ``snr`` times the (unit) background power.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    rng = np.random.default_rng((cfg.rng_seed, trial_index))
    c, t, rate = cfg.n_channels, cfg.n_timepoints, cfg.sample_rate

    signal = np.stack([_pink_noise(t, rng) for _ in range(c)])
    mask = np.zeros(t, dtype=bool)

    lo, hi = cfg.burst_count
    n_bursts = int(rng.integers(lo, hi + 1))
    channels = cfg.class_channel_map.get(label, ())
    for _ in range(n_bursts):
        freq = rng.uniform(*cfg.burst_band)
        dur = rng.uniform(*cfg.burst_duration)
        n = min(max(int(round(dur * rate)), 4), t)
        start = int(rng.integers(0, t - n + 1))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        grid = np.arange(n) / rate
        burst = np.hanning(n) * np.sin(2.0 * math.pi * freq * grid + phase)
        ms = np.mean(burst * burst)
        if ms > 0:
            burst *= math.sqrt(cfg.snr / ms)
        for ch in channels:
            signal[ch, start:start + n] += burst
        mask[start:start + n] = True

    return Trial(signal=signal, label=label, sample_rate=rate, ground_truth_mask=mask)


def generate_trials(cfg: GeneratorConfig, labels) -> list[Trial]:
    return [generate_trial(cfg, int(lab), i) for i, lab in enumerate(labels)]


def preprocess(trial: Trial,
               band: tuple[float, float] | None = (8.0, 30.0),
               target_rate: float = 100.0,
               crop: tuple[float, float] = (1.0, 3.5),
               channel_subset=None) -> Trial:
    """Band-pass (zero-phase Butterworth), decimate, crop, select channels.

    The filter is applied forward-backward so planted windows stay aligned
    with the mask.  Decimation is plain subsampling, valid because the
    band-pass already bounds content below the target Nyquist; downsampling
    without a band limit below target_rate/2 is rejected.  The mask is
    decimated by strict-majority vote within each decimation window and the
    channel subset is applied last.
    """
    rate = trial.sample_rate
    if band is not None:
        lo, hi = band
        if not 0.0 < lo < hi:
            raise ValueError(f"bad band {band}")
        if hi >= rate / 2:
            raise ValueError(f"band {band} above Nyquist {rate / 2} Hz")
        if rate < 2 * hi:
            raise ValueError(f"sample rate {rate} too low for band {band}")
    if target_rate <= 0 or target_rate > rate:
        raise ValueError(f"target_rate {target_rate} must be in (0, {rate}]")
    factor_f = rate / target_rate
    factor = int(round(factor_f))
    if abs(factor_f - factor) > 1e-9:
        raise ValueError(f"sample rate {rate} is not an integer multiple of "
                         f"target rate {target_rate}")
    if factor > 1 and (band is None or band[1] > target_rate / 2):
        raise ValueError(f"downsampling to {target_rate} Hz requires a band limited "
                         f"below {target_rate / 2} Hz")

    x = trial.signal
    if band is not None:
        sos = butter(4, band, btype="bandpass", fs=rate, output="sos")
        x = sosfiltfilt(sos, x, axis=1)

    t_dec = trial.n_timepoints // factor
    if factor > 1:
        x = x[:, :t_dec * factor:factor]
    else:
        x = x[:, :t_dec]
    mask = trial.ground_truth_mask
    if mask is not None:
        windows = mask[:t_dec * factor].reshape(t_dec, factor)
        mask = windows.sum(axis=1) > factor / 2

    i0 = int(round(crop[0] * target_rate))
    i1 = int(round(crop[1] * target_rate))
    if not 0 <= i0 < i1 <= t_dec:
        raise ValueError(f"crop {crop} s outside trial of {t_dec / target_rate} s "
                         f"at {target_rate} Hz")
    x = x[:, i0:i1]
    if mask is not None:
        mask = mask[i0:i1]

    if channel_subset is not None:
        idx = list(channel_subset)
        for ci in idx:
            if not 0 <= ci < x.shape[0]:
                raise ValueError(f"channel index {ci} out of range for C={x.shape[0]}")
        x = x[idx]

    return Trial(signal=np.ascontiguousarray(x), label=trial.label,
                 sample_rate=target_rate, ground_truth_mask=mask)


# ---------------------------------------------------------------------------
# trial files

_HEADER = struct.Struct("<4sII")
_TRIAL_HEAD = struct.Struct("<IIdBB")


def save_trials(path, trials) -> None:
    """Binary trial container; see load_trials for the layout."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRIAL_MAGIC, TRIAL_FORMAT_VERSION, len(trials)))
        for tr in trials:
            has_mask = tr.ground_truth_mask is not None
            fh.write(_TRIAL_HEAD.pack(tr.n_channels, tr.n_timepoints,
                                      tr.sample_rate, tr.label, int(has_mask)))
            fh.write(np.ascontiguousarray(tr.signal, dtype="<f8").tobytes())
            if has_mask:
                fh.write(tr.ground_truth_mask.astype(np.uint8).tobytes())


def load_trials(path) -> list[Trial]:
    """Read a trial container written by save_trials.

    Layout (little-endian): magic ``SGTR``, u32 version, u32 count; per trial
    u32 C, u32 T, f64 sample_rate, u8 label, u8 has_mask, C*T f64 signal
    values row-major by channel, then T mask bytes when present.
    """
    data = Path(path).read_bytes()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise TrialFormatError(
                f"truncated trial file at byte {off}: needed {n} bytes for {what}, "
                f"had {len(data) - off}")
        chunk = data[off:off + n]
        off += n
        return chunk

    magic, version, count = _HEADER.unpack(take(_HEADER.size, "header"))
    if magic != TRIAL_MAGIC:
        raise TrialFormatError(f"bad magic {magic!r} at byte 0: not a trial file")
    if version != TRIAL_FORMAT_VERSION:
        raise TrialFormatError(f"unsupported trial format version {version} "
                               f"(expected {TRIAL_FORMAT_VERSION})")
    trials = []
    for _ in range(count):
        c, t, rate, label, has_mask = _TRIAL_HEAD.unpack(take(_TRIAL_HEAD.size, "trial header"))
        sig = np.frombuffer(take(8 * c * t, "signal"), dtype="<f8").reshape(c, t).copy()
        mask = None
        if has_mask:
            mask = np.frombuffer(take(t, "mask"), dtype=np.uint8).astype(bool)
        trials.append(Trial(signal=sig, label=label, sample_rate=rate,
                            ground_truth_mask=mask))
    return trials


def save_trial_csv(path, trial: Trial) -> None:
    """One trial per CSV file: header ch0..chC-1,label,mask; one row per timepoint."""
    c = trial.n_channels
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"ch{i}" for i in range(c)] + ["label", "mask"])
        mask = trial.ground_truth_mask
        for t in range(trial.n_timepoints):
            row = [repr(float(v)) for v in trial.signal[:, t]]
            row.append(trial.label)
            row.append("" if mask is None else int(mask[t]))
            writer.writerow(row)


def load_trial_csv(path, sample_rate: float = 100.0) -> Trial:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TrialFormatError(f"{path}: empty CSV")
        n_ch = sum(1 for h in header if h.startswith("ch"))
        if n_ch == 0 or header[:n_ch] != [f"ch{i}" for i in range(n_ch)] \
                or header[n_ch:] != ["label", "mask"]:
            raise TrialFormatError(f"{path}: bad CSV header {header!r}")
        cols, labels, masks = [], [], []
        for row in reader:
            if not row:
                continue
            cols.append([float(v) for v in row[:n_ch]])
            labels.append(int(row[n_ch]))
            masks.append(row[n_ch + 1])
    if not cols:
        raise TrialFormatError(f"{path}: no data rows")
    signal = np.asarray(cols).T
    mask = None
    if any(m != "" for m in masks):
        mask = np.array([bool(int(m)) for m in masks])
    return Trial(signal=signal, label=labels[0], sample_rate=sample_rate,
                 ground_truth_mask=mask)


# ---------------------------------------------------------------------------
# spectrograms


def stft_spectrogram(signal, window_len: int, hop: int) -> np.ndarray:
    """Power spectrogram: |rfft(hann * frame)|^2, shape (window_len//2+1, frames)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"stft_spectrogram expects a 1-d signal, got shape {x.shape}")
    if window_len > x.size:
        raise ValueError(f"window_len {window_len} exceeds signal length {x.size}")
    if hop < 1:
        raise ValueError(f"hop must be >= 1, got {hop}")
    # periodic Hann
    window = 0.5 - 0.5 * np.cos(2.0 * math.pi * np.arange(window_len) / window_len)
    frames = 1 + (x.size - window_len) // hop
    segs = np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop][:frames]
    spec = np.abs(np.fft.rfft(segs * window, axis=1)) ** 2
    return spec.T


def band_power(signal, sample_rate: float, band: tuple[float, float]) -> float:
    """Mean power within a frequency band via the periodogram."""
    x = np.asarray(signal, dtype=np.float64)
    spec = np.abs(np.fft.rfft(x)) ** 2 / x.size
    freqs = np.fft.rfftfreq(x.size, d=1.0 / sample_rate)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    return float(spec[sel].sum()) / x.size
