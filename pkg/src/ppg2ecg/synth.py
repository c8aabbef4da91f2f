"""Synthetic paired ECG/PPG corpus with ground-truth beat times.

Each heartbeat stamps a PQRST complex (sum of five Gaussians) into the ECG
channel and a systolic+dicrotic pulse pair into the PPG channel, the latter
delayed by the pulse-arrival-time lag. Beat schedules follow a
piecewise-constant BPM profile. The shapes are tuned for detector
friendliness, not physiological fidelity.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp

# (amplitude, offset_ms, width_ms) per wave
PQRST = (
    (0.08, -200.0, 40.0),   # P
    (-0.10, -40.0, 12.0),   # Q
    (1.00, 0.0, 20.0),      # R
    (-0.15, 40.0, 12.0),    # S
    (0.25, 300.0, 70.0),    # T
)
SYSTOLIC = (1.00, 0.0, 55.0)
DICROTIC = (0.30, 220.0, 70.0)

BPM_RANGE = (30.0, 220.0)
PAT_RANGE_MS = (100.0, 400.0)


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 10
    duration_s: float = 60.0
    # (seconds, bpm) spans; the last span stretches to the end of the record
    hr_profile: tuple = ((20.0, 60.0), (20.0, 75.0), (20.0, 90.0))
    pat_ms: float = 250.0
    noise_std_ecg: float = 0.0
    noise_std_ppg: float = 0.0
    # per-subject constant BPM shift drawn uniformly from +-this value
    hr_jitter_bpm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        _validate_profile(self.hr_profile)
        if not PAT_RANGE_MS[0] <= self.pat_ms <= PAT_RANGE_MS[1]:
            raise ValueError(f"pat_ms {self.pat_ms} outside {PAT_RANGE_MS}")
        if self.noise_std_ecg < 0 or self.noise_std_ppg < 0:
            raise ValueError("noise std must be non-negative")
        if self.hr_jitter_bpm < 0:
            raise ValueError("hr_jitter_bpm must be non-negative")


def _validate_profile(hr_profile):
    if not hr_profile:
        raise ValueError("hr_profile must have at least one span")
    for span, bpm in hr_profile:
        if span <= 0:
            raise ValueError("hr_profile spans must be positive")
        if not BPM_RANGE[0] <= bpm <= BPM_RANGE[1]:
            raise ValueError(f"BPM {bpm} outside {BPM_RANGE}")


def beat_times_from_profile(hr_profile, duration_s, bpm_shift=0.0):
    """Walk a piecewise-constant BPM trajectory; first beat half an interval in."""
    _validate_profile(hr_profile)
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    bounds = []
    t0 = 0.0
    for span, bpm in hr_profile:
        bounds.append((t0, t0 + span, bpm))
        t0 += span

    def bpm_at(t):
        for lo, hi, bpm in bounds:
            if lo <= t < hi:
                break
        else:
            bpm = bounds[-1][2]
        return float(np.clip(bpm + bpm_shift, *BPM_RANGE))

    beats = []
    t = 0.5 * 60.0 / bpm_at(0.0)
    while t < duration_s:
        beats.append(t)
        t += 60.0 / bpm_at(t)
    return np.asarray(beats, np.float64)


def _validate_beats(beat_times):
    beats = np.asarray(beat_times, np.float64).ravel()
    if beats.size and (np.any(np.diff(beats) <= 0) or beats[0] < 0):
        raise ValueError("beat times must be strictly increasing and >= 0")
    return beats


def _stamp(x, fs, centers_s, amp, width_ms):
    """Add amp * gaussian(width) at each center, windowed to +-4 sigma."""
    sigma = width_ms / 1000.0
    half = max(1, int(round(4.0 * sigma * fs)))
    n = x.size
    for c in centers_s:
        mid = c * fs
        lo = max(0, int(np.floor(mid)) - half)
        hi = min(n, int(np.ceil(mid)) + half + 1)
        if lo >= hi:
            continue
        t = np.arange(lo, hi, dtype=np.float64) / fs
        x[lo:hi] += amp * np.exp(-0.5 * np.square((t - c) / sigma))


def synth_ecg(beat_times, fs=dsp.TARGET_FS, duration_s=None, noise_std=0.0,
              rng=None):
    """ECG samples with an R wave exactly at each beat time."""
    beats = _validate_beats(beat_times)
    if duration_s is None:
        duration_s = float(beats[-1]) + 0.5 if beats.size else 1.0
    x = np.zeros(int(round(duration_s * fs)), np.float64)
    for amp, off_ms, width_ms in PQRST:
        _stamp(x, fs, beats + off_ms / 1000.0, amp, width_ms)
    if noise_std > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        x += rng.normal(0.0, noise_std, x.size)
    return x


def synth_ppg(beat_times, pat_ms, fs=dsp.TARGET_FS, duration_s=None,
              noise_std=0.0, rng=None):
    """PPG samples whose systolic peak trails each beat by the PAT lag."""
    beats = _validate_beats(beat_times)
    if not PAT_RANGE_MS[0] <= pat_ms <= PAT_RANGE_MS[1]:
        raise ValueError(f"pat_ms {pat_ms} outside {PAT_RANGE_MS}")
    lag = pat_ms / 1000.0
    if duration_s is None:
        duration_s = float(beats[-1]) + lag + 0.5 if beats.size else 1.0
    x = np.zeros(int(round(duration_s * fs)), np.float64)
    for amp, off_ms, width_ms in (SYSTOLIC, DICROTIC):
        _stamp(x, fs, beats + lag + off_ms / 1000.0, amp, width_ms)
    if noise_std > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        x += rng.normal(0.0, noise_std, x.size)
    return x


@dataclass
class SynthCorpus:
    records: list                 # RawRecord, [ecg_0, ppg_0, ecg_1, ppg_1, ...]
    beat_times: dict              # subject_id -> np.ndarray of seconds
    config: SynthConfig

    def by_modality(self):
        """Split the interleaved record list into (ecg, ppg) sublists."""
        ecg = [r for r in self.records if r.modality == dsp.ECG]
        ppg = [r for r in self.records if r.modality == dsp.PPG]
        return ecg, ppg


def make_corpus(config, out_dir=None):
    """Deterministic paired corpus; optionally written as CSV + manifest.

    The on-disk layout matches what the ingestion manifest expects: one
    CSV per record with a `value` column, `manifest.json` listing every
    recording, and a `beats.csv` ground-truth sidecar.
    """
    records = []
    beat_times = {}
    for s in range(config.n_subjects):
        rng = np.random.default_rng((config.seed, s))
        shift = rng.uniform(-config.hr_jitter_bpm, config.hr_jitter_bpm) \
            if config.hr_jitter_bpm > 0 else 0.0
        beats = beat_times_from_profile(config.hr_profile, config.duration_s,
                                        bpm_shift=shift)
        subject = f"S{s:03d}"
        beat_times[subject] = beats
        ecg = synth_ecg(beats, duration_s=config.duration_s,
                        noise_std=config.noise_std_ecg, rng=rng)
        ppg = synth_ppg(beats, config.pat_ms, duration_s=config.duration_s,
                        noise_std=config.noise_std_ppg, rng=rng)
        records.append(dsp.RawRecord(subject, dsp.ECG, dsp.TARGET_FS, ecg,
                                     dataset_tag="synth"))
        records.append(dsp.RawRecord(subject, dsp.PPG, dsp.TARGET_FS, ppg,
                                     dataset_tag="synth"))
    corpus = SynthCorpus(records=records, beat_times=beat_times, config=config)
    if out_dir is not None:
        write_corpus(corpus, out_dir)
    return corpus


def write_corpus(corpus, out_dir):
    """Write records as CSV, a manifest.json, and the beat-time sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in corpus.records:
        fname = f"{rec.subject_id}_{rec.modality.lower()}.csv"
        with open(out_dir / fname, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["value"])
            for v in rec.samples:
                writer.writerow([f"{v:.9g}"])
        entries.append({"path": fname, "subject_id": rec.subject_id,
                        "modality": rec.modality, "fs": rec.fs,
                        "dataset_tag": rec.dataset_tag})
    with open(out_dir / "beats.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["subject", "beat_time_s"])
        for subject, beats in corpus.beat_times.items():
            for b in beats:
                writer.writerow([subject, f"{b:.9g}"])
    manifest = {"recordings": entries, "beat_sidecar": "beats.csv"}
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest_path
