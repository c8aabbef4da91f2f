"""Preprocessing: raw ECG/PPG recordings to normalized 512-sample segments.

Pipeline order is fixed: resample to 128 Hz -> modality band-pass -> per
subject z-score -> 4 s windows with 10% overlap -> per-window min-max to
[-1, 1]. Filtering runs in float64; segments are emitted float32.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

logger = logging.getLogger("ppg2ecg.dsp")

TARGET_FS = 128.0
WINDOW = 512
HOP = 461             # 512 - floor(0.1 * 512)
FIR_TAPS = 129
EDGE_PAD = 129        # reflect padding for both zero-phase paths

ECG = "ECG"
PPG = "PPG"


@dataclass
class RawRecord:
    subject_id: str
    modality: str
    fs: float
    samples: np.ndarray
    dataset_tag: str = "default"

    def __post_init__(self):
        if self.fs <= 0:
            raise ValueError(f"RawRecord {self.subject_id}: fs must be > 0, got {self.fs}")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ValueError(f"RawRecord {self.subject_id}: empty samples")
        if self.modality not in (ECG, PPG):
            raise ValueError(f"RawRecord {self.subject_id}: modality must be ECG or PPG")


@dataclass
class SegmentBatch:
    """Fixed-length normalized windows plus their provenance."""
    segments: np.ndarray                 # [N, 512] float32 in [-1, 1]
    subject_ids: list
    modality: str
    source_offsets: np.ndarray           # [N] start index in the 128 Hz stream
    dataset_tags: list = field(default_factory=list)

    def __len__(self):
        return self.segments.shape[0]


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def resample(record: RawRecord, target_fs: float = TARGET_FS) -> RawRecord:
    """Linear interpolation onto a uniform target_fs grid over the original span."""
    x = record.samples
    if x.size < 2:
        raise ValueError(f"resample: need at least 2 samples, got {x.size}")
    if record.fs == target_fs:
        return record
    duration = (x.size - 1) / record.fs
    n_new = int(np.floor(duration * target_fs)) + 1
    t_old = np.arange(x.size) / record.fs
    t_new = np.arange(n_new) / target_fs
    y = np.interp(t_new, t_old, x)
    return RawRecord(record.subject_id, record.modality, target_fs, y, record.dataset_tag)


def _design_ecg_taps():
    taps = sps.firwin(FIR_TAPS, [3.0, 45.0], pass_zero=False, window="hamming", fs=TARGET_FS)
    # Hamming stop-band leaves H(0) ~ 2e-3; remove the residual DC gain so a
    # constant input maps to zero. Symmetry (linear phase) is preserved.
    taps = taps - taps.mean()
    return taps


_ECG_TAPS = _design_ecg_taps()
_PPG_SOS = sps.butter(4, [1.0, 8.0], btype="bandpass", output="sos", fs=TARGET_FS)


def fir_bandpass_ecg(x: np.ndarray) -> np.ndarray:
    """129-tap Hamming FIR band-pass 3-45 Hz, group delay compensated."""
    x = np.asarray(x, dtype=np.float64)
    if x.size <= FIR_TAPS:
        raise ValueError(f"fir_bandpass_ecg: input length {x.size} <= filter length {FIR_TAPS}")
    xp = np.pad(x, EDGE_PAD, mode="reflect")
    y = np.convolve(xp, _ECG_TAPS, mode="same")  # 'same' centers the symmetric kernel
    return y[EDGE_PAD:EDGE_PAD + x.size]


def butter_bandpass_ppg(x: np.ndarray) -> np.ndarray:
    """Order-4 Butterworth band-pass 1-8 Hz, forward-backward (zero phase)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size <= FIR_TAPS:
        raise ValueError(f"butter_bandpass_ppg: input length {x.size} <= {FIR_TAPS}")
    xp = np.pad(x, EDGE_PAD, mode="reflect")
    y = sps.sosfilt(_PPG_SOS, xp)
    y = sps.sosfilt(_PPG_SOS, y[::-1])[::-1]
    return y[EDGE_PAD:EDGE_PAD + x.size]


def bandpass_for(modality: str):
    return fir_bandpass_ecg if modality == ECG else butter_bandpass_ppg


def zscore_per_subject(records: list) -> list:
    """Normalize each (subject, modality) stream to zero mean, unit variance.

    Statistics come from the subject's full filtered stream (concatenated in
    input order if split across records). Degenerate streams (sigma ~ 0) are
    skipped with a warning; other subjects are untouched by the skip.
    """
    groups = {}
    order = []
    for rec in records:
        key = (rec.subject_id, rec.modality)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(rec)

    out = []
    for key in order:
        recs = groups[key]
        stream = np.concatenate([r.samples for r in recs])
        mu = stream.mean()
        sigma = stream.std()
        scale = max(1.0, float(np.max(np.abs(stream))) if stream.size else 1.0)
        if sigma <= 1e-9 * scale:
            logger.warning("zscore: skipping degenerate stream subject=%s modality=%s (sigma=%g)",
                           key[0], key[1], sigma)
            continue
        for r in recs:
            out.append(RawRecord(r.subject_id, r.modality, r.fs,
                                 (r.samples - mu) / sigma, r.dataset_tag))
    return out


def segment(x: np.ndarray, window: int = WINDOW, hop: int = HOP):
    """Cut a stream into fixed windows; returns (windows [N,window], offsets [N]).

    The final partial window is dropped; boundaries depend only on length.
    """
    x = np.asarray(x)
    if x.size < window:
        return np.empty((0, window), dtype=x.dtype), np.empty(0, dtype=np.int64)
    starts = np.arange(0, x.size - window + 1, hop, dtype=np.int64)
    wins = np.stack([x[s:s + window] for s in starts])
    return wins, starts


def minmax_normalize(window: np.ndarray):
    """Affine map of [min, max] onto [-1, 1]; returns (normalized, mn, mx)."""
    mn = float(np.min(window))
    mx = float(np.max(window))
    if mx - mn <= 1e-12:
        raise ValueError("minmax_normalize: constant window")
    return (2.0 * (window - mn) / (mx - mn) - 1.0), mn, mx


def minmax_denormalize(window: np.ndarray, mn: float, mx: float):
    return (window + 1.0) * (mx - mn) / 2.0 + mn


FLAT_WINDOW_TOL = 1e-6   # post-zscore range below this means a flat-line window


def prepare_corpus(records: list, target_fs: float = TARGET_FS):
    """Full pipeline over a record set; returns (SegmentBatch ECG, SegmentBatch PPG).

    Offsets index the 128 Hz stream, so simultaneous ECG/PPG recordings of
    equal duration produce aligned windows (used only for evaluation pairing).
    """
    if not records:
        raise ValueError("prepare_corpus: no records")
    resampled = [resample(r, target_fs) for r in records]
    filtered = [RawRecord(r.subject_id, r.modality, r.fs,
                          bandpass_for(r.modality)(r.samples), r.dataset_tag)
                for r in resampled]
    normed = zscore_per_subject(filtered)

    per_modality = {ECG: [], PPG: []}
    discarded = 0
    for rec in normed:
        wins, offs = segment(rec.samples)
        for w, off in zip(wins, offs):
            if np.max(w) - np.min(w) <= FLAT_WINDOW_TOL:
                discarded += 1
                continue
            norm, _, _ = minmax_normalize(w)
            per_modality[rec.modality].append(
                (norm.astype(np.float32), rec.subject_id, int(off), rec.dataset_tag))
    if discarded:
        logger.warning("prepare_corpus: discarded %d flat window(s)", discarded)

    batches = {}
    for modality, rows in per_modality.items():
        if rows:
            segs = np.stack([r[0] for r in rows])
            batches[modality] = SegmentBatch(
                segments=segs,
                subject_ids=[r[1] for r in rows],
                modality=modality,
                source_offsets=np.array([r[2] for r in rows], dtype=np.int64),
                dataset_tags=[r[3] for r in rows],
            )
        else:
            batches[modality] = SegmentBatch(
                segments=np.empty((0, WINDOW), np.float32), subject_ids=[],
                modality=modality, source_offsets=np.empty(0, np.int64), dataset_tags=[])
    if len(batches[ECG]) == 0 and len(batches[PPG]) == 0:
        raise ValueError("prepare_corpus: no usable segments in any modality")
    return batches[ECG], batches[PPG]
