"""STFT log-magnitude front-end for the frequency discriminators.

Recipe: 512-sample window in, reflect center-padding of 128 each side,
periodic Hann window of length 256, 256-point DFT keeping bins 0..127,
hop 4 -> exactly 128 frames. Output grid is 128x128 (frequency x time),
log(|X| + 1e-10) natural log.

Two surfaces share the recipe. `stft`/`log_magnitude` are pure float64
numpy functions used for analysis and oracle tests. `stft_logmag_op` is the
float32 tape op used in training: the windowed DFT is a fixed linear map, so
the adversarial gradient of the frequency discriminator flows through it
back into the generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _accum, _requires

SOURCE_LEN = 512
WIN = 256
FFT_SIZE = 256
BINS = 128
HOP = 4
PAD = 128
FRAMES = 128
THETA = 1e-10


def hann_window(n: int = WIN) -> np.ndarray:
    """Periodic Hann: w[k] = 0.5 * (1 - cos(2 pi k / n))."""
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


_WINDOW = hann_window()
# reflect-pad an index ramp to get the padded-position -> source-index map
_SRC_IDX = np.pad(np.arange(SOURCE_LEN), PAD, mode="reflect")
_N = np.arange(FFT_SIZE)
_K = np.arange(BINS)
_DFT = np.exp(-2j * np.pi * np.outer(_N, _K) / FFT_SIZE)          # [256, 128]
_COS32 = np.cos(2.0 * np.pi * np.outer(_N, _K) / FFT_SIZE).astype(np.float32)
_SIN32 = np.sin(2.0 * np.pi * np.outer(_N, _K) / FFT_SIZE).astype(np.float32)
_WINDOW32 = _WINDOW.astype(np.float32)


@dataclass
class Spectrogram:
    values: np.ndarray          # [128, 128] frequency x time, log magnitude
    source_len: int = SOURCE_LEN
    window: str = "hann"
    hop: int = HOP
    fft_size: int = FFT_SIZE


def _frames_f64(x: np.ndarray) -> np.ndarray:
    xp = x[_SRC_IDX]
    frames = np.stack([xp[m * HOP:m * HOP + WIN] for m in range(FRAMES)])
    return frames * _WINDOW


def stft(x) -> np.ndarray:
    """Complex STFT grid X[m, k]: frame index m (128), frequency bin k (128)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != SOURCE_LEN:
        raise ValueError(f"stft: expected {SOURCE_LEN} samples, got {x.size}")
    return _frames_f64(x) @ _DFT


def log_magnitude(X: np.ndarray) -> Spectrogram:
    """Natural log of |X| + theta, arranged frequency x time."""
    values = np.log(np.abs(X) + THETA).T
    return Spectrogram(values=values)


def spectrogram_csv_rows(spec: Spectrogram):
    """Yield (freq_bin, frame, value) rows for plotting dumps."""
    for k in range(spec.values.shape[0]):
        for m in range(spec.values.shape[1]):
            yield k, m, float(spec.values[k, m])


# ---------------------------------------------------------------------------
# differentiable float32 path
# ---------------------------------------------------------------------------

def stft_logmag_op(x: Tensor) -> Tensor:
    """[B, 1, 512] signal -> [B, 1, 128, 128] log-magnitude grid on the tape."""
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != SOURCE_LEN:
        raise ValueError(f"stft_logmag_op: expected [B,1,{SOURCE_LEN}], got {tuple(x.shape)}")
    B = x.shape[0]
    xd = x.data.reshape(B, SOURCE_LEN)
    xp = xd[:, _SRC_IDX]                                           # [B, 768]
    frames = np.lib.stride_tricks.sliding_window_view(xp, WIN, axis=1)[:, ::HOP, :][:, :FRAMES, :]
    fw = np.ascontiguousarray(frames) * _WINDOW32                  # [B, 128, 256]
    re = fw @ _COS32                                               # [B, m, k]
    im = -(fw @ _SIN32)
    mag = np.sqrt(re * re + im * im)
    out = np.log(mag + np.float32(THETA))
    grid = np.ascontiguousarray(out.transpose(0, 2, 1))[:, None]   # [B, 1, k, m]

    def backward(g):
        gm = np.ascontiguousarray(g[:, 0].transpose(0, 2, 1))      # [B, m, k]
        dmag = gm / (mag + np.float32(THETA))
        safe = np.where(mag > 0, mag, 1.0)
        dre = dmag * np.where(mag > 0, re / safe, 0.0)
        dim = dmag * np.where(mag > 0, im / safe, 0.0)
        dfw = dre @ _COS32.T - dim @ _SIN32.T                      # [B, 128, 256]
        dframes = dfw * _WINDOW32
        dxp = np.zeros((B, SOURCE_LEN + 2 * PAD), dtype=np.float32)
        for n in range(WIN):
            dxp[:, n:n + HOP * FRAMES:HOP] += dframes[:, :, n]
        dx = np.zeros((B, SOURCE_LEN), dtype=np.float32)
        np.add.at(dx, (np.arange(B)[:, None], _SRC_IDX[None, :]), dxp)
        _accum(x, dx.reshape(B, 1, SOURCE_LEN))

    return Tensor(grid, _requires(x), (x,), backward, "stft_logmag")
