"""Unpaired PPG-to-ECG translation.

Subpackages, bottom-up: `tensor` (reverse-mode autodiff on numpy), `models`
(attention U-Net generators, time/frequency patch discriminators),
`spectrogram` (STFT log-magnitude front end), `training` (cycle-consistent
adversarial loop), `dsp` (filtering, resampling, windowing), `metrics`
(waveform and heart-rate scores, peak detectors), `synth` (synthetic
biosignal corpus), `checkpoint` (binary tensor store), `cli` (command-line
pipeline).
"""

__version__ = "0.1.0"
