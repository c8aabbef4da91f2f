"""Network definitions: attention U-Net generators and twin discriminators.

The generator maps a 512-sample signal window to a 512-sample window of the
other modality. Six stride-2 encoder blocks halve the length down to 8; six
transposed-conv decoder blocks mirror them back up, each consuming an
attention-gated skip from the matching encoder depth. A time discriminator
scores 512-sample waveforms as patch logits; a frequency discriminator scores
128x128 log-magnitude spectrograms.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor, tensor, add, mul, concat, conv1d, conv2d, conv_transpose1d,
    layer_norm, leaky_relu, relu, sigmoid, tanh, upsample_linear1d,
    truncated_normal,
)

SIGNAL_LEN = 512
SPEC_BINS = 128
SPEC_FRAMES = 128
FULL_ENCODER_FILTERS = (64, 128, 256, 512, 512, 512)
FULL_DISC_FILTERS = (64, 128, 256, 512)
LEAKY_SLOPE = 0.2


def _scale_filters(filters, width_scale):
    for f in filters:
        if f * width_scale < 1.0:
            raise ValueError(
                f"width_scale {width_scale} collapses a {f}-filter layer below 1")
    return tuple(int(round(f * width_scale)) for f in filters)


@dataclass(frozen=True)
class GeneratorConfig:
    encoder_filters: tuple = FULL_ENCODER_FILTERS
    kernel: int = 16
    stride: int = 2
    width_scale: float = 1.0
    attention: bool = True

    def __post_init__(self):
        if len(self.encoder_filters) != 6:
            raise ValueError("encoder_filters must list exactly 6 block widths")
        _scale_filters(self.encoder_filters, self.width_scale)

    def scaled_filters(self):
        return _scale_filters(self.encoder_filters, self.width_scale)


@dataclass(frozen=True)
class DiscriminatorConfig:
    filters: tuple = FULL_DISC_FILTERS
    time_kernel: int = 16
    freq_kernel: int = 7
    stride: int = 2
    width_scale: float = 1.0

    def __post_init__(self):
        if len(self.filters) != 4:
            raise ValueError("filters must list exactly 4 block widths")
        _scale_filters(self.filters, self.width_scale)

    def scaled_filters(self):
        return _scale_filters(self.filters, self.width_scale)


class _Conv1d:
    """Trainable 1-D convolution layer (weight + bias)."""

    def __init__(self, rng, prefix, c_in, c_out, k, stride, padding):
        self.prefix = prefix
        self.stride = stride
        self.padding = padding
        self.w = tensor(truncated_normal(rng, (c_out, c_in, k)), requires_grad=True)
        self.b = tensor(np.zeros(c_out, np.float32), requires_grad=True)

    def __call__(self, x):
        return conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def params(self):
        return [(self.prefix + ".w", self.w), (self.prefix + ".b", self.b)]


class _ConvT1d:
    """Trainable 1-D transposed convolution layer."""

    def __init__(self, rng, prefix, c_in, c_out, k, stride, padding):
        self.prefix = prefix
        self.stride = stride
        self.padding = padding
        self.w = tensor(truncated_normal(rng, (c_in, c_out, k)), requires_grad=True)
        self.b = tensor(np.zeros(c_out, np.float32), requires_grad=True)

    def __call__(self, x):
        return conv_transpose1d(x, self.w, self.b, stride=self.stride,
                                padding=self.padding)

    def params(self):
        return [(self.prefix + ".w", self.w), (self.prefix + ".b", self.b)]


class _Conv2d:
    """Trainable 2-D convolution layer."""

    def __init__(self, rng, prefix, c_in, c_out, k, stride, padding):
        self.prefix = prefix
        self.stride = stride
        self.padding = padding
        self.w = tensor(truncated_normal(rng, (c_out, c_in, k, k)), requires_grad=True)
        self.b = tensor(np.zeros(c_out, np.float32), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def params(self):
        return [(self.prefix + ".w", self.w), (self.prefix + ".b", self.b)]


class AttentionGate:
    """Additive soft gate over one skip connection.

    alpha = sigmoid(psi(relu(W_x x + W_g g))); output is x * alpha with alpha
    broadcast over channels. g must already be aligned to x's length.
    """

    def __init__(self, rng, prefix, f_l, f_g):
        self.f_l = f_l
        self.f_g = f_g
        f_int = max(1, f_l // 2)
        self.wx = _Conv1d(rng, prefix + ".wx", f_l, f_int, 1, 1, 0)
        self.wg = _Conv1d(rng, prefix + ".wg", f_g, f_int, 1, 1, 0)
        self.psi = _Conv1d(rng, prefix + ".psi", f_int, 1, 1, 1, 0)

    def __call__(self, x, g):
        if x.shape[1] != self.f_l:
            raise ValueError(f"attention gate expected {self.f_l} skip channels, "
                             f"got {x.shape[1]}")
        if g.shape[1] != self.f_g:
            raise ValueError(f"attention gate expected {self.f_g} gating channels, "
                             f"got {g.shape[1]}")
        if x.shape[2] != g.shape[2]:
            raise ValueError("gating signal length must match skip length")
        alpha = sigmoid(self.psi(relu(add(self.wx(x), self.wg(g)))))
        return mul(x, alpha), alpha

    def params(self):
        return self.wx.params() + self.wg.params() + self.psi.params()


class Generator:
    """Attention U-Net translating one 512-sample modality window to the other."""

    def __init__(self, config=None, seed=0, name="G"):
        self.config = config if config is not None else GeneratorConfig()
        self.name = name
        rng = np.random.default_rng(seed)
        f = self.config.scaled_filters()
        k, s = self.config.kernel, self.config.stride
        down_pad = (7, 7)

        self.enc = []
        c_in = 1
        for i, c_out in enumerate(f):
            self.enc.append(_Conv1d(rng, f"{name}.enc{i + 1}", c_in, c_out,
                                    k, s, down_pad))
            c_in = c_out

        # decoder block k fuses the running feature with the gated skip from
        # encoder depth 7-k, then a stride-2 transposed conv doubles the length
        dec_out = (f[4], f[3], f[2], f[1], f[0], f[0])
        self.gates = []
        self.dec = []
        for kk in range(6):
            skip_ch = f[5 - kk]
            if kk == 0:
                gate_ch = f[5]            # deepest skip is gated by the bottleneck
            elif kk == 1:
                gate_ch = f[5]            # coarser decoder feature is the bottleneck
            else:
                gate_ch = dec_out[kk - 2]
            if self.config.attention:
                self.gates.append(AttentionGate(rng, f"{name}.gate{6 - kk}",
                                                skip_ch, gate_ch))
            self.dec.append(_ConvT1d(rng, f"{name}.dec{kk + 1}", 2 * skip_ch,
                                     dec_out[kk], k, s, 7))
        self.final = _ConvT1d(rng, f"{name}.final", f[0], 1, k, 1, (7, 8))

    def forward(self, x):
        """x: [B,1,512] -> (y: [B,1,512], attention maps shallow-to-deep)."""
        if not isinstance(x, Tensor):
            x = tensor(x)
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != SIGNAL_LEN:
            raise ValueError(f"generator expects [B,1,{SIGNAL_LEN}], got {x.shape}")
        skips = []
        h = x
        for i, blk in enumerate(self.enc):
            h = blk(h)
            if i > 0:
                h = layer_norm(h)
            h = leaky_relu(h, LEAKY_SLOPE)
            skips.append(h)

        feats = [skips[5]]
        maps_deep_first = []
        for kk in range(6):
            skip = skips[5 - kk]
            if kk == 0:
                g = feats[0]
            else:
                g = upsample_linear1d(feats[kk - 1], 2)
            if self.config.attention:
                gated, alpha = self.gates[kk](skip, g)
                maps_deep_first.append(alpha)
            else:
                gated = skip
            h = concat([feats[kk], gated], axis=1)
            h = self.dec[kk](h)
            h = layer_norm(h)
            h = relu(h)
            feats.append(h)
        y = tanh(self.final(feats[6]))
        return y, maps_deep_first[::-1]

    def __call__(self, x):
        return self.forward(x)

    def params(self):
        out = []
        for blk in self.enc:
            out.extend(blk.params())
        for gate in self.gates:
            out.extend(gate.params())
        for blk in self.dec:
            out.extend(blk.params())
        out.extend(self.final.params())
        return out


class TimeDiscriminator:
    """Patch critic over raw 512-sample waveforms -> [B,1,32] logits."""

    def __init__(self, config=None, seed=0, name="Dt"):
        self.config = config if config is not None else DiscriminatorConfig()
        self.name = name
        rng = np.random.default_rng(seed)
        f = self.config.scaled_filters()
        k, s = self.config.time_kernel, self.config.stride
        self.blocks = []
        c_in = 1
        for i, c_out in enumerate(f):
            self.blocks.append(_Conv1d(rng, f"{name}.conv{i + 1}", c_in, c_out,
                                       k, s, (7, 7)))
            c_in = c_out
        self.final = _Conv1d(rng, f"{name}.final", f[3], 1, k, 1, (7, 8))

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = tensor(x)
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != SIGNAL_LEN:
            raise ValueError(f"time discriminator expects [B,1,{SIGNAL_LEN}], "
                             f"got {x.shape}")
        h = x
        for i, blk in enumerate(self.blocks):
            h = blk(h)
            if i > 0:
                h = layer_norm(h)
            h = leaky_relu(h, LEAKY_SLOPE)
        return self.final(h)

    def __call__(self, x):
        return self.forward(x)

    def params(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.params())
        out.extend(self.final.params())
        return out


class FreqDiscriminator:
    """Patch critic over 128x128 log-magnitude spectrograms -> [B,1,8,8] logits."""

    def __init__(self, config=None, seed=0, name="Df"):
        self.config = config if config is not None else DiscriminatorConfig()
        self.name = name
        rng = np.random.default_rng(seed)
        f = self.config.scaled_filters()
        k, s = self.config.freq_kernel, self.config.stride
        self.blocks = []
        c_in = 1
        for i, c_out in enumerate(f):
            self.blocks.append(_Conv2d(rng, f"{name}.conv{i + 1}", c_in, c_out,
                                       k, s, ((2, 3), (2, 3))))
            c_in = c_out
        self.final = _Conv2d(rng, f"{name}.final", f[3], 1, k, 1, 3)

    def forward(self, s):
        if not isinstance(s, Tensor):
            s = tensor(s)
        if s.ndim != 4 or s.shape[1] != 1 or s.shape[2] != SPEC_BINS \
                or s.shape[3] != SPEC_FRAMES:
            raise ValueError(f"freq discriminator expects [B,1,{SPEC_BINS},"
                             f"{SPEC_FRAMES}], got {s.shape}")
        h = s
        for i, blk in enumerate(self.blocks):
            h = blk(h)
            if i > 0:
                h = layer_norm(h)
            h = leaky_relu(h, LEAKY_SLOPE)
        return self.final(h)

    def __call__(self, s):
        return self.forward(s)

    def params(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.params())
        out.extend(self.final.params())
        return out


def generator_forward(model, x):
    return model.forward(x)


def disc_time_forward(model, x):
    return model.forward(x)


def disc_freq_forward(model, s):
    return model.forward(s)


def parameter_count(model):
    return int(sum(t.size for _, t in model.params()))


def load_model_params(model, named_arrays):
    """Assign stored arrays onto a model's parameters by name, in place."""
    for name, t in model.params():
        if name not in named_arrays:
            raise KeyError(f"missing parameter {name}")
        arr = np.asarray(named_arrays[name], dtype=np.float32)
        if arr.shape != t.data.shape:
            raise ValueError(f"shape mismatch for {name}: stored {arr.shape}, "
                             f"model {t.data.shape}")
        t.data = arr.copy()


def export_attention_maps(model, x):
    """Run the generator and return its 6 maps upsampled to length 512.

    Returns a list ordered shallow-to-deep (encoder depth 1..6), each an
    ndarray [B, 512] of values in [0, 1].
    """
    _, maps = model.forward(x)
    out = []
    for m in maps:
        factor = SIGNAL_LEN // m.shape[2]
        up = upsample_linear1d(m, factor) if factor > 1 else m
        out.append(up.data[:, 0, :].astype(np.float32).copy())
    return out


def attention_map_csv_rows(maps, batch_index=0):
    """Yield (layer, position, alpha) rows for one batch item."""
    for layer, m in enumerate(maps, start=1):
        row = m[batch_index]
        for pos in range(row.size):
            yield layer, pos, float(row[pos])
