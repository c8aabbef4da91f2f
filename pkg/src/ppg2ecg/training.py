"""Cycle-consistent adversarial training with dual time/frequency critics.

Two generators learn opposite translations (PPG->ECG and ECG->PPG). Each
training step first updates every discriminator on real windows versus
detached fakes, then updates both generators on the weighted sum of the
adversarial terms and the cycle-reconstruction L1. Batching is unpaired:
the two modality pools are shuffled independently every epoch.
"""

import json
import math
import os
from dataclasses import dataclass, asdict

import numpy as np

from .tensor import (
    Tensor, tensor, add, mul, neg, softplus, tmean, l1_distance,
)
from .models import (
    Generator, GeneratorConfig, TimeDiscriminator, FreqDiscriminator,
    DiscriminatorConfig, load_model_params,
)
from .tensor import Adam
from .spectrogram import stft_logmag_op
from . import checkpoint as ckpt

MODES = ("unpaired", "paired")
VARIANTS = ("full", "no_dual_disc", "no_attention")


@dataclass(frozen=True)
class LossWeights:
    """Objective weights: alpha (time-adversarial), beta (freq-adversarial),
    lam (cyclic reconstruction)."""
    alpha: float = 3.0
    beta: float = 1.0
    lam: float = 30.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("loss weights must be non-negative")
        # quantize to f32 so values survive a checkpoint round trip bit-exactly
        for f in ("alpha", "beta", "lam"):
            object.__setattr__(self, f, float(np.float32(getattr(self, f))))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 15
    lr: float = 1e-4
    lr_constant_epochs: int = 10
    seed: int = 0
    mode: str = "unpaired"
    variant: str = "full"
    width_scale: float = 0.25
    saturating_g: bool = False
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.lr_constant_epochs > self.epochs:
            raise ValueError("lr_constant_epochs must not exceed epochs")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        # float fields are stored as f32 in checkpoints; quantize up front so a
        # resumed run computes with bit-identical values
        for f in ("lr", "width_scale"):
            object.__setattr__(self, f, float(np.float32(getattr(self, f))))


def lr_schedule(epoch, lr=1e-4, constant_epochs=10, total_epochs=15):
    """Constant for the first stretch, then linear decay hitting 0 one epoch
    past the last trained epoch."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch < constant_epochs:
        return float(lr)
    return float(lr) * (total_epochs - epoch) / (total_epochs - constant_epochs)


class UnpairedBatcher:
    """Independent per-epoch shuffles of the two pools, cut into batches.

    In paired mode both pools follow one shared permutation, reproducing
    exact physiological couplings (requires equal pool sizes).
    """

    def __init__(self, n_ecg, n_ppg, batch_size, seed, paired=False):
        if n_ecg < batch_size or n_ppg < batch_size:
            raise ValueError("pool smaller than one batch")
        if paired and n_ecg != n_ppg:
            raise ValueError("paired mode requires equal pool sizes")
        self.n_ecg = int(n_ecg)
        self.n_ppg = int(n_ppg)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.paired = bool(paired)
        self.steps_per_epoch = min(self.n_ecg, self.n_ppg) // self.batch_size

    def epoch(self, epoch_index):
        rng = np.random.default_rng((self.seed, int(epoch_index)))
        perm_e = rng.permutation(self.n_ecg)
        perm_p = perm_e if self.paired else rng.permutation(self.n_ppg)
        b = self.batch_size
        for s in range(self.steps_per_epoch):
            yield perm_e[s * b:(s + 1) * b], perm_p[s * b:(s + 1) * b]


# ---- loss terms ------------------------------------------------------------------


def d_side_adv_loss(disc, real, fake_detached):
    """-mean log sigma(D(real)) - mean log(1 - sigma(D(fake))), via softplus."""
    return add(tmean(softplus(neg(disc(real)))),
               tmean(softplus(disc(fake_detached))))


def g_side_adv_loss(disc, fake, saturating=False):
    """Non-saturating -mean log sigma(D(fake)); the saturating flag restores
    the literal +mean log(1 - sigma(D(fake))) form."""
    if saturating:
        return neg(tmean(softplus(disc(fake))))
    return tmean(softplus(neg(disc(fake))))


def _detached(x):
    return x.detach() if isinstance(x, Tensor) else tensor(x)


def adv_loss_time(disc, real, fake, saturating=False):
    """(d_loss, g_loss) for a waveform critic; the d side sees the fake
    detached so no gradient reaches the generator from it."""
    return (d_side_adv_loss(disc, real, _detached(fake)),
            g_side_adv_loss(disc, fake, saturating))


def adv_loss_freq(disc, real, fake, saturating=False):
    """As adv_loss_time, but both signals pass through the log-magnitude
    spectrogram before the critic."""
    real_spec = stft_logmag_op(real if isinstance(real, Tensor) else tensor(real))
    fake_t = fake if isinstance(fake, Tensor) else tensor(fake)
    return (d_side_adv_loss(disc, real_spec, stft_logmag_op(_detached(fake_t))),
            g_side_adv_loss(disc, stft_logmag_op(fake_t), saturating))


def _gen_out(model, x):
    out = model(x)
    return out[0] if isinstance(out, tuple) else out


def cyclic_loss(g_ecg, g_ppg, e_batch, p_batch):
    """Mean L1 of both round trips: e -> fake p -> e and p -> fake e -> p."""
    e = e_batch if isinstance(e_batch, Tensor) else tensor(e_batch)
    p = p_batch if isinstance(p_batch, Tensor) else tensor(p_batch)
    rec_e = _gen_out(g_ecg, _gen_out(g_ppg, e))
    rec_p = _gen_out(g_ppg, _gen_out(g_ecg, p))
    return add(l1_distance(rec_e, e), l1_distance(rec_p, p))


def total_generator_loss(g_time_e, g_time_p, g_freq_e, g_freq_p, cyclic, weights):
    """alpha*(time adv terms) + beta*(freq adv terms) + lam*cyclic."""
    time_part = mul(add(g_time_e, g_time_p), weights.alpha)
    freq_part = mul(add(g_freq_e, g_freq_p), weights.beta)
    return add(add(time_part, freq_part), mul(cyclic, weights.lam))


# ---- model/optimizer bundles ------------------------------------------------------


@dataclass
class CycleGanModels:
    g_ecg: Generator
    g_ppg: Generator
    d_time_ecg: TimeDiscriminator
    d_time_ppg: TimeDiscriminator
    d_freq_ecg: FreqDiscriminator = None
    d_freq_ppg: FreqDiscriminator = None

    def all_named(self):
        nets = [self.g_ecg, self.g_ppg, self.d_time_ecg, self.d_time_ppg]
        if self.d_freq_ecg is not None:
            nets += [self.d_freq_ecg, self.d_freq_ppg]
        return nets


@dataclass
class CycleGanOptimizers:
    g_ecg: Adam
    g_ppg: Adam
    d_time_ecg: Adam
    d_time_ppg: Adam
    d_freq_ecg: Adam = None
    d_freq_ppg: Adam = None


def build_models(config):
    gcfg = GeneratorConfig(width_scale=config.width_scale,
                           attention=config.variant != "no_attention")
    dcfg = DiscriminatorConfig(width_scale=config.width_scale)
    s = int(config.seed)
    use_freq = config.variant != "no_dual_disc"
    return CycleGanModels(
        g_ecg=Generator(gcfg, seed=s, name="G_E"),
        g_ppg=Generator(gcfg, seed=s + 1, name="G_P"),
        d_time_ecg=TimeDiscriminator(dcfg, seed=s + 2, name="Dt_E"),
        d_time_ppg=TimeDiscriminator(dcfg, seed=s + 3, name="Dt_P"),
        d_freq_ecg=FreqDiscriminator(dcfg, seed=s + 4, name="Df_E") if use_freq else None,
        d_freq_ppg=FreqDiscriminator(dcfg, seed=s + 5, name="Df_P") if use_freq else None,
    )


def build_optimizers(models, lr):
    mk = lambda net: Adam(net.params(), lr=lr) if net is not None else None
    return CycleGanOptimizers(
        g_ecg=mk(models.g_ecg), g_ppg=mk(models.g_ppg),
        d_time_ecg=mk(models.d_time_ecg), d_time_ppg=mk(models.d_time_ppg),
        d_freq_ecg=mk(models.d_freq_ecg), d_freq_ppg=mk(models.d_freq_ppg),
    )


# ---- the step --------------------------------------------------------------------


@dataclass
class StepReport:
    d_time_ecg: float = 0.0
    d_time_ppg: float = 0.0
    d_freq_ecg: float = 0.0
    d_freq_ppg: float = 0.0
    g_time_ecg: float = 0.0
    g_time_ppg: float = 0.0
    g_freq_ecg: float = 0.0
    g_freq_ppg: float = 0.0
    cyclic: float = 0.0
    total_g: float = 0.0
    lr: float = 0.0

    def as_dict(self):
        return asdict(self)


def _checked(name, loss):
    value = float(loss.item())
    if math.isnan(value) or math.isinf(value):
        raise FloatingPointError(f"non-finite loss term {name!r}: {value}")
    return value


def train_step(batch_e, batch_p, models, optimizers, weights, variant="full",
               lr=None, saturating=False):
    """One D-then-G update; returns the raw (unweighted) loss components."""
    e = batch_e if isinstance(batch_e, Tensor) else tensor(np.asarray(batch_e, np.float32))
    p = batch_p if isinstance(batch_p, Tensor) else tensor(np.asarray(batch_p, np.float32))
    use_freq = variant != "no_dual_disc" and models.d_freq_ecg is not None
    report = StepReport(lr=float(lr) if lr is not None else optimizers.g_ecg.lr)

    fake_e = _gen_out(models.g_ecg, p)
    fake_p = _gen_out(models.g_ppg, e)
    fake_e_d, fake_p_d = fake_e.detach(), fake_p.detach()

    d_jobs = [
        ("d_time_ecg", models.d_time_ecg, optimizers.d_time_ecg,
         e, fake_e_d, weights.alpha),
        ("d_time_ppg", models.d_time_ppg, optimizers.d_time_ppg,
         p, fake_p_d, weights.alpha),
    ]
    if use_freq:
        d_jobs += [
            ("d_freq_ecg", models.d_freq_ecg, optimizers.d_freq_ecg,
             stft_logmag_op(e), stft_logmag_op(fake_e_d), weights.beta),
            ("d_freq_ppg", models.d_freq_ppg, optimizers.d_freq_ppg,
             stft_logmag_op(p), stft_logmag_op(fake_p_d), weights.beta),
        ]
    for name, disc, opt, real, fk, w in d_jobs:
        loss = d_side_adv_loss(disc, real, fk)
        setattr(report, name, _checked(name, loss))
        opt.zero_grad()
        mul(loss, w).backward()
        opt.step(lr=lr)

    # generators: critics participate forward-only
    frozen = []
    for disc in (models.d_time_ecg, models.d_time_ppg,
                 models.d_freq_ecg, models.d_freq_ppg):
        if disc is None:
            continue
        for _, t in disc.params():
            if t.requires_grad:
                t.requires_grad = False
                frozen.append(t)
    try:
        g_time_e = g_side_adv_loss(models.d_time_ecg, fake_e, saturating)
        g_time_p = g_side_adv_loss(models.d_time_ppg, fake_p, saturating)
        report.g_time_ecg = _checked("g_time_ecg", g_time_e)
        report.g_time_ppg = _checked("g_time_ppg", g_time_p)
        if use_freq:
            g_freq_e = g_side_adv_loss(models.d_freq_ecg,
                                       stft_logmag_op(fake_e), saturating)
            g_freq_p = g_side_adv_loss(models.d_freq_ppg,
                                       stft_logmag_op(fake_p), saturating)
            report.g_freq_ecg = _checked("g_freq_ecg", g_freq_e)
            report.g_freq_ppg = _checked("g_freq_ppg", g_freq_p)
        else:
            g_freq_e = tensor(0.0)
            g_freq_p = tensor(0.0)
        rec_e = _gen_out(models.g_ecg, fake_p)
        rec_p = _gen_out(models.g_ppg, fake_e)
        cyc = add(l1_distance(rec_e, e), l1_distance(rec_p, p))
        report.cyclic = _checked("cyclic", cyc)

        total = total_generator_loss(g_time_e, g_time_p, g_freq_e, g_freq_p,
                                     cyc, weights)
        report.total_g = _checked("total_g", total)
        optimizers.g_ecg.zero_grad()
        optimizers.g_ppg.zero_grad()
        total.backward()
        optimizers.g_ecg.step(lr=lr)
        optimizers.g_ppg.step(lr=lr)
    finally:
        for t in frozen:
            t.requires_grad = True
    return report


# ---- checkpoint packing ------------------------------------------------------------


_MODE_CODES = {m: i for i, m in enumerate(MODES)}
_VARIANT_CODES = {v: i for i, v in enumerate(VARIANTS)}


def pack_training_state(models, optimizers, config, epochs_done,
                        identity_stub=False):
    """Flatten everything into one ordered name->array mapping."""
    out = {}
    out["config.epochs_done"] = ckpt.scalar(epochs_done)
    out["config.batch_size"] = ckpt.scalar(config.batch_size)
    out["config.epochs"] = ckpt.scalar(config.epochs)
    out["config.lr"] = ckpt.scalar(config.lr)
    out["config.lr_constant_epochs"] = ckpt.scalar(config.lr_constant_epochs)
    out["config.seed"] = ckpt.scalar(config.seed)
    out["config.mode"] = ckpt.scalar(_MODE_CODES[config.mode])
    out["config.variant"] = ckpt.scalar(_VARIANT_CODES[config.variant])
    out["config.width_scale"] = ckpt.scalar(config.width_scale)
    out["config.saturating_g"] = ckpt.scalar(int(config.saturating_g))
    out["config.alpha"] = ckpt.scalar(config.weights.alpha)
    out["config.beta"] = ckpt.scalar(config.weights.beta)
    out["config.lam"] = ckpt.scalar(config.weights.lam)
    out["config.identity_stub"] = ckpt.scalar(int(identity_stub))
    nets = models.all_named()
    optims = [optimizers.g_ecg, optimizers.g_ppg, optimizers.d_time_ecg,
              optimizers.d_time_ppg, optimizers.d_freq_ecg, optimizers.d_freq_ppg]
    optims = [o for o in optims if o is not None]
    for net in nets:
        for name, t in net.params():
            out[name] = t.data
    for net, opt in zip(nets, optims):
        for name, arr in opt.state_tensors().items():
            out[f"optim.{name}"] = arr
        out[f"optim.{net.name}.t"] = ckpt.scalar(opt.t)
    return out


def config_from_state(state):
    return TrainConfig(
        batch_size=int(state["config.batch_size"]),
        epochs=int(state["config.epochs"]),
        lr=float(state["config.lr"]),
        lr_constant_epochs=int(state["config.lr_constant_epochs"]),
        seed=int(state["config.seed"]),
        mode=MODES[int(state["config.mode"])],
        variant=VARIANTS[int(state["config.variant"])],
        width_scale=float(state["config.width_scale"]),
        saturating_g=bool(int(state["config.saturating_g"])),
        weights=LossWeights(alpha=float(state["config.alpha"]),
                            beta=float(state["config.beta"]),
                            lam=float(state["config.lam"])),
    )


def save_training_checkpoint(path, models, optimizers, config, epochs_done,
                             identity_stub=False):
    ckpt.save_tensors(path, pack_training_state(models, optimizers, config,
                                                epochs_done, identity_stub))


def load_training_checkpoint(path):
    """-> (models, optimizers, config, epochs_done, identity_stub)."""
    state = ckpt.load_tensors(path)
    config = config_from_state(state)
    models = build_models(config)
    optimizers = build_optimizers(models, config.lr)
    for net in models.all_named():
        load_model_params(net, state)
    optims = [optimizers.g_ecg, optimizers.g_ppg, optimizers.d_time_ecg,
              optimizers.d_time_ppg, optimizers.d_freq_ecg, optimizers.d_freq_ppg]
    optims = [o for o in optims if o is not None]
    for net, opt in zip(models.all_named(), optims):
        flat = {}
        for name, _ in net.params():
            flat[f"{name}.m"] = state[f"optim.{name}.m"]
            flat[f"{name}.v"] = state[f"optim.{name}.v"]
        opt.load_state(flat, int(state[f"optim.{net.name}.t"]))
    epochs_done = int(state["config.epochs_done"])
    identity_stub = bool(int(state.get("config.identity_stub", 0)))
    return models, optimizers, config, epochs_done, identity_stub


# ---- fit -------------------------------------------------------------------------


@dataclass
class TrainingResult:
    models: CycleGanModels
    optimizers: CycleGanOptimizers
    config: TrainConfig
    history: list
    checkpoint_paths: list
    log_path: str = None


def _segments_array(x):
    arr = x.segments if hasattr(x, "segments") else np.asarray(x, np.float32)
    arr = np.asarray(arr, np.float32)
    if arr.ndim != 2:
        raise ValueError(f"segments must be [N, 512], got {arr.shape}")
    return arr


def fit(ecg_segments, ppg_segments, config, out_dir=None, resume_from=None,
        step_callback=None):
    """Run the full training loop; optionally write JSONL logs and per-epoch
    checkpoints under out_dir, or continue from an earlier checkpoint."""
    ecg = _segments_array(ecg_segments)
    ppg = _segments_array(ppg_segments)
    if len(ecg) == 0 or len(ppg) == 0:
        raise ValueError("empty corpus for at least one modality")

    if resume_from is not None:
        models, optimizers, saved_config, start_epoch, _ = \
            load_training_checkpoint(resume_from)
        config = saved_config
    else:
        models = build_models(config)
        optimizers = build_optimizers(models, config.lr)
        start_epoch = 0

    batcher = UnpairedBatcher(len(ecg), len(ppg), config.batch_size,
                              config.seed, paired=config.mode == "paired")
    history = []
    checkpoint_paths = []
    log_path = None
    log_f = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.jsonl")
        log_f = open(log_path, "a", encoding="utf-8")

    def emit(record):
        history.append(record)
        if log_f is not None:
            log_f.write(json.dumps(record) + "\n")
            log_f.flush()

    try:
        global_step = start_epoch * batcher.steps_per_epoch
        for epoch in range(start_epoch, config.epochs):
            lr = lr_schedule(epoch, config.lr, config.lr_constant_epochs,
                             config.epochs)
            sums = None
            n_steps = 0
            for idx_e, idx_p in batcher.epoch(epoch):
                be = ecg[idx_e][:, None, :]
                bp = ppg[idx_p][:, None, :]
                rep = train_step(be, bp, models, optimizers, config.weights,
                                 config.variant, lr=lr,
                                 saturating=config.saturating_g)
                global_step += 1
                n_steps += 1
                rec = {"kind": "step", "epoch": epoch, "step": global_step}
                rec.update(rep.as_dict())
                emit(rec)
                if step_callback is not None:
                    step_callback(rec)
                if sums is None:
                    sums = {k: 0.0 for k in rep.as_dict()}
                for k, v in rep.as_dict().items():
                    sums[k] += v
            means = {k: v / max(n_steps, 1) for k, v in (sums or {}).items()}
            emit({"kind": "epoch", "epoch": epoch, "steps": n_steps,
                  **{f"mean_{k}": v for k, v in means.items()}})
            if out_dir is not None:
                path = os.path.join(out_dir,
                                    f"checkpoint_epoch{epoch + 1:03d}.ckpt")
                save_training_checkpoint(path, models, optimizers, config,
                                         epoch + 1)
                checkpoint_paths.append(path)
    finally:
        if log_f is not None:
            log_f.close()
    return TrainingResult(models=models, optimizers=optimizers, config=config,
                          history=history, checkpoint_paths=checkpoint_paths,
                          log_path=log_path)
