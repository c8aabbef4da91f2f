"""Command-line interface: corpus synthesis, preprocessing, training,
translation, evaluation, and the ablation harness.

Every command is deterministic under a fixed --seed and writes all outputs
into a fresh run directory named by timestamp and seed, so reruns never
overwrite earlier results. Exit codes: 0 success, 1 user error (bad flags,
malformed config/manifest/CSV), 2 internal error.
"""

import argparse
import csv
import dataclasses
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import dsp, metrics, synth
from .training import (
    LossWeights, TrainConfig, build_models, build_optimizers, fit,
    load_training_checkpoint, save_training_checkpoint, VARIANTS,
)


class UserError(Exception):
    """Operator mistake: bad flags, unreadable files, malformed inputs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


# ---- config files ------------------------------------------------------------------

SYNTH_KEYS = {f.name for f in dataclasses.fields(synth.SynthConfig)}
TRAIN_KEYS = ({f.name for f in dataclasses.fields(TrainConfig)} - {"weights"}) \
    | {f.name for f in dataclasses.fields(LossWeights)}


def _key_line(text, key):
    """Best-effort line number of a JSON key or string value."""
    needle = json.dumps(key)
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return 1


def load_config(path, allowed, what):
    """Parse a JSON config object, rejecting unknown keys with file:line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UserError(f"cannot read config {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise UserError(f"{path}:{e.lineno}: invalid JSON: {e.msg}")
    if not isinstance(data, dict):
        raise UserError(f"{path}:1: {what} config must be a JSON object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        msgs = [f"{path}:{_key_line(text, k)}: unknown {what} config key {k!r}"
                for k in unknown]
        msgs.append(f"  allowed keys: {', '.join(sorted(allowed))}")
        raise UserError("\n".join(msgs))
    return data


def synth_config_from(args):
    data = load_config(args.config, SYNTH_KEYS, "synth") if args.config else {}
    if "hr_profile" in data:
        try:
            data["hr_profile"] = tuple(
                (float(s), float(b)) for s, b in data["hr_profile"])
        except (TypeError, ValueError):
            raise UserError(
                "hr_profile must be a list of [seconds, bpm] pairs")
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        return synth.SynthConfig(**data)
    except (TypeError, ValueError) as e:
        raise UserError(f"invalid synth config: {e}")


def train_config_from(args):
    data = load_config(args.config, TRAIN_KEYS, "train") if args.config else {}
    wkeys = {f.name for f in dataclasses.fields(LossWeights)}
    wdata = {k: data.pop(k) for k in list(data) if k in wkeys}
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        return TrainConfig(weights=LossWeights(**wdata), **data)
    except (TypeError, ValueError) as e:
        raise UserError(f"invalid train config: {e}")


# ---- manifests and CSV signals -------------------------------------------------------

MANIFEST_RECORD_KEYS = {"path", "subject_id", "modality", "fs", "dataset_tag"}


def read_signal_csv(path):
    """Samples from a CSV with a `value` or `t,value` header.

    The time column, when present, is ignored: sampling rate always comes
    from the manifest.
    """
    try:
        f = open(path, "r", newline="", encoding="utf-8")
    except OSError as e:
        raise UserError(f"cannot read signal {path}: {e}")
    with f:
        reader = csv.reader(f)
        try:
            header = [c.strip().lower() for c in next(reader)]
        except StopIteration:
            raise UserError(f"{path}:1: empty signal file")
        if header == ["value"]:
            col = 0
        elif header == ["t", "value"]:
            col = 1
        else:
            raise UserError(f"{path}:1: header must be 'value' or 't,value', "
                            f"got {','.join(header)!r}")
        values = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                values.append(float(row[col]))
            except (ValueError, IndexError):
                raise UserError(f"{path}:{lineno}: expected a number in "
                                f"column {col + 1}, got {row!r}")
    if not values:
        raise UserError(f"{path}: no samples")
    return np.asarray(values, np.float64)


def load_manifest(path):
    """-> (records, beat_sidecar_path_or_None). Validates the invariants:
    referenced files exist, fs > 0, (subject_id, modality, path) unique."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise UserError(f"cannot read manifest {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise UserError(f"{path}:{e.lineno}: invalid JSON: {e.msg}")
    if not isinstance(data, dict) or "recordings" not in data:
        raise UserError(f"{path}:1: manifest must be an object with a "
                        "'recordings' list")
    base = path.parent
    records = []
    seen = set()
    for entry in data["recordings"]:
        if not isinstance(entry, dict):
            raise UserError(f"{path}:1: recording entries must be objects")
        missing = {"path", "subject_id", "modality", "fs"} - set(entry)
        extra = set(entry) - MANIFEST_RECORD_KEYS
        ref = entry.get("path", "<missing path>")
        line = _key_line(text, ref if isinstance(ref, str) else "recordings")
        if missing:
            raise UserError(f"{path}:{line}: recording missing keys "
                            f"{sorted(missing)}")
        if extra:
            raise UserError(f"{path}:{line}: unknown recording keys "
                            f"{sorted(extra)}")
        if entry["modality"] not in (dsp.ECG, dsp.PPG):
            raise UserError(f"{path}:{line}: modality must be "
                            f"'{dsp.ECG}' or '{dsp.PPG}'")
        fs = float(entry["fs"])
        if fs <= 0:
            raise UserError(f"{path}:{line}: fs must be positive")
        key = (entry["subject_id"], entry["modality"], entry["path"])
        if key in seen:
            raise UserError(f"{path}:{line}: duplicate recording {key}")
        seen.add(key)
        csv_path = base / entry["path"]
        if not csv_path.exists():
            raise UserError(f"{path}:{line}: referenced file not found: "
                            f"{csv_path}")
        samples = read_signal_csv(csv_path)
        try:
            records.append(dsp.RawRecord(
                subject_id=str(entry["subject_id"]),
                modality=entry["modality"], fs=fs, samples=samples,
                dataset_tag=str(entry.get("dataset_tag", "default"))))
        except ValueError as e:
            raise UserError(f"{path}:{line}: {e}")
    if not records:
        raise UserError(f"{path}: manifest lists no recordings")
    sidecar = data.get("beat_sidecar")
    sidecar_path = None
    if sidecar is not None:
        sidecar_path = base / sidecar
        if not sidecar_path.exists():
            raise UserError(f"{path}: beat sidecar not found: {sidecar_path}")
    return records, sidecar_path


def write_signal_csv(path, values):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["value"])
        for v in np.asarray(values).ravel():
            writer.writerow([f"{v:.9g}"])


def _scale_to_unit(x, name):
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi - lo <= 1e-9:
        raise UserError(f"{name} signal is constant; nothing to translate")
    return (2.0 * (x - lo) / (hi - lo) - 1.0).astype(np.float32)


# ---- run directories ---------------------------------------------------------------


def make_run_dir(out_dir, command, seed):
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    base = Path(out_dir) / f"{command}_{stamp}_seed{seed}"
    run, n = base, 0
    while True:
        try:
            run.mkdir(parents=True, exist_ok=False)
            return run
        except FileExistsError:
            n += 1
            run = base.with_name(f"{base.name}-{n}")


# ---- subcommands -------------------------------------------------------------------


def cmd_synth(args):
    config = synth_config_from(args)
    run_dir = make_run_dir(args.out_dir, "synth", config.seed)
    corpus = synth.make_corpus(config)
    manifest_path = synth.write_corpus(corpus, run_dir / "corpus")
    print(f"wrote {len(corpus.records)} recordings "
          f"({config.n_subjects} subjects x {config.duration_s:g} s)")
    print(f"manifest: {manifest_path}")
    return 0


def _prepare(records):
    try:
        return dsp.prepare_corpus(records)
    except ValueError as e:
        raise UserError(str(e))


def cmd_preprocess(args):
    records, _ = load_manifest(args.manifest)
    seed = args.seed if args.seed is not None else 0
    run_dir = make_run_dir(args.out_dir, "preprocess", seed)
    ecg_batch, ppg_batch = _prepare(records)
    cache_path = run_dir / "segments.ckpt"
    ckpt.save_tensors(cache_path, {
        "ecg.segments": ecg_batch.segments,
        "ppg.segments": ppg_batch.segments,
    })
    meta = {}
    for name, batch in (("ecg", ecg_batch), ("ppg", ppg_batch)):
        meta[name] = {"subject_ids": list(batch.subject_ids),
                      "source_offsets": [int(o) for o in batch.source_offsets],
                      "dataset_tags": list(batch.dataset_tags)}
    with open(run_dir / "segments_meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    print(f"segments: ECG {ecg_batch.segments.shape[0]}, "
          f"PPG {ppg_batch.segments.shape[0]}")
    print(f"cache: {cache_path}")
    return 0


def _load_segment_pools(args):
    if getattr(args, "cache", None):
        try:
            state = ckpt.load_tensors(args.cache)
        except (OSError, ckpt.CorruptCheckpointError) as e:
            raise UserError(f"cannot read segment cache {args.cache}: {e}")
        try:
            return state["ecg.segments"], state["ppg.segments"]
        except KeyError as e:
            raise UserError(f"segment cache {args.cache} missing {e}")
    records, _ = load_manifest(args.manifest)
    ecg_batch, ppg_batch = _prepare(records)
    return ecg_batch.segments, ppg_batch.segments


def cmd_train(args):
    config = train_config_from(args)
    run_dir = make_run_dir(args.out_dir, "train", config.seed)

    if args.identity_stub:
        models = build_models(config)
        optimizers = build_optimizers(models, config.lr)
        path = run_dir / "checkpoint_identity.ckpt"
        save_training_checkpoint(str(path), models, optimizers, config,
                                 epochs_done=0, identity_stub=True)
        print(f"identity-stub checkpoint: {path}")
        return 0

    if not args.manifest and not args.cache:
        raise UserError("train needs --manifest or --cache "
                        "(or --identity-stub)")
    ecg, ppg = _load_segment_pools(args)
    try:
        result = fit(ecg, ppg, config, out_dir=str(run_dir),
                     resume_from=args.resume)
    except ValueError as e:
        raise UserError(str(e))
    epochs = [r for r in result.history if r["kind"] == "epoch"]
    if epochs:
        last = epochs[-1]
        print(f"epoch {last['epoch'] + 1}/{result.config.epochs}: "
              f"cyclic {last['mean_cyclic']:.4f}, "
              f"total_g {last['mean_total_g']:.4f}")
    print(f"log: {result.log_path}")
    if result.checkpoint_paths:
        print(f"checkpoint: {result.checkpoint_paths[-1]}")
    else:
        print("no new epochs to run")
    return 0


def _load_generator(path):
    """-> (gen callable for [B,1,512] batches, identity_stub, models)."""
    try:
        models, _, config, _, identity_stub = load_training_checkpoint(path)
    except (OSError, ckpt.CorruptCheckpointError, KeyError, ValueError) as e:
        raise UserError(f"cannot load checkpoint {path}: {e}")
    if identity_stub:
        return (lambda batch: batch), True, models
    return models.g_ecg, False, models


def cmd_generate(args):
    gen, identity_stub, models = _load_generator(args.checkpoint)
    x = read_signal_csv(args.input)
    if x.size < dsp.WINDOW:
        raise UserError(f"input has {x.size} samples; need >= {dsp.WINDOW}")
    scaled = _scale_to_unit(x, "input")
    out = metrics.translate_stream(gen, scaled)

    seed = args.seed if args.seed is not None else 0
    if args.output:
        out_path = Path(args.output)
        if out_path.parent != Path("."):
            out_path.parent.mkdir(parents=True, exist_ok=True)
    else:
        out_path = make_run_dir(args.out_dir, "generate", seed) / "ecg.csv"
    write_signal_csv(out_path, out)
    print(f"translated {x.size} -> {out.size} samples")
    print(f"output: {out_path}")

    if args.attention_maps:
        if identity_stub or not models.g_ecg.config.attention:
            raise UserError("checkpoint has no attention gates to export")
        _, maps = models.g_ecg(scaled[None, None, :dsp.WINDOW])
        tensors = {f"attention.{i}": m.data[0] for i, m in enumerate(maps)}
        ckpt.save_tensors(args.attention_maps, tensors)
        print(f"attention maps ({len(tensors)} scales): {args.attention_maps}")
    return 0


def _paired_streams(records):
    """Group manifest records into per-subject aligned (ecg, ppg) streams."""
    by_subject = {}
    for rec in records:
        resampled = dsp.resample(rec, dsp.TARGET_FS)
        by_subject.setdefault(rec.subject_id, {})[rec.modality] = \
            resampled.samples
    pairs = {}
    for subject in sorted(by_subject):
        mods = by_subject[subject]
        if dsp.ECG in mods and dsp.PPG in mods:
            n = min(mods[dsp.ECG].size, mods[dsp.PPG].size)
            pairs[subject] = (mods[dsp.ECG][:n], mods[dsp.PPG][:n])
    if not pairs:
        raise UserError("manifest has no subject with both ECG and PPG")
    return pairs


def _parse_windows(text):
    try:
        windows = tuple(int(w) for w in text.split(","))
    except ValueError:
        raise UserError(f"--windows must be comma-separated integers, "
                        f"got {text!r}")
    if not windows or any(w < 1 for w in windows):
        raise UserError("--windows values must be >= 1")
    return windows


def _evaluate_subjects(gen, identity_stub, pairs, windows):
    """Per-subject metric rows plus an equal-weight mean row per window."""
    rows = []
    for subject, (ecg, ppg) in pairs.items():
        source = ecg if identity_stub else ppg
        try:
            report = metrics.evaluate(gen, ecg, source, window_seconds=windows,
                                      dataset=subject)
        except ValueError as e:
            raise UserError(f"subject {subject}: {e}")
        rows.extend(report.rows)
    for w in windows:
        group = [r for r in rows if r.window_seconds == w]
        if not group:
            continue
        rows.append(metrics.MetricRow(
            dataset="mean", window_seconds=w,
            mae_hr_generated=float(np.mean([r.mae_hr_generated for r in group])),
            mae_hr_ppg=float(np.mean([r.mae_hr_ppg for r in group])),
            rmse=float(np.mean([r.rmse for r in group])),
            prd=float(np.mean([r.prd for r in group])),
            fd=float(np.mean([r.fd for r in group])),
            n_segments=int(sum(r.n_segments for r in group))))
    return metrics.MetricReport(rows=rows)


def cmd_evaluate(args):
    gen, identity_stub, _ = _load_generator(args.checkpoint)
    records, _ = load_manifest(args.manifest)
    pairs = _paired_streams(records)
    windows = _parse_windows(args.windows)
    report = _evaluate_subjects(gen, identity_stub, pairs, windows)

    seed = args.seed if args.seed is not None else 0
    run_dir = make_run_dir(args.out_dir, "evaluate", seed)
    json_path = run_dir / "report.json"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    csv_path = run_dir / "report.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(report.csv_rows())

    header = ("dataset", "window_s", "mae_hr_gen", "mae_hr_ppg",
              "rmse", "prd", "fd", "n")
    print(("{:>10} " * len(header)).format(*header).rstrip())
    for r in report.rows:
        print(f"{r.dataset:>10} {r.window_seconds:>10} "
              f"{r.mae_hr_generated:>10.3f} {r.mae_hr_ppg:>10.3f} "
              f"{r.rmse:>10.4f} {r.prd:>10.3f} {r.fd:>10.4f} "
              f"{r.n_segments:>10}")
    print(f"report: {json_path}")
    return 0


def cmd_ablate(args):
    base_config = train_config_from(args)
    records, _ = load_manifest(args.manifest)
    subjects = sorted({r.subject_id for r in records})
    if len(subjects) < 2:
        raise UserError("ablation needs >= 2 subjects (train + held-out)")
    n_holdout = max(1, len(subjects) // 5)
    holdout = set(subjects[-n_holdout:])
    train_records = [r for r in records if r.subject_id not in holdout]
    eval_records = [r for r in records if r.subject_id in holdout]
    pairs = _paired_streams(eval_records)
    windows = _parse_windows(args.windows)

    run_dir = make_run_dir(args.out_dir, "ablate", base_config.seed)
    ecg_batch, ppg_batch = _prepare(train_records)
    summary = {}
    for variant in VARIANTS:
        config = dataclasses.replace(base_config, variant=variant)
        variant_dir = run_dir / variant
        try:
            result = fit(ecg_batch.segments, ppg_batch.segments, config,
                         out_dir=str(variant_dir))
        except ValueError as e:
            raise UserError(f"variant {variant}: {e}")
        gen = result.models.g_ecg
        report = _evaluate_subjects(gen, False, pairs, windows)
        mean_rows = [r for r in report.rows if r.dataset == "mean"]
        row = mean_rows[0]
        summary[variant] = {"rmse": row.rmse, "prd": row.prd, "fd": row.fd,
                            "mae_hr_generated": row.mae_hr_generated}
        (variant_dir / "report.json").write_text(report.to_json() + "\n",
                                                 encoding="utf-8")

    directional = {}
    for other in ("no_dual_disc", "no_attention"):
        directional[f"full_minus_{other}"] = {
            k: summary["full"][k] - summary[other][k]
            for k in ("rmse", "prd", "fd", "mae_hr_generated")}
    result_doc = {
        "holdout_subjects": sorted(holdout),
        "window_seconds": list(windows),
        "variants": summary,
        "directional": directional,
        "note": ("negative differences mean the full model scored better; "
                 "reported for direction only, not asserted"),
    }
    out_path = run_dir / "ablation.json"
    out_path.write_text(json.dumps(result_doc, indent=2) + "\n",
                        encoding="utf-8")

    print(f"{'variant':>14} {'rmse':>8} {'prd':>8} {'fd':>8} {'mae_hr':>8}")
    for variant, vals in summary.items():
        print(f"{variant:>14} {vals['rmse']:>8.4f} {vals['prd']:>8.3f} "
              f"{vals['fd']:>8.4f} {vals['mae_hr_generated']:>8.3f}")
    print(f"ablation report: {out_path}")
    return 0


# ---- entry point -------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--config", default=None,
                        help="JSON config file for this command")
    common.add_argument("--out-dir", default="runs",
                        help="parent directory for run outputs")

    parser = _Parser(prog="ppg2ecg",
                     description="PPG-to-ECG translation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="write a synthetic paired corpus")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common],
                       help="manifest -> filtered, windowed segment cache")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common],
                       help="train the translation models")
    p.add_argument("--manifest", default=None)
    p.add_argument("--cache", default=None,
                   help="segment cache from the preprocess command")
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from")
    p.add_argument("--identity-stub", action="store_true",
                   help="write an untrained pipeline-test checkpoint and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common],
                       help="translate a PPG csv into an ECG csv")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="PPG samples as CSV")
    p.add_argument("--output", default=None,
                   help="output CSV path (default: inside a new run dir)")
    p.add_argument("--attention-maps", default=None,
                   help="also export per-scale attention maps to this file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common],
                       help="windowed HR and waveform metrics on paired data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--windows", default="4,8,16,32,64",
                   help="comma-separated window lengths in seconds")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common],
                       help="train and compare full/no_dual_disc/no_attention")
    p.add_argument("--manifest", required=True)
    p.add_argument("--windows", default="8",
                   help="comma-separated window lengths in seconds")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
