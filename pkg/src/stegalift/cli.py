"""Command-line harness: dataset generation, hiding, training, evaluation,
ablations and the gradient-check report.

Exit codes: 0 ok, 1 contract/config error, 2 numeric abort, 3 I/O error.
STEGA_LIFT_THREADS caps the inner numeric parallelism (must be honored
before numpy loads, hence the early environment setup below).
"""

import os

_threads = os.environ.get("STEGA_LIFT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import align as align_mod
from . import config as config_mod
from . import data as data_mod
from . import detector as det_mod
from . import gradcheck as gradcheck_mod
from . import hider as hider_mod
from . import metrics as metrics_mod
from . import trainer as trainer_mod
from .errors import ConfigError, ContractError, DimensionError, NumericError

LOG_NAME = "train_log.jsonl"
CHECKPOINT_NAME = "checkpoint.stgf"
FINAL_METRICS_NAME = "final_metrics.json"
EVAL_NAME = "eval_metrics.json"
HIDE_REPORT_NAME = "hide_report.json"
ABLATE_NAME = "ablate_results.jsonl"


def _json_dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(cfg):
    """Write the synthetic train/test splits into cfg.data_dir."""
    data_mod.generate_dataset(cfg.data_dir, cfg.n_train, cfg.n_test,
                              cfg.image_size, cfg.channels, cfg.seed,
                              artifact_amp=cfg.artifact_amplitude)
    config_mod.write_resolved(cfg, cfg.data_dir)
    print("wrote %d train / %d test pairs to %s"
          % (cfg.n_train, cfg.n_test, cfg.data_dir))
    return 0


def _metric_row(values):
    finite = np.minimum(values, metrics_mod.PSNR_LOG_CAP)
    return {"mean": float(finite.mean()), "min": float(finite.min())}


def cmd_hide(cfg):
    """Hide the selected split and report imperceptibility metrics.

    Metrics are computed on the 8-bit quantized images, exactly as written
    to disk, so recomputing them from the output files reproduces the report.
    """
    dataset = data_mod.load_split(cfg.data_dir, cfg.eval_split)
    hcfg = cfg.hider_config()
    stego_dir = os.path.join(cfg.out_dir, "stego")
    os.makedirs(stego_dir, exist_ok=True)
    stego_all = []
    n = len(dataset)
    for lo in range(0, n, cfg.batch):
        hi = min(lo + cfg.batch, n)
        stego = hider_mod.hide(
            hider_mod.ImageBatch(data=dataset.secrets[lo:hi], role="secret"),
            hider_mod.ImageBatch(data=dataset.covers[lo:hi], role="cover"),
            hcfg)
        stego_all.append(stego.data.numpy())
    stego_arr = np.concatenate(stego_all, axis=0)
    for i in range(n):
        name = os.path.basename(dataset.secret_paths[i]).replace("secret", "stego")
        data_mod.write_image(os.path.join(stego_dir, name), stego_arr[i])
    # quantize everything so the report matches recomputation from disk
    q = lambda a: data_mod.quantize(a).astype(np.float64) / 255.0
    stego_q, cover_q, secret_q = q(stego_arr), q(dataset.covers), q(dataset.secrets)
    report = {
        "cover_stego_psnr": _metric_row(metrics_mod.psnr(cover_q, stego_q)),
        "cover_stego_ssim": _metric_row(metrics_mod.ssim(cover_q, stego_q)),
        "secret_stego_psnr": _metric_row(metrics_mod.psnr(secret_q, stego_q)),
        "secret_stego_ssim": _metric_row(metrics_mod.ssim(secret_q, stego_q)),
        "alpha": cfg.alpha,
        "n_pairs": n,
    }
    _json_dump(report, os.path.join(cfg.out_dir, HIDE_REPORT_NAME))
    config_mod.write_resolved(cfg, cfg.out_dir)
    print(json.dumps(report, sort_keys=True))
    return 0


def _build_model(cfg):
    rng = np.random.default_rng(cfg.seed)
    det = det_mod.init_detector(rng, cfg.detector_config())
    hcfg = cfg.hider_config()
    hparams = hider_mod.HiderParams.from_config(hcfg)
    return det, hcfg, hparams


def cmd_train(cfg):
    """Run the three-stage training; write log, checkpoint, final metrics."""
    dataset = data_mod.load_split(cfg.data_dir, "train")
    det, hcfg, hparams = _build_model(cfg)
    records = trainer_mod.run_training(cfg.train_config(), dataset, det,
                                       hcfg, hparams)
    os.makedirs(cfg.out_dir, exist_ok=True)
    log_path = os.path.join(cfg.out_dir, LOG_NAME)
    with open(log_path, "w", encoding="utf-8") as fh:
        for record in records:
            line = trainer_mod.format_log_record(record)
            fh.write(line + "\n")
            print(line)
    trainer_mod.write_checkpoint(os.path.join(cfg.out_dir, CHECKPOINT_NAME),
                                 trainer_mod.checkpoint_blob(det, hparams))
    final = trainer_mod.evaluation_record(det, hcfg, hparams, dataset,
                                          batch=cfg.batch)
    _json_dump(final, os.path.join(cfg.out_dir, FINAL_METRICS_NAME))
    config_mod.write_resolved(cfg, cfg.out_dir)
    return 0


def _load_trained(cfg):
    if not cfg.checkpoint:
        raise ConfigError("eval requires a 'checkpoint' config key or --checkpoint")
    if not os.path.exists(cfg.checkpoint):
        raise FileNotFoundError("checkpoint not found: %s" % cfg.checkpoint)
    det, hcfg, hparams = _build_model(cfg)
    blob = trainer_mod.read_checkpoint(cfg.checkpoint)
    trainer_mod.load_checkpoint_into(det, hparams, blob)
    return det, hcfg, hparams


def cmd_eval(cfg):
    """Evaluate a checkpoint on the held-out split; one metrics record."""
    dataset = data_mod.load_split(cfg.data_dir, cfg.eval_split)
    det, hcfg, hparams = _load_trained(cfg)
    record = trainer_mod.evaluation_record(det, hcfg, hparams, dataset,
                                           batch=cfg.batch)
    os.makedirs(cfg.out_dir, exist_ok=True)
    _json_dump(record, os.path.join(cfg.out_dir, EVAL_NAME))
    config_mod.write_resolved(cfg, cfg.out_dir)
    print(json.dumps(record, sort_keys=True))
    return 0


def _ablate_variant_config(cfg, token):
    """Config for one ablation token; unknown tokens are config errors."""
    sub = dataclasses.replace(cfg)
    if token in det_mod.VARIANTS:
        sub.variant = token
    elif token.startswith("sda:"):
        sub.variant = "full"
        sub.sda_preset = token[4:]
        if sub.sda_preset not in align_mod.PRESETS:
            raise ConfigError("unknown ablation variant %r" % token)
    elif token == "lod:on":
        sub.variant, sub.lod_enabled = "full", True
    elif token == "lod:off":
        sub.variant, sub.lod_enabled = "full", False
    else:
        raise ConfigError("unknown ablation variant %r" % token)
    return sub.validate()


def cmd_ablate(cfg):
    """Train and evaluate each selected variant under one seed."""
    tokens = [t.strip() for t in cfg.ablate_variants.split(",") if t.strip()]
    dataset_train = data_mod.load_split(cfg.data_dir, "train")
    dataset_test = data_mod.load_split(cfg.data_dir, "test")
    rows = []
    for token in tokens:
        sub = _ablate_variant_config(cfg, token)
        det, hcfg, hparams = _build_model(sub)
        trainer_mod.run_training(sub.train_config(), dataset_train, det,
                                 hcfg, hparams)
        record = trainer_mod.evaluation_record(det, hcfg, hparams,
                                               dataset_test, batch=sub.batch)
        record["variant"] = token
        rows.append(record)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, ABLATE_NAME), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    config_mod.write_resolved(cfg, cfg.out_dir)
    header = "%-16s %8s %8s %8s %8s" % ("variant", "auc", "acc", "ap", "eer")
    print(header)
    for row in rows:
        print("%-16s %8.4f %8.4f %8.4f %8.4f"
              % (row["variant"], row["auc"], row["acc"], row["ap"], row["eer"]))
    return 0


def cmd_gradcheck(cfg):
    """Finite-difference report over every differentiable operation."""
    rows = gradcheck_mod.run_all(seed=cfg.seed)
    for line in gradcheck_mod.report_lines(rows):
        print(line)
    worst = max(err for _, err, _ in rows)
    print("worst relative error: %.3e" % worst)
    return 0 if worst <= gradcheck_mod.DEFAULT_TOL else 2


COMMANDS = {
    "gen-data": cmd_gen_data,
    "hide": cmd_hide,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stega-lift",
        description="Steganographic-domain feature lifting and detection harness.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="override seed")
    parser.add_argument("--out", default=None, help="override output directory")
    parser.add_argument("--checkpoint", default=None,
                        help="override checkpoint path (eval)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir" if args.command != "gen-data" else "data_dir"] = args.out
    if args.checkpoint is not None:
        overrides["checkpoint"] = args.checkpoint
    try:
        cfg = config_mod.load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ContractError, DimensionError) as err:
        print("error: %s" % err, file=sys.stderr)
        return 1
    except NumericError as err:
        print("numeric abort: %s" % err, file=sys.stderr)
        return 2
    except OSError as err:
        print("i/o error: %s" % err, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
