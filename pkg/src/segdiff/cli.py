"""Command-line harness: dataset generation, training, inference, evaluation,
and the two parameter sweeps (diffusion steps, ensemble size).

Usage: segdiff <gen|train|infer|eval|sweep-steps|sweep-instances>
               [--config file.json] [--key value ...]

``--key`` takes dotted paths into the config (e.g. --train.lr 2e-4). Every
output directory receives the fully resolved config for provenance. Exit
codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, inference, metrics, svgplot
from .data import GenParams, gen_synthetic, load_manifest, load_split
from .model import ModelConfig
from .netpbm import load_pgm, save_pgm
from .schedule import make_schedule
from .training import TrainConfig, load_checkpoint, train_loop, _cfg_from_json, _cfg_to_json


class UsageError(Exception):
    pass


def _threads():
    return max(1, int(os.environ.get("SEGDIFF_THREADS", "1")))


# ---------------------------------------------------------------------------
# Config plumbing


DEFAULTS = {
    "gen": {"out": "", "seed": 0, "n_train": 200, "n_val": 50, "size": 32},
    "train": {"data": "", "out": "", "model": {}, "train": {}},
    "infer": {"checkpoint": "", "data": "", "out": "", "split": "val",
              "n_generations": 30, "base_seed": 1000},
    "eval": {"data": "", "pred": "", "out": "", "split": "val"},
    "sweep-steps": {"data": "", "out": "", "T_values": [25, 50, 75, 100],
                    "n_generations": 9, "base_seed": 1000, "split": "val",
                    "reuse_checkpoint": "", "model": {}, "train": {}},
    "sweep-instances": {"checkpoint": "", "data": "", "out": "", "split": "val",
                        "n_values": [1, 3, 9, 25, 30], "base_seed": 1000},
}


def _resolve_config(command, config_path, overrides):
    cfg = json.loads(json.dumps(DEFAULTS[command]))  # deep copy
    if config_path:
        try:
            with open(config_path) as f:
                loaded = json.load(f)
        except OSError as e:
            raise UsageError(f"cannot read config {config_path}: {e}") from e
        _deep_update(cfg, loaded)
    for key, value in overrides:
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        try:
            node[parts[-1]] = json.loads(value)
        except json.JSONDecodeError:
            node[parts[-1]] = value
    return cfg


def _deep_update(dst, src):
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_update(dst[k], v)
        else:
            dst[k] = v


def _parse_overrides(tokens):
    pairs = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise UsageError(f"expected --key, got {tok!r}")
        if i + 1 >= len(tokens):
            raise UsageError(f"missing value for {tok}")
        pairs.append((tok[2:], tokens[i + 1]))
        i += 2
    return pairs


def _write_provenance(out_dir, command, cfg):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump({"command": command, "version": __version__, "config": cfg},
                  f, indent=2, sort_keys=True)
        f.write("\n")


def _model_config(d):
    merged = _cfg_to_json(ModelConfig())
    merged.update(d)
    return _cfg_from_json(merged)


def _require(cfg, *keys):
    for k in keys:
        if not cfg.get(k):
            raise UsageError(f"missing required config key: {k}")


def _fmt(v):
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def _write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Commands


def cmd_gen(cfg):
    _require(cfg, "out")
    params = GenParams(**cfg.get("gen_params", {}))
    gen_synthetic(cfg["out"], cfg["seed"], cfg["n_train"], cfg["n_val"], cfg["size"], params)
    _write_provenance(cfg["out"], "gen", cfg)
    print(f"wrote {cfg['n_train']}+{cfg['n_val']} samples to {cfg['out']}")


def cmd_train(cfg):
    _require(cfg, "data", "out")
    manifest = load_manifest(cfg["data"])
    dataset = load_split(manifest, "train")
    model_cfg = _model_config(cfg["model"])
    train_cfg = TrainConfig(**cfg["train"])
    os.makedirs(cfg["out"], exist_ok=True)
    _write_provenance(cfg["out"], "train", cfg)
    ckpt = os.path.join(cfg["out"], "checkpoint.ckpt")

    def progress(step, loss):
        print(f"step {step}/{train_cfg.max_steps} loss {loss:.5f}", flush=True)

    _, losses = train_loop(dataset, train_cfg, model_cfg, checkpoint_path=ckpt,
                           progress=progress)
    _write_csv(os.path.join(cfg["out"], "loss.csv"), ["step", "loss"], losses)
    print(f"checkpoint: {ckpt}")


def _load_model(path):
    state = load_checkpoint(path)
    return state["model"], state["sched"], state


def _infer_one(model, sched, sample, n, seed):
    result = inference.ensemble_generate(sample.image[None], model, sched, n, seed)
    mean = result.mean_map.data[0, 0]
    mask = inference.binarize(result.mean_map)[0, 0]
    return mean, mask, result


def cmd_infer(cfg):
    _require(cfg, "checkpoint", "data", "out")
    model, sched, _ = _load_model(cfg["checkpoint"])
    samples = load_split(load_manifest(cfg["data"]), cfg["split"])
    if not samples:
        raise UsageError(f"no samples in split {cfg['split']!r}")
    n = cfg["n_generations"]
    out = cfg["out"]
    os.makedirs(os.path.join(out, "maps"), exist_ok=True)
    os.makedirs(os.path.join(out, "masks"), exist_ok=True)
    _write_provenance(out, "infer", cfg)

    import time

    def run(i):
        sample = samples[i]
        seed = cfg["base_seed"] + i * n
        t0 = time.perf_counter()
        mean, mask, _ = _infer_one(model, sched, sample, n, seed)
        seconds = time.perf_counter() - t0
        save_pgm(os.path.join(out, "maps", f"{sample.id}.pgm"), mean, maxval=65535)
        save_pgm(os.path.join(out, "masks", f"{sample.id}.pgm"), mask)
        return {"id": sample.id, "base_seed": seed, "seconds": seconds}

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(run, range(len(samples))))
    else:
        records = [run(i) for i in range(len(samples))]
    with open(os.path.join(out, "infer.json"), "w") as f:
        json.dump({"n_generations": n, "T": sched.T, "base_seed": cfg["base_seed"],
                   "per_image": records}, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {len(records)} ensemble maps to {out}")


def cmd_eval(cfg):
    _require(cfg, "data", "pred")
    out = cfg["out"] or cfg["pred"]
    samples = load_split(load_manifest(cfg["data"]), cfg["split"])
    rows = []
    maps, gts = [], []
    for s in samples:
        map_path = os.path.join(cfg["pred"], "maps", f"{s.id}.pgm")
        mask_path = os.path.join(cfg["pred"], "masks", f"{s.id}.pgm")
        if not os.path.exists(map_path) or not os.path.exists(mask_path):
            raise UsageError(f"missing prediction for {s.id} under {cfg['pred']}")
        prob = load_pgm(map_path)
        pred = load_pgm(mask_path) >= 0.5
        gt = s.mask[0].astype(bool)
        rows.append((s.id, metrics.iou(pred, gt), metrics.f1(pred, gt),
                     metrics.wcov(pred, gt), metrics.fbound(pred, gt)))
        maps.append(prob)
        gts.append(gt)
    agg = ["mean"] + [float(np.mean([r[i] for r in rows])) for i in range(1, 5)]
    os.makedirs(out, exist_ok=True)
    _write_provenance(out, "eval", cfg)
    _write_csv(os.path.join(out, "metrics.csv"),
               ["sample_id", "miou", "f1", "wcov", "fbound"], rows + [tuple(agg)])
    report = metrics.calibration_score(maps, gts)
    with open(os.path.join(out, "calibration.json"), "w") as f:
        json.dump({
            "bin_edges": list(report.bin_edges),
            "counts": [int(c) for c in report.counts],
            "mean_confidence": [None if np.isnan(v) else v for v in report.mean_confidence],
            "positive_fraction": [None if np.isnan(v) else v for v in report.positive_fraction],
            "score": report.score,
        }, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"mIoU {agg[1]:.4f} F1 {agg[2]:.4f} WCov {agg[3]:.4f} FBound {agg[4]:.4f} "
          f"calibration {report.score:.5f}")


def _ensemble_eval(model, sched, samples, n, base_seed):
    """Ensemble-generate over a sample list; returns (miou, calibration,
    mean seconds per image)."""
    import time

    ious, maps, gts, secs = [], [], [], []
    for i, s in enumerate(samples):
        t0 = time.perf_counter()
        mean, mask, _ = _infer_one(model, sched, s, n, base_seed + i * n)
        secs.append(time.perf_counter() - t0)
        gt = s.mask[0].astype(bool)
        ious.append(metrics.iou(mask >= 0.5, gt))
        maps.append(mean)
        gts.append(gt)
    report = metrics.calibration_score(maps, gts)
    return float(np.mean(ious)), report.score, float(np.mean(secs))


def cmd_sweep_steps(cfg):
    _require(cfg, "data", "out")
    manifest = load_manifest(cfg["data"])
    train_set = load_split(manifest, "train")
    val_set = load_split(manifest, cfg["split"])
    model_cfg = _model_config(cfg["model"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _write_provenance(out, "sweep-steps", cfg)
    rows = []
    for T in cfg["T_values"]:
        if cfg["reuse_checkpoint"]:
            # Reusing one model across T values mismatches its training
            # schedule; accepted by the user via this flag.
            model, _, state = _load_model(cfg["reuse_checkpoint"])
            if T > model.T:
                print(f"skipping T={T}: beyond the checkpoint's table size")
                continue
            sched = make_schedule(T)
        else:
            train_cfg = TrainConfig(**{**cfg["train"], "T": T})
            model, _ = train_loop(train_set, train_cfg, model_cfg)
            sched = make_schedule(T)
        mi, cal, secs = _ensemble_eval(model, sched, val_set,
                                       cfg["n_generations"], cfg["base_seed"])
        rows.append((T, mi, cal, secs))
        print(f"T={T}: mIoU {mi:.4f} calibration {cal:.5f} {secs:.2f}s/image")
    _write_csv(os.path.join(out, "sweep_steps.csv"),
               ["T", "miou", "calibration", "mean_seconds"], rows)
    ts = [r[0] for r in rows]
    svgplot.save_line_plot(os.path.join(out, "sweep_steps_miou.svg"), ts,
                           {"mIoU": [r[1] for r in rows]},
                           title="mIoU vs diffusion steps", xlabel="T", ylabel="mIoU")
    svgplot.save_line_plot(os.path.join(out, "sweep_steps_time.svg"), ts,
                           {"seconds/image": [r[3] for r in rows]},
                           title="Generation time vs diffusion steps", xlabel="T",
                           ylabel="seconds")


def cmd_sweep_instances(cfg):
    _require(cfg, "checkpoint", "data", "out")
    model, sched, _ = _load_model(cfg["checkpoint"])
    samples = load_split(load_manifest(cfg["data"]), cfg["split"])
    n_values = sorted(cfg["n_values"])
    n_max = max(n_values)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _write_provenance(out, "sweep-instances", cfg)

    # One max-size ensemble per image; smaller n reuse its first n members.
    per_image = []
    for i, s in enumerate(samples):
        result = inference.ensemble_generate(
            s.image[None], model, sched, n_max, cfg["base_seed"] + i * n_max
        )
        per_image.append(result)
    rows = []
    for n in n_values:
        maps, masks, gts = [], [], []
        for s, result in zip(samples, per_image):
            mean = inference.average_maps(result.generations[:n], result.seeds[:n])
            maps.append(mean[0, 0])
            masks.append(mean[0, 0] >= 0.5)
            gts.append(s.mask[0].astype(bool))
        mi = metrics.miou(masks, gts)
        cal = metrics.calibration_score(maps, gts).score
        rows.append((n, mi, cal))
        print(f"n={n}: mIoU {mi:.4f} calibration {cal:.5f}")
    _write_csv(os.path.join(out, "sweep_instances.csv"),
               ["n", "miou", "calibration"], rows)
    ns = [r[0] for r in rows]
    svgplot.save_line_plot(os.path.join(out, "sweep_instances_miou.svg"), ns,
                           {"mIoU": [r[1] for r in rows]},
                           title="mIoU vs generated instances", xlabel="n", ylabel="mIoU")
    svgplot.save_line_plot(os.path.join(out, "sweep_instances_calibration.svg"), ns,
                           {"calibration": [r[2] for r in rows]},
                           title="Calibration vs generated instances", xlabel="n",
                           ylabel="calibration score")


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "sweep-steps": cmd_sweep_steps,
    "sweep-instances": cmd_sweep_instances,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def main(argv=None):
    parser = _Parser(prog="segdiff", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default="")
    try:
        args, rest = parser.parse_known_args(argv)
        cfg = _resolve_config(args.command, args.config, _parse_overrides(rest))
        COMMANDS[args.command](cfg)
        return 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
