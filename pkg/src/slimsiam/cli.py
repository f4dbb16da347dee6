"""Command-line front end: reproducible pipelines over the library.

Every command reads explicit seeds from its flags or the JSON run
config and writes fixed-name artifacts into the run's output
directory, so repeating a command with the same inputs reproduces
every file byte for byte. Config parsing is strict: unknown keys are
rejected by their full path rather than silently ignored.
"""

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import features as F
from . import metrics as M
from . import net as N
from . import prune as P
from . import synth as S
from . import train as T
from .errors import ConfigError, SlimSiamError
from .losses import Hyperparams

CHECKPOINT_NAME = "checkpoint.ssvw"
COMPACT_NAME = "compact.ssvw"

# Section -> key -> (type, default). None means the key is required.
_SCHEMA = {
    "features": {"vad_threshold": (float, F.DEFAULT_VAD_THRESHOLD)},
    "model": {"widths": (list, [16, 32, 64]), "seed": (int, 0)},
    "train": {
        "epochs": (int, 1),
        "batch_size": (int, 16),
        "learning_rate": (float, 0.01),
        "momentum": (float, 0.9),
        "genuine_ratio": (float, 0.5),
        "seed": (int, 0),
        "eval_every": (int, 1),
        "hyperparams": {
            "lambda_r": (float, 0.0),
            "lambda_gs": (float, 0.0),
            "eta": (float, 1.0),
        },
    },
    "prune": {"tau": (float, 1e-3)},
    "eval": {"n_genuine": (int, 0), "n_impostor": (int, 0), "seed": (int, 0)},
    "paths": {"data_dir": (str, None), "out_dir": (str, None)},
}


def _check_type(value, want, path):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if want is list:
        if (not isinstance(value, list) or not value
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           and v > 0 for v in value)):
            raise ConfigError(
                f"{path}: expected a non-empty list of positive integers")
        return list(value)
    raise AssertionError(want)


def _apply_schema(doc, schema, path):
    out = {}
    for key, value in doc.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {here}")
        spec = schema[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected an object")
            out[key] = _apply_schema(value, spec, here)
        else:
            out[key] = _check_type(value, spec[0], here)
    for key, spec in schema.items():
        if key in out:
            continue
        here = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            out[key] = _apply_schema({}, spec, here)
        elif spec[1] is None:
            raise ConfigError(f"missing required config key: {here}")
        else:
            out[key] = spec[1]
    return out


def load_config(path, need_data_dir=True):
    """Parse and validate a run config; resolve and check its paths."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _apply_schema(doc, _SCHEMA, "")
    data_dir = Path(cfg["paths"]["data_dir"])
    if need_data_dir and not data_dir.is_dir():
        raise ConfigError(f"paths.data_dir does not exist: {data_dir}")
    return cfg


def train_config_from(cfg):
    t = cfg["train"]
    hp = Hyperparams(**t["hyperparams"])
    return T.TrainConfig(
        epochs=t["epochs"], batch_size=t["batch_size"],
        learning_rate=t["learning_rate"], momentum=t["momentum"],
        genuine_ratio=t["genuine_ratio"], seed=t["seed"], hyperparams=hp,
        prune_tau=cfg["prune"]["tau"], eval_every=t["eval_every"])


def load_feature_dir(data_dir):
    """Scan <data_dir>/<speaker>/<utt>.fcub into a PairDataset."""
    data_dir = Path(data_dir)
    by_speaker = {}
    cubes = {}
    for spk_dir in sorted(d for d in data_dir.iterdir() if d.is_dir()):
        files = sorted(spk_dir.glob("*.fcub"))
        if not files:
            continue
        ids = []
        for f in files:
            uid = f"{spk_dir.name}/{f.stem}"
            ids.append(uid)
            cubes[uid] = F.read_fcub(f)
        by_speaker[spk_dir.name] = ids
    if not by_speaker:
        raise ConfigError(f"no feature files under {data_dir}")
    return T.PairDataset(by_speaker, cubes)


def _dev_trials(cfg, dataset):
    e = cfg["eval"]
    if e["n_genuine"] == 0 and e["n_impostor"] == 0:
        return None
    return M.make_trials(dataset.by_speaker, e["n_genuine"],
                         e["n_impostor"], e["seed"])


def _out_dir(cfg):
    out = Path(cfg["paths"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(args):
    out = Path(args.out)
    ds = S.synth_dataset(args.speakers, args.utts, args.seed)
    rows = S.write_dataset(ds, out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["speaker_id", "utt_id", "path"])
    for sid, uid, _ in rows:
        # paths relative to the manifest keep the tree relocatable and
        # reruns byte-identical regardless of where --out points
        w.writerow([sid, uid, f"{sid}/{uid}.wav"])
    _write_text(out / "manifest.csv", buf.getvalue())
    print(f"wrote {len(rows)} clips under {out}")
    return 0


def _read_manifest(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"manifest not found: {p}")
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"speaker_id", "utt_id", "path"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigError(
                f"manifest must have columns speaker_id,utt_id,path: {p}")
        return list(reader)


def cmd_extract(args):
    rows = _read_manifest(args.manifest)
    base = Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vad = F.DEFAULT_VAD_THRESHOLD
    if args.config is not None:
        vad = load_config(args.config, need_data_dir=False)[
            "features"]["vad_threshold"]
    failures = []
    n_ok = 0
    for row in rows:
        try:
            wav = Path(row["path"])
            if not wav.is_absolute():
                wav = base / wav
            clip = F.load_wav(wav)
            cube = F.feature_cube(clip, rel_threshold=vad)
            spk_dir = out / row["speaker_id"]
            spk_dir.mkdir(parents=True, exist_ok=True)
            F.write_fcub(spk_dir / f"{row['utt_id']}.fcub", cube)
            n_ok += 1
        except (SlimSiamError, OSError) as e:
            failures.append((row["speaker_id"], row["utt_id"], row["path"],
                             f"{type(e).__name__}: {e}"))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["speaker_id", "utt_id", "path", "error"])
    w.writerows(failures)
    _write_text(out / "errors.csv", buf.getvalue())
    print(f"extracted {n_ok} cubes, {len(failures)} failures")
    return 1 if failures else 0


def model_variant(cfg):
    gs = cfg["train"]["hyperparams"]["lambda_gs"]
    return "ssl" if gs > 0.0 else "baseline"


def cmd_train(args):
    cfg = load_config(args.config)
    out = _out_dir(cfg)
    dataset = load_feature_dir(cfg["paths"]["data_dir"])
    tc = train_config_from(cfg)
    model = N.build_model(widths=tuple(cfg["model"]["widths"]),
                          seed=cfg["model"]["seed"])
    trials = _dev_trials(cfg, dataset)
    trained, log = T.train(model, dataset, tc, dev_trials=trials)
    N.save_checkpoint(trained, out / CHECKPOINT_NAME)
    _write_text(out / "trainlog.csv", T.trainlog_csv(log))
    _write_json(out / "run_meta.json",
                {"run_id": out.name, "model_variant": model_variant(cfg)})
    print(f"trained {tc.epochs} epochs -> {out / CHECKPOINT_NAME}")
    return 0


def cmd_eval(args):
    cfg = load_config(args.config)
    out = _out_dir(cfg)
    e = cfg["eval"]
    if e["n_genuine"] < 1 or e["n_impostor"] < 1:
        raise ConfigError(
            "eval.n_genuine and eval.n_impostor must be >= 1 for eval")
    dataset = load_feature_dir(cfg["paths"]["data_dir"])
    model = N.load_checkpoint(args.checkpoint)
    trials = M.make_trials(dataset.by_speaker, e["n_genuine"],
                           e["n_impostor"], e["seed"])
    report, scored = M.evaluate(model, trials, dataset.cubes)
    _write_text(out / "scores.csv", M.scores_csv(scored))
    _write_text(out / "report.csv", M.report_csv(report))
    _write_text(out / "det.csv", M.det_csv(report))
    print(f"eer {report.eer:.4f} at threshold {report.threshold:.4f}")
    return 0


def cmd_prune(args):
    cfg = load_config(args.config, need_data_dir=False)
    out = _out_dir(cfg)
    model = N.load_checkpoint(args.checkpoint)
    report = P.group_norms(model)
    mask = P.with_embedding_kept(P.prune_mask(report, cfg["prune"]["tau"]))
    _write_text(out / "group_norms.csv", P.group_norms_csv(report))
    _write_json(out / "mask.json", {
        "tau": mask.tau,
        "keep": [[int(v) for v in layer] for layer in mask.keep],
    })
    kept = sum(int(k.sum()) for k in mask.keep)
    total = sum(len(k) for k in mask.keep)
    print(f"kept {kept}/{total} groups at tau {mask.tau}")
    return 0


def _load_mask(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"mask file not found: {p}")
    doc = json.loads(p.read_text())
    keep = [np.array(layer, dtype=bool) for layer in doc["keep"]]
    return P.PruneMask(keep=keep, tau=float(doc["tau"]))


def cmd_compact(args):
    cfg = load_config(args.config, need_data_dir=False)
    out = _out_dir(cfg)
    model = N.load_checkpoint(args.checkpoint)
    mask = _load_mask(args.mask)
    compacted, cmap = P.compact(model, mask)
    N.save_checkpoint(compacted, out / COMPACT_NAME)
    _write_json(out / "compaction_map.json", {
        "kept_outputs": cmap.kept_outputs,
        "kept_inputs": cmap.kept_inputs,
    })
    widths = [layer.weights.shape[0] for _, layer in
              compacted.weighted_layers()]
    print(f"compacted widths: {widths}")
    return 0


def cmd_bench(args):
    cfg = load_config(args.config, need_data_dir=False)
    out = _out_dir(cfg)
    dense = N.load_checkpoint(args.checkpoint)
    compacted = N.load_checkpoint(args.compact)
    rows = P.bench_models(dense, compacted, repeats=args.repeats,
                          seed=args.seed)
    _write_text(out / "bench.csv", P.bench_csv(rows))
    for k, d_ns, c_ns, speedup in rows:
        print(f"layer {k}: {speedup:.2f}x")
    return 0


def _read_csv_dict(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _run_dirs(out_dir):
    if (out_dir / "run_meta.json").is_file():
        return [out_dir]
    runs = [d for d in sorted(out_dir.iterdir())
            if d.is_dir() and (d / "run_meta.json").is_file()]
    if not runs:
        raise ConfigError(f"no runs (run_meta.json) under {out_dir}")
    return runs


def _summarize_run(run_dir):
    meta = json.loads((run_dir / "run_meta.json").read_text())
    row = {"run_id": meta["run_id"], "model_variant": meta["model_variant"],
           "eer": "", "sparsity_fraction": "", "mean_speedup": ""}
    report = run_dir / "report.csv"
    if report.is_file():
        for r in _read_csv_dict(report):
            if r["metric"] == "eer":
                row["eer"] = r["value"]
    trainlog = run_dir / "trainlog.csv"
    if trainlog.is_file():
        rows = _read_csv_dict(trainlog)
        if rows:
            row["sparsity_fraction"] = rows[-1]["sparsity_fraction"]
    bench = run_dir / "bench.csv"
    if bench.is_file():
        speedups = [float(r["speedup"]) for r in _read_csv_dict(bench)]
        if speedups:
            row["mean_speedup"] = f"{np.mean(speedups):.17g}"
    return row


def cmd_report(args):
    cfg = load_config(args.config, need_data_dir=False)
    out = Path(cfg["paths"]["out_dir"])
    if not out.is_dir():
        raise ConfigError(f"paths.out_dir does not exist: {out}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id", "model_variant", "eer", "sparsity_fraction",
                "mean_speedup"])
    for run_dir in _run_dirs(out):
        r = _summarize_run(run_dir)
        w.writerow([r["run_id"], r["model_variant"], r["eer"],
                    r["sparsity_fraction"], r["mean_speedup"]])
    _write_text(out / "summary.csv", buf.getvalue())
    print(f"wrote {out / 'summary.csv'}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="slimsiam",
        description="Structured-sparsity training, pruning and "
                    "benchmarking for Siamese speaker embeddings.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic WAV dataset")
    sp.add_argument("--speakers", type=int, required=True)
    sp.add_argument("--utts", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("extract", help="extract feature cubes per manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None,
                    help="optional run config for features.vad_threshold")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("train", help="train from a run config")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score trials and report EER")
    sp.add_argument("--config", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("prune", help="threshold group norms into a mask")
    sp.add_argument("--config", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("compact", help="remove dropped groups structurally")
    sp.add_argument("--config", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mask", required=True)
    sp.set_defaults(func=cmd_compact)

    sp = sub.add_parser("bench", help="time dense vs compacted layers")
    sp.add_argument("--config", required=True)
    sp.add_argument("--checkpoint", required=True,
                    help="dense checkpoint")
    sp.add_argument("--compact", required=True,
                    help="compacted checkpoint")
    sp.add_argument("--repeats", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="aggregate run outputs to summary.csv")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SlimSiamError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
