"""Command-line front end: ``diffordinal {gen-data,train,eval,predict,report}``.

Exit codes: 0 success, 2 validation error, 3 runtime / numerical / IO error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import atomic_write, load_checkpoint, restore, save_checkpoint
from .config import RunConfig, from_mapping, load_config
from .errors import ConfigError, IngestionError, NumericalError
from .features import load_feature_file
from .model import build_model
from .reporting import comparison_csv, comparison_table, load_report, write_report
from .synth import SynthConfig, bayes_accuracy, generate, write_dataset
from .training import STREAMS, evaluate, generator, make_optimizer, stream_seed, train_epoch


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, doc: dict) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    atomic_write(path, lambda tmp: Path(tmp).write_text(text))


def _tensor(x: np.ndarray) -> torch.Tensor:
    return torch.tensor(x, dtype=torch.float32)


def _load_data(path, cfg: RunConfig):
    data = load_feature_file(path)
    if data.num_classes != cfg.num_classes:
        raise ConfigError(f"num_classes: config has {cfg.num_classes}, {path} declares K={data.num_classes}")
    return data


# ---------------------------------------------------------------- commands


def run_gen_data(cfg: SynthConfig, out_dir) -> dict:
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "synth": cfg.to_dict(), "files": {}, "bayes_accuracy": {}}
    for split in ("train", "test"):
        if split == "test" and not cfg.n_test:
            continue
        data = generate(cfg, split)
        write_dataset(data, cfg, out / f"{split}.txt", out / f"{split}_latents.txt")
        manifest["files"][split] = {"features": f"{split}.txt", "latents": f"{split}_latents.txt"}
        manifest["bayes_accuracy"][split] = bayes_accuracy(cfg, data)
    _write_json(out / "manifest.json", manifest)
    return manifest


def run_train(cfg: RunConfig, resume: bool = False, echo=print) -> list[dict]:
    """Train (or resume) up to ``cfg.epochs``; returns the per-epoch log."""
    cfg.validate(training=True)
    torch.set_num_threads(cfg.threads)
    data = _load_data(cfg.data, cfg)
    x, y = _tensor(data.x), torch.from_numpy(data.y)
    ckpt_path = Path(cfg.checkpoint)

    if resume and ckpt_path.exists():
        ckpt = load_checkpoint(ckpt_path)
        if ckpt["in_dim"] != data.dim:
            raise ConfigError(f"data dimension {data.dim} != checkpoint input dimension {ckpt['in_dim']}")
        model, optimizer, _ = restore(ckpt, cfg)
        start, log = ckpt["epoch"], list(ckpt["log"])
        echo(f"resuming from {ckpt_path} at epoch {start}")
    else:
        torch.manual_seed(stream_seed(cfg.seed, "init"))
        model = build_model(cfg.head, data.dim, cfg.num_classes, **cfg.model_kwargs())
        optimizer = make_optimizer(model, cfg.lr)
        start, log = 0, []

    run_dir = ckpt_path.parent
    _write_json(run_dir / "train_manifest.json", {
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.arch_hash(),
        "seeds": {"master": cfg.seed, "streams": {s: stream_seed(cfg.seed, s) for s in STREAMS}},
        "data_sha256": _digest(cfg.data),
    })
    for epoch in range(start, cfg.epochs):
        rec = train_epoch(model, optimizer, x, y, cfg.batch_size, cfg.seed, epoch)
        rec["epoch"] = epoch + 1
        log.append(rec)
        steps = " ".join(f"{v:.5f}" for v in rec["step_losses"])
        echo(f"epoch {epoch + 1}/{cfg.epochs} loss={rec['loss']:.6f} step_losses=[{steps}]")
        save_checkpoint(ckpt_path, model, optimizer, cfg, data.dim, epoch + 1, log)
        log_text = "".join(json.dumps(r) + "\n" for r in log)
        atomic_write(run_dir / "train_log.jsonl", lambda tmp: Path(tmp).write_text(log_text))
    return log


def _model_for_inference(ckpt_path, cfg: RunConfig | None):
    ckpt = load_checkpoint(ckpt_path)
    model, _, cfg = restore(ckpt, cfg)
    model.eval()
    return model, cfg, ckpt


def run_eval(checkpoint, data_path=None, report_dir=None, cfg: RunConfig | None = None):
    model, cfg, ckpt = _model_for_inference(checkpoint, cfg)
    cfg.validate()
    torch.set_num_threads(cfg.threads)
    data_path = data_path or cfg.test_data
    if not data_path:
        raise ConfigError("test_data: no evaluation feature file given")
    data = _load_data(data_path, cfg)
    if data.dim != ckpt["in_dim"]:
        raise ConfigError(f"data dimension {data.dim} != checkpoint input dimension {ckpt['in_dim']}")
    rep, _ = evaluate(model, _tensor(data.x), data.y, generator(cfg.seed, "eval"), cfg.samples_per_step)
    meta = {
        "head": cfg.head,
        "fusion_mode": cfg.fusion_mode,
        "config_hash": cfg.arch_hash(),
        "epochs_trained": ckpt["epoch"],
        "samples_per_step": cfg.samples_per_step,
        "inference_steps": cfg.inference_steps,
        "seed": cfg.seed,
        "data_sha256": _digest(data_path),
    }
    out = Path(report_dir or cfg.report_dir)
    write_report(rep, out, meta)
    _write_json(out / "manifest.json", {
        "version": __version__, "config": cfg.to_dict(), "checkpoint": str(checkpoint),
        "checkpoint_sha256": _digest(checkpoint), "data": str(data_path), **{"meta": meta},
    })
    return rep


def run_predict(checkpoint, vector: list[float], cfg: RunConfig | None = None, echo=print):
    model, cfg, ckpt = _model_for_inference(checkpoint, cfg)
    cfg.validate()
    if len(vector) != ckpt["in_dim"]:
        raise ConfigError(f"vector has dimension {len(vector)}, expected {ckpt['in_dim']}")
    if not all(np.isfinite(vector)):
        raise ConfigError("vector contains non-finite values")
    trace = model.predict(_tensor(np.asarray([vector])), generator(cfg.seed, "diffusion-sample"),
                          cfg.samples_per_step)
    echo("step  mean       bit  samples")
    for j in range(model.num_steps):
        samples = ",".join(f"{v:.6f}" for v in trace.samples[0, j])
        echo(f"{j + 1:<4}  {trace.means[0, j]:<9.6f}  {trace.bits[0, j]:<3}  {samples}")
    echo(f"class {trace.classes[0]} valid {'yes' if trace.valid[0] else 'no'}")
    return trace


def run_report(paths: list, out_dir=None, names: list | None = None, echo=print) -> str:
    rows = []
    for i, p in enumerate(paths):
        rep, meta = load_report(p)
        name = names[i] if names else "/".join(str(meta.get(k, "?")) for k in ("head", "fusion_mode"))
        rows.append((name, rep))
    table = comparison_table(rows)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.txt").write_text(table)
        (out / "comparison.csv").write_text(comparison_csv(rows))
    echo(table.rstrip("\n"))
    return table


# ---------------------------------------------------------------- argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.type in ("int", "int | None", int):
            p.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type in ("float", float):
            p.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None)


def _overrides(args) -> dict:
    names = {f.name for f in fields(RunConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffordinal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic long-tailed ordinal dataset")
    d = SynthConfig()
    g.add_argument("--k", type=int, default=d.num_classes)
    g.add_argument("--n", type=int, default=d.n_total)
    g.add_argument("--n-test", type=int, default=d.n_test)
    g.add_argument("--d", type=int, default=d.dim)
    g.add_argument("--tail-ratio", type=float, default=d.tail_ratio)
    g.add_argument("--ambiguity", type=float, default=d.ambiguity)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_config_flags(t)
    t.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")

    e = sub.add_parser("eval", help="evaluate a checkpoint and write report files")
    _add_config_flags(e)

    pr = sub.add_parser("predict", help="decode a single feature vector")
    _add_config_flags(pr)
    src = pr.add_mutually_exclusive_group(required=True)
    src.add_argument("--vector", help="comma-separated values")
    src.add_argument("--vector-file", help="file holding one comma-separated vector")

    r = sub.add_parser("report", help="comparison table across report.json files")
    r.add_argument("reports", nargs="+")
    r.add_argument("--names", nargs="+")
    r.add_argument("--out", help="directory for comparison.txt / comparison.csv")
    return parser


def _inference_config(args):
    """Config for eval/predict: checkpoint echo, then file, then flags."""
    over = _overrides(args)
    file_cfg = load_config(args.config) if args.config else None
    path = over.get("checkpoint") or (file_cfg.checkpoint if file_cfg else RunConfig.checkpoint)
    base = file_cfg or from_mapping(load_checkpoint(path)["config"])
    return from_mapping({**over, "checkpoint": path}, base)


def _dispatch(args) -> None:
    if args.command == "gen-data":
        cfg = SynthConfig(args.k, args.n, args.d, args.tail_ratio, args.ambiguity, args.seed, args.n_test)
        manifest = run_gen_data(cfg, args.out)
        print(json.dumps(manifest["bayes_accuracy"]))
    elif args.command == "train":
        cfg = load_config(args.config, _overrides(args))
        run_train(cfg, resume=args.resume, echo=lambda s: print(s, flush=True))
    elif args.command == "eval":
        cfg = _inference_config(args)
        rep = run_eval(cfg.checkpoint, cfg.test_data, cfg.report_dir, cfg)
        print(f"accuracy={rep.accuracy:.6f} macro_f1={rep.macro_f1:.6f} sensitivity={rep.sensitivity:.6f} "
              f"specificity={rep.specificity:.6f} invalid_sequence_rate={rep.invalid_sequence_rate:.6f}")
    elif args.command == "predict":
        cfg = _inference_config(args)
        text = args.vector if args.vector is not None else Path(args.vector_file).read_text()
        try:
            vector = [float(v) for v in text.strip().split(",")]
        except ValueError as err:
            raise ConfigError(f"vector: {err}") from None
        run_predict(cfg.checkpoint, vector, cfg)
    elif args.command == "report":
        run_report(args.reports, args.out, args.names)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except (ConfigError, IngestionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (NumericalError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
