"""Command-line entry point: ``gazegnn <command> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .bench import bench_paths, pinned_threads, thread_limit
from .config import ConfigError, RunConfig, config_from_provenance, load_config
from .data import make_synthetic, read_dataset, split_indices, write_dataset
from .graph import build_graph
from .metrics import ABLATION_COLUMNS, DROP_COLUMNS, format_table
from .model import GazeGnnModel, init_params
from .tensor import load_params
from .train import evaluate, robustness_eval, train

log = logging.getLogger("gazegnn")

COLUMN_TITLES = {
    "accuracy": "accuracy", "auc_average": "avg_auc", "precision": "precision", "recall": "recall", "f1": "f1",
}


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------
def _write_json(out: Path, name: str, payload: dict) -> Path:
    path = out / name
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def _write_text(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text if text.endswith("\n") else text + "\n")
    return path


def _overrides(args) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k, v))
    flag_keys = {
        "lr": "train.lr", "epochs": "train.epochs", "batch_size": "train.batch_size",
        "n": "data.n", "size": "data.size", "noise_sigma": "train.noise_sigma", "gaze": "gaze.enabled",
        "preset": "model.preset", "reps": "bench.reps", "sigma": "bench.sigma",
        "image_size": "bench.image_size", "n_fixations": "bench.n_fixations",
    }
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            pairs.append((key, str(v)))
    if args.seed is not None:
        pairs.append(("seed", str(args.seed)))
    return pairs


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg: RunConfig, data_path):
    """(train, val, test) from a manifest or the synthetic generator, split by seed."""
    if data_path:
        samples = read_dataset(data_path)
    else:
        samples = make_synthetic(cfg.seed, cfg.data.n, cfg.data.size, cfg=cfg.synth_config())
    tr, va, te = split_indices(len(samples), cfg.seed, cfg.data.test_frac, cfg.data.val_frac)
    pick = lambda idx: [samples[i] for i in idx]  # noqa: E731
    return pick(tr), pick(va), pick(te)


def _load_model(path) -> tuple[GazeGnnModel, dict]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    _, meta = load_params(p)
    return GazeGnnModel.load(p), meta


# -- commands -----------------------------------------------------------------------
def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    samples = make_synthetic(cfg.seed, cfg.data.n, cfg.data.size, cfg=cfg.synth_config())
    manifest = write_dataset(samples, out)
    _write_json(out, "synth.json", {**cfg.provenance(), "manifest": manifest.name, "n": len(samples)})
    print(f"wrote {len(samples)} samples to {manifest}")
    return 0


def _train_once(cfg: RunConfig, data, gaze: bool | None = None):
    tr, va, te = data
    mc = cfg.model if gaze is None else dataclasses.replace(cfg.model, gaze_enabled=gaze)
    return train(tr, te, mc, cfg.train_config(), val_set=va or None)


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    data = _dataset(cfg, args.data)
    res = _train_once(cfg, data)
    prov = cfg.provenance()
    res.model.save(out / "checkpoint.json", {**prov, "best_epoch": res.best_epoch, "selection": "test"})
    if res.best_val_state is not None:
        val_model = init_params(res.model.config, 0)
        val_model.load_state(res.best_val_state)
        val_model.save(out / "checkpoint_val.json", {**prov, "best_epoch": res.best_val_epoch, "selection": "val"})
    _write_json(out, "history.json", {**prov, "history": res.history, "best_epoch": res.best_epoch})
    report = evaluate(res.model, data[2])
    _write_json(out, "metrics.json", {**prov, "metrics": report.to_dict()})
    print(format_table(["split", *(COLUMN_TITLES[c] for c in ABLATION_COLUMNS)], [["test", *report.row()]]))
    return 0


def cmd_eval(args) -> int:
    model, meta = _load_model(args.checkpoint)
    cfg = config_from_provenance(meta) if "config" in meta else _config(args)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = _out_dir(args)
    samples = read_dataset(args.data) if args.data else _dataset(cfg, None)[2]
    report = evaluate(model, samples)
    _write_json(out, "eval.json", {**cfg.provenance(), "checkpoint": str(args.checkpoint), "metrics": report.to_dict()})
    print(format_table(["split", *(COLUMN_TITLES[c] for c in ABLATION_COLUMNS)], [["eval", *report.row()]]))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    data = _dataset(cfg, args.data)
    rows, payload = [], {}
    for name, gaze in (("gaze=on", True), ("gaze=off", False)):
        res = _train_once(cfg, data, gaze)
        report = evaluate(res.model, data[2])
        rows.append([name, *report.row(ABLATION_COLUMNS)])
        payload[name] = {"metrics": report.to_dict(), "best_epoch": res.best_epoch, "history": res.history}
    table = format_table(["model", *(COLUMN_TITLES[c] for c in ABLATION_COLUMNS)], rows)
    _write_json(out, "ablation.json", {**cfg.provenance(), "columns": list(ABLATION_COLUMNS), "rows": payload})
    _write_text(out, "ablation.txt", f"# config {cfg.hash()} seed {cfg.seed}\n{table}")
    print(table)
    return 0


def _parse_seeds(raw: str | None, default: int) -> list[int]:
    if not raw:
        return [default]
    try:
        return [int(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {raw!r}") from None


def cmd_robust(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    sigma = cfg.train.noise_sigma
    header = ["seed", "model", *(COLUMN_TITLES[c] + "_drop" for c in DROP_COLUMNS)]
    rows, records = [], []
    if args.checkpoint:
        model, _ = _load_model(args.checkpoint)
        samples = read_dataset(args.data) if args.data else _dataset(cfg, None)[2]
        _, _, drops = robustness_eval(model, samples, sigma, cfg.seed)
        rows.append([cfg.seed, Path(args.checkpoint).name, *(drops[c] for c in DROP_COLUMNS)])
        records.append({"seed": cfg.seed, "model": str(args.checkpoint), "drops": drops})
    else:
        for seed in _parse_seeds(args.seeds, cfg.seed):
            scfg = dataclasses.replace(cfg, seed=seed)
            data = _dataset(scfg, args.data)
            per = {}
            for name, gaze in (("gaze=on", True), ("gaze=off", False)):
                res = _train_once(scfg, data, gaze)
                clean, noisy, drops = robustness_eval(res.model, data[2], sigma, seed)
                # sanity reference on the same model: no noise must mean no drop
                _, _, zero = robustness_eval(res.model, data[2], 0.0, seed)
                rows.append([seed, name, *(drops[c] for c in DROP_COLUMNS)])
                per[name] = {"drops": drops, "drops_at_zero_noise": zero, "clean": clean.to_dict(),
                             "noisy": noisy.to_dict(), "best_epoch": res.best_epoch}
            per["seed"] = seed
            per["gaze_on_drop_le_off"] = per["gaze=on"]["drops"]["accuracy"] <= per["gaze=off"]["drops"]["accuracy"]
            records.append(per)
    table = format_table(header, rows)
    summary = ""
    if not args.checkpoint:
        wins = sum(r["gaze_on_drop_le_off"] for r in records)
        summary = f"gaze=on accuracy drop <= gaze=off drop in {wins} of {len(records)} seeds"
    _write_json(out, "robust.json", {**cfg.provenance(), "noise_sigma": sigma, "columns": list(DROP_COLUMNS),
                                     "records": records, "summary": summary})
    _write_text(out, "robust.txt", f"# config {cfg.hash()} noise_sigma {sigma}\n{table}\n{summary}")
    print(table)
    if summary:
        print(summary)
    return 0


def cmd_graph_dump(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    if args.checkpoint:
        model, _ = _load_model(args.checkpoint)
    else:
        model = init_params(cfg.model, cfg.seed)
    samples = read_dataset(args.data) if args.data else make_synthetic(cfg.seed, max(6, args.index + 1), cfg.data.size,
                                                                         cfg=cfg.synth_config())
    if not 0 <= args.index < len(samples):
        raise UsageError(f"--index {args.index} out of range for {len(samples)} samples")
    from .data import resize

    s = resize(samples[args.index], model.config.input_size)
    g = build_graph(s.image, s.fixations, model)
    payload = {**g.to_json(), **cfg.provenance(), "index": args.index, "label": int(s.label)}
    path = _write_json(out, "graph.json", payload)
    print(f"wrote graph with N={payload['N']} D={payload['D']} k={payload['k']} to {path}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    b = cfg.bench
    report = bench_paths(b.image_size, b.n_fixations, b.sigma, b.reps, b.warmups, cfg.seed, b.model_size,
                         b.patch_size, b.embed_dim, threads=thread_limit())
    _write_json(out, "bench.json", {**cfg.provenance(), "report": report.to_dict()})
    _write_text(out, "bench.txt", report.table())
    print(report.table())
    return 0 if report.passed else 1


# -- parser -------------------------------------------------------------------------
def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file (dotted keys, e.g. gaze.enabled=false)")
    p.add_argument("--seed", type=int, help="global seed (default 0)")
    p.add_argument("--out", default="gazegnn-out", help="output directory; nothing is written elsewhere")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset manifest (JSON lines); synthetic data when omitted")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--n", type=int, help="synthetic dataset size")
    p.add_argument("--preset", help="model preset: default, s14, paper-ish, desk")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazegnn", description="Gaze-aware graph classifier experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--size", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    _common(p)
    _train_flags(p)
    p.add_argument("--gaze", choices=["on", "off"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train with and without gaze on identical seeds")
    _common(p)
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("robust", help="metric drops under image noise")
    _common(p)
    _train_flags(p)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--seeds", help="comma-separated seeds, each trains a gaze=on/off pair")
    p.add_argument("--checkpoint", help="evaluate this model instead of training")
    p.set_defaults(func=cmd_robust)

    p = sub.add_parser("graph", help="graph utilities")
    gsub = p.add_subparsers(dest="graph_command", required=True)
    d = gsub.add_parser("dump", help="write one sample's graph as JSON")
    _common(d)
    d.add_argument("--checkpoint")
    d.add_argument("--data")
    d.add_argument("--index", type=int, default=0)
    d.add_argument("--preset")
    d.set_defaults(func=cmd_graph_dump)

    p = sub.add_parser("bench", help="time gaze embedding against attention-map rasterisation")
    _common(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--n-fixations", dest="n_fixations", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "gaze", None) is not None:
        args.gaze = "true" if args.gaze == "on" else "false"
    try:
        with pinned_threads(thread_limit()):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"gazegnn: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"gazegnn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
