"""Command-line interface: ``skelgen synth|train|generate|eval|ablate``.

Every command takes an optional flat ``key = value`` config file; flags
override file values and the effective config is written as ``config.txt``
into the output directory. Exit codes: 0 success, 1 usage error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .losses import ABLATIONS, LossWeights, ablation_weights
from .models import VARIANTS, CheckpointError, ModelSpec
from .synthdata import ACTIONS, build_dataset, load_manifest, load_png, load_sequence, save_png
from .synthdata.dataset import DatasetFormatError, read_skeletons
from .training import TrainConfig, generate_sequence, load_generator, to_image, train

log = logging.getLogger("skelgen")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
STUDIES = {"losses": list(ABLATIONS), "structures": list(VARIANTS)}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    help: str


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# Every config key with its default. Dataset keys first, then training.
KEYS: dict[str, Key] = {
    "identities": Key(int, 10, "number of synthetic identities"),
    "actions": Key(str, ",".join(ACTIONS), "comma-separated actions"),
    "frames": Key(int, 32, "frames per sequence"),
    "size": Key(int, 64, "image size in pixels"),
    "data_seed": Key(int, 7, "dataset seed"),
    "background": Key(str, "flat", "background kind: flat | gradient | black"),
    "lr": Key(float, 0.0002, "Adam learning rate"),
    "batch": Key(int, 10, "random frames per batch"),
    "epochs": Key(int, 5, "training epochs"),
    "steps": Key(int, 0, "training steps; overrides epochs when > 0"),
    "beta1": Key(float, 0.5, "Adam beta1"),
    "beta2": Key(float, 0.999, "Adam beta2"),
    "lambda": Key(float, 100.0, "L1 weight"),
    "beta": Key(float, 1.0, "triplet weight"),
    "alpha": Key(float, 0.2, "triplet margin"),
    "adv": Key(float, 1.0, "adversarial weight"),
    "variant": Key(str, "siamese", "generator variant: " + " | ".join(VARIANTS)),
    "depth": Key(int, 6, "generator encoder depth"),
    "base": Key(int, 16, "base channel count"),
    "cap": Key(int, 8, "channel cap as a multiple of base"),
    "disc_depth": Key(int, 4, "discriminator depth"),
    "seed": Key(int, 0, "training seed"),
    "pos_offset": Key(int, 1, "triplet positive offset"),
    "neg_offset": Key(int, 5, "triplet negative offset"),
    "checkpoint_every": Key(int, 0, "checkpoint period in steps (0 = end only)"),
    "mix_sequences": Key(_bool, False, "draw each batch from all sequences instead of one"),
    "dropout": Key(_bool, True, "dropout noise at generation"),
    "dropout_seed": Key(int, 0, "dropout seed at generation"),
    "classifier_epochs": Key(int, 15, "action classifier epochs"),
    "classifier_seed": Key(int, 0, "action classifier seed"),
}


def parse_config_text(text: str, where: str = "config") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{where}:{n}: expected 'key = value', got {raw!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        out[k] = v
    return out


def resolve_config(file_values: dict, overrides: dict) -> dict:
    """Defaults <- file values <- flag overrides, with type conversion."""
    cfg = {k: spec.default for k, spec in KEYS.items()}
    for source in (file_values, overrides):
        for k, v in source.items():
            if k not in KEYS:
                raise UsageError(f"unknown config key {k!r}")
            if v is None:
                continue
            try:
                cfg[k] = KEYS[k].type(v)
            except ValueError as e:
                raise UsageError(f"bad value for {k!r}: {e}") from None
    return cfg


def format_config(cfg: dict) -> str:
    lines = ["# skelgen effective config"]
    for k in KEYS:
        v = cfg[k]
        lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_config(cfg))


def train_config(cfg: dict, out_dir: Path | None = None, **changes) -> TrainConfig:
    c = dict(cfg, **changes)
    spec = ModelSpec(
        image_size=c["size"],
        depth=c["depth"],
        base_channels=c["base"],
        channel_cap_factor=c["cap"],
        variant=c["variant"],
        discriminator_depth=c["disc_depth"],
    )
    weights = LossWeights(lambda_=c["lambda"], beta=c["beta"], alpha=c["alpha"], adv=c["adv"])
    return TrainConfig(
        learning_rate=c["lr"],
        batch_size=c["batch"],
        epochs=c["epochs"],
        steps=c["steps"],
        beta1=c["beta1"],
        beta2=c["beta2"],
        weights=weights,
        spec=spec,
        seed=c["seed"],
        pos_offset=c["pos_offset"],
        neg_offset=c["neg_offset"],
        checkpoint_path=out_dir / "checkpoint.skg" if out_dir else None,
        metrics_path=out_dir / "metrics.txt" if out_dir else None,
        checkpoint_every=c["checkpoint_every"],
        dropout_at_generation=c["dropout"],
        mix_sequences=c["mix_sequences"],
    )


# ------------------------------------------------------------------ commands


def cmd_synth(cfg: dict, args) -> int:
    actions = [a for a in cfg["actions"].split(",") if a]
    out = Path(args.out)
    man = build_dataset(
        n_identities=cfg["identities"],
        actions=actions,
        n_frames=cfg["frames"],
        size=cfg["size"],
        seed=cfg["data_seed"],
        out_dir=out,
        background=cfg["background"],
    )
    echo_config(cfg, out)
    print(out / "manifest.txt")
    log.info("%d sequences", len(man.records))
    return EXIT_OK


def _load_data(path):
    if path is None:
        raise UsageError("--data is required")
    p = Path(path)
    if not (p / "manifest.txt").exists():
        raise FileNotFoundError(f"no dataset manifest at {p / 'manifest.txt'}")
    return load_manifest(p)


def cmd_train(cfg: dict, args) -> int:
    man = _load_data(args.data)
    out = Path(args.out)
    echo_config(cfg, out)
    state = train(train_config(cfg, out), man, resume=args.resume)
    print(out / "checkpoint.skg")
    log.info("trained %d steps", state.step)
    return EXIT_OK


def _generate(G, x, S, cfg) -> np.ndarray:
    return to_image(generate_sequence(G, x, S, cfg["dropout_seed"], dropout=cfg["dropout"]))


def cmd_generate(cfg: dict, args) -> int:
    G, meta = load_generator(args.checkpoint)
    size = G.spec.image_size
    if args.sequence:
        sample = load_sequence(_load_data(args.data), args.sequence)
        x, S = sample.x, sample.S
    else:
        if not (args.skeletons and args.reference):
            raise UsageError("give --sequence (with --data) or both --skeletons and --reference")
        S = read_skeletons(Path(args.skeletons))
        x = load_png(Path(args.reference)).astype(np.float64) / 255.0
        sample = None
    if x.shape != (size, size, 3):
        raise CheckpointError(f"reference image shape {x.shape} does not match checkpoint image shape {(size, size, 3)}")
    frames = _generate(G, x, S, cfg)
    out = Path(args.out)
    echo_config(cfg, out)
    for j, f in enumerate(frames):
        save_png(out / f"frame_{j:04d}.png", f)
    if sample is not None:
        grid = ev.image_grid(sample, frames, max_frames=len(frames))
    else:
        from .synthdata import render_skeleton_image

        grid = np.concatenate(
            [np.concatenate([render_skeleton_image(s, size) for s in S], axis=1), np.concatenate(list(frames), axis=1)]
        )
    save_png(out / "grid.png", grid)
    print(out)
    return EXIT_OK


def _classifier(man, cfg):
    seqs = ev.ground_truth_sequences(man, "train")
    return ev.train_action_classifier(
        seqs,
        window=8,
        epochs=cfg["classifier_epochs"],
        seed=cfg["classifier_seed"],
        actions=man.actions,
    )


def evaluate_run(G, man, cfg, classifier, out: Path | None, gt_table=None, ground_truth: bool = False) -> ev.EvalReport:
    """Refit, consistency, color error and accuracy over the test split."""
    records = man.split("test")
    if not records:
        raise ValueError(f"dataset {man.root} has an empty test split")
    report = ev.EvalReport(config=dict(cfg), gt_accuracy=gt_table)
    generated = []
    for r in records:
        sample = load_sequence(man, r.seq_id)
        frames = sample.Y if ground_truth else _generate(G, sample.x, sample.S, cfg)
        seq_eval, fits = ev.evaluate_sequence(frames, sample)
        report.sequences.append(seq_eval)
        generated.append((frames, sample.action))
        if out is not None:
            ev.save_grid(out / f"grid_{r.seq_id}.png", ev.image_grid(sample, frames, fits))
    if classifier is not None:
        report.accuracy = ev.classify_generated(classifier, generated)
    return report


def cmd_eval(cfg: dict, args) -> int:
    man = _load_data(args.data)
    G = None
    if not args.ground_truth:
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required unless --ground-truth is given")
        G, _ = load_generator(args.checkpoint)
    out = Path(args.out)
    echo_config(cfg, out)
    clf = _classifier(man, cfg)
    gt = ev.classify_generated(clf, ev.ground_truth_sequences(man, "test"))
    report = evaluate_run(G, man, cfg, clf, out, gt, ground_truth=args.ground_truth)
    report.write(out / "report.txt")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def ablation_runs(study: str, cfg: dict) -> dict[str, dict]:
    """Config overrides for each run of a study. All runs share the study seed."""
    if study not in STUDIES:
        raise UsageError(f"unknown study {study!r}; valid studies: {', '.join(STUDIES)}")
    base = LossWeights(lambda_=cfg["lambda"], beta=cfg["beta"], alpha=cfg["alpha"], adv=cfg["adv"])
    runs = {}
    if study == "losses":
        for name in ABLATIONS:
            w = ablation_weights(name, base)
            runs[name] = {"lambda": w.lambda_, "beta": w.beta, "alpha": w.alpha, "adv": w.adv}
    else:
        for v in VARIANTS:
            runs[v] = {"variant": v}
    return runs


def format_table(study: str, reports: dict[str, ev.EvalReport], actions: list[str]) -> str:
    names = list(reports)
    gt = next(iter(reports.values())).gt_accuracy
    header = ["metric"] + (["GT"] if gt else []) + names
    rows = [header]
    for a in actions + ["overall"]:
        row = [f"accuracy_{a}"]
        if gt:
            row.append(f"{gt.per_action.get(a, gt.overall) if a != 'overall' else gt.overall:.4f}")
        for n in names:
            t = reports[n].accuracy
            row.append(f"{(t.overall if a == 'overall' else t.per_action.get(a, float('nan'))):.4f}")
        rows.append(row)
    for key in ("refit_error", "consistency", "color_error"):
        rows.append([key] + (["-"] if gt else []) + [f"{reports[n].mean(key):.4f}" for n in names])
    width = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [f"# skelgen ablation study {study}"]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, width)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def run_study(study: str, cfg: dict, man, out: Path, classifier=None) -> dict[str, ev.EvalReport]:
    runs = ablation_runs(study, cfg)
    echo_config(cfg, out)
    clf = classifier or _classifier(man, cfg)
    gt = ev.classify_generated(clf, ev.ground_truth_sequences(man, "test"))
    reports = {}
    for name, changes in runs.items():
        run_dir = out / name.replace("+", "_")
        run_cfg = dict(cfg, **changes)
        echo_config(run_cfg, run_dir)
        state = train(train_config(run_cfg, run_dir), man)
        rep = evaluate_run(state.G, man, run_cfg, clf, run_dir, gt)
        rep.write(run_dir / "report.txt")
        reports[name] = rep
        log.info("%s: accuracy %.3f consistency %.4f color %.4f", name, rep.accuracy.overall, rep.mean("consistency"), rep.mean("color_error"))
    (out / "table.txt").write_text(format_table(study, reports, man.actions))
    _side_by_side(man, cfg, out, runs)
    return reports


def _side_by_side(man, cfg, out: Path, runs) -> None:
    """One test sequence: ground truth row, then one row per run."""
    rec = man.split("test")[0]
    sample = load_sequence(man, rec.seq_id)
    n = min(8, sample.n)
    rows = [np.concatenate(list(sample.Y[:n]), axis=1)]
    for name in runs:
        files = sorted((out / name.replace("+", "_")).glob(f"grid_{rec.seq_id}.png"))
        if files:
            g = load_png(files[0]).astype(np.float64) / 255.0
            s = sample.size
            rows.append(g[2 * s : 3 * s, : n * s])
    save_png(out / "comparison.png", np.concatenate(rows, axis=0))


def cmd_ablate(cfg: dict, args) -> int:
    if args.study not in STUDIES:
        raise UsageError(f"unknown study {args.study!r}; valid studies: {', '.join(STUDIES)}")
    man = _load_data(args.data)
    out = Path(args.out)
    run_study(args.study, cfg, man, out)
    sys.stdout.write((out / "table.txt").read_text())
    return EXIT_OK


# ------------------------------------------------------------------ parser

FLAG_KEYS = {
    "synth": ["identities", "actions", "frames", "size", "data_seed", "background"],
    "train": [k for k in KEYS if k not in ("identities", "actions", "frames", "data_seed", "background", "dropout_seed", "classifier_epochs", "classifier_seed")],
    "generate": ["dropout", "dropout_seed"],
    "eval": ["dropout", "dropout_seed", "classifier_epochs", "classifier_seed"],
}
FLAG_KEYS["ablate"] = FLAG_KEYS["train"] + ["dropout_seed", "classifier_epochs", "classifier_seed"]


def _add_keys(p: argparse.ArgumentParser, keys, seed_name: str = "seed") -> None:
    for k in keys:
        if k == "dropout":
            p.add_argument("--no-dropout", dest="dropout", action="store_const", const=False, default=None, help="disable dropout noise at generation")
            continue
        flag = "--" + (seed_name if k == "data_seed" else k).replace("_", "-")
        p.add_argument(flag, dest=k, default=None, help=f"{KEYS[k].help} (default {KEYS[k].default})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skelgen", description="Skeleton-conditioned motion generation on synthetic data")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    common.add_argument("--config", help="flat key = value config file")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build a synthetic dataset", parents=[common])
    s.add_argument("--out", required=True)
    _add_keys(s, FLAG_KEYS["synth"])

    t = sub.add_parser("train", help="train a generator", parents=[common])
    t.add_argument("--data")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true")
    _add_keys(t, FLAG_KEYS["train"])

    g = sub.add_parser("generate", help="generate frames from a checkpoint", parents=[common])
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data")
    g.add_argument("--sequence")
    g.add_argument("--skeletons")
    g.add_argument("--reference")
    g.add_argument("--out", required=True)
    _add_keys(g, FLAG_KEYS["generate"])

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split", parents=[common])
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--out", required=True)
    e.add_argument("--ground-truth", action="store_true", help="evaluate ground-truth frames instead of a checkpoint")
    _add_keys(e, FLAG_KEYS["eval"])

    a = sub.add_parser("ablate", help="run a loss or structure ablation study", parents=[common])
    a.add_argument("--study", required=True)
    a.add_argument("--data")
    a.add_argument("--out", required=True)
    _add_keys(a, FLAG_KEYS["ablate"])
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "generate": cmd_generate, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        file_values = {}
        if args.config:
            file_values = parse_config_text(Path(args.config).read_text(), args.config)
        overrides = {k: getattr(args, k) for k in FLAG_KEYS[args.command]}
        cfg = resolve_config(file_values, overrides)
        return COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(f"skelgen: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, RuntimeError, CheckpointError, DatasetFormatError, FloatingPointError, KeyError) as e:
        print(f"skelgen: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
