"""Command-line entry point.

Every command reads an optional flat ``key=value`` config file (``--config``);
flags given on the command line override file values, which override the
defaults in :class:`RunConfig`.

Exit codes: 0 success, 1 usage, 2 data or format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import tensor as T
from .data import (
    ClassMap,
    FormatError,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_labels,
    save_labels,
    synthetic_class_map,
    write_dataset,
)
from .losses import LossConfig, total_loss
from .metrics import evaluate, mean_report, report_csv, report_table
from .model import CheckpointError, ConfigError, ModelConfig, forward, init_model, load_checkpoint, save_checkpoint
from .tensor import DimensionError, NumericalError
from .training import train

log = logging.getLogger("dsanet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# keys of RunConfig that map one-to-one onto ModelConfig
MODEL_KEYS = (
    "num_classes",
    "d_f",
    "d_h",
    "M",
    "N",
    "n_q",
    "n_ql",
    "variant",
    "seed",
    "ge_layers",
    "d_e_input",
    "expansion",
    "ring_entanglement",
    "h_a_source",
    "gradient_method",
)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    # paths
    data_dir: str = "data"
    split: str = "train"
    out_dir: str = "runs"
    checkpoint: str = ""
    output: str = ""
    pred: str = ""
    gt: str = ""
    mapping: str = ""
    export_embeddings: str = ""
    export_logits: str = ""
    # model; num_classes and d_f of 0 mean "take from the dataset"
    num_classes: int = 0
    d_f: int = 0
    d_h: int = 64
    M: int = 24
    N: int = 3
    n_q: int = 4
    n_ql: int = 3
    variant: str = "quantum"
    ge_layers: int = 10
    d_e_input: int = 128
    expansion: int = 2
    ring_entanglement: bool = False
    h_a_source: str = "ge_output"
    gradient_method: str = "adjoint"
    # training
    seed: int = 0
    epochs: int = 200
    lr: float = 1e-4
    clip_norm: float = 0.0
    checkpoint_every: int = 50
    eval_every: int = 1
    losses: str = "ABCDE"
    tau: float = 0.1
    clc_renormalize: bool = True
    clc_detach_weights: bool = True
    clc_mean: bool = True
    # evaluation
    ignore_background: str = ""
    ground_truth_bypass: bool = False
    # synthetic data
    num_videos: int = 5
    segments_per_video: int = 5
    min_duration: int = 30
    max_duration: int = 50
    noise_sigma: float = 0.1
    # gradcheck
    length: int = 8
    tolerance: float = 1e-4

    def model_config(self, num_classes: int, d_f: int) -> ModelConfig:
        values = {k: getattr(self, k) for k in MODEL_KEYS}
        values.update(num_classes=num_classes, d_f=d_f, d_a=self.d_h, d_at=self.d_h)
        return ModelConfig(**values)

    def loss_config(self) -> LossConfig:
        return LossConfig.ablation(
            self.losses,
            tau=self.tau,
            clc_renormalize=self.clc_renormalize,
            clc_detach_weights=self.clc_detach_weights,
            clc_mean=self.clc_mean,
        )

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_classes=self.num_classes or 4,
            segments_per_video=self.segments_per_video,
            min_duration=self.min_duration,
            max_duration=self.max_duration,
            d_f=self.d_f or 32,
            noise_sigma=self.noise_sigma,
            seed=self.seed,
        )


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise UsageError(f"{key}: cannot read {raw!r} as {kind}") from None
    return raw


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (M, N)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"malformed config file {path}: {exc}") from None
    out = {}
    for key, raw in parser.items("run"):
        if key not in FIELD_TYPES:
            raise UsageError(f"{path}: unknown key {key!r}")
        out[key] = parse_value(key, raw)
    return out


def write_config_file(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**values)
    try:
        cfg.loss_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    p.add_argument("--config", help="flat key=value config file")
    for key in keys:
        kind = FIELD_TYPES[key]
        if kind == "bool":
            p.add_argument(_flag(key), dest=key, action=argparse.BooleanOptionalAction, default=None)
        else:
            conv = {"int": int, "float": float}.get(kind, str)
            p.add_argument(_flag(key), dest=key, type=conv, default=None, metavar=key.upper())


MODEL_FLAGS = MODEL_KEYS
TRAIN_FLAGS = ("epochs", "lr", "clip_norm", "checkpoint_every", "eval_every", "losses", "tau",
               "clc_renormalize", "clc_detach_weights", "clc_mean")  # fmt: skip
COMMAND_FLAGS = {
    "train": ("data_dir", "split", "out_dir", *MODEL_FLAGS, *TRAIN_FLAGS),
    "eval": ("data_dir", "split", "checkpoint", "output", "ignore_background", "ground_truth_bypass", *MODEL_FLAGS),
    "predict": ("data_dir", "split", "checkpoint", "out_dir", "export_embeddings", "export_logits", *MODEL_FLAGS),
    "visualize": ("pred", "gt", "mapping", "output"),
    "gen-synthetic": ("out_dir", "split", "num_videos", "num_classes", "d_f", "segments_per_video",
                      "min_duration", "max_duration", "noise_sigma", "seed"),  # fmt: skip
    "gradcheck": ("variant", "seed", "length", "tolerance", "losses", "gradient_method"),
}
HELP = {
    "train": "train a model on a dataset split",
    "eval": "score a checkpoint on a dataset split",
    "predict": "write predicted label files",
    "visualize": "draw ground truth and prediction timelines as SVG",
    "gen-synthetic": "write a seeded synthetic dataset",
    "gradcheck": "compare analytic and finite-difference gradients on a tiny model",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dsanet", description="Dual-stream temporal action segmentation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in COMMAND_FLAGS.items():
        _add_config_flags(sub.add_parser(name, help=HELP[name]), keys)
    return parser


# commands


def _load_split(cfg: RunConfig):
    videos, class_map = load_dataset(cfg.data_dir, cfg.split)
    if not videos:
        raise FormatError(f"split {cfg.split!r} in {cfg.data_dir} lists no videos")
    widths = {v.features.shape[1] for v in videos}
    if len(widths) != 1:
        raise FormatError(f"videos disagree on feature width: {sorted(widths)}")
    return videos, class_map, widths.pop()


def _check_dims(cfg: RunConfig, num_classes: int, d_f: int) -> None:
    problems = []
    if cfg.num_classes and cfg.num_classes != num_classes:
        problems.append(f"num_classes: config {cfg.num_classes}, dataset {num_classes}")
    if cfg.d_f and cfg.d_f != d_f:
        problems.append(f"d_f: config {cfg.d_f}, dataset {d_f}")
    if problems:
        raise DimensionError("config does not match dataset: " + "; ".join(problems))


def cmd_train(cfg: RunConfig) -> int:
    videos, class_map, d_f = _load_split(cfg)
    _check_dims(cfg, len(class_map), d_f)
    model_cfg = cfg.model_config(len(class_map), d_f)
    shortest = min(len(v) for v in videos)
    if model_cfg.M > shortest:
        raise DimensionError(f"M={model_cfg.M} tokens exceeds the shortest video ({shortest} frames)")
    loss_cfg = cfg.loss_config()
    model = init_model(model_cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    loss_keys = ("ce_f", "ce_a", "rel", "clc", "cyc_f", "cyc_a", "total")
    metric_keys = ("acc", "edit", "f1_10", "f1_25", "f1_50", "avg")
    started = time.perf_counter()
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch", *loss_keys, *metric_keys))

        def on_epoch(entry, m):
            metrics = [f"{entry.metrics[k]:.4f}" if k in entry.metrics else "" for k in metric_keys]
            writer.writerow((entry.epoch, *(f"{entry.losses[k]:.10g}" for k in loss_keys), *metrics))
            fh.flush()
            if cfg.checkpoint_every and entry.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(m, out / f"checkpoint_{entry.epoch:04d}.ckpt")

        history = train(
            model,
            videos,
            epochs=cfg.epochs,
            lr=cfg.lr,
            loss_cfg=loss_cfg,
            seed=cfg.seed,
            clip_norm=cfg.clip_norm or None,
            eval_every=cfg.eval_every,
            on_epoch=on_epoch,
        )
    save_checkpoint(model, out / "model.ckpt")
    class_map.save(out / "mapping.txt")
    print(f"trained {cfg.epochs} epochs on {len(videos)} videos in {time.perf_counter() - started:.1f}s")
    if history and history[-1].metrics:
        last = history[-1].metrics
        print(f"final train acc {last['acc']:.2f}  edit {last['edit']:.2f}  avg {last['avg']:.2f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return EXIT_OK


def _explicit_model_keys(args: argparse.Namespace, cfg: RunConfig) -> set[str]:
    keys = {k for k in MODEL_KEYS if getattr(args, k, None) is not None}
    if args.config:
        keys |= set(read_config_file(args.config)) & set(MODEL_KEYS)
    return keys


def _load_for_inference(cfg: RunConfig, explicit: set[str]):
    if not cfg.checkpoint:
        raise UsageError("--checkpoint is required")
    model = load_checkpoint(cfg.checkpoint)
    videos, class_map, d_f = _load_split(cfg)
    saved = model.config
    diffs = []
    for key in sorted(explicit):
        want, have = getattr(cfg, key), getattr(saved, key)
        if key in ("num_classes", "d_f") and not want:
            continue
        if want != have:
            diffs.append(f"{key} (config {want!r}, checkpoint {have!r})")
    if saved.num_classes != len(class_map):
        diffs.append(f"num_classes (dataset {len(class_map)}, checkpoint {saved.num_classes})")
    if saved.d_f != d_f:
        diffs.append(f"d_f (dataset {d_f}, checkpoint {saved.d_f})")
    if diffs:
        raise ConfigError("configuration does not match checkpoint: " + "; ".join(diffs))
    return model, videos, class_map


def _background_id(value: str, class_map: ClassMap) -> int | None:
    if not value:
        return None
    if value in class_map.index:
        return class_map.index[value]
    if value.isdigit() and int(value) < len(class_map):
        return int(value)
    raise UsageError(f"--ignore-background: {value!r} is neither a class name nor an id below {len(class_map)}")


def cmd_eval(cfg: RunConfig, explicit: set[str]) -> int:
    if cfg.ground_truth_bypass:
        videos, class_map, _ = _load_split(cfg)
        model = None
    else:
        model, videos, class_map = _load_for_inference(cfg, explicit)
    background = _background_id(cfg.ignore_background, class_map)
    rows = []
    for v in videos:
        pred = v.labels if model is None else forward(model, v.features).labels
        rows.append({"video_id": v.id, **evaluate(pred, v.labels, background)})
    mean = {"video_id": "mean", **mean_report(rows)}
    text = report_csv(rows + [mean])
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    print(report_table(rows + [mean]))
    return EXIT_OK


def cmd_predict(cfg: RunConfig, explicit: set[str]) -> int:
    model, videos, class_map = _load_for_inference(cfg, explicit)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emb_rows, logit_rows = [], []
    for v in videos:
        result = forward(model, v.features)
        labels = result.labels
        save_labels(out / f"{v.id}.txt", labels, class_map)
        for t in range(len(v)):
            emb_rows.append([v.id, t, class_map.names[v.labels[t]], class_map.names[labels[t]], *result.h_f.data[t]])
            logit_rows.append([v.id, t, *result.frame_logits.data[t]])
    if cfg.export_embeddings:
        d = model.config.d_h
        _write_csv(cfg.export_embeddings, ["video_id", "frame", "label", "pred", *(f"h{j}" for j in range(d))], emb_rows)
    if cfg.export_logits:
        _write_csv(cfg.export_logits, ["video_id", "frame", *class_map.names], logit_rows)
    print(f"wrote {len(videos)} prediction files to {out}")
    return EXIT_OK


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in row])


# fixed qualitative palette, cycled when there are more classes
PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#17becf",
)  # fmt: skip


def render_timeline(gt: np.ndarray, pred: np.ndarray, names: Sequence[str], width: int = 800) -> str:
    """Two aligned bars, ground truth on top, with a legend of the classes present."""
    if len(gt) != len(pred):
        raise DimensionError(f"ground truth has {len(gt)} frames but prediction has {len(pred)}")
    length = len(gt)
    left, bar_h, gap = 110, 28, 12
    scale = width / length
    present = sorted(set(int(c) for c in gt) | set(int(c) for c in pred))
    legend_rows = (len(present) + 3) // 4
    height = 20 + 2 * bar_h + gap + 24 + 20 * legend_rows
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + width + 10}" height="{height}" '
        f'viewBox="0 0 {left + width + 10} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{left + width + 10}" height="{height}" fill="#ffffff"/>',
    ]
    for row, (title, seq) in enumerate((("ground truth", gt), ("prediction", pred))):
        y = 10 + row * (bar_h + gap)
        parts.append(f'<text x="{left - 8}" y="{y + bar_h / 2 + 4:.1f}" text-anchor="end">{title}</text>')
        start = 0
        for t in range(1, length + 1):
            if t == length or seq[t] != seq[start]:
                c = int(seq[start])
                parts.append(
                    f'<rect x="{left + start * scale:.3f}" y="{y}" width="{(t - start) * scale:.3f}" '
                    f'height="{bar_h}" fill="{PALETTE[c % len(PALETTE)]}"><title>{escape(names[c])}</title></rect>'
                )
                start = t
    y0 = 10 + 2 * bar_h + gap + 16
    for i, c in enumerate(present):
        x = left + (i % 4) * (width / 4)
        y = y0 + (i // 4) * 20
        parts.append(f'<rect x="{x:.3f}" y="{y}" width="12" height="12" fill="{PALETTE[c % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 18:.3f}" y="{y + 10}">{escape(names[c])}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_visualize(cfg: RunConfig) -> int:
    if not (cfg.pred and cfg.gt and cfg.mapping and cfg.output):
        raise UsageError("visualize needs --pred, --gt, --mapping and --output")
    class_map = ClassMap.load(cfg.mapping)
    gt = load_labels(cfg.gt, class_map)
    pred = load_labels(cfg.pred, class_map)
    Path(cfg.output).write_text(render_timeline(gt, pred, class_map.names), encoding="utf-8")
    print(f"wrote {cfg.output}")
    return EXIT_OK


def cmd_gen_synthetic(cfg: RunConfig) -> int:
    try:
        spec = cfg.synthetic_spec()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if cfg.num_videos < 1:
        raise UsageError("num_videos must be >= 1")
    videos = generate_synthetic(spec, cfg.num_videos)
    class_map = synthetic_class_map(spec.num_classes)
    write_dataset(cfg.out_dir, videos, class_map, split=cfg.split)
    # suggested run config: two tokens per true segment
    write_config_file(
        Path(cfg.out_dir) / "run.cfg",
        {"data_dir": cfg.out_dir, "split": cfg.split, "num_classes": spec.num_classes, "d_f": spec.d_f,
         "M": 2 * spec.segments_per_video, "seed": cfg.seed},  # fmt: skip
    )
    print(f"wrote {len(videos)} videos ({spec.num_classes} classes, d_f={spec.d_f}) to {cfg.out_dir}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    model_cfg = ModelConfig.tiny(variant=cfg.variant, seed=cfg.seed, gradient_method=cfg.gradient_method)
    if cfg.length < model_cfg.M:
        raise UsageError(f"length must be at least M={model_cfg.M}")
    model = init_model(model_cfg)
    rng = np.random.default_rng(cfg.seed)
    x = rng.normal(size=(cfg.length, model_cfg.d_f))
    y = np.sort(rng.integers(0, model_cfg.num_classes, size=cfg.length))
    # detached contrastive weights are not the derivative of the forward pass,
    # so the check runs on the bare weighted sum
    flags = LossConfig.ablation(cfg.losses)
    loss_cfg = LossConfig.literal(**{k: getattr(flags, k) for k in ("use_ce_f", "use_ce_a", "use_rel", "use_clc", "use_cyc")})
    started = time.perf_counter()
    err = T.grad_check(lambda: total_loss(forward(model, x), y, loss_cfg).total, model.parameters())
    elapsed = time.perf_counter() - started
    print(f"parameters: {model.num_parameters()}  max relative error: {err:.3e}  ({elapsed:.1f}s)")
    if not err <= cfg.tolerance:
        print(f"gradient check failed: {err:.3e} > {cfg.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, _explicit_model_keys(args, cfg))
        if args.command == "predict":
            return cmd_predict(cfg, _explicit_model_keys(args, cfg))
        if args.command == "visualize":
            return cmd_visualize(cfg)
        if args.command == "gen-synthetic":
            return cmd_gen_synthetic(cfg)
        return cmd_gradcheck(cfg)
    except UsageError as exc:
        print(f"dsanet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"dsanet {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, CheckpointError, ConfigError, DimensionError, FileNotFoundError, ValueError) as exc:
        print(f"dsanet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
