"""Command-line interface: gen, train, segment, evaluate, bench, sweep.

Every command resolves its parameters from built-in defaults, then an
optional `key = value` config file (`#` comments allowed), then command-line
flags, and writes a manifest recording the fully resolved configuration.
A manifest is itself a valid config file, so any run can be reproduced with
`icseg <command> --config <manifest>`.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from . import clustering, metrics, trainer
from .core import (
    LossConfig,
    SceneFormatError,
    SceneLabels,
    SyntheticSceneSpec,
    generate_scene,
    read_labels,
    read_scene,
    write_labels,
    write_scene,
)
from .trainer import CheckpointFormatError, TrainingDivergedError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


# command -> key -> (type, default, help); bool-ish keys use int 0/1
PARAM_SPECS: dict[str, dict[str, tuple[type, object, str]]] = {
    "gen": {
        "out": (str, "scene.spc", "output scene file"),
        "seed": (int, 0, "generator RNG seed"),
        "instances": (int, 8, "number of instances"),
        "categories": (int, 3, "number of semantic categories"),
        "points_min": (int, 256, "min points per instance"),
        "points_max": (int, 256, "max points per instance"),
        "region_size": (float, 4.0, "cube edge length in meters"),
        "feature_dim": (int, 8, "instance-signature feature width"),
        "noise_sigma": (float, 0.05, "feature noise sigma"),
    },
    "train": {
        "scenes": (str, "scene.spc", "comma-separated scene files"),
        "out": (str, "head.ckpt", "output checkpoint"),
        "history_out": (str, "", "loss history CSV (default: <out>.history.csv)"),
        "seed": (int, 0, "init and batch-sampling seed"),
        "d_e": (int, 32, "embedding dimension"),
        "normalize_rows": (int, 0, "1 = head emits unit-norm embeddings"),
        "learning_rate": (float, 0.001, "Adam initial learning rate"),
        "lr_drop_step": (int, 1500, "step at which the rate drops"),
        "lr_drop_factor": (float, 0.1, "rate multiplier at the drop"),
        "batch_size": (int, 4, "scenes per step"),
        "total_steps": (int, 2000, "optimization steps"),
        "delta_v": (float, 0.9, "intra-cluster cosine margin"),
        "delta_d": (float, 0.4, "inter-centroid cosine margin"),
        "alpha": (float, 0.5, "weight of the variance term"),
        "beta": (float, 0.5, "weight of the distance term"),
    },
    "segment": {
        "head": (str, "head.ckpt", "trained checkpoint"),
        "scene": (str, "scene.spc", "scene to segment"),
        "out": (str, "pred.lab", "output label file (sem inst per line)"),
        "eps": (float, 0.25, "DBSCAN radius"),
        "min_pts": (int, 8, "DBSCAN core threshold"),
        "min_cluster_size": (int, 35, "suppress smaller clusters"),
        "coord_weight": (float, 1.0, "weight of normalized coordinates"),
        "per_category": (int, 1, "1 = cluster within each predicted category"),
    },
    "evaluate": {
        "gt": (str, "scene.spc", "GT labels (scene or label file)"),
        "pred": (str, "pred.lab", "prediction label file"),
        "report_out": (str, "eval.txt", "report output path"),
        "sweep_out": (str, "", "t-sweep CSV (default: <report_out>.sweep.csv)"),
        "ios_threshold": (float, 0.75, "containment threshold t"),
        "iou_threshold": (float, 0.5, "proposal-recall IoU threshold"),
        "min_pred_size": (int, 35, "drop predictions smaller than this"),
    },
    "bench": {
        "out": (str, "bench.csv", "output CSV"),
        "n_points": (str, "1024,2048,4096,8192,16384", "comma-separated point counts"),
        "d_f": (int, 32, "input feature dimension"),
        "d_e": (int, 32, "embedding dimension"),
        "repeats": (int, 3, "timing repeats (median)"),
        "seed": (int, 0, "data seed"),
        "cap_gib": (float, 8.0, "skip pairwise runs needing more than this"),
    },
    "sweep": {
        "out_dir": (str, "sweep_out", "output directory"),
        "points": (str, "512,1024,2048", "total point counts"),
        "region_sizes": (str, "1.0,2.0,4.0", "region edge lengths"),
        "instances": (int, 8, "instances per scene"),
        "categories": (int, 3, "semantic categories"),
        "steps": (int, 600, "training steps per configuration"),
        "seed": (int, 0, "base seed"),
        "ios_threshold": (float, 0.75, "containment threshold t"),
    },
}


def _convert(key: str, target: type, raw: str) -> object:
    try:
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def parse_config_file(path: str, command: str) -> dict[str, object]:
    spec = PARAM_SPECS[command]
    values: dict[str, object] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "command":
            if raw != command:
                raise UsageError(f"{path}: manifest is for '{raw}', not '{command}'")
            continue
        if key not in spec:
            raise UsageError(f"{path}:{lineno}: unknown key '{key}' for command '{command}'")
        values[key] = _convert(key, spec[key][0], raw)
    return values


def resolve_config(command: str, args: argparse.Namespace) -> dict[str, object]:
    spec = PARAM_SPECS[command]
    cfg = {key: default for key, (_, default, _) in spec.items()}
    if args.config:
        cfg.update(parse_config_file(args.config, command))
    for key in spec:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    return cfg


def format_config(command: str, cfg: dict[str, object]) -> str:
    lines = [f"command = {command}"]
    lines += [f"{key} = {cfg[key]}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def write_manifest(primary_out: str, command: str, cfg: dict[str, object]) -> None:
    path = Path(primary_out)
    if path.suffix == "" and path.is_dir():
        manifest = path / "manifest"
    else:
        manifest = path.with_name(path.name + ".manifest")
    manifest.write_text(format_config(command, cfg))


def _read_gt(path: str) -> SceneLabels:
    with open(path) as fh:
        first = fh.readline().split()
    if first and first[0] == "SPC1":
        _, labels, _ = read_scene(path)
        return labels
    return read_labels(path)


def _int_list(raw: str, key: str) -> list[int]:
    try:
        return [int(tok) for tok in str(raw).split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"bad {key} list: {raw!r}") from exc


def _float_list(raw: str, key: str) -> list[float]:
    try:
        return [float(tok) for tok in str(raw).split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"bad {key} list: {raw!r}") from exc


# --- commands ---------------------------------------------------------------


def cmd_gen(cfg: dict[str, object]) -> int:
    spec = SyntheticSceneSpec(
        n_instances=cfg["instances"], n_categories=cfg["categories"],
        points_per_instance=(cfg["points_min"], cfg["points_max"]),
        region_size=cfg["region_size"], feature_dim=cfg["feature_dim"],
        noise_sigma=cfg["noise_sigma"], rng_seed=cfg["seed"],
    )
    cloud, labels = generate_scene(spec)
    write_scene(cfg["out"], cloud, labels, spec.n_categories)
    write_manifest(str(cfg["out"]), "gen", cfg)
    print(f"wrote {cfg['out']} ({cloud.n_points} points, {spec.n_instances} instances)")
    return 0


def _loss_config(cfg: dict[str, object]) -> LossConfig:
    return LossConfig(delta_v=cfg["delta_v"], delta_d=cfg["delta_d"],
                      alpha=cfg["alpha"], beta=cfg["beta"])


def cmd_train(cfg: dict[str, object]) -> int:
    paths = [p.strip() for p in str(cfg["scenes"]).split(",") if p.strip()]
    if not paths:
        raise UsageError("no scene files given")
    scenes = []
    n_categories = None
    d_f = None
    for path in paths:
        cloud, labels, n_cat = read_scene(path)
        if n_categories is None:
            n_categories, d_f = n_cat, cloud.feature_dim
        elif n_cat != n_categories or cloud.feature_dim != d_f:
            raise SceneFormatError(f"{path}: scene dimensions disagree with {paths[0]}")
        scenes.append((cloud, labels))

    head = trainer.init_head(
        d_in=d_f + 3, d_e=cfg["d_e"], n_categories=n_categories,
        rng_seed=cfg["seed"], normalize_rows=bool(cfg["normalize_rows"]),
    )
    train_cfg = trainer.TrainConfig(
        learning_rate=cfg["learning_rate"], lr_drop_step=cfg["lr_drop_step"],
        lr_drop_factor=cfg["lr_drop_factor"], batch_size=cfg["batch_size"],
        total_steps=cfg["total_steps"], loss=_loss_config(cfg),
        rng_seed=cfg["seed"],
    )
    head, history = trainer.train(head, scenes, train_cfg)
    trainer.save_head(cfg["out"], head)

    history_out = str(cfg["history_out"]) or str(cfg["out"]) + ".history.csv"
    with open(history_out, "w") as fh:
        fh.write("step,total_loss\n")
        for step, value in enumerate(history, start=1):
            fh.write(f"{step},{value:.17g}\n")
    write_manifest(str(cfg["out"]), "train", cfg)
    last = history[-1] if history else float("nan")
    print(f"wrote {cfg['out']} (final loss {last:.6g}, history in {history_out})")
    return 0


def cmd_segment(cfg: dict[str, object]) -> int:
    head = trainer.load_head(cfg["head"])
    cloud, _, _ = read_scene(cfg["scene"])
    db_cfg = clustering.DbscanConfig(
        eps=cfg["eps"], min_pts=cfg["min_pts"],
        min_cluster_size=cfg["min_cluster_size"], coord_weight=cfg["coord_weight"],
    )
    pred = clustering.segment(head, cloud, per_category=bool(cfg["per_category"]), cfg=db_cfg)
    write_labels(cfg["out"], pred)
    write_manifest(str(cfg["out"]), "segment", cfg)
    n_inst = int(pred.instance.max()) + 1 if (pred.instance >= 0).any() else 0
    print(f"wrote {cfg['out']} ({n_inst} predicted instances)")
    return 0


def cmd_evaluate(cfg: dict[str, object]) -> int:
    gt = _read_gt(str(cfg["gt"]))
    pred = _read_gt(str(cfg["pred"]))
    eval_cfg = metrics.EvalConfig(
        ios_threshold=cfg["ios_threshold"], iou_threshold=cfg["iou_threshold"],
        min_pred_size=cfg["min_pred_size"],
    )
    report = metrics.evaluate(gt, pred, eval_cfg)
    per_cat, pr_mean, pr_total = metrics.proposal_recall(gt, pred, eval_cfg.iou_threshold)

    lines = []
    for key in ("n_gt", "n_pred", "tp", "pd", "fm", "fp"):
        lines.append(f"{key} = {getattr(report, key)}")
    for key in ("precision", "recall", "f_score", "pd_ratio", "fm_ratio", "fp_ratio"):
        lines.append(f"{key} = {getattr(report, key):.10g}")
    lines.append(f"proposal_recall_mean = {pr_mean:.10g}")
    lines.append(f"proposal_recall_total = {pr_total:.10g}")
    for k, value in enumerate(per_cat):
        lines.append(f"proposal_recall_cat_{k} = {value:.10g}")
    Path(str(cfg["report_out"])).write_text("\n".join(lines) + "\n")

    sweep_out = str(cfg["sweep_out"]) or str(cfg["report_out"]) + ".sweep.csv"
    rows = metrics.sweep_thresholds(gt, pred, eval_cfg)
    with open(sweep_out, "w") as fh:
        fh.write("t,precision,recall,f1,pd,fm,fp\n")
        for row in rows:
            fh.write(f"{row['t']:.10g},{row['precision']:.10g},{row['recall']:.10g},"
                     f"{row['f1']:.10g},{row['pd']:.10g},{row['fm']:.10g},{row['fp']:.10g}\n")
    write_manifest(str(cfg["report_out"]), "evaluate", cfg)
    print(f"f_score = {report.f_score:.10g} (report in {cfg['report_out']})")
    return 0


def cmd_bench(cfg: dict[str, object]) -> int:
    n_points = _int_list(str(cfg["n_points"]), "n_points")
    results = bench_mod.run_scaling_sweep(
        n_points, d_f=cfg["d_f"], d_e=cfg["d_e"], repeats=cfg["repeats"],
        rng_seed=cfg["seed"], pairwise_cap_bytes=int(float(cfg["cap_gib"]) * (1 << 30)),
    )
    Path(str(cfg["out"])).write_text(bench_mod.results_to_csv(results))
    write_manifest(str(cfg["out"]), "bench", cfg)
    for method in ("pairwise", "centroid"):
        rows = [r for r in results if r.method == method]
        if len(rows) >= 2:
            t_slope = bench_mod.loglog_slope([r.n_points for r in rows],
                                             [r.wall_time for r in rows])
            b_slope = bench_mod.loglog_slope([r.n_points for r in rows],
                                             [r.peak_bytes for r in rows])
            print(f"{method}: wall-time slope {t_slope:.3f}, peak-bytes slope {b_slope:.3f}")
    print(f"wrote {cfg['out']}")
    return 0


def cmd_sweep(cfg: dict[str, object]) -> int:
    out_dir = Path(str(cfg["out_dir"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    points_list = _int_list(str(cfg["points"]), "points")
    regions = _float_list(str(cfg["region_sizes"]), "region_sizes")
    instances = int(cfg["instances"])

    summary = ["n_points,region_size,f_score,precision,recall,pd,fm,fp,"
               "proposal_recall_mean,proposal_recall_total"]
    for n_points in points_list:
        for region in regions:
            tag = f"n{n_points}_r{region:g}"
            cfg_dir = out_dir / tag
            cfg_dir.mkdir(exist_ok=True)
            per_inst = max(1, n_points // instances)
            spec = SyntheticSceneSpec(
                n_instances=instances, n_categories=cfg["categories"],
                points_per_instance=(per_inst, per_inst), region_size=region,
                rng_seed=cfg["seed"],
            )
            cloud, labels = generate_scene(spec)
            write_scene(cfg_dir / "scene.spc", cloud, labels, spec.n_categories)

            head = trainer.init_head(d_in=cloud.feature_dim + 3, d_e=32,
                                     n_categories=spec.n_categories,
                                     rng_seed=cfg["seed"])
            train_cfg = trainer.TrainConfig(
                total_steps=cfg["steps"], lr_drop_step=int(cfg["steps"] * 0.75),
                rng_seed=cfg["seed"],
            )
            head, _ = trainer.train(head, [(cloud, labels)], train_cfg)
            trainer.save_head(cfg_dir / "head.ckpt", head)

            pred = clustering.segment(head, cloud, per_category=True,
                                      cfg=clustering.DbscanConfig())
            write_labels(cfg_dir / "pred.lab", pred)

            eval_cfg = metrics.EvalConfig(ios_threshold=cfg["ios_threshold"])
            report = metrics.evaluate(labels, pred, eval_cfg)
            _, pr_mean, pr_total = metrics.proposal_recall(labels, pred,
                                                           eval_cfg.iou_threshold)
            summary.append(
                f"{n_points},{region:g},{report.f_score:.6g},{report.precision:.6g},"
                f"{report.recall:.6g},{report.pd_ratio:.6g},{report.fm_ratio:.6g},"
                f"{report.fp_ratio:.6g},{pr_mean:.6g},{pr_total:.6g}")
            print(f"{tag}: f_score = {report.f_score:.4g}")

    (out_dir / "summary.csv").write_text("\n".join(summary) + "\n")
    write_manifest(str(out_dir), "sweep", cfg)
    print(f"wrote {out_dir / 'summary.csv'}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "segment": cmd_segment,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
}

DATA_ERRORS = (SceneFormatError, CheckpointFormatError, TrainingDivergedError,
               bench_mod.CapacityError, ValueError, OSError)


def build_parser() -> _Parser:
    parser = _Parser(prog="icseg", description="Point-cloud instance segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, spec in PARAM_SPECS.items():
        p = sub.add_parser(command, description=f"icseg {command}")
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved config and exit")
        for key, (target, default, help_text) in spec.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=target, default=None,
                           help=f"{help_text} (default: {default})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args.command, args)
        if args.print_config:
            sys.stdout.write(format_config(args.command, cfg))
            return 0
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"icseg: usage error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"icseg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
