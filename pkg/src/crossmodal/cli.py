"""Command-line entry point: data generation, training, evaluation.

    crossmodal gen-data --config world.json --out DIR
    crossmodal train    --config train.json --data manifest.csv --out DIR
    crossmodal eval     --config eval.json  --data manifest.csv \
                        --checkpoint CKPT --out DIR [--tasks retrieval,bridge,...]

Configs are JSON and must carry an explicit seed; nothing is ever sampled
from the clock. Every command writes a run manifest listing its artifacts,
and rerunning a command reproduces those artifacts bitwise (the manifest's
timestamp aside). Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric
abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import evaluation as ev
from .data import SyntheticWorld, load_dataset, write_dataset
from .errors import (
    ConfigError,
    ContractError,
    DataFormatError,
    DegenerateInputError,
    NumericError,
    ShapeError,
)
from .losses import LossConfig
from .networks import default_paper_spec, desk_spec
from .training import TrainConfig, load_checkpoint, train, write_trajectory_csv

EVAL_TASKS = ("retrieval", "bridge", "zero-shot", "baseline", "probe")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    if "seed" not in doc:
        raise ConfigError(f"config {path} must declare an explicit seed")
    return doc


def _write_run_manifest(out_dir: Path, command: str, args, seed: int,
                        artifacts: list[str]) -> None:
    doc = {
        "command": command,
        "config": str(args.config),
        "data": str(args.data) if getattr(args, "data", None) else None,
        "checkpoint": str(args.checkpoint) if getattr(args, "checkpoint", None) else None,
        "out": str(out_dir),
        "seed": seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "artifacts": sorted(artifacts),
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _world_from_config(doc: dict) -> tuple[SyntheticWorld, int, int, int]:
    known = {"seed", "concepts", "triples", "image_noise", "sound_noise", "text_noise",
             "words_per_concept", "teacher_smoothing", "output_dim", "val_size", "test_size"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown world config fields: {sorted(unknown)}")
    world = SyntheticWorld(
        concepts=doc.get("concepts", 5),
        seed=doc["seed"],
        image_noise=doc.get("image_noise", 0.05),
        sound_noise=doc.get("sound_noise", 0.05),
        text_noise=doc.get("text_noise", 0.5),
        words_per_concept=doc.get("words_per_concept", 50),
        teacher_smoothing=doc.get("teacher_smoothing", 0.01),
        output_dim=doc.get("output_dim", 64),
    )
    n = doc.get("triples", 30)
    return world, n, doc.get("val_size", 0), doc.get("test_size", 0)


def cmd_gen_data(args) -> int:
    doc = _load_config(args.config)
    world, n, val_size, test_size = _world_from_config(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(world, n, out, val_size=val_size, test_size=test_size)
    artifacts = [str(p.relative_to(out)) for p in sorted(out.rglob("*"))
                 if p.is_file() and p.name != "run_manifest.json"]
    _write_run_manifest(out, "gen-data", args, world.seed, artifacts)
    print(f"gen-data: wrote {n} triples ({3 * n} samples) under {out}")
    return EXIT_OK


def _spec_from_config(doc: dict):
    scale = doc.get("scale", 1 / 16)
    if scale == "paper":
        return default_paper_spec()
    return desk_spec(float(scale))


def _train_config(doc: dict) -> TrainConfig:
    loss_doc = dict(doc.get("loss", {}))
    loss_known = {"margin", "ranking_layers", "kl_weight", "ranking_weight",
                  "negatives_per_positive", "seed"}
    unknown = set(loss_doc) - loss_known
    if unknown:
        raise ConfigError(f"unknown loss config fields: {sorted(unknown)}")
    if "ranking_layers" in loss_doc:
        loss_doc["ranking_layers"] = tuple(loss_doc["ranking_layers"])
    loss_doc.setdefault("seed", doc["seed"])
    known = {"seed", "scale", "learning_rate", "batch_size", "iterations",
             "beta1", "beta2", "epsilon", "sigma", "checkpoint_every", "loss"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
    return TrainConfig(
        seed=doc["seed"],
        learning_rate=doc.get("learning_rate", 1e-4),
        batch_size=doc.get("batch_size", 200),
        iterations=doc.get("iterations", 50_000),
        beta1=doc.get("beta1", 0.9),
        beta2=doc.get("beta2", 0.999),
        epsilon=doc.get("epsilon", 1e-8),
        sigma=doc.get("sigma", 0.01),
        checkpoint_every=doc.get("checkpoint_every", 0),
        loss=LossConfig(**loss_doc),
    )


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    cfg = _train_config(doc)
    spec = _spec_from_config(doc)
    dataset = load_dataset(args.data)
    handles = dataset.handles("train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = train(spec, handles, cfg, checkpoint_dir=out / "checkpoint")
    write_trajectory_csv(out / "train_loss.csv", result.trajectory, cfg.loss)
    artifacts = [str(p.relative_to(out)) for p in sorted(out.rglob("*"))
                 if p.is_file() and p.name != "run_manifest.json"]
    _write_run_manifest(out, "train", args, cfg.seed, artifacts)
    final = result.trajectory[-1].terms.get("total", float("nan"))
    print(f"train: {cfg.iterations} iterations, final loss {final:.6f}, "
          f"checkpoint under {out / 'checkpoint' / 'final'}")
    return EXIT_OK


def _eval_retrieval(params, dataset, cfg_doc, out, summary) -> list[str]:
    trips = dataset.triple_samples("test")
    n_splits = cfg_doc.get("n_splits", 1)
    split_size = cfg_doc.get("split_size", len(trips))
    seed = cfg_doc["seed"]
    layer = cfg_doc.get("layer", ev.DEFAULT_LAYER)
    results = []
    for src, dst in (("image", "sound"), ("sound", "image"),
                     ("image", "text"), ("text", "image")):
        pairs = [(t[src].id, t[dst].id) for t in trips]
        res = ev.retrieval_between(params, [t[src] for t in trips],
                                   [t[dst] for t in trips], pairs,
                                   n_splits, split_size, seed, layer,
                                   direction=f"{src}->{dst}")
        results.append(res)
        summary.setdefault("retrieval", {})[res.direction] = res.average_median_rank
    ev.write_ranks_csv(out / "retrieval_ranks.csv", results)
    return ["retrieval_ranks.csv"]


def _eval_bridge(params, dataset, cfg_doc, out, summary) -> list[str]:
    trips = dataset.triple_samples("test")
    pairs = [(t["sound"].id, t["text"].id) for t in trips]
    res = ev.bridge_transfer_eval(
        params, [t["sound"] for t in trips], [t["text"] for t in trips], pairs,
        cfg_doc.get("n_splits", 1), cfg_doc.get("split_size", len(trips)),
        cfg_doc["seed"], cfg_doc.get("layer", ev.DEFAULT_LAYER))
    for direction, r in res.items():
        summary.setdefault("bridge", {})[direction] = r.average_median_rank
    ev.write_ranks_csv(out / "bridge_ranks.csv", list(res.values()))
    return ["bridge_ranks.csv"]


def _eval_zero_shot(params, dataset, cfg_doc, out, summary) -> list[str]:
    if dataset.labels is None:
        raise ConfigError("task zero-shot needs labels.csv next to the manifest")
    train_trips = dataset.triple_samples("train")
    test_trips = dataset.triple_samples("test")
    n_classes = max(dataset.labels.values()) + 1
    results = []
    for train_mod in ("image", "sound", "text"):
        for test_mod in ("image", "sound", "text"):
            res = ev.zero_shot_transfer(
                params,
                [t[train_mod] for t in train_trips], dataset.labels,
                [t[test_mod] for t in test_trips], dataset.labels,
                n_classes,
                layer=cfg_doc.get("layer", ev.DEFAULT_LAYER),
                c_grid=tuple(cfg_doc.get("svm_c_grid", ev.DEFAULT_C_GRID)),
                seed=cfg_doc["seed"],
                iterations=cfg_doc.get("svm_iterations", 300),
            )
            results.append(res)
            summary.setdefault("zero_shot", {})[f"{train_mod}->{test_mod}"] = res.accuracy
    ev.write_accuracies_csv(out / "accuracies.csv", results)
    return ["accuracies.csv"]


def _eval_baseline(params, dataset, cfg_doc, out, summary) -> list[str]:
    layer = "bottleneck"  # modality-specific features, mapped into vision space
    lam = cfg_doc.get("ridge_lambda", 1e-3)
    train_trips = dataset.triple_samples("train")
    test_trips = dataset.triple_samples("test")
    results = []
    for src in ("sound", "text"):
        train_src = ev.embed_all(params, [t[src] for t in train_trips], layer)
        train_img = ev.embed_all(params, [t["image"] for t in train_trips], layer)
        test_src = ev.embed_all(params, [t[src] for t in test_trips], layer)
        test_img = ev.embed_all(params, [t["image"] for t in test_trips], layer)
        train_pairs = [(t[src].id, t["image"].id) for t in train_trips]
        test_pairs = [(t[src].id, t["image"].id) for t in test_trips]
        res = ev.baseline_retrieval(
            train_src, train_img, train_pairs, test_src, test_img, test_pairs,
            cfg_doc.get("n_splits", 1), cfg_doc.get("split_size", len(test_trips)),
            cfg_doc["seed"], lam, direction=f"{src}->image (ridge)")
        results.append(res)
        summary.setdefault("baseline", {})[res.direction] = res.average_median_rank
    ev.write_ranks_csv(out / "baseline_ranks.csv", results)
    return ["baseline_ranks.csv"]


def _eval_probe(params, dataset, cfg_doc, out, summary) -> list[str]:
    trips = dataset.triple_samples("test")
    samples = [s for t in trips for s in t.values()]
    k = cfg_doc.get("probe_k", 5)
    unit_limit = cfg_doc.get("probe_units")
    units = range(unit_limit) if unit_limit else None
    listings = ev.probe_units(params, samples, cfg_doc.get("layer", ev.DEFAULT_LAYER),
                              k=k, units=units)
    ev.write_probe_csv(out / "probe.csv", listings)
    summary["probe"] = {"units": len(listings), "k": k}
    return ["probe.csv"]


_TASK_RUNNERS = {
    "retrieval": _eval_retrieval,
    "bridge": _eval_bridge,
    "zero-shot": _eval_zero_shot,
    "baseline": _eval_baseline,
    "probe": _eval_probe,
}


def cmd_eval(args) -> int:
    doc = _load_config(args.config)
    tasks = [t.strip() for t in (args.tasks or ",".join(EVAL_TASKS)).split(",") if t.strip()]
    unknown = [t for t in tasks if t not in EVAL_TASKS]
    if unknown:
        raise ConfigError(
            f"unknown eval tasks {unknown}; valid tasks are: {', '.join(EVAL_TASKS)}"
        )
    if args.checkpoint is None:
        raise ConfigError("eval needs --checkpoint")
    _, params, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if not dataset.pair_ids("test"):
        raise ConfigError("dataset has no test split; regenerate with test_size > 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    summary: dict = {"config": doc, "tasks": tasks,
                     "full_scale_reference": ev.FULL_SCALE_REFERENCE}
    artifacts: list[str] = []
    for task in tasks:
        artifacts.extend(_TASK_RUNNERS[task](params, dataset, doc, out, summary))
    ev.write_summary_json(out / "summary.json", summary)
    artifacts.append("summary.json")
    _write_run_manifest(out, "eval", args, doc["seed"], artifacts)
    for task in tasks:
        key = task.replace("-", "_")
        if key in summary and isinstance(summary[key], dict):
            for name, value in summary[key].items():
                print(f"{task}: {name} = {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossmodal",
        description="Aligned image/sound/text representation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--config", required=True, help="world config JSON")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(fn=cmd_gen_data)

    tr = sub.add_parser("train", help="train a model on a dataset manifest")
    tr.add_argument("--config", required=True, help="train config JSON")
    tr.add_argument("--data", required=True, help="dataset manifest CSV")
    tr.add_argument("--out", required=True, help="output directory")
    tr.set_defaults(fn=cmd_train)

    evp = sub.add_parser("eval", help="evaluate a checkpoint")
    evp.add_argument("--config", required=True, help="eval config JSON")
    evp.add_argument("--data", required=True, help="dataset manifest CSV")
    evp.add_argument("--checkpoint", required=True, help="checkpoint directory")
    evp.add_argument("--out", required=True, help="output directory")
    evp.add_argument("--tasks", default=None,
                     help=f"comma-separated subset of: {', '.join(EVAL_TASKS)}")
    evp.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ShapeError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, DegenerateInputError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
