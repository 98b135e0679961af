"""End-to-end jobs behind the CLI: feature caching, training with checkpoints, evaluation."""
from __future__ import annotations

import csv
import json
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig
from .data import ManifestError, ManifestRow, cached_extract, read_manifest, split_rows
from .features import FeatureStats, SegmentBatch, normalize_and_batch
from .metrics import MetricsReport
from .model import ModelConfig, SERModel, build_model
from .tensor import ConfigError
from .training import Adam, NumericAbort, TrainConfig, evaluate, train_epoch

SPLITS = ("train", "test")


@dataclass
class PreparedData:
    train: SegmentBatch
    test: SegmentBatch | None
    cache_hits: dict[str, bool]


def load_splits(cfg: RunConfig) -> dict[str, list[ManifestRow]]:
    if not cfg.manifest:
        raise ConfigError("no dataset manifest given")
    rows = read_manifest(cfg.manifest, cfg.names())
    if not rows:
        raise ManifestError([f"{cfg.manifest}: manifest has no rows"])
    train, test = split_rows(rows, cfg.split_seed, cfg.train_fraction)
    return {"train": train, "test": test}


def extract_splits(cfg: RunConfig) -> tuple[dict[str, SegmentBatch], dict[str, bool]]:
    cache = cfg.resolved_cache_dir()
    batches, hits = {}, {}
    for name, rows in load_splits(cfg).items():
        if rows:
            batches[name], hits[name] = cached_extract(rows, cache / f"{name}.feat", workers=cfg.workers)
    return batches, hits


def features_summary(cfg: RunConfig) -> dict:
    batches, hits = extract_splits(cfg)
    names = cfg.names()
    out = {"segments": 0, "utterances": 0, "splits": {}}
    for split, batch in batches.items():
        counts = Counter(int(v) for v in batch.labels)
        n_utt = len(set(batch.utterance_ids))
        out["splits"][split] = {
            "segments": len(batch),
            "utterances": n_utt,
            "segments_per_class": {names[k]: counts.get(k, 0) for k in range(len(names))},
            "cache_hit": hits[split],
            "cache_file": str(cfg.resolved_cache_dir() / f"{split}.feat"),
        }
        out["segments"] += len(batch)
        out["utterances"] += n_utt
    return out


def prepare(cfg: RunConfig, stats: FeatureStats | None = None) -> tuple[PreparedData, FeatureStats]:
    batches, hits = extract_splits(cfg)
    if "train" not in batches:
        raise ManifestError(["training split is empty"])
    if stats is None:
        stats = FeatureStats.fit(batches["train"].features)
    train = normalize_and_batch(batches["train"], stats)
    test = normalize_and_batch(batches["test"], stats) if "test" in batches else None
    return PreparedData(train, test, hits), stats


def _stats_to_json(stats: FeatureStats) -> dict:
    return {"mean": stats.mean.tolist(), "std": stats.std.tolist(), "floor": stats.floor}


def _stats_from_json(d: dict) -> FeatureStats:
    return FeatureStats(np.asarray(d["mean"]), np.asarray(d["std"]), d["floor"])


def snapshot(model, model_cfg: ModelConfig, train_cfg: TrainConfig, optimizer: Adam,
             rng: np.random.Generator, epoch: int, extra: dict) -> ckpt_io.Checkpoint:
    return ckpt_io.Checkpoint(
        model_config=model_cfg.to_dict(),
        train_config=train_cfg.to_dict(),
        epoch=epoch,
        arrays=model.state_arrays(),
        optimizer_step=optimizer.step_count,
        optimizer_arrays=optimizer.state_arrays(),
        rng_state=ckpt_io.rng_state(rng),
        extra=extra,
    )


def model_from_checkpoint(ck: ckpt_io.Checkpoint) -> SERModel:
    cfg = ModelConfig.from_dict(ck.model_config)
    dtype = next(iter(ck.arrays.values())).dtype
    model = build_model(cfg, seed=0, dtype=dtype)
    model.load_state_arrays(ck.arrays)
    return model


def _read_log(path: Path, before_epoch: int) -> list[str]:
    if not path.exists():
        return []
    keep = []
    for line in path.read_text().splitlines():
        if line.strip() and json.loads(line)["epoch"] < before_epoch:
            keep.append(line)
    return keep


def train_run(cfg: RunConfig, resume: str | None = None, log=print) -> dict:
    """Train to ``cfg.train.epochs`` writing ``log.jsonl``, ``last.ckpt`` and ``best.ckpt``.

    With ``resume`` the model, optimiser, rng, epoch counter and feature
    statistics come from that checkpoint, and the log is truncated to the
    epochs it had completed, so an interrupted run continues exactly.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = cfg.names()
    tcfg = cfg.train
    dtype = np.dtype(tcfg.dtype)

    if resume:
        ck = ckpt_io.load(resume)
        # the saved recipe wins; only the epoch budget may be extended
        tcfg = TrainConfig(**{**ck.train_config, "epochs": cfg.train.epochs})
        model_cfg = ModelConfig.from_dict(ck.model_config)
        model = model_from_checkpoint(ck)
        optimizer = Adam(model, weight_decay=tcfg.weight_decay)
        optimizer.load_state_arrays(ck.optimizer_step, ck.optimizer_arrays)
        rng = ckpt_io.restore_rng(ck.rng_state)
        start = ck.epoch
        stats = _stats_from_json(ck.extra["feature_stats"])
        best_ua = ck.extra.get("best_ua", -1.0)
        best_epoch = ck.extra.get("best_epoch")
        lines = _read_log(out / "log.jsonl", start)
    else:
        model_cfg = cfg.resolved_model()
        model = build_model(model_cfg, seed=tcfg.seed, dtype=dtype)
        optimizer = Adam(model, weight_decay=tcfg.weight_decay)
        # separate stream from the init stream so shuffling is independent of model size
        rng = np.random.default_rng([tcfg.seed, 1])
        start, stats, best_ua, best_epoch, lines = 0, None, -1.0, None, []

    data, stats = prepare(cfg, stats)
    extra = {
        "feature_stats": _stats_to_json(stats),
        "class_names": names,
        "manifest": str(Path(cfg.manifest).resolve()),
        "split_seed": cfg.split_seed,
        "train_fraction": cfg.train_fraction,
        "preset": cfg.preset,
        "best_ua": best_ua,
    }
    if best_epoch is not None:
        extra["best_epoch"] = best_epoch
    log_path = out / "log.jsonl"
    log_path.write_text("".join(line + "\n" for line in lines))
    # held-out split drives model selection; without one the training split does
    epoch = start
    stopped_early = False
    for epoch in range(start, tcfg.epochs):
        try:
            res = train_epoch(model, data.train, optimizer, tcfg, rng, epoch, model_cfg.num_classes)
        except NumericAbort as exc:
            extra["abort"] = {"epoch": epoch, "batch": exc.batch_index, "lr": exc.lr,
                              "lambda": exc.lam, "loss": repr(exc.loss)}
            ckpt_io.save(out / "abort.ckpt", snapshot(model, model_cfg, tcfg, optimizer, rng, epoch, extra))
            raise
        record = res.log_record()
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == tcfg.epochs:
            train_rep = evaluate(model, data.train, model_cfg.num_classes, tcfg.eval_batch_size, cfg.acc_as_precision)
            record["train_wa"], record["train_ua"] = train_rep.wa, train_rep.ua
            sel = train_rep
            if data.test is not None:
                sel = evaluate(model, data.test, model_cfg.num_classes, tcfg.eval_batch_size, cfg.acc_as_precision)
                record["test_wa"], record["test_ua"] = sel.wa, sel.ua
            if sel.ua > extra["best_ua"]:
                extra["best_ua"] = sel.ua
                extra["best_epoch"] = epoch
                ckpt_io.save(out / "best.ckpt", snapshot(model, model_cfg, tcfg, optimizer, rng, epoch + 1, extra))
            if cfg.target_train_acc is not None and train_rep.wa >= cfg.target_train_acc:
                stopped_early = True
        with open(log_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")
        log(json.dumps(record))
        if stopped_early:
            break
    done = epoch + 1 if tcfg.epochs > start else start
    ckpt_io.save(out / "last.ckpt", snapshot(model, model_cfg, tcfg, optimizer, rng, done, extra))
    return {"epochs_completed": done, "best_ua": extra["best_ua"], "stopped_early": stopped_early,
            "out_dir": str(out)}


def eval_run(checkpoint: str, manifest: str | None = None, split: str = "test",
             acc_as_precision: bool = False, workers: int = 1, cache_dir: str = "") -> MetricsReport:
    ck = ckpt_io.load(checkpoint)
    model = model_from_checkpoint(ck)
    extra = ck.extra
    names = extra["class_names"]
    num_classes = model.cfg.num_classes
    if len(names) != num_classes:
        raise ConfigError(f"checkpoint lists {len(names)} class names for a {num_classes}-class model")
    manifest = manifest or extra["manifest"]
    _check_label_count(manifest, num_classes)
    rows = read_manifest(manifest, names)
    if split == "all":
        chosen = rows
    elif split in SPLITS:
        train, test = split_rows(rows, extra["split_seed"], extra["train_fraction"])
        chosen = train if split == "train" else test
    else:
        raise ConfigError(f"unknown split {split!r}")
    if not chosen:
        raise ManifestError([f"split {split!r} is empty"])
    cache = Path(os.environ.get("SER_CACHE_DIR") or cache_dir or Path(checkpoint).parent / "cache")
    batch, _ = cached_extract(chosen, cache / f"eval-{split}.feat", workers=workers)
    batch = normalize_and_batch(batch, _stats_from_json(extra["feature_stats"]))
    return evaluate(model, batch, num_classes, acc_as_precision=acc_as_precision, class_names=names)


def _check_label_count(manifest: str, num_classes: int) -> None:
    with open(manifest, newline="") as fh:
        labels = {rec["label"].strip() for rec in csv.DictReader(fh)}
    if len(labels) > num_classes:
        raise ManifestError(
            [f"class-count mismatch: manifest has {len(labels)} labels, checkpoint model has {num_classes} classes"]
        )


def write_report(report: MetricsReport, out_dir) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "metrics.json", "csv": out / "metrics.csv", "confusion": out / "confusion.csv"}
    paths["json"].write_text(report.to_json() + "\n")
    paths["csv"].write_text(report.to_csv())
    paths["confusion"].write_text(report.confusion_csv())
    return {k: str(v) for k, v in paths.items()}
