"""Training and evaluation loops, learning-rate schedule and run records."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .backbone import Network, NetworkConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, augment_batch, cifar_split_files, load_cifar, resolve_difficulty,
                   synth_task)
from .errors import ConfigError, NumericalExplosion
from .optim import SGD
from .tensor import no_grad

CSV_HEADER = ("step", "epoch", "split", "metric", "value")
DATASETS = ("synth", "cifar10", "cifar100")
# explosion sites, stored in run.csv by index
EXPLOSION_SITES = ("residual branch", "block output", "attention cell input", "logits", "loss", "gradient")


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 5
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: tuple[int, ...] = ()
    gamma: float = 0.1
    augment: bool = False
    seed: int = 0
    dataset: str = "synth"
    data_dir: str | None = None
    subset: int | None = 2000
    test_subset: int | None = 1000
    num_classes: int = 4            # synth only; CIFAR fixes it
    difficulty: float | str = "mid"
    max_steps: int | None = None
    eval_interval: int = 1          # epochs between evaluations
    precision: int = 32

    def __post_init__(self):
        self.schedule = tuple(int(s) for s in self.schedule)
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ConfigError(f"schedule must be strictly increasing, got {self.schedule}")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}")
        if self.dataset != "synth" and not self.data_dir:
            raise ConfigError("CIFAR datasets need data_dir")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.dataset == "synth":
            resolve_difficulty(self.difficulty, self.num_classes)

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


def lr_at_epoch(base: float, schedule, gamma: float, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``: multiplied by gamma after each schedule milestone."""
    lr = base
    for milestone in schedule:
        if epoch > milestone:
            lr *= gamma
    return lr


@dataclass
class ExplosionEvent:
    step: int
    where: str
    stage: int | None
    block: int | None


@dataclass
class RunRecord:
    rows: list[tuple[int, int, str, str, float]] = field(default_factory=list)
    explosions: list[ExplosionEvent] = field(default_factory=list)
    wall_time: float = 0.0

    def add(self, step: int, epoch: int, split: str, metric: str, value: float) -> None:
        self.rows.append((step, epoch, split, metric, float(value)))

    def series(self, metric: str, split: str = "train") -> list[float]:
        return [r[4] for r in self.rows if r[2] == split and r[3] == metric]

    @property
    def exploded(self) -> bool:
        return bool(self.explosions)

    def to_csv(self, path) -> None:
        # wall time is kept out of the CSV so identical runs give identical files
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for step, epoch, split, metric, value in self.rows:
                w.writerow((step, epoch, split, metric, repr(value)))

    @classmethod
    def from_csv(cls, path) -> "RunRecord":
        rec = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            if tuple(next(reader)) != CSV_HEADER:
                raise ConfigError(f"{path}: unexpected run record header")
            for step, epoch, split, metric, value in reader:
                rec.add(int(step), int(epoch), split, metric, float(value))
        fields = {}
        for step, _, _, metric, value in rec.rows:
            if metric.startswith("explosion_"):
                fields[metric] = None if value < 0 else int(value)
                if metric == "explosion_block":
                    site = fields.get("explosion_site")
                    where = "unknown" if site is None else EXPLOSION_SITES[site]
                    rec.explosions.append(ExplosionEvent(step, where, fields.get("explosion_stage"), fields[metric]))
                    fields = {}
        return rec


@dataclass
class TrainResult:
    record: RunRecord
    model: Network
    checkpoint: str | None
    train_data: Dataset
    test_data: Dataset

    @property
    def exploded(self) -> bool:
        return self.record.exploded


def load_datasets(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "synth":
        train = synth_task(cfg.seed, cfg.subset or 2000, cfg.num_classes, cfg.difficulty, sample_seed=0)
        test = synth_task(cfg.seed, cfg.test_subset or 1000, cfg.num_classes, cfg.difficulty,
                          stats=(train.mean, train.std), sample_seed=1)
        return train, test
    variant = "c10" if cfg.dataset == "cifar10" else "c100"
    train_files, test_files = cifar_split_files(cfg.data_dir, variant)
    train = load_cifar(train_files, variant, limit=cfg.subset)
    test = load_cifar(test_files, variant, stats=(train.mean, train.std), limit=cfg.test_subset)
    return train, test


def _as_logits_fn(model):
    if isinstance(model, (str, os.PathLike)):
        model, _ = load_checkpoint(model)
    if isinstance(model, Network):
        net = model

        def fn(x):
            net.eval()
            with no_grad():
                return net.forward(x.astype(net.dtype, copy=False), check_finite=False).logits.data
        return fn
    return model


def evaluate(model, dataset: Dataset, batch_size: int = 100) -> float:
    """Top-1 accuracy. ``model`` is a Network, a checkpoint path, or a callable images -> logits."""
    fn = _as_logits_fn(model)
    correct = 0
    for start in range(0, len(dataset), batch_size):
        logits = np.asarray(fn(dataset.images[start:start + batch_size]))
        correct += int(np.sum(logits.argmax(axis=1) == dataset.labels[start:start + batch_size]))
    return correct / len(dataset)


def _check_grads(params) -> None:
    for p in params:
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericalExplosion("gradient")


def train(net_cfg: NetworkConfig, cfg: TrainConfig, out_dir=None, data=None, fault_step: int | None = None,
          on_step=None) -> TrainResult:
    """Run SGD training; explosions halt the run and are recorded, never raised.

    ``fault_step`` poisons one stem weight with inf before that step (a test
    hook for the explosion path). ``on_step(step, result, loss)`` is called
    after every optimizer step.
    """
    t0 = time.perf_counter()
    train_ds, test_ds = data if data is not None else load_datasets(cfg)
    if train_ds.num_classes != net_cfg.num_classes:
        raise ConfigError(f"dataset has {train_ds.num_classes} classes, network expects {net_cfg.num_classes}")
    dtype = cfg.dtype
    net = Network(net_cfg, seed=cfg.seed, dtype=dtype)
    opt = SGD(net.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    rec = RunRecord()
    m, bs = len(train_ds), cfg.batch_size
    step = 0
    done = False

    for epoch in range(1, cfg.epochs + 1):
        opt.lr = lr_at_epoch(cfg.lr, cfg.schedule, cfg.gamma, epoch)
        rec.add(step, epoch, "train", "lr", opt.lr)
        rng = np.random.default_rng([cfg.seed, epoch])
        perm = rng.permutation(m)
        n_correct = n_seen = 0
        net.train()
        for start in range(0, m - bs + 1, bs):
            idx = perm[start:start + bs]
            xb = train_ds.images[idx]
            if cfg.augment:
                xb = augment_batch(xb, rng)
            yb = train_ds.labels[idx]
            if fault_step is not None and step == fault_step:
                net.stem.weight.data.flat[0] = np.inf
            try:
                with np.errstate(all="ignore"):
                    res = net.forward(xb.astype(dtype, copy=False))
                    loss = ops.softmax_cross_entropy(res.logits, yb)
                    if not np.isfinite(loss.data).all():
                        raise NumericalExplosion("loss")
                    loss.backward()
                    _check_grads(opt.params)
            except NumericalExplosion as e:
                rec.explosions.append(ExplosionEvent(step, e.where, e.stage, e.block))
                site = EXPLOSION_SITES.index(e.where) if e.where in EXPLOSION_SITES else -1
                rec.add(step, epoch, "train", "explosion_site", site)
                rec.add(step, epoch, "train", "explosion_stage", -1 if e.stage is None else e.stage)
                rec.add(step, epoch, "train", "explosion_block", -1 if e.block is None else e.block)
                done = True
                break
            opt.step()
            step += 1
            rec.add(step, epoch, "train", "loss", loss.item())
            hs = [h.data for tr in res.traces if tr for h in tr]
            if hs:
                rec.add(step, epoch, "train", "attention_min", min(float(h.min()) for h in hs))
                rec.add(step, epoch, "train", "attention_max", max(float(h.max()) for h in hs))
            n_correct += int(np.sum(res.logits.data.argmax(axis=1) == yb))
            n_seen += len(yb)
            if on_step is not None:
                on_step(step, res, loss)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        if rec.explosions:
            break
        if n_seen:
            rec.add(step, epoch, "train", "batch_accuracy", n_correct / n_seen)
        if done or epoch % cfg.eval_interval == 0 or epoch == cfg.epochs:
            rec.add(step, epoch, "train", "accuracy", evaluate(net, train_ds))
            rec.add(step, epoch, "test", "accuracy", evaluate(net, test_ds))
        if done:
            break

    rec.wall_time = time.perf_counter() - t0
    ckpt = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        rec.to_csv(os.path.join(out_dir, "run.csv"))
        if not rec.exploded:
            ckpt = os.path.join(out_dir, "model.dia")
            meta = {"train": asdict(cfg), "norm_mean": train_ds.mean.tolist(), "norm_std": train_ds.std.tolist(),
                    "steps": step}
            save_checkpoint(ckpt, net, meta)
    return TrainResult(rec, net, ckpt, train_ds, test_ds)
