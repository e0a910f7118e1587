"""Training configuration, dataset arrays and the epoch loop."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..capsnet import CapsNet, CapsNetConfig
from ..cnn import CnnConfig, CompactCNN
from ..data.pipeline import DB_MAX, DB_MIN, augment, bilinear_resize, normalize_tile, select_polarization
from ..tensor import backward, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, lr_schedule

logger = logging.getLogger(__name__)

MODEL_DEFAULTS = {
    "capsnet": {"batch": 100, "lr_decay": 0.9},
    "cnn": {"batch": 32, "lr_decay": 1.0},
}
AUGMENTATIONS = ("none", "A", "B", "gan", "gan+A", "gan+B")
HISTORY_FIELDS = ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"]


@dataclass
class TrainConfig:
    model: str = "capsnet"
    head: str = "S"
    epochs: int = 50
    batch: int | None = None
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float | None = None
    decay_every: str = "epoch"
    seed: int = 0
    mode: str = "VHVV"
    augmentation: str = "none"
    select: str = "best"
    db_min: float = DB_MIN
    db_max: float = DB_MAX
    capsnet: dict = field(default_factory=dict)
    cnn: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_DEFAULTS:
            raise ValueError(f"model must be one of {sorted(MODEL_DEFAULTS)}, got {self.model!r}")
        defaults = MODEL_DEFAULTS[self.model]
        if self.batch is None:
            self.batch = defaults["batch"]
        if self.lr_decay is None:
            self.lr_decay = defaults["lr_decay"]
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.decay_every not in ("epoch", "step"):
            raise ValueError("decay_every must be 'epoch' or 'step'")
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"augmentation must be one of {AUGMENTATIONS}")
        if self.select not in ("best", "final"):
            raise ValueError("select must be 'best' or 'final'")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self):
        if self.model == "capsnet":
            return CapsNetConfig.desk(**self.capsnet)
        return CnnConfig(**{"head": self.head, **self.cnn})


def build_model(config: TrainConfig):
    seed = int(np.random.SeedSequence(config.seed).generate_state(1)[0])
    if config.model == "capsnet":
        return CapsNet(config.model_config(), seed)
    return CompactCNN(config.model_config(), seed)


def model_from_meta(meta: dict, seed: int = 0):
    kind = meta.get("kind")
    if kind == "capsnet":
        return CapsNet(CapsNetConfig(**meta["config"]), seed)
    if kind == "cnn":
        return CompactCNN(CnnConfig(**meta["config"]), seed)
    raise ValueError(f"checkpoint holds unknown model kind {kind!r}")


def save_model(path, model, extra: dict | None = None) -> None:
    meta = {**model.meta(), **(extra or {})}
    save_checkpoint(path, {k: p.data for k, p in model.parameters().items()}, meta)


def load_model(path):
    tensors, meta = load_checkpoint(path)
    model = model_from_meta(meta)
    params = model.parameters()
    if set(tensors) != set(params):
        raise ValueError(f"{path}: checkpoint tensors do not match a {meta['kind']} model")
    for name, arr in tensors.items():
        if arr.shape != params[name].shape:
            raise ValueError(f"{path}: {name} has shape {arr.shape}, expected {params[name].shape}")
        params[name].data = arr.astype(params[name].dtype)
    return model, meta


def tiles_to_arrays(tiles, size: int, db_min: float = DB_MIN, db_max: float = DB_MAX):
    """Normalized ``(N, size, size, 1)`` float32 inputs and integer labels."""
    xs, ys = [], []
    for t in tiles:
        img = t.pixels[:, :, 0]
        if img.shape != (size, size):
            img = bilinear_resize(img, size, size)
        xs.append(normalize_tile(img, db_min, db_max)[:, :, None])
        ys.append(t.label)
    x = np.asarray(xs, dtype=np.float32).reshape(len(xs), size, size, 1)
    return x, np.asarray(ys, dtype=int)


def prepare_splits(tiles, config: TrainConfig, size: int) -> dict:
    """Select polarization, drop or keep generated tiles, apply flip/rotate policies."""
    tiles = select_polarization(tiles, config.mode)
    use_gan = config.augmentation.startswith("gan")
    train = [t for t in tiles if t.split == "train" and (use_gan or not t.synthetic)]
    policy = config.augmentation[-1] if config.augmentation[-1] in "AB" else None
    if policy:
        train = augment(train, policy, seed=config.seed)
    splits = {"train": train, "val": [t for t in tiles if t.split == "val"],
              "test": [t for t in tiles if t.split == "test"]}
    return {name: tiles_to_arrays(ts, size, config.db_min, config.db_max) for name, ts in splits.items()}


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int
    best_state: dict

    def load_best(self) -> None:
        for name, arr in self.best_state.items():
            self.model.parameters()[name].data = arr.copy()


def _batched_loss(model, x, y, batch: int):
    total, scores = 0.0, []
    with no_grad():
        for i in range(0, len(x), batch):
            loss, s = model.loss(x[i:i + batch], y[i:i + batch])
            total += loss.item() * len(y[i:i + batch])
            scores.append(s)
    scores = np.concatenate(scores)
    return total / len(x), float((scores.argmax(axis=1) == y).mean())


def train(model, train_xy, val_xy, config: TrainConfig, callback=None) -> TrainResult:
    """Minibatch Adam for ``config.epochs`` epochs.

    The history holds one record per epoch. The best epoch is the one with the
    highest validation accuracy (earliest on ties), or the highest training
    accuracy when there is no validation data.
    """
    x, y = train_xy
    if len(x) == 0:
        raise ValueError("training split is empty")
    vx, vy = val_xy if val_xy is not None else (x[:0], y[:0])
    rng = np.random.default_rng([config.seed, 2])
    params = model.parameters()
    opt = Adam(params, config.lr, (config.beta1, config.beta2), config.adam_eps)
    history, best_epoch, best_score, best_state = [], 0, -1.0, {}
    eval_batch = max(config.batch, 16)
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        run_loss = 0.0
        lr = lr_schedule(config.lr, config.lr_decay, epoch)
        for start in range(0, len(x), config.batch):
            idx = order[start:start + config.batch]
            if config.decay_every == "step":
                lr = lr_schedule(config.lr, config.lr_decay, step)
            opt.zero_grad()
            loss, _ = model.loss(x[idx], y[idx])
            backward(loss)
            opt.step(lr)
            run_loss += loss.item() * len(idx)
            step += 1
        _, train_acc = _batched_loss(model, x, y, eval_batch)
        record = {"epoch": epoch + 1, "lr": lr, "train_loss": run_loss / len(x), "train_acc": train_acc,
                  "val_loss": None, "val_acc": None}
        score = train_acc
        if len(vx):
            record["val_loss"], record["val_acc"] = _batched_loss(model, vx, vy, eval_batch)
            score = record["val_acc"]
        history.append(record)
        if score > best_score:
            best_epoch, best_score = epoch + 1, score
            best_state = {k: p.data.copy() for k, p in params.items()}
        logger.info("epoch %d loss %.4f acc %.4f val %s", epoch + 1, record["train_loss"], train_acc,
                    record["val_acc"])
        if callback is not None:
            callback(record)
    return TrainResult(model, history, best_epoch, best_state)


def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in history:
        writer.writerow({k: "" if rec[k] is None else repr(rec[k]) for k in HISTORY_FIELDS})
    return buf.getvalue()
