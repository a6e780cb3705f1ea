"""Adam, plateau-halving schedule with early stopping, chunked batching,
the training loop and the binary checkpoint container."""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dsp
from .loss import LossConfig, combined_loss
from .model import UFormer, UFormerConfig, analyze
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 0.001
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    early_stop_patience: int = 10
    chunk_seconds: float = 4.0
    batch_size: int = 2
    max_epochs: int = 100
    max_steps: int | None = None
    seed: int = 0
    grad_clip: float | None = None
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be positive")
        if self.chunk_seconds <= 0:
            raise ValueError("chunk_seconds must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


# -- optimizer -------------------------------------------------------------------

def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, lr: float, t: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new ``(param, m, v)``."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ValueError(f"adam_step shape mismatch: {param.shape}, {grad.shape}, {m.shape}, {v.shape}")
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    return param - lr * mhat / (np.sqrt(vhat) + eps), m, v


class Adam:
    def __init__(self, named_params: Sequence[tuple[str, Tensor]], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(named_params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        for k, p in self.params.items():
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad.astype(p.data.dtype, copy=False)
            new, self.m[k], self.v[k] = adam_step(p.data, g, self.m[k], self.v[k], self.lr, self.t,
                                                  *self.betas, self.eps)
            p.data = new.astype(p.data.dtype, copy=False)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2))
                          for p in params if p.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# -- schedule --------------------------------------------------------------------

@dataclass
class PlateauSchedule:
    """Halve the rate after ``patience`` epochs without a new best; stop after
    ``stop_patience`` consecutive validation-loss increases."""
    lr: float
    patience: int = 3
    factor: float = 0.5
    stop_patience: int = 10
    best: float = math.inf
    prev: float = math.inf
    stagnant: int = 0
    increases: int = 0

    def update(self, valid_loss: float) -> bool:
        """Record one epoch's validation loss; return True when training should stop."""
        if valid_loss > self.prev:
            self.increases += 1
        else:
            self.increases = 0
        if valid_loss < self.best:
            self.best = valid_loss
            self.stagnant = 0
        else:
            self.stagnant += 1
            if self.stagnant >= self.patience:
                self.lr *= self.factor
                self.stagnant = 0
        self.prev = valid_loss
        return self.increases >= self.stop_patience

    def state(self) -> dict:
        return asdict(self)


# -- batching --------------------------------------------------------------------

def make_batch(utterances: Sequence[tuple[np.ndarray, np.ndarray]], chunk_seconds: float,
               seed) -> tuple[np.ndarray, np.ndarray]:
    """Crop long utterances to a random chunk (same offset for clean and noisy),
    zero-pad the rest to the longest, and stack into (B, L) arrays."""
    if not utterances:
        raise ValueError("make_batch needs at least one utterance")
    rng = np.random.default_rng(seed)
    chunk = int(round(chunk_seconds * dsp.SAMPLE_RATE))
    crops = []
    for clean, noisy in utterances:
        if len(clean) != len(noisy):
            raise dsp.DataError(f"clean/noisy lengths differ: {len(clean)} vs {len(noisy)}")
        if len(clean) > chunk:
            off = int(rng.integers(0, len(clean) - chunk + 1))
            clean, noisy = clean[off:off + chunk], noisy[off:off + chunk]
        crops.append((clean, noisy))
    length = max(len(c) for c, _ in crops)
    clean_b = np.zeros((len(crops), length), dtype=np.float32)
    noisy_b = np.zeros_like(clean_b)
    for i, (c, n) in enumerate(crops):
        clean_b[i, :len(c)] = c
        noisy_b[i, :len(n)] = n
    return clean_b, noisy_b


def batch_loss(model: UFormer, clean: np.ndarray, noisy: np.ndarray, cfg: LossConfig) -> Tensor:
    spec_in = np.stack([analyze(x, model.cfg) for x in noisy])
    target = np.stack([analyze(x, model.cfg) for x in clean])
    s_hat, wave = model.forward(spec_in, clean.shape[1])
    return combined_loss(clean, wave, target, s_hat, cfg)


# -- checkpoints -----------------------------------------------------------------

MAGIC = b"UFMR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_TAGS = {v: k for k, v in _DTYPES.items()}


def write_container(path, entries: dict[str, np.ndarray]) -> None:
    """Little-endian container: magic, u32 version, u32 count, then per entry
    u32 name length, name bytes, u8 dtype tag, u32 rank, u64 extents, raw values."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        tag = _TAGS.get(arr.dtype.newbyteorder("<"))
        if tag is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag])
        key = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(key)) + key + struct.pack("<BI", tag, raw.ndim))
        chunks.append(struct.pack(f"<{raw.ndim}Q", *raw.shape))
        chunks.append(raw.tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(chunks))


def read_container(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        pos, out = 12, {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            tag, rank = struct.unpack_from("<BI", buf, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            dt = _DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(buf):
                raise CheckpointError(f"{path}: truncated entry {name!r}")
            out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt container ({exc})") from None
    return out


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int
    epoch: int
    best_valid: float
    lr: float
    model_config: dict
    train_config: dict
    schedule: dict = field(default_factory=dict)

    def entries(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, group in (("param/", self.params), ("buffer/", self.buffers),
                              ("adam.m/", self.adam_m), ("adam.v/", self.adam_v)):
            for k in sorted(group):
                out[prefix + k] = group[k]
        out["state/step"] = np.array([self.step], dtype=np.int64)
        out["state/epoch"] = np.array([self.epoch], dtype=np.int64)
        out["state/best_valid"] = np.array([self.best_valid], dtype=np.float64)
        out["state/lr"] = np.array([self.lr], dtype=np.float64)
        meta = {"model": self.model_config, "train": self.train_config, "schedule": self.schedule}
        out["config"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        return out

    @classmethod
    def from_entries(cls, entries: dict[str, np.ndarray]) -> "Checkpoint":
        groups: dict[str, dict] = {"param/": {}, "buffer/": {}, "adam.m/": {}, "adam.v/": {}}
        for name, arr in entries.items():
            for prefix, group in groups.items():
                if name.startswith(prefix):
                    group[name[len(prefix):]] = arr
        try:
            meta = json.loads(entries["config"].tobytes().decode("utf-8"))
            return cls(groups["param/"], groups["buffer/"], groups["adam.m/"], groups["adam.v/"],
                       int(entries["state/step"][0]), int(entries["state/epoch"][0]),
                       float(entries["state/best_valid"][0]), float(entries["state/lr"][0]),
                       meta["model"], meta["train"], meta.get("schedule", {}))
        except KeyError as exc:
            raise CheckpointError(f"checkpoint missing entry {exc}") from None


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    write_container(path, ckpt.entries())


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_entries(read_container(path))


def capture(model: UFormer, opt: Adam | None = None, step: int = 0, epoch: int = 0,
            best_valid: float = math.inf, lr: float = 0.0, train_cfg: TrainConfig | None = None,
            schedule: PlateauSchedule | None = None) -> Checkpoint:
    params = {k: p.data.copy() for k, p in model.named_parameters()}
    buffers = {k: b.copy() for k, b in model.named_buffers()}
    m = {k: a.copy() for k, a in opt.m.items()} if opt else {}
    v = {k: a.copy() for k, a in opt.v.items()} if opt else {}
    return Checkpoint(params, buffers, m, v, step, epoch, best_valid, lr, model.cfg.to_dict(),
                      asdict(train_cfg) if train_cfg else {}, schedule.state() if schedule else {})


def restore(model: UFormer, ckpt: Checkpoint, opt: Adam | None = None) -> None:
    """Copy checkpoint arrays into ``model`` (and ``opt``), checking names and shapes."""
    names = dict(model.named_parameters())
    missing = sorted(set(names) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(names))
    if missing or extra:
        first = (missing or extra)[0]
        what = "missing from checkpoint" if missing else "not in model"
        raise CheckpointError(f"parameter {first!r} {what} "
                              f"({len(missing)} missing, {len(extra)} unexpected)")
    for k, p in names.items():
        if ckpt.params[k].shape != p.shape:
            raise CheckpointError(f"parameter {k!r}: checkpoint shape {ckpt.params[k].shape} vs model {p.shape}")
    for k, p in names.items():
        p.data = ckpt.params[k].astype(p.data.dtype).copy()
    for k, b in model.named_buffers():
        if k not in ckpt.buffers:
            raise CheckpointError(f"buffer {k!r} missing from checkpoint")
        b[...] = ckpt.buffers[k]
    if opt is not None:
        opt.t = ckpt.step
        for k in names:
            if k in ckpt.adam_m:
                opt.m[k] = ckpt.adam_m[k].copy()
                opt.v[k] = ckpt.adam_v[k].copy()


def model_from_checkpoint(ckpt: Checkpoint) -> UFormer:
    cfg = UFormerConfig(**ckpt.model_config)
    model = UFormer(cfg, seed=0)
    restore(model, ckpt)
    return model


# -- loop ------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,valid_loss,lr"]
        lines += [f"{r.epoch},{r.train_loss:.8g},{r.valid_loss:.8g},{r.lr:.8g}" for r in self.records]
        return "\n".join(lines) + "\n"


def _first_nonfinite(model: UFormer) -> str | None:
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.data)):
            return f"parameter {name}"
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return f"gradient of {name}"
    return None


def evaluate_loss(model: UFormer, dataset, cfg: TrainConfig, epoch: int) -> float:
    model.eval()
    try:
        losses = []
        for i in range(0, len(dataset), cfg.batch_size):
            clean, noisy = make_batch(dataset[i:i + cfg.batch_size], cfg.chunk_seconds,
                                      (cfg.seed, 1, i))
            losses.append(batch_loss(model, clean, noisy, cfg.loss).item())
    finally:
        model.train()
    return float(np.mean(losses))


def train_loop(model: UFormer, train_set, valid_set, cfg: TrainConfig, *,
               resume: Checkpoint | None = None,
               on_epoch: Callable[[Checkpoint, bool], None] | None = None,
               on_step: Callable[[int, float], None] | None = None) -> History:
    """Run epochs of shuffled mini-batch Adam with plateau halving and early stop.

    Batch order and crops depend only on ``(seed, epoch, batch index)``, so a run
    resumed from an end-of-epoch checkpoint continues exactly as an
    uninterrupted one.  ``on_epoch(checkpoint, is_best)`` fires after every
    epoch; ``on_step(step, loss)`` may return True to stop.
    """
    if not train_set or not valid_set:
        raise ValueError("training and validation sets must be non-empty")
    opt = Adam(list(model.named_parameters()), lr=cfg.lr0)
    sched = PlateauSchedule(cfg.lr0, cfg.plateau_patience, cfg.plateau_factor, cfg.early_stop_patience)
    start_epoch = 0
    history = History()
    if resume is not None:
        restore(model, resume, opt)
        for k, v in resume.schedule.items():
            setattr(sched, k, v)
        start_epoch = resume.epoch
    step = opt.t
    model.train()
    for epoch in range(start_epoch, cfg.max_epochs):
        rng = np.random.default_rng((cfg.seed, 0, epoch))
        order = rng.permutation(len(train_set))
        losses = []
        stop_steps = False
        for b in range(0, len(order), cfg.batch_size):
            items = [train_set[i] for i in order[b:b + cfg.batch_size]]
            clean, noisy = make_batch(items, cfg.chunk_seconds, (cfg.seed, 2, epoch, b))
            model.zero_grad()
            loss = batch_loss(model, clean, noisy, cfg.loss)
            if not np.isfinite(loss.item()):
                raise TrainingAborted(f"non-finite loss at step {step + 1}; "
                                      f"first bad tensor: {_first_nonfinite(model) or 'loss'}")
            loss.backward()
            bad = _first_nonfinite(model)
            if bad:
                raise TrainingAborted(f"non-finite values at step {step + 1}: {bad}")
            if cfg.grad_clip:
                clip_grad_norm(model.parameters(), cfg.grad_clip)
            opt.lr = sched.lr
            opt.step()
            step += 1
            losses.append(loss.item())
            history.step_losses.append(loss.item())
            if on_step is not None and on_step(step, loss.item()):
                stop_steps = True
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop_steps = True
            if stop_steps:
                break
        valid = evaluate_loss(model, valid_set, cfg, epoch)
        improved = valid < sched.best
        stop = sched.update(valid)
        history.records.append(EpochRecord(epoch + 1, float(np.mean(losses)), valid, sched.lr))
        log.info("epoch %d train %.5g valid %.5g lr %.3g", epoch + 1, np.mean(losses), valid, sched.lr)
        if on_epoch is not None:
            on_epoch(capture(model, opt, step, epoch + 1, sched.best, sched.lr, cfg, sched), improved)
        if stop:
            history.stopped_early = True
            break
        if stop_steps:
            break
    return history
