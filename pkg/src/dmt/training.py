"""Training: token-budget batching, bias-corrected Adam with plateau
lr-shrink, the epoch loop with per-epoch dev loss/BLEU and checkpointing,
and best-checkpoint selection by dev BLEU.

Everything is deterministic given (seed, corpus, config): batch packing,
batch order, dropout masks, and optimizer arithmetic all flow from the
one seed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import shutil
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import RngState, fan_seed
from .bleu import BleuConfig, score_corpus
from .decoding import DecodeConfig, greedy_decode_batch
from .errors import (CheckpointError, ConfigError, DivergenceError,
                     FingerprintError)
from .models import ARCH_CONFIGS, build_model, label_smoothed_loss
from .subword import BOS_ID, PAD_ID
from .textnorm import detokenize
from .subword import undo_bpe

__all__ = [
    "TrainConfig", "AdamState", "PlateauScheduler", "Batch", "Checkpoint",
    "EpochStats", "TrainReport", "preset", "PRESETS", "make_batches",
    "pad_batch", "adam_step", "train", "evaluate_loss", "evaluate_bleu",
    "save_checkpoint", "load_checkpoint", "restore_model",
]


# ---------------------------------------------------------------------------
# config


@dataclass
class TrainConfig:
    arch: str = "transformer"
    learning_rate: float = 5e-4
    max_tokens: int = 0          # 0 = disabled; token-budget batching
    batch_size: int = 128        # 0 = disabled; fixed sentence count
    epochs: int = 10
    label_smoothing: float = 0.1
    dropout: float = 0.1
    lr_shrink: float = 0.5
    patience: int = 1
    min_improvement: float = 1e-4
    clip_norm: float = 0.0       # 0 = off; global L2 otherwise
    seed: int = 1
    adam_beta1: float = 0.0      # 0 = use the per-arch default pair
    adam_beta2: float = 0.0
    adam_eps: float = 1e-8
    keep_last: int = 0           # checkpoint pruning; 0 keeps everything
    target_bleu: float = 0.0     # > 0: stop once dev BLEU reaches it

    def validate(self):
        if self.arch not in ARCH_CONFIGS:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if (self.max_tokens > 0) == (self.batch_size > 0):
            raise ConfigError("exactly one of max_tokens/batch_size must be set")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 < self.lr_shrink <= 1.0:
            raise ConfigError("lr_shrink must be in (0, 1]")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    def betas(self):
        if self.adam_beta1 > 0 and self.adam_beta2 > 0:
            return self.adam_beta1, self.adam_beta2
        return (0.9, 0.98) if self.arch == "transformer" else (0.9, 0.999)


PRESETS = {
    # the from-scratch transformer recipe
    "transformer-scratch": TrainConfig(arch="transformer", learning_rate=5e-4,
                                       batch_size=128, epochs=10,
                                       label_smoothing=0.1, dropout=0.1),
    # recurrent recipes: token batching, plateau-halved lr
    "lstm": TrainConfig(arch="lstm", learning_rate=0.005, max_tokens=12000,
                        batch_size=0, epochs=25, dropout=0.2, lr_shrink=0.5,
                        clip_norm=1.0),
    "bilstm": TrainConfig(arch="bilstm", learning_rate=0.005, max_tokens=12000,
                          batch_size=0, epochs=25, dropout=0.2, lr_shrink=0.5,
                          clip_norm=1.0),
    "conv": TrainConfig(arch="conv", learning_rate=0.005, max_tokens=12000,
                        batch_size=0, epochs=20, dropout=0.1, lr_shrink=0.5),
    # settings for fine-tuning an external pretrained model; the model
    # itself is out of scope, the preset documents the recipe
    "finetune-pretrained": TrainConfig(arch="transformer", learning_rate=3e-5,
                                       max_tokens=1568, batch_size=0, epochs=10,
                                       label_smoothing=0.1, dropout=0.1),
}


def preset(name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return dataclasses.replace(PRESETS[name])


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    src: np.ndarray        # [B, S] padded
    src_pad_mask: np.ndarray
    tgt_in: np.ndarray     # [B, T]: BOS + target[:-1]
    tgt_out: np.ndarray    # [B, T]: target (ends with EOS), PAD elsewhere
    indices: list
    n_tokens: int          # non-pad target tokens


def make_batches(pairs, max_tokens: int = 0, batch_size: int = 0,
                 seed: int = 0):
    """Group pair indices into batches.

    Token mode: sort by source length (stable), pack greedily so that
    padded_width * height stays within max_tokens on both sides. Sentence
    mode: fixed-size chunks of the sorted order. Batch order is shuffled
    under the seed. Returns (index batches, skipped pair count).
    """
    if (max_tokens > 0) == (batch_size > 0):
        raise ConfigError("exactly one of max_tokens/batch_size must be set")
    order = sorted(range(len(pairs)), key=lambda i: len(pairs[i][0]))
    batches = []
    skipped = 0
    if batch_size > 0:
        batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    else:
        cur, ws, wt = [], 0, 0
        for i in order:
            s, t = len(pairs[i][0]), len(pairs[i][1])
            if s > max_tokens or t > max_tokens:
                skipped += 1
                continue
            nws, nwt = max(ws, s), max(wt, t)
            n = len(cur) + 1
            if cur and (nws * n > max_tokens or nwt * n > max_tokens):
                batches.append(cur)
                cur, nws, nwt = [], s, t
            cur.append(i)
            ws, wt = nws, nwt
        if cur:
            batches.append(cur)
    perm = RngState(fan_seed(seed, "batch-order")).permutation(len(batches))
    return [batches[i] for i in perm], skipped


def pad_batch(pairs, indices) -> Batch:
    src_len = max(len(pairs[i][0]) for i in indices)
    tgt_len = max(len(pairs[i][1]) for i in indices)
    b = len(indices)
    src = np.full((b, src_len), PAD_ID, dtype=np.int64)
    tgt_in = np.full((b, tgt_len), PAD_ID, dtype=np.int64)
    tgt_out = np.full((b, tgt_len), PAD_ID, dtype=np.int64)
    for r, i in enumerate(indices):
        s, t = pairs[i]
        src[r, :len(s)] = s
        tgt_in[r, 0] = BOS_ID
        tgt_in[r, 1:len(t)] = t[:-1]
        tgt_out[r, :len(t)] = t
    return Batch(src, src == PAD_ID, tgt_in, tgt_out, list(indices),
                 int((tgt_out != PAD_ID).sum()))


# ---------------------------------------------------------------------------
# optimizer and scheduler


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()},
                   t=0)


def adam_step(params: dict, state: AdamState, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8, clip_norm: float = 0.0):
    """One bias-corrected Adam update, in place.

    Gradients are globally L2-clipped first when clip_norm > 0; a NaN
    gradient aborts the step before any parameter moves.
    """
    grads = {}
    sq_sum = 0.0
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if np.isnan(g).any():
            raise DivergenceError(f"NaN gradient in {name}")
        grads[name] = g
        sq_sum += float((g * g).sum())
    if clip_norm > 0.0:
        norm = sq_sum ** 0.5
        if norm > clip_norm:
            scale = clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class PlateauScheduler:
    """Multiply lr by `shrink` after `patience` epochs whose dev loss fails
    to improve on the best seen by at least `min_improvement`."""

    def __init__(self, lr: float, shrink: float, patience: int,
                 min_improvement: float):
        self.lr = lr
        self.shrink = shrink
        self.patience = patience
        self.min_improvement = min_improvement
        self.best = float("inf")
        self.bad_epochs = 0
        self.n_shrinks = 0

    def step(self, dev_loss: float) -> float:
        if dev_loss < self.best - self.min_improvement:
            self.best = dev_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.shrink
                self.n_shrinks += 1
                self.bad_epochs = 0
        return self.lr


# ---------------------------------------------------------------------------
# checkpoints


_MAGIC = b"DMT1"
_DTYPE_F64 = 0


@dataclass
class Checkpoint:
    arch: str
    model_config: object
    src_vocab_fp: str
    tgt_vocab_fp: str
    params: dict                  # name -> float64 ndarray
    opt: AdamState = None
    epoch: int = 0
    dev_loss: float = 0.0
    dev_bleu: float = 0.0
    train_config: TrainConfig = None
    version: int = 1

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def to_bytes(self) -> bytes:
        meta = {
            "version": str(self.version),
            "arch": self.arch,
            "epoch": str(self.epoch),
            "dev_loss": repr(float(self.dev_loss)),
            "dev_bleu": repr(float(self.dev_bleu)),
            "src_vocab_fp": self.src_vocab_fp,
            "tgt_vocab_fp": self.tgt_vocab_fp,
        }
        meta.update(_dump_config("cfg", self.model_config))
        if self.train_config is not None:
            meta.update(_dump_config("train", self.train_config))
        if self.opt is not None:
            meta["opt.t"] = str(self.opt.t)
        buf = io.BytesIO()
        buf.write(_MAGIC)
        meta_text = "".join(f"{k}={meta[k]}\n" for k in sorted(meta))
        meta_bytes = meta_text.encode("utf-8")
        buf.write(struct.pack("<Q", len(meta_bytes)))
        buf.write(meta_bytes)

        tensors = [(f"param.{k}", a) for k, a in sorted(self.params.items())]
        if self.opt is not None:
            tensors += [(f"opt.m.{k}", a) for k, a in sorted(self.opt.m.items())]
            tensors += [(f"opt.v.{k}", a) for k, a in sorted(self.opt.v.items())]
        buf.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode("utf-8")
            buf.write(struct.pack("<I", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<BB", _DTYPE_F64, arr.ndim))
            for ext in arr.shape:
                buf.write(struct.pack("<Q", ext))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        view = memoryview(raw)
        if bytes(view[:4]) != _MAGIC:
            raise CheckpointError("bad magic bytes; not a checkpoint file")
        off = 4
        (meta_len,) = struct.unpack_from("<Q", view, off)
        off += 8
        if off + meta_len > len(raw):
            raise CheckpointError("truncated checkpoint (metadata)")
        meta = {}
        for line in bytes(view[off:off + meta_len]).decode("utf-8").splitlines():
            key, _, value = line.partition("=")
            meta[key] = value
        off += meta_len
        if int(meta.get("version", -1)) != 1:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")

        (n_tensors,) = struct.unpack_from("<I", view, off)
        off += 4
        tensors = {}
        for _ in range(n_tensors):
            try:
                (name_len,) = struct.unpack_from("<I", view, off)
                off += 4
                name = bytes(view[off:off + name_len]).decode("utf-8")
                off += name_len
                dtype_tag, rank = struct.unpack_from("<BB", view, off)
                off += 2
                if dtype_tag != _DTYPE_F64:
                    raise CheckpointError(f"unknown dtype tag {dtype_tag}")
                shape = []
                for _ in range(rank):
                    (ext,) = struct.unpack_from("<Q", view, off)
                    off += 8
                    shape.append(ext)
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(view, dtype="<f8", count=count, offset=off)
                off += count * 8
                tensors[name] = arr.reshape(shape).astype(np.float64)
            except (struct.error, ValueError) as e:
                raise CheckpointError(f"truncated checkpoint: {e}")

        arch = meta["arch"]
        model_config = _parse_config(ARCH_CONFIGS[arch], "cfg", meta)
        train_config = (_parse_config(TrainConfig, "train", meta)
                        if any(k.startswith("train.") for k in meta) else None)
        params = {k[len("param."):]: a for k, a in tensors.items()
                  if k.startswith("param.")}
        opt = None
        if "opt.t" in meta:
            opt = AdamState(
                m={k[len("opt.m."):]: a for k, a in tensors.items()
                   if k.startswith("opt.m.")},
                v={k[len("opt.v."):]: a for k, a in tensors.items()
                   if k.startswith("opt.v.")},
                t=int(meta["opt.t"]))
        return cls(arch=arch, model_config=model_config,
                   src_vocab_fp=meta["src_vocab_fp"],
                   tgt_vocab_fp=meta["tgt_vocab_fp"], params=params, opt=opt,
                   epoch=int(meta["epoch"]), dev_loss=float(meta["dev_loss"]),
                   dev_bleu=float(meta["dev_bleu"]), train_config=train_config)


def _dump_config(prefix: str, cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        out[f"{prefix}.{f.name}"] = repr(value) if isinstance(value, float) else str(value)
    return out


def _parse_config(cls, prefix: str, meta: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        if key not in meta:
            continue
        raw = meta[key]
        if f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = float(raw)
        elif f.type in ("bool", bool):
            kwargs[f.name] = raw == "True"
        else:
            kwargs[f.name] = raw
    return cls(**kwargs)


def save_checkpoint(ckpt: Checkpoint, path):
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"no such checkpoint: {path}")
    return Checkpoint.from_bytes(raw)


def snapshot(model, opt: AdamState = None, epoch: int = 0, dev_loss: float = 0.0,
             dev_bleu: float = 0.0, train_config: TrainConfig = None) -> Checkpoint:
    src_fp, tgt_fp = model.vocab_fingerprints()
    return Checkpoint(
        arch=model.arch, model_config=model.config,
        src_vocab_fp=src_fp, tgt_vocab_fp=tgt_fp,
        params={k: p.data.copy() for k, p in model.params.items()},
        opt=None if opt is None else AdamState(
            m={k: a.copy() for k, a in opt.m.items()},
            v={k: a.copy() for k, a in opt.v.items()}, t=opt.t),
        epoch=epoch, dev_loss=dev_loss, dev_bleu=dev_bleu,
        train_config=train_config)


def restore_model(ckpt: Checkpoint, src_vocab, tgt_vocab, verify: bool = True):
    """Rebuild the model a checkpoint describes; forward outputs are
    bit-identical to the saved model's."""
    if verify:
        if (src_vocab.fingerprint(), tgt_vocab.fingerprint()) != (
                ckpt.src_vocab_fp, ckpt.tgt_vocab_fp):
            raise FingerprintError(
                "vocabulary fingerprints do not match the checkpoint")
    model = build_model(ckpt.model_config, src_vocab, tgt_vocab, seed=0)
    if set(model.params) != set(ckpt.params):
        raise CheckpointError("checkpoint parameter names do not match the config")
    for name, arr in ckpt.params.items():
        if model.params[name].data.shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {model.params[name].data.shape} "
                f"vs {arr.shape}")
        model.params[name].data = arr.copy()
    return model


# ---------------------------------------------------------------------------
# evaluation


def evaluate_loss(model, data, label_smoothing: float, max_tokens: int = 0,
                  batch_size: int = 0) -> float:
    if not data:
        return 0.0
    batches, _ = make_batches(data, max_tokens, batch_size, seed=0)
    total, tokens = 0.0, 0
    with ad.no_grad():
        for idxs in batches:
            batch = pad_batch(data, idxs)
            logits = model.forward(batch.src, batch.src_pad_mask, batch.tgt_in)
            loss = label_smoothed_loss(logits, batch.tgt_out, PAD_ID,
                                       label_smoothing)
            total += loss.item() * batch.n_tokens
            tokens += batch.n_tokens
    return total / max(tokens, 1)


def _score_tokens(vocab, ids) -> list:
    return detokenize(undo_bpe(vocab.decode(list(ids)))).split()


def evaluate_bleu(model, data, tgt_vocab, decode_config: DecodeConfig = None,
                  chunk: int = 64) -> float:
    """Greedy-decode the dev sources and average sentence BLEU against the
    dev targets on the un-BPE'd, detokenized surface."""
    if not data:
        return 0.0
    decode_config = decode_config or DecodeConfig(beam=1)
    cands, refs = [], []
    for lo in range(0, len(data), chunk):
        part = data[lo:lo + chunk]
        width = max(len(p[0]) for p in part)
        src = np.full((len(part), width), PAD_ID, dtype=np.int64)
        for r, (s, _) in enumerate(part):
            src[r, :len(s)] = s
        hyps = greedy_decode_batch(model, src, config=decode_config)
        for (s, t), hyp in zip(part, hyps):
            cands.append(_score_tokens(tgt_vocab, hyp.output_ids))
            refs.append([_score_tokens(tgt_vocab, t)])
    return score_corpus(cands, refs, BleuConfig()).mean


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_bleu: float
    lr: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    wall_time: float = 0.0
    diverged: bool = False
    stopped_early: bool = False
    skipped_pairs: int = 0

    def as_tsv(self) -> str:
        lines = ["epoch\ttrain_loss\tdev_loss\tdev_bleu\tlr"]
        for row in self.epochs:
            lines.append(f"{row.epoch}\t{row.train_loss:.6f}\t{row.dev_loss:.6f}"
                         f"\t{row.dev_bleu:.6f}\t{row.lr:.8g}")
        return "\n".join(lines) + "\n"


def train(model, train_data, dev_data, config: TrainConfig, run_dir=None):
    """Run the epoch loop and return (best checkpoint, report).

    Per epoch: teacher-forced label-smoothed steps over shuffled batches,
    then dev loss, dev BLEU (greedy), a checkpoint, and the lr-shrink
    decision. The best checkpoint maximizes dev BLEU, earliest epoch on
    ties. NaN loss aborts with the last good checkpoint.
    """
    config.validate()
    if not train_data:
        raise ConfigError("empty training corpus")
    t0 = time.time()
    run_dir = Path(run_dir) if run_dir is not None else None
    ckpt_dir = None
    if run_dir is not None:
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    drop_rng = RngState(fan_seed(config.seed, "dropout"))
    opt = AdamState.init(model.params)
    sched = PlateauScheduler(config.learning_rate, config.lr_shrink,
                             config.patience, config.min_improvement)
    report = TrainReport()
    best = None  # (bleu, epoch, Checkpoint)
    saved_paths = []

    for epoch in range(1, config.epochs + 1):
        lr = sched.lr
        batches, skipped = make_batches(
            train_data, config.max_tokens, config.batch_size,
            seed=fan_seed(config.seed, f"epoch-{epoch}"))
        report.skipped_pairs = skipped
        total, tokens = 0.0, 0
        diverged = False
        for idxs in batches:
            batch = pad_batch(train_data, idxs)
            logits = model.forward(batch.src, batch.src_pad_mask, batch.tgt_in,
                                   training=True, rng=drop_rng)
            loss = label_smoothed_loss(logits, batch.tgt_out, PAD_ID,
                                       config.label_smoothing)
            value = loss.item()
            if not np.isfinite(value):
                diverged = True
                break
            ad.zero_grad(model.params)
            ad.backward(loss)
            try:
                adam_step(model.params, opt, lr, config.betas(),
                          config.adam_eps, config.clip_norm)
            except DivergenceError:
                diverged = True
                break
            total += value * batch.n_tokens
            tokens += batch.n_tokens
        if diverged:
            report.diverged = True
            break

        train_loss = total / max(tokens, 1)
        dev_loss = evaluate_loss(model, dev_data, config.label_smoothing,
                                 config.max_tokens, config.batch_size)
        dev_bleu = evaluate_bleu(model, dev_data, model.tgt_vocab)
        report.epochs.append(EpochStats(epoch, train_loss, dev_loss, dev_bleu, lr))

        ckpt = snapshot(model, opt, epoch, dev_loss, dev_bleu, config)
        if ckpt_dir is not None:
            path = ckpt_dir / f"epoch{epoch:03d}.dmt"
            save_checkpoint(ckpt, path)
            saved_paths.append(path)
        if best is None or dev_bleu > best[0]:
            best = (dev_bleu, epoch, ckpt)
            if ckpt_dir is not None:
                shutil.copyfile(ckpt_dir / f"epoch{epoch:03d}.dmt",
                                run_dir / "best.dmt")
        if ckpt_dir is not None and config.keep_last > 0:
            keep = {f"epoch{best[1]:03d}.dmt"} | {
                p.name for p in saved_paths[-config.keep_last:]}
            for p in list(saved_paths):
                if p.name not in keep and p.exists():
                    p.unlink()

        sched.step(dev_loss)
        if config.target_bleu > 0.0 and dev_bleu >= config.target_bleu:
            report.stopped_early = True
            break

    if best is None:
        # diverged before completing the first epoch
        best = (0.0, 0, snapshot(model, opt, 0, float("nan"), 0.0, config))
    report.best_epoch = best[1]
    report.wall_time = time.time() - t0
    if run_dir is not None:
        (run_dir / "report.tsv").write_text(report.as_tsv(), encoding="utf-8")
    return best[2], report
