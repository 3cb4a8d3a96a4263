"""The four encoder-decoder architectures and the label-smoothed loss.

All models share one contract: ``encode`` turns padded source id batches
into an EncoderMemory, ``decode_step`` produces teacher-forced logits for
every position of a BOS-led target prefix, and decoder computation is
causal (logits at position t never see prefix positions beyond t).
Masked source positions receive exactly zero attention weight via
additive -inf biases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import RngState, Tensor, fan_seed
from .errors import ConfigError, ShapeError
from .subword import BOS_ID, PAD_ID

__all__ = [
    "LstmConfig", "ConvConfig", "TransformerConfig", "EncoderMemory",
    "SeqModel", "LstmModel", "ConvModel", "TransformerModel",
    "build_model", "config_for_arch", "label_smoothed_loss", "ARCH_CONFIGS",
]

NEG_INF = float("-inf")


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class LstmConfig:
    embed_dim: int = 256
    hidden_dim: int = 512
    layers: int = 1
    dropout: float = 0.2
    bidirectional: bool = False
    attention: bool = True

    def validate(self):
        if min(self.embed_dim, self.hidden_dim, self.layers) < 1:
            raise ConfigError("lstm config extents must be positive")
        if self.layers != 1:
            raise ConfigError("only single-layer recurrent encoders are supported")

    @property
    def arch(self):
        return "bilstm" if self.bidirectional else "lstm"


@dataclass(frozen=True)
class ConvConfig:
    enc_layers: int = 4
    dec_layers: int = 4
    dim: int = 256
    kernel_width: int = 3
    dropout: float = 0.1
    max_positions: int = 512

    def validate(self):
        if min(self.enc_layers, self.dec_layers, self.dim, self.kernel_width) < 1:
            raise ConfigError("conv config extents must be positive")
        if self.kernel_width % 2 == 0:
            raise ConfigError("conv kernel width must be odd")

    @property
    def arch(self):
        return "conv"


@dataclass(frozen=True)
class TransformerConfig:
    enc_layers: int = 3
    dec_layers: int = 3
    d_model: int = 256
    n_heads: int = 4
    d_ffn: int = 512
    dropout: float = 0.1
    max_positions: int = 512
    allow_uneven_heads: bool = False

    def validate(self):
        if min(self.enc_layers, self.dec_layers, self.d_model,
               self.n_heads, self.d_ffn) < 1:
            raise ConfigError("transformer config extents must be positive")
        if self.d_model % self.n_heads != 0 and not self.allow_uneven_heads:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}; "
                f"set allow_uneven_heads to permit ragged head widths")

    def head_dims(self) -> list:
        base, rem = divmod(self.d_model, self.n_heads)
        return [base + 1 if i < rem else base for i in range(self.n_heads)]

    @property
    def arch(self):
        return "transformer"


ARCH_CONFIGS = {
    "lstm": LstmConfig,
    "bilstm": LstmConfig,
    "conv": ConvConfig,
    "transformer": TransformerConfig,
}


def config_for_arch(arch: str, **overrides):
    if arch not in ARCH_CONFIGS:
        raise ConfigError(f"unknown architecture {arch!r}; known: {sorted(ARCH_CONFIGS)}")
    if arch == "bilstm":
        overrides.setdefault("bidirectional", True)
    if arch == "lstm":
        overrides.setdefault("bidirectional", False)
    cfg = ARCH_CONFIGS[arch](**overrides)
    cfg.validate()
    if cfg.arch != arch:
        raise ConfigError(f"config resolves to {cfg.arch!r}, requested {arch!r}")
    return cfg


# ---------------------------------------------------------------------------
# shared pieces


@dataclass
class EncoderMemory:
    """What the decoder sees: per-position states plus masking metadata."""
    states: Tensor              # [B, S, H]
    pad_mask: np.ndarray        # [B, S]; True at PAD positions
    h0: Tensor = None           # recurrent decoders: initial hidden
    c0: Tensor = None
    states_raw: Tensor = None   # bilstm: pre-projection states [B, S, 2H]
    fully_masked: np.ndarray = None  # [B]; True where every position is PAD

    @property
    def any_fully_masked(self) -> bool:
        return bool(self.fully_masked is not None and self.fully_masked.any())

    def tile(self, k: int) -> "EncoderMemory":
        """Repeat each batch row k times (for beam expansion); read-only."""
        def rep_t(t):
            return None if t is None else Tensor(np.repeat(t.data, k, axis=0))
        return EncoderMemory(
            states=rep_t(self.states),
            pad_mask=np.repeat(self.pad_mask, k, axis=0),
            h0=rep_t(self.h0), c0=rep_t(self.c0),
            states_raw=rep_t(self.states_raw),
            fully_masked=np.repeat(self.fully_masked, k, axis=0),
        )


def _pad_bias(pad_mask: np.ndarray) -> Tensor:
    """[B, 1, S] additive bias: -inf at pads, 0 elsewhere."""
    return Tensor(np.where(pad_mask[:, None, :], NEG_INF, 0.0))


def _causal_bias(t: int) -> Tensor:
    bias = np.triu(np.full((t, t), NEG_INF), k=1)
    return Tensor(bias[None, :, :])


def _linear(x, w, b=None):
    out = ad.matmul(x, w)
    return out if b is None else ad.add(out, b)


def _check_ids(ids: np.ndarray, vocab_size: int, what: str):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ShapeError(f"{what} id out of range [0, {vocab_size})")
    return ids


def _sinusoid_table(max_positions: int, dim: int) -> np.ndarray:
    pos = np.arange(max_positions)[:, None]
    i = np.arange((dim + 1) // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((max_positions, dim))
    table[:, 0::2] = np.sin(angle[:, : table[:, 0::2].shape[1]])
    table[:, 1::2] = np.cos(angle[:, : table[:, 1::2].shape[1]])
    return table


class _ParamFactory:
    """Creates named parameters in a fixed order from one seeded stream."""

    def __init__(self, seed: int):
        self.rng = RngState(fan_seed(seed, "model-init"))
        self.params: dict = {}

    def uniform(self, name, shape, scale=0.1):
        return self._add(name, Tensor(self.rng.uniform(shape, -scale, scale),
                                      requires_grad=True))

    def normal(self, name, shape, std):
        return self._add(name, Tensor(self.rng.normal(shape, std),
                                      requires_grad=True))

    def zeros(self, name, shape):
        return self._add(name, Tensor(np.zeros(shape), requires_grad=True))

    def ones(self, name, shape):
        return self._add(name, Tensor(np.ones(shape), requires_grad=True))

    def _add(self, name, tensor):
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self.params[name] = tensor
        return tensor


class SeqModel:
    """Base: parameter registry, vocab bookkeeping, shared loss plumbing."""

    def __init__(self, config, src_vocab, tgt_vocab, seed: int):
        config.validate()
        self.config = config
        self.arch = config.arch
        self.seed = int(seed)
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.src_vocab_size = len(src_vocab)
        self.tgt_vocab_size = len(tgt_vocab)
        factory = _ParamFactory(seed)
        self._build(factory)
        self.params = factory.params

    # subclasses fill these in
    def _build(self, f: _ParamFactory):
        raise NotImplementedError

    def encode(self, src_ids, src_pad_mask=None, training=False, rng=None):
        raise NotImplementedError

    def decode_step(self, memory, tgt_prefix, training=False, rng=None):
        raise NotImplementedError

    def forward(self, src_ids, src_pad_mask, tgt_prefix, training=False, rng=None):
        memory = self.encode(src_ids, src_pad_mask, training=training, rng=rng)
        return self.decode_step(memory, tgt_prefix, training=training, rng=rng)

    def parameters(self) -> dict:
        return self.params

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def vocab_fingerprints(self):
        return self.src_vocab.fingerprint(), self.tgt_vocab.fingerprint()

    def _prep_source(self, src_ids, src_pad_mask):
        src_ids = _check_ids(src_ids, self.src_vocab_size, "source")
        if src_ids.ndim != 2:
            raise ShapeError(f"source ids must be [B, S], got {src_ids.shape}")
        if src_pad_mask is None:
            src_pad_mask = src_ids == PAD_ID
        pad = np.asarray(src_pad_mask, dtype=bool)
        return src_ids, pad, pad.all(axis=1)

    def _prep_prefix(self, tgt_prefix):
        tgt_prefix = _check_ids(tgt_prefix, self.tgt_vocab_size, "target")
        if tgt_prefix.ndim != 2 or tgt_prefix.shape[1] == 0:
            raise ShapeError("target prefix must be a non-empty [B, T] batch")
        if not (tgt_prefix[:, 0] == BOS_ID).all():
            raise ShapeError("target prefix must begin with BOS")
        return tgt_prefix


# ---------------------------------------------------------------------------
# recurrent family


class LstmModel(SeqModel):
    """Encoder-decoder LSTM; optional bidirectional encoder and dot attention.

    The final real (non-pad) encoder state initializes the decoder; the
    decoder attends over per-position encoder states with dot-product
    attention and a tanh combination layer.
    """

    def _build(self, f: _ParamFactory):
        cfg = self.config
        e, h = cfg.embed_dim, cfg.hidden_dim
        f.uniform("src_embed", (self.src_vocab_size, e))
        f.uniform("tgt_embed", (self.tgt_vocab_size, e))
        directions = ["enc_f", "enc_b"] if cfg.bidirectional else ["enc_f"]
        for d in directions:
            f.uniform(f"{d}.w_ih", (e, 4 * h))
            f.uniform(f"{d}.w_hh", (h, 4 * h))
            f.zeros(f"{d}.b", (4 * h,))
        if cfg.bidirectional:
            f.uniform("proj_states.w", (2 * h, h))
            f.uniform("proj_h0.w", (2 * h, h))
            f.uniform("proj_c0.w", (2 * h, h))
        f.uniform("dec.w_ih", (e, 4 * h))
        f.uniform("dec.w_hh", (h, 4 * h))
        f.zeros("dec.b", (4 * h,))
        if cfg.attention:
            f.uniform("attn_combine.w", (2 * h, h))
        f.uniform("out.w", (h, self.tgt_vocab_size))
        f.zeros("out.b", (self.tgt_vocab_size,))

    def _cell(self, prefix, x_t, h, c):
        p = self.params
        hd = self.config.hidden_dim
        gates = ad.add(ad.add(ad.matmul(x_t, p[f"{prefix}.w_ih"]),
                              ad.matmul(h, p[f"{prefix}.w_hh"])),
                       p[f"{prefix}.b"])
        i = ad.sigmoid(ad.slice_axis(gates, 1, 0, hd))
        fg = ad.sigmoid(ad.slice_axis(gates, 1, hd, 2 * hd))
        g = ad.tanh(ad.slice_axis(gates, 1, 2 * hd, 3 * hd))
        o = ad.sigmoid(ad.slice_axis(gates, 1, 3 * hd, 4 * hd))
        c_new = ad.add(ad.mul(fg, c), ad.mul(i, g))
        h_new = ad.mul(o, ad.tanh(c_new))
        return h_new, c_new

    def _run_direction(self, prefix, x, training, rng):
        b, s, _ = x.shape
        hd = self.config.hidden_dim
        h = Tensor(np.zeros((b, hd)))
        c = Tensor(np.zeros((b, hd)))
        hs, cs = [], []
        for t in range(s):
            x_t = ad.reshape(ad.slice_axis(x, 1, t, t + 1), (b, -1))
            h, c = self._cell(prefix, x_t, h, c)
            hs.append(ad.reshape(h, (b, 1, hd)))
            cs.append(ad.reshape(c, (b, 1, hd)))
        return ad.concat(hs, axis=1), ad.concat(cs, axis=1)

    @staticmethod
    def _reverse_perm(pad_mask: np.ndarray) -> np.ndarray:
        """Per-sentence index map reversing the real span, fixing pads."""
        b, s = pad_mask.shape
        lengths = (~pad_mask).sum(axis=1)
        perm = np.tile(np.arange(s), (b, 1))
        for i in range(b):
            n = lengths[i]
            perm[i, :n] = np.arange(n - 1, -1, -1)
        return perm

    def encode(self, src_ids, src_pad_mask=None, training=False, rng=None):
        cfg = self.config
        src_ids, pad, fully_masked = self._prep_source(src_ids, src_pad_mask)
        lengths = np.maximum((~pad).sum(axis=1), 1)
        x = ad.embedding(self.params["src_embed"], src_ids)
        x = ad.dropout(x, cfg.dropout, rng, training)

        hs_f, cs_f = self._run_direction("enc_f", x, training, rng)
        last = lengths - 1
        h_last = ad.select_time(hs_f, last)
        c_last = ad.select_time(cs_f, last)
        if not cfg.bidirectional:
            return EncoderMemory(states=hs_f, pad_mask=pad,
                                 h0=h_last, c0=c_last, fully_masked=fully_masked)

        perm = self._reverse_perm(pad)
        x_rev = ad.gather_time(x, perm)
        hs_b, cs_b = self._run_direction("enc_b", x_rev, training, rng)
        h_last_b = ad.select_time(hs_b, last)
        c_last_b = ad.select_time(cs_b, last)
        hs_b = ad.gather_time(hs_b, perm)  # align with original positions
        raw = ad.concat([hs_f, hs_b], axis=2)
        states = ad.matmul(raw, self.params["proj_states.w"])
        h0 = ad.matmul(ad.concat([h_last, h_last_b], axis=1), self.params["proj_h0.w"])
        c0 = ad.matmul(ad.concat([c_last, c_last_b], axis=1), self.params["proj_c0.w"])
        return EncoderMemory(states=states, pad_mask=pad, h0=h0, c0=c0,
                             states_raw=raw, fully_masked=fully_masked)

    def decode_step(self, memory, tgt_prefix, training=False, rng=None):
        cfg = self.config
        tgt_prefix = self._prep_prefix(tgt_prefix)
        b, t_len = tgt_prefix.shape
        hd = cfg.hidden_dim
        x = ad.embedding(self.params["tgt_embed"], tgt_prefix)
        x = ad.dropout(x, cfg.dropout, rng, training)
        bias = _pad_bias(memory.pad_mask)
        states_t = ad.transpose(memory.states, (0, 2, 1))

        h, c = memory.h0, memory.c0
        outs = []
        for t in range(t_len):
            x_t = ad.reshape(ad.slice_axis(x, 1, t, t + 1), (b, -1))
            h, c = self._cell("dec", x_t, h, c)
            if cfg.attention:
                q = ad.reshape(h, (b, 1, hd))
                scores = ad.add(ad.matmul(q, states_t), bias)
                attn = ad.softmax(scores, axis=-1)
                ctx = ad.reshape(ad.matmul(attn, memory.states), (b, hd))
                combined = ad.tanh(ad.matmul(ad.concat([h, ctx], axis=1),
                                             self.params["attn_combine.w"]))
            else:
                combined = h
            outs.append(ad.reshape(combined, (b, 1, hd)))
        stacked = ad.concat(outs, axis=1)
        stacked = ad.dropout(stacked, cfg.dropout, rng, training)
        return _linear(stacked, self.params["out.w"], self.params["out.b"])


# ---------------------------------------------------------------------------
# convolutional family


class ConvModel(SeqModel):
    """Stacked gated convolutions with residuals and learned positions.

    Encoder layers use same-padding with pad positions zeroed before every
    convolution (so padding a batch never leaks into real positions);
    decoder layers are causal, each followed by dot-product attention over
    the encoder states.
    """

    def _build(self, f: _ParamFactory):
        cfg = self.config
        d, k = cfg.dim, cfg.kernel_width
        kstd = 1.0 / math.sqrt(k * d)
        f.uniform("src_embed", (self.src_vocab_size, d))
        f.uniform("tgt_embed", (self.tgt_vocab_size, d))
        f.uniform("enc_pos", (cfg.max_positions, d))
        f.uniform("dec_pos", (cfg.max_positions, d))
        for l in range(cfg.enc_layers):
            f.normal(f"enc.l{l}.kernel", (k, d, 2 * d), std=kstd)
            f.zeros(f"enc.l{l}.b", (2 * d,))
        for l in range(cfg.dec_layers):
            f.normal(f"dec.l{l}.kernel", (k, d, 2 * d), std=kstd)
            f.zeros(f"dec.l{l}.b", (2 * d,))
        f.uniform("out.w", (d, self.tgt_vocab_size))
        f.zeros("out.b", (self.tgt_vocab_size,))

    def _positions(self, name, n):
        if n > self.config.max_positions:
            raise ShapeError(
                f"sequence length {n} exceeds max_positions {self.config.max_positions}")
        return ad.slice_axis(self.params[name], 0, 0, n)

    def encode(self, src_ids, src_pad_mask=None, training=False, rng=None):
        cfg = self.config
        src_ids, pad, fully_masked = self._prep_source(src_ids, src_pad_mask)
        b, s = src_ids.shape
        keep = Tensor((~pad)[:, :, None].astype(float))
        x = ad.add(ad.embedding(self.params["src_embed"], src_ids),
                   self._positions("enc_pos", s))
        x = ad.dropout(x, cfg.dropout, rng, training)
        x = ad.mul(x, keep)
        for l in range(cfg.enc_layers):
            y = ad.add(ad.conv1d(x, self.params[f"enc.l{l}.kernel"], "same"),
                       self.params[f"enc.l{l}.b"])
            g = ad.glu(y, axis=-1)
            x = ad.mul(ad.add(x, g), keep)
        return EncoderMemory(states=x, pad_mask=pad, fully_masked=fully_masked)

    def decode_step(self, memory, tgt_prefix, training=False, rng=None):
        cfg = self.config
        tgt_prefix = self._prep_prefix(tgt_prefix)
        b, t_len = tgt_prefix.shape
        bias = _pad_bias(memory.pad_mask)
        states_t = ad.transpose(memory.states, (0, 2, 1))
        y = ad.add(ad.embedding(self.params["tgt_embed"], tgt_prefix),
                   self._positions("dec_pos", t_len))
        y = ad.dropout(y, cfg.dropout, rng, training)
        for l in range(cfg.dec_layers):
            h = ad.glu(ad.add(ad.conv1d(y, self.params[f"dec.l{l}.kernel"], "causal"),
                              self.params[f"dec.l{l}.b"]), axis=-1)
            scores = ad.add(ad.matmul(h, states_t), bias)
            attn = ad.softmax(scores, axis=-1)
            ctx = ad.matmul(attn, memory.states)
            y = ad.add(y, ad.add(h, ctx))
        y = ad.dropout(y, cfg.dropout, rng, training)
        return _linear(y, self.params["out.w"], self.params["out.b"])


# ---------------------------------------------------------------------------
# transformer


class TransformerModel(SeqModel):
    """Pre-norm transformer with sinusoidal positions.

    Head widths come from config.head_dims(): even division by default,
    ragged widths (e.g. 256 over 3 heads -> 86/85/85) when uneven heads
    are explicitly allowed.
    """

    def _build(self, f: _ParamFactory):
        cfg = self.config
        d = cfg.d_model
        std = 1.0 / math.sqrt(d)
        f.uniform("src_embed", (self.src_vocab_size, d))
        f.uniform("tgt_embed", (self.tgt_vocab_size, d))
        for side, n_layers, blocks in (("enc", cfg.enc_layers, ("self",)),
                                       ("dec", cfg.dec_layers, ("self", "cross"))):
            for l in range(n_layers):
                base = f"{side}.l{l}"
                for blk in blocks:
                    f.ones(f"{base}.{blk}.ln.g", (d,))
                    f.zeros(f"{base}.{blk}.ln.b", (d,))
                    for proj in ("q", "k", "v", "o"):
                        f.normal(f"{base}.{blk}.w_{proj}", (d, d), std=std)
                        f.zeros(f"{base}.{blk}.b_{proj}", (d,))
                f.ones(f"{base}.ffn.ln.g", (d,))
                f.zeros(f"{base}.ffn.ln.b", (d,))
                f.normal(f"{base}.ffn.w1", (d, cfg.d_ffn), std=std)
                f.zeros(f"{base}.ffn.b1", (cfg.d_ffn,))
                f.normal(f"{base}.ffn.w2", (cfg.d_ffn, d), std=std)
                f.zeros(f"{base}.ffn.b2", (d,))
        f.ones("enc.ln.g", (d,))
        f.zeros("enc.ln.b", (d,))
        f.ones("dec.ln.g", (d,))
        f.zeros("dec.ln.b", (d,))
        f.normal("out.w", (d, self.tgt_vocab_size), std=std)
        f.zeros("out.b", (self.tgt_vocab_size,))
        self._pe = _sinusoid_table(cfg.max_positions, d)

    def _embed(self, table, ids, rng, training):
        cfg = self.config
        n = ids.shape[1]
        if n > cfg.max_positions:
            raise ShapeError(
                f"sequence length {n} exceeds max_positions {cfg.max_positions}")
        x = ad.mul(ad.embedding(table, ids), math.sqrt(cfg.d_model))
        x = ad.add(x, Tensor(self._pe[:n]))
        return ad.dropout(x, cfg.dropout, rng, training)

    def _attention(self, base, q_in, kv_in, bias):
        p = self.params
        q = _linear(q_in, p[f"{base}.w_q"], p[f"{base}.b_q"])
        k = _linear(kv_in, p[f"{base}.w_k"], p[f"{base}.b_k"])
        v = _linear(kv_in, p[f"{base}.w_v"], p[f"{base}.b_v"])
        outs = []
        off = 0
        for dh in self.config.head_dims():
            qs = ad.mul(ad.slice_axis(q, 2, off, off + dh), 1.0 / math.sqrt(dh))
            ks = ad.slice_axis(k, 2, off, off + dh)
            vs = ad.slice_axis(v, 2, off, off + dh)
            scores = ad.add(ad.matmul(qs, ad.transpose(ks, (0, 2, 1))), bias)
            outs.append(ad.matmul(ad.softmax(scores, axis=-1), vs))
            off += dh
        cat = ad.concat(outs, axis=2)
        return _linear(cat, p[f"{base}.w_o"], p[f"{base}.b_o"])

    def _ln(self, base, x):
        return ad.layer_norm(x, self.params[f"{base}.g"], self.params[f"{base}.b"])

    def _ffn(self, base, x):
        p = self.params
        h = ad.relu(_linear(x, p[f"{base}.w1"], p[f"{base}.b1"]))
        return _linear(h, p[f"{base}.w2"], p[f"{base}.b2"])

    def encode(self, src_ids, src_pad_mask=None, training=False, rng=None):
        cfg = self.config
        src_ids, pad, fully_masked = self._prep_source(src_ids, src_pad_mask)
        drop = lambda t: ad.dropout(t, cfg.dropout, rng, training)
        bias = _pad_bias(pad)
        x = self._embed(self.params["src_embed"], src_ids, rng, training)
        for l in range(cfg.enc_layers):
            base = f"enc.l{l}"
            a = self._ln(f"{base}.self.ln", x)
            x = ad.add(x, drop(self._attention(f"{base}.self", a, a, bias)))
            x = ad.add(x, drop(self._ffn(f"{base}.ffn",
                                         self._ln(f"{base}.ffn.ln", x))))
        return EncoderMemory(states=self._ln("enc.ln", x), pad_mask=pad,
                             fully_masked=fully_masked)

    def decode_step(self, memory, tgt_prefix, training=False, rng=None):
        cfg = self.config
        tgt_prefix = self._prep_prefix(tgt_prefix)
        t_len = tgt_prefix.shape[1]
        drop = lambda t: ad.dropout(t, cfg.dropout, rng, training)
        causal = _causal_bias(t_len)
        cross_bias = _pad_bias(memory.pad_mask)
        y = self._embed(self.params["tgt_embed"], tgt_prefix, rng, training)
        for l in range(cfg.dec_layers):
            base = f"dec.l{l}"
            a = self._ln(f"{base}.self.ln", y)
            y = ad.add(y, drop(self._attention(f"{base}.self", a, a, causal)))
            a = self._ln(f"{base}.cross.ln", y)
            y = ad.add(y, drop(self._attention(f"{base}.cross", a,
                                               memory.states, cross_bias)))
            y = ad.add(y, drop(self._ffn(f"{base}.ffn",
                                         self._ln(f"{base}.ffn.ln", y))))
        y = self._ln("dec.ln", y)
        return _linear(y, self.params["out.w"], self.params["out.b"])


# ---------------------------------------------------------------------------


_MODEL_CLASSES = {
    LstmConfig: LstmModel,
    ConvConfig: ConvModel,
    TransformerConfig: TransformerModel,
}


def build_model(config, src_vocab, tgt_vocab, seed: int) -> SeqModel:
    """Instantiate the architecture a config describes, deterministically."""
    cls = _MODEL_CLASSES.get(type(config))
    if cls is None:
        raise ConfigError(f"unknown config type {type(config).__name__}")
    return cls(config, src_vocab, tgt_vocab, seed)


def label_smoothed_loss(logits: Tensor, target_ids, pad_id: int = PAD_ID,
                        epsilon: float = 0.1) -> Tensor:
    """Mean over non-pad positions of the smoothed negative log-likelihood:
    (1-eps) * -log p[target] + eps * mean_v(-log p[v]).

    Pad positions contribute nothing to the value or the gradient.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"label smoothing epsilon {epsilon} outside [0, 1)")
    target_ids = np.asarray(target_ids)
    if target_ids.shape != logits.shape[:-1]:
        raise ShapeError(
            f"targets {target_ids.shape} do not match logits {logits.shape}")
    mask = target_ids != pad_id
    n_real = int(mask.sum())
    if n_real == 0:
        raise ShapeError("all target positions are pad")
    vocab = logits.shape[-1]
    logp = ad.log_softmax(logits, axis=-1)
    nll = ad.mul(ad.gather_last(logp, target_ids), -1.0)
    per_pos = ad.mul(nll, 1.0 - epsilon)
    if epsilon > 0.0:
        smooth = ad.mul(ad.reduce_sum(logp, axis=-1), -1.0 / vocab)
        per_pos = ad.add(per_pos, ad.mul(smooth, epsilon))
    weighted = ad.mul(per_pos, Tensor(mask.astype(float)))
    return ad.mul(ad.reduce_sum(weighted), 1.0 / n_real)
