"""Config-driven experiment runner: one run directory per experiment, a
stage graph with persisted intermediates, and idempotent resumption.

Every training sentence, real or back-translated, flows through the same
stage order: normalize, pre-tokenize, transliterate, BPE, binarize.
Completed stages are stamped and skipped on rerun; a rerun of a finished
experiment performs no stage work.
"""

from __future__ import annotations

import dataclasses
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import textnorm
from .autodiff import fan_seed
from .backtranslation import generate_pseudo_parallel, mix
from .bleu import score_files
from .corpus import (LanguageTag, ParallelCorpus, SentencePair, load_monolingual,
                     load_parallel, save_parallel)
from .decoding import DecodeConfig, translate_lines
from .errors import ConfigError, ExperimentError
from .models import build_model, config_for_arch
from .pipeline import PipelineContext, build_context
from .subword import BpeModel, Vocabulary, apply_bpe, build_vocab, learn_bpe
from .training import PRESETS, TrainConfig, load_checkpoint, preset, restore_model, train

__all__ = ["ExperimentConfig", "run_experiment", "runs_root", "aggregate_report"]

_ARCH_PRESET = {"transformer": "transformer-scratch", "lstm": "lstm",
                "bilstm": "bilstm", "conv": "conv"}

def runs_root(override=None) -> Path:
    if override is not None:
        return Path(override)
    return Path(os.environ.get("DMT_RUNS_DIR", "runs"))


@dataclass
class ExperimentConfig:
    name: str = ""
    src_lang: str = ""
    tgt_lang: str = ""
    train_src: str = ""
    train_tgt: str = ""
    dev_src: str = ""
    dev_tgt: str = ""
    test_src: str = ""
    test_tgt: str = ""
    mono: str = ""
    bpe_merges: int = 8000
    min_count: int = 1
    joint_bpe: bool = False
    transliterate: bool = True
    keep_joiners: bool = False
    arch: str = "transformer"
    preset: str = ""
    beam: int = 5
    max_len: int = 0              # 0: derive from source length
    length_penalty: float = 1.0
    backtranslation: bool = False
    upsample_real: int = 1
    detranslit_score: bool = True
    seed: int = 1
    train_overrides: dict = field(default_factory=dict)
    model_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path, overrides=None) -> "ExperimentConfig":
        pairs = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"bad config line {raw!r} (want key=value)")
            pairs[key.strip()] = value.strip()
        pairs.update(overrides or {})
        return cls.from_pairs(pairs)

    @classmethod
    def from_pairs(cls, pairs: dict) -> "ExperimentConfig":
        cfg = cls()
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in pairs.items():
            if key.startswith("train."):
                cfg.train_overrides[key[len("train."):]] = value
            elif key.startswith("model."):
                cfg.model_overrides[key[len("model."):]] = value
            elif key in fields and key not in ("train_overrides", "model_overrides"):
                setattr(cfg, key, _coerce(value, fields[key].type))
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        return cfg

    def snapshot(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in ("train_overrides", "model_overrides"):
                lines += [f"{'train' if f.name.startswith('t') else 'model'}.{k}={v}"
                          for k, v in sorted(value.items())]
            else:
                lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def validate(self, need_test: bool = None):
        if not self.name or any(c in self.name for c in "/\\ \t"):
            raise ConfigError(f"bad run name {self.name!r}")
        LanguageTag(self.src_lang)
        LanguageTag(self.tgt_lang)
        required = ["train_src", "train_tgt", "dev_src", "dev_tgt"]
        if need_test is None:
            need_test = bool(self.test_src or self.test_tgt)
        if need_test:
            required += ["test_src", "test_tgt"]
        if self.backtranslation:
            required.append("mono")
        for name in required:
            path = getattr(self, name)
            if not path:
                raise ConfigError(f"{name} is required")
            if not Path(path).exists():
                raise ConfigError(f"{name}: no such file {path}")
        if self.preset and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")

    # resolved sub-configs -------------------------------------------------

    def train_config(self) -> TrainConfig:
        base = preset(self.preset) if self.preset else preset(_ARCH_PRESET[self.arch])
        base.arch = self.arch
        base.seed = fan_seed(self.seed, "train")
        fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
        for key, value in self.train_overrides.items():
            if key not in fields:
                raise ConfigError(f"unknown train key {key!r}")
            setattr(base, key, _coerce(value, fields[key].type))
        base.validate()
        return base

    def model_config(self, dropout: float):
        overrides = {"dropout": dropout}
        for key, value in self.model_overrides.items():
            overrides[key] = _parse_literal(value)
        return config_for_arch(self.arch, **overrides)

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(beam=self.beam,
                            max_len=self.max_len if self.max_len > 0 else None,
                            length_penalty=self.length_penalty)


def _coerce(value: str, ftype):
    if not isinstance(value, str):
        return value
    if ftype in ("int", int):
        return int(value)
    if ftype in ("float", float):
        return float(value)
    if ftype in ("bool", bool):
        if value not in ("True", "False", "true", "false", "1", "0"):
            raise ConfigError(f"bad boolean {value!r}")
        return value in ("True", "true", "1")
    return value


def _parse_literal(value: str):
    if not isinstance(value, str):
        return value
    for caster in (int, float):
        try:
            return caster(value)
        except ValueError:
            pass
    if value in ("True", "true"):
        return True
    if value in ("False", "false"):
        return False
    return value


class _Logger:
    def __init__(self, path: Path):
        self.path = path

    def __call__(self, message: str):
        stamp = time.strftime("%Y-%m-%d %H:%M:%S")
        line = f"[{stamp}] {message}"
        print(line, file=sys.stderr)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _write_lines(path: Path, lines):
    path.write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def _read_lines(path: Path):
    return path.read_text(encoding="utf-8").splitlines()


def _read_ids(path: Path):
    return [[int(tok) for tok in ln.split()] for ln in _read_lines(path)]


class _Runner:
    def __init__(self, config: ExperimentConfig, run_dir: Path):
        self.cfg = config
        self.dir = run_dir
        self.log = _Logger(run_dir / "log.txt")
        self.stage_dir = run_dir / ".stages"
        self.stage_dir.mkdir(exist_ok=True)
        self.did_work = False

    def stage(self, name: str, fn):
        marker = self.stage_dir / f"{name}.done"
        if marker.exists():
            self.log(f"stage {name}: fresh, skipping")
            return
        self.log(f"stage {name}: running")
        t0 = time.time()
        try:
            fn()
        except Exception as e:
            self.log(f"stage {name}: FAILED: {e}")
            raise ExperimentError(f"stage {name}: {e}") from e
        marker.write_text("done\n")
        self.did_work = True
        self.log(f"stage {name}: done in {time.time() - t0:.1f}s")

    # ---- stage bodies ----

    @property
    def train_files(self):
        if self.cfg.backtranslation:
            return self.dir / "bt" / "augmented.src", self.dir / "bt" / "augmented.tgt"
        return Path(self.cfg.train_src), Path(self.cfg.train_tgt)

    def do_backtranslate(self):
        cfg = self.cfg
        src_lang, tgt_lang = LanguageTag(cfg.src_lang), LanguageTag(cfg.tgt_lang)
        real = load_parallel(cfg.train_src, cfg.train_tgt, src_lang, tgt_lang)
        dev = load_parallel(cfg.dev_src, cfg.dev_tgt, src_lang, tgt_lang)
        mono = load_monolingual(cfg.mono, tgt_lang)
        bt_dir = self.dir / "bt"
        bt_dir.mkdir(exist_ok=True)

        reverse_ctx = build_context(real.swapped(), num_merges=cfg.bpe_merges,
                                    min_count=cfg.min_count, joint=cfg.joint_bpe,
                                    transliterate=cfg.transliterate,
                                    keep_joiners=cfg.keep_joiners)
        from .pipeline import encode_corpus
        train_data = encode_corpus(reverse_ctx, real.swapped())
        dev_data = encode_corpus(reverse_ctx, dev.swapped())
        tc = self.cfg.train_config()
        tc.seed = fan_seed(cfg.seed, "reverse-train")
        model = build_model(cfg.model_config(tc.dropout), reverse_ctx.src_vocab,
                            reverse_ctx.tgt_vocab, seed=fan_seed(cfg.seed, "reverse-model"))
        self.log(f"backtranslate: training reverse model "
                 f"({cfg.tgt_lang}->{cfg.src_lang}, {len(train_data)} pairs)")
        ckpt, _ = train(model, train_data, dev_data, tc, run_dir=bt_dir / "reverse")
        reverse_model = restore_model(ckpt, reverse_ctx.src_vocab,
                                      reverse_ctx.tgt_vocab)
        pseudo = generate_pseudo_parallel(reverse_model, mono, reverse_ctx,
                                          self.cfg.decode_config(),
                                          checkpoint_fingerprint=ckpt.fingerprint())
        self.log(f"backtranslate: {len(pseudo)} pseudo pairs "
                 f"({pseudo.provenance.n_dropped} dropped)")
        save_parallel(pseudo, bt_dir / "pseudo.src", bt_dir / "pseudo.tgt")
        _write_lines(bt_dir / "pseudo.provenance.tsv", pseudo.sidecar_lines())

    def do_mix(self):
        cfg = self.cfg
        src_lang, tgt_lang = LanguageTag(cfg.src_lang), LanguageTag(cfg.tgt_lang)
        real = load_parallel(cfg.train_src, cfg.train_tgt, src_lang, tgt_lang)
        bt_dir = self.dir / "bt"
        pseudo_raw = load_parallel(bt_dir / "pseudo.src", bt_dir / "pseudo.tgt",
                                   src_lang, tgt_lang)
        pseudo = ParallelCorpus(
            [SentencePair(p.source, p.target, True) for p in pseudo_raw.pairs],
            src_lang, tgt_lang)
        mixed = mix(real, pseudo, upsample_real=cfg.upsample_real,
                    seed=fan_seed(cfg.seed, "mix"))
        self.log(f"mix: {len(real)} real + {len(pseudo)} pseudo -> {len(mixed)}")
        save_parallel(mixed, bt_dir / "augmented.src", bt_dir / "augmented.tgt")

    def _prep_file(self, in_path, out_path, script):
        lines = []
        for raw in _read_lines(Path(in_path)):
            norm = textnorm.normalize(raw, keep_joiners=self.cfg.keep_joiners)
            tokens = list(textnorm.tokenize(norm).tokens)
            if self.cfg.transliterate:
                tokens = [textnorm.transliterate(t, script, textnorm.DEVANAGARI)
                          for t in tokens]
            lines.append(" ".join(tokens))
        _write_lines(out_path, lines)

    def do_prep(self):
        cfg = self.cfg
        prep = self.dir / "prep"
        prep.mkdir(exist_ok=True)
        src_script = textnorm.script_for_lang(cfg.src_lang)
        tgt_script = textnorm.script_for_lang(cfg.tgt_lang)
        train_src, train_tgt = self.train_files
        splits = [("train", train_src, train_tgt),
                  ("dev", cfg.dev_src, cfg.dev_tgt)]
        if cfg.test_src:
            splits.append(("test", cfg.test_src, cfg.test_tgt))
        for name, src_path, tgt_path in splits:
            n_src = len(_read_lines(Path(src_path)))
            n_tgt = len(_read_lines(Path(tgt_path)))
            if n_src != n_tgt:
                raise ExperimentError(
                    f"{name} corpus sides are misaligned: {src_path} has "
                    f"{n_src} lines, {tgt_path} has {n_tgt}")
            self._prep_file(src_path, prep / f"{name}.src", src_script)
            self._prep_file(tgt_path, prep / f"{name}.tgt", tgt_script)

    def do_bpe(self):
        prep = self.dir / "prep"
        out = self.dir / "bpe"
        out.mkdir(exist_ok=True)
        src_tok = [ln.split() for ln in _read_lines(prep / "train.src")]
        tgt_tok = [ln.split() for ln in _read_lines(prep / "train.tgt")]
        if self.cfg.joint_bpe:
            model = learn_bpe(src_tok + tgt_tok, self.cfg.bpe_merges)
            model.save(out / "src.model")
            model.save(out / "tgt.model")
        else:
            learn_bpe(src_tok, self.cfg.bpe_merges).save(out / "src.model")
            learn_bpe(tgt_tok, self.cfg.bpe_merges).save(out / "tgt.model")

    def do_vocab(self):
        prep, bpe_dir = self.dir / "prep", self.dir / "bpe"
        out = self.dir / "vocab"
        out.mkdir(exist_ok=True)
        for side in ("src", "tgt"):
            model = BpeModel.load(bpe_dir / f"{side}.model")
            applied = [apply_bpe(model, ln.split())
                       for ln in _read_lines(prep / f"train.{side}")]
            vocab = build_vocab(applied, min_count=self.cfg.min_count)
            vocab.save(out / f"{side}.vocab")

    def do_binarize(self):
        prep = self.dir / "prep"
        out = self.dir / "bin"
        out.mkdir(exist_ok=True)
        models = {side: BpeModel.load(self.dir / "bpe" / f"{side}.model")
                  for side in ("src", "tgt")}
        vocabs = {side: Vocabulary.load(self.dir / "vocab" / f"{side}.vocab")
                  for side in ("src", "tgt")}
        splits = ["train", "dev"] + (["test"] if self.cfg.test_src else [])
        for split_name in splits:
            for side in ("src", "tgt"):
                lines = _read_lines(prep / f"{split_name}.{side}")
                ids = [vocabs[side].encode(apply_bpe(models[side], ln.split()))
                       for ln in lines]
                _write_lines(out / f"{split_name}.{side}.ids",
                             [" ".join(str(i) for i in row) for row in ids])

    def _load_context(self) -> PipelineContext:
        return PipelineContext(
            src_lang=LanguageTag(self.cfg.src_lang),
            tgt_lang=LanguageTag(self.cfg.tgt_lang),
            bpe_src=BpeModel.load(self.dir / "bpe" / "src.model"),
            bpe_tgt=BpeModel.load(self.dir / "bpe" / "tgt.model"),
            src_vocab=Vocabulary.load(self.dir / "vocab" / "src.vocab"),
            tgt_vocab=Vocabulary.load(self.dir / "vocab" / "tgt.vocab"),
            transliterate=self.cfg.transliterate,
            keep_joiners=self.cfg.keep_joiners)

    def _load_split(self, name):
        src = _read_ids(self.dir / "bin" / f"{name}.src.ids")
        tgt = _read_ids(self.dir / "bin" / f"{name}.tgt.ids")
        if len(src) != len(tgt):
            raise ExperimentError(f"binarized {name} sides differ in length")
        return list(zip(src, tgt))

    def do_train(self):
        ctx = self._load_context()
        train_data = self._load_split("train")
        dev_data = self._load_split("dev")
        tc = self.cfg.train_config()
        model = build_model(self.cfg.model_config(tc.dropout), ctx.src_vocab,
                            ctx.tgt_vocab, seed=fan_seed(self.cfg.seed, "model"))
        self.log(f"train: {self.cfg.arch} on {len(train_data)} pairs "
                 f"({model.param_count()} parameters)")
        ckpt, report = train(model, train_data, dev_data, tc, run_dir=self.dir)
        self.log(f"train: best epoch {report.best_epoch} "
                 f"dev BLEU {ckpt.dev_bleu:.4f}")

    def do_decode(self):
        ctx = self._load_context()
        ckpt = load_checkpoint(self.dir / "best.dmt")
        model = restore_model(ckpt, ctx.src_vocab, ctx.tgt_vocab)
        out = self.dir / "outputs"
        out.mkdir(exist_ok=True)
        lines = _read_lines(Path(self.cfg.test_src))
        hyps = translate_lines(model, lines, ctx, self.cfg.decode_config())
        _write_lines(out / "test.hyp", hyps)

    def do_score(self):
        out = self.dir / "outputs"
        hyp, ref = out / "test.hyp", Path(self.cfg.test_tgt)
        surface = "native-script"
        if not self.cfg.detranslit_score:
            # score on the pooled Devanagari surface instead
            surface = "devanagari"
            tgt_script = textnorm.script_for_lang(self.cfg.tgt_lang)
            for in_path, name in ((hyp, "test.hyp.dev"), (ref, "test.ref.dev")):
                _write_lines(out / name,
                             [textnorm.transliterate(ln, tgt_script,
                                                     textnorm.DEVANAGARI)
                              for ln in _read_lines(Path(in_path))])
            hyp, ref = out / "test.hyp.dev", out / "test.ref.dev"
        report = score_files(hyp, ref, report_path=out / "test.score.tsv")
        (out / "score.meta").write_text(f"surface={surface}\n", encoding="utf-8")
        pair = f"{self.cfg.src_lang}-{self.cfg.tgt_lang}"
        (self.dir / "results.tsv").write_text(
            "system\tpair\tmean_sentence_bleu\n"
            f"{self.cfg.arch}\t{pair}\t{report.mean:.4f}\n", encoding="utf-8")
        self.log(f"score: mean sentence BLEU {report.mean:.4f} "
                 f"(surface: {surface})")


def run_experiment(config: ExperimentConfig, runs_dir=None) -> Path:
    """Execute (or resume) the full stage graph for one experiment."""
    config.validate()
    root = runs_root(runs_dir)
    run_dir = root / config.name
    run_dir.mkdir(parents=True, exist_ok=True)

    snapshot_path = run_dir / "config.txt"
    snapshot = config.snapshot()
    if snapshot_path.exists():
        if snapshot_path.read_text(encoding="utf-8") != snapshot:
            raise ExperimentError(
                f"run {config.name!r} exists with a different configuration; "
                f"pick a new run name")
    else:
        snapshot_path.write_text(snapshot, encoding="utf-8")

    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ExperimentError(f"run {config.name!r} is locked (already running?); "
                              f"remove {lock} if stale")
    os.close(fd)
    runner = _Runner(config, run_dir)
    try:
        if config.backtranslation:
            runner.stage("backtranslate", runner.do_backtranslate)
            runner.stage("mix", runner.do_mix)
        runner.stage("prep", runner.do_prep)
        runner.stage("bpe", runner.do_bpe)
        runner.stage("vocab", runner.do_vocab)
        runner.stage("binarize", runner.do_binarize)
        runner.stage("train", runner.do_train)
        if config.test_src:
            runner.stage("decode", runner.do_decode)
            runner.stage("score", runner.do_score)
        if not runner.did_work:
            runner.log("all stages fresh; nothing to do")
    finally:
        lock.unlink(missing_ok=True)
    return run_dir


def aggregate_report(runs_dir=None, fmt: str = "tsv") -> str:
    """Collect per-run results.tsv files into a systems-by-pairs matrix."""
    root = runs_root(runs_dir)
    cells = {}
    pairs, systems = [], []
    for results in sorted(root.glob("*/results.tsv")):
        for line in _read_lines(results)[1:]:
            system, pair, score = line.split("\t")
            if pair not in pairs:
                pairs.append(pair)
            if system not in systems:
                systems.append(system)
            cells[(system, pair)] = score
    if fmt == "markdown":
        head = "| system | " + " | ".join(pairs) + " |"
        sep = "|" + "---|" * (len(pairs) + 1)
        rows = ["| " + " | ".join([s] + [cells.get((s, p), "-") for p in pairs]) + " |"
                for s in systems]
        return "\n".join([head, sep] + rows) + "\n"
    lines = ["system\t" + "\t".join(pairs)]
    for s in systems:
        lines.append("\t".join([s] + [cells.get((s, p), "-") for p in pairs]))
    return "\n".join(lines) + "\n"
