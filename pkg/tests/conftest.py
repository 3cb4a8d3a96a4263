import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def write_copy_corpus(path_src, path_tgt, rng, n, alphabet, lo=4, hi=9):
    """Identity-language pair files: target line equals source line."""
    lines = []
    for _ in range(n):
        k = int(rng.uniform((), lo, hi + 1))
        lines.append(" ".join(alphabet[int(rng.uniform((), 0, len(alphabet)))]
                              for _ in range(k)))
    text = "".join(ln + "\n" for ln in lines)
    Path(path_src).write_text(text, encoding="utf-8")
    Path(path_tgt).write_text(text, encoding="utf-8")
    return lines


@pytest.fixture(scope="session")
def copy_experiment(tmp_path_factory):
    """One completed copy-language experiment run, shared across tests."""
    from dmt.autodiff import RngState
    from dmt.experiment import ExperimentConfig, run_experiment

    root = tmp_path_factory.mktemp("copyrun")
    data = root / "data"
    data.mkdir()
    rng = RngState(41)
    alphabet = [chr(ord("a") + i) for i in range(14)]
    write_copy_corpus(data / "train.kn", data / "train.ml", rng, 64, alphabet)
    write_copy_corpus(data / "dev.kn", data / "dev.ml", rng, 16, alphabet)
    write_copy_corpus(data / "test.kn", data / "test.ml", rng, 16, alphabet)

    config_text = "\n".join([
        "name=copytest",
        "src_lang=kn",
        "tgt_lang=ml",
        f"train_src={data / 'train.kn'}",
        f"train_tgt={data / 'train.ml'}",
        f"dev_src={data / 'dev.kn'}",
        f"dev_tgt={data / 'dev.ml'}",
        f"test_src={data / 'test.kn'}",
        f"test_tgt={data / 'test.ml'}",
        "bpe_merges=0",
        "arch=transformer",
        "model.enc_layers=1",
        "model.dec_layers=1",
        "model.d_model=48",
        "model.n_heads=2",
        "model.d_ffn=96",
        "model.max_positions=64",
        "train.learning_rate=0.003",
        "train.batch_size=32",
        "train.epochs=220",
        "train.lr_shrink=1.0",
        "train.target_bleu=0.97",
        "beam=2",
        "seed=3",
    ]) + "\n"
    config_path = root / "experiment.cfg"
    config_path.write_text(config_text, encoding="utf-8")

    config = ExperimentConfig.from_file(config_path)
    runs_dir = root / "runs"
    run_dir = run_experiment(config, runs_dir=runs_dir)
    return {"run_dir": run_dir, "runs_dir": runs_dir, "config_path": config_path,
            "config": config, "data": data}
