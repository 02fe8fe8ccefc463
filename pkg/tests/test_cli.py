"""End-to-end command-line tests on a small synthetic dataset."""

import numpy as np
import pytest

from dreamnet import cli
from dreamnet.model import DreamNet

TINY = ["--set", "d_model=16", "--set", "n_layers=1", "--set", "n_heads_text=2",
        "--set", "max_len=32", "--set", "lstm_hidden=32", "--set", "fusion_heads=2",
        "--set", "mlp_hidden=24", "--set", "feature_dim=48", "--set", "min_freq=1",
        "--set", "pre_epochs=2", "--set", "pre_lr=1e-3", "--set", "ft_epochs=2",
        "--set", "ft_lr=1e-3", "--set", "patience=0"]

GEN = ["--set", "mean_words=15", "--set", "std_words=3", "--set", "eeg_seconds=4"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    code = cli.main(["gen-data", "--n", "40", "--seed", "5", "--eeg-fraction", "0.8",
                     "--out", str(out)] + GEN)
    assert code == 0
    return out


class TestGenData:
    def test_outputs(self, dataset_dir):
        jsonl = dataset_dir / "dataset.jsonl"
        assert jsonl.exists()
        assert len(jsonl.read_text().splitlines()) == 40
        assert (dataset_dir / "manifest.txt").exists()
        assert len(list((dataset_dir / "eeg").glob("*.eeg"))) == 32

    def test_deterministic(self, dataset_dir, tmp_path):
        out2 = tmp_path / "ds2"
        assert cli.main(["gen-data", "--n", "40", "--seed", "5", "--eeg-fraction", "0.8",
                         "--out", str(out2)] + GEN) == 0
        assert (out2 / "dataset.jsonl").read_bytes() == \
               (dataset_dir / "dataset.jsonl").read_bytes()

    def test_n_zero(self, tmp_path):
        out = tmp_path / "empty"
        assert cli.main(["gen-data", "--n", "0", "--out", str(out)] + GEN) == 0
        assert (out / "dataset.jsonl").read_text() == ""

    def test_manifest_echoes_config(self, dataset_dir):
        manifest = (dataset_dir / "manifest.txt").read_text()
        assert "n=40" in manifest and "seed=5" in manifest


@pytest.fixture(scope="module")
def pretrained(dataset_dir, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("cli-pre") / "pre.ckpt"
    code = cli.main(["pretrain", "--data", str(dataset_dir), "--ckpt-out", str(ckpt),
                     "--seed", "5"] + TINY)
    assert code == 0
    return ckpt


@pytest.fixture(scope="module")
def finetuned(dataset_dir, pretrained, tmp_path_factory):
    workdir = tmp_path_factory.mktemp("cli-ft")
    ckpt = workdir / "ft.ckpt"
    code = cli.main(["finetune", "--data", str(dataset_dir), "--ckpt-out", str(ckpt),
                     "--init-ckpt", str(pretrained), "--report-dir", str(workdir),
                     "--seed", "5"] + TINY)
    assert code == 0
    return ckpt, workdir


class TestTraining:
    def test_pretrain_outputs(self, pretrained):
        assert pretrained.exists()
        assert (pretrained.parent / (pretrained.name + ".vocab")).exists()
        loss_csv = (pretrained.parent / "loss.csv").read_text().splitlines()
        assert loss_csv[0] == "epoch,train_loss,val_loss"
        assert len(loss_csv) == 3  # header + 2 epochs

    def test_finetune_resumes_encoder_fresh_heads(self, dataset_dir, pretrained,
                                                  tmp_path):
        # zero fine-tuning epochs isolates exactly what --init-ckpt loads
        out = tmp_path / "resumed.ckpt"
        args = [a if a != "ft_epochs=2" else "ft_epochs=0" for a in TINY]
        code = cli.main(["finetune", "--data", str(dataset_dir), "--ckpt-out", str(out),
                         "--init-ckpt", str(pretrained), "--seed", "5"] + args)
        assert code == 0
        pre = DreamNet.load(pretrained)
        resumed = DreamNet.load(out)
        fresh = DreamNet(resumed.cfg, seed=5)
        # encoder weights come from the pretrained checkpoint
        assert np.array_equal(resumed.params["tok_emb"].data, pre.params["tok_emb"].data)
        assert np.array_equal(resumed.params["enc0.wq"].data, pre.params["enc0.wq"].data)
        # heads and LSTM stay at their fresh initialization
        assert np.array_equal(resumed.params["emo.w"].data, fresh.params["emo.w"].data)
        assert np.array_equal(resumed.params["lstm.fw.w"].data,
                              fresh.params["lstm.fw.w"].data)

    def test_loss_csv_rows_match_epochs(self, finetuned):
        _, workdir = finetuned
        rows = (workdir / "loss.csv").read_text().splitlines()
        assert rows[0] == "epoch,train_loss,val_loss"
        assert len(rows) == 3
        assert all(len(r.split(",")) == 3 for r in rows[1:])

    def test_corrupted_checkpoint_magic(self, dataset_dir, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOTDNETGARBAGE")
        code = cli.main(["finetune", "--data", str(dataset_dir), "--ckpt-out",
                         str(tmp_path / "out.ckpt"), "--init-ckpt", str(bad)] + TINY)
        assert code == 2

    def test_missing_data_exits_2(self, tmp_path):
        code = cli.main(["pretrain", "--data", str(tmp_path / "nope"),
                         "--ckpt-out", str(tmp_path / "c.ckpt")] + TINY)
        assert code == 2


class TestEval:
    def test_reports(self, dataset_dir, finetuned, tmp_path):
        ckpt, _ = finetuned
        report = tmp_path / "rep"
        code = cli.main(["eval", "--data", str(dataset_dir), "--ckpt", str(ckpt),
                         "--report-dir", str(report), "--seed", "5"] + TINY)
        assert code == 0
        metrics = (report / "metrics.csv").read_text().splitlines()
        assert metrics[0].startswith("model,accuracy,f1")
        names = [row.split(",")[0] for row in metrics[1:]]
        assert names[0] == "Rule-Based" and "DNet-T" in names and "DNet-M" in names
        types_csv = (report / "dream_types.csv").read_text().splitlines()
        assert types_csv[0].startswith("dream_type")
        assert (report / "manifest.txt").exists()

    def test_checkpoint_mismatch_exits_2(self, dataset_dir, tmp_path):
        code = cli.main(["eval", "--data", str(dataset_dir), "--ckpt",
                         str(tmp_path / "missing.ckpt"), "--report-dir",
                         str(tmp_path / "rep")])
        assert code == 2


class TestAblate:
    def test_writes_four_config_rows(self, dataset_dir, tmp_path):
        report = tmp_path / "abl"
        code = cli.main(["ablate", "--data", str(dataset_dir), "--report-dir",
                         str(report), "--set", "ablation_seeds=0",
                         "--seed", "5"] + TINY)
        assert code == 0
        rows = (report / "ablation.csv").read_text().splitlines()
        assert rows[0].startswith("configuration,")
        names = [r.split(",")[0] for r in rows[1:]]
        assert names == ["DNet-M", "DNet-T", "-LSTM", "-CrossAttention"]


class TestCorrelate:
    def test_gold_grid(self, dataset_dir, tmp_path):
        report = tmp_path / "corr"
        code = cli.main(["correlate", "--data", str(dataset_dir), "--gold",
                         "--report-dir", str(report), "--set", "n_perm=200",
                         "--seed", "5"])
        assert code == 0
        rows = (report / "correlations.csv").read_text().splitlines()
        assert rows[0] == "theme,emotion,r,p_value,n"
        assert len(rows) == 1 + 12 * 8
        falling = [r for r in rows if r.startswith("falling,anxiety")]
        assert len(falling) == 1
        r_value = float(falling[0].split(",")[2])
        assert r_value > 0.5

    def test_needs_ckpt_without_gold(self, dataset_dir, tmp_path):
        code = cli.main(["correlate", "--data", str(dataset_dir),
                         "--report-dir", str(tmp_path / "x")])
        assert code == 2


class TestGradCheckCommand:
    def test_passes_at_small_width(self):
        code = cli.main(["grad-check", "--set", "d_model=16", "--set", "n_layers=2",
                         "--entries", "3", "--seed", "5"])
        assert code == 0


class TestConfigResolution:
    def test_file_then_flag_precedence(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("n=10\nseed=1\nmean_words=15 # comment\nstd_words=3\neeg_seconds=4\n")
        out = tmp_path / "ds"
        code = cli.main(["gen-data", "--config", str(cfg_file), "--n", "12",
                         "--out", str(out)])
        assert code == 0
        # flag wins over file for n; file value used for seed
        assert len((out / "dataset.jsonl").read_text().splitlines()) == 12
        manifest = (out / "manifest.txt").read_text()
        assert "seed=1" in manifest

    def test_unknown_key_rejected(self, tmp_path):
        code = cli.main(["gen-data", "--n", "1", "--out", str(tmp_path / "d"),
                         "--set", "bogus_key=1"])
        assert code == 2
