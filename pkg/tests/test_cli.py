import numpy as np
import pytest

from attmerge import tensor as tn
from attmerge.cli import CHECKPOINT, EER_SUMMARY, TRAIN_LOG, main
from attmerge.experiments import read_log_csv
from attmerge.gradcheck import BLOCKS

TOY = """\
seed = 5
num_layers = 4
hidden_dim = 8
num_heads = 2
ffn_dim = 8
layer_cap = 4
recurrent_hidden = 4
pool_dim = 4
peak_lr = 0.03
total_epochs = 12
batch_size = 8
data.num_utts = 12
data.t_min = 2
data.t_max = 3
data.band = 1-2
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "toy.cfg"
    path.write_text(TOY)
    return str(path)


@pytest.fixture
def data(tmp_path, cfg):
    out = {}
    for split in ("train", "dev", "eval"):
        out[split] = str(tmp_path / split)
        assert main(["gen-data", "--config", cfg, "--split", split, "--out", out[split]]) == 0
    return out


def train(tmp_path, cfg, data, name="run", *extra):
    out = tmp_path / name
    argv = ["train", "--config", cfg, "--train", data["train"], "--dev", data["dev"], "--out", str(out), *extra]
    assert main(argv) == 0
    return out


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestGenData:
    def test_layout(self, tmp_path, data):
        files = list((tmp_path / "train").iterdir())
        assert len([f for f in files if f.suffix == ".emb"]) == 24
        assert (tmp_path / "train" / "key.txt").is_file()

    def test_same_seed_byte_identical(self, tmp_path, cfg):
        main(["gen-data", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["gen-data", "--config", cfg, "--out", str(tmp_path / "b")])
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_seed_flag_wins(self, tmp_path, cfg):
        main(["gen-data", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["gen-data", "--config", cfg, "--seed", "6", "--out", str(tmp_path / "b")])
        assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "b")

    def test_invalid_band(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text(TOY.replace("data.band = 1-2", "data.band = 3-9"))
        assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
        assert "band" in capsys.readouterr().err
        assert not (tmp_path / "d").exists()

    def test_existing_needs_force(self, tmp_path, cfg, capsys):
        out = str(tmp_path / "d")
        assert main(["gen-data", "--config", cfg, "--out", out]) == 0
        assert main(["gen-data", "--config", cfg, "--out", out]) == 2
        assert "--force" in capsys.readouterr().err
        assert main(["gen-data", "--config", cfg, "--out", out, "--force"]) == 0


class TestTrain:
    def test_fine_tuned_unfreezes_at_epoch_11(self, tmp_path, cfg, data):
        run = train(tmp_path, cfg, data)
        rows = read_log_csv((run / TRAIN_LOG).read_text())
        assert [r.epoch for r in rows] == list(range(1, 13))
        assert [r.frozen_flag for r in rows] == [True] * 10 + [False] * 2
        assert (run / CHECKPOINT).is_file()

    def test_fixed_always_frozen(self, tmp_path, cfg, data):
        run = train(tmp_path, cfg, data, "run", "--strategy", "fixed")
        rows = read_log_csv((run / TRAIN_LOG).read_text())
        assert all(r.frozen_flag for r in rows)

    def test_deterministic(self, tmp_path, cfg, data):
        a = train(tmp_path, cfg, data, "a")
        b = train(tmp_path, cfg, data, "b")
        assert tree_bytes(a) == tree_bytes(b)

    @pytest.mark.parametrize("merge", ["none", "linm"])
    def test_other_merges(self, tmp_path, cfg, data, merge):
        run = train(tmp_path, cfg, data, "run", "--merge", merge, "--head", "pooling")
        assert (run / CHECKPOINT).is_file()

    def test_missing_train_path(self, tmp_path, cfg, data, capsys):
        argv = ["train", "--config", cfg, "--train", str(tmp_path / "nope"), "--out", str(tmp_path / "run")]
        assert main(argv) == 2
        assert "does not exist" in capsys.readouterr().err
        assert not (tmp_path / "run").exists()

    def test_layer_cap_above_stack_depth(self, tmp_path, cfg, data):
        deep = tmp_path / "deep.cfg"
        deep.write_text(TOY.replace("num_layers = 4", "num_layers = 6").replace("layer_cap = 4", "layer_cap = 6"))
        argv = ["train", "--config", str(deep), "--train", data["train"], "--out", str(tmp_path / "run")]
        assert main(argv) == 2


class TestEvaluate:
    @pytest.fixture
    def run(self, tmp_path, cfg, data):
        return train(tmp_path, cfg, data)

    def test_three_datasets_and_average(self, tmp_path, cfg, data, run, capsys):
        out = tmp_path / "scores"
        sets = [data["train"], data["dev"], data["eval"]]
        assert main(["evaluate", "--config", cfg, "--checkpoint", str(run / CHECKPOINT), "--out", str(out), *sets]) == 0
        lines = (out / EER_SUMMARY).read_text().splitlines()
        assert lines[0] == "dataset,eer"
        assert [line.split(",")[0] for line in lines[1:]] == ["train", "dev", "eval", "Avg"]
        eers = [float(line.split(",")[1]) for line in lines[1:]]
        assert eers[3] == pytest.approx(np.mean(eers[:3]), abs=1e-15)
        assert (out / "eval.scores.txt").is_file() and (out / "eval.det.csv").is_file()
        printed = capsys.readouterr().out.splitlines()
        assert printed[-1].startswith("Avg: EER ")

    def test_training_set_nearly_separated(self, tmp_path, data, run):
        out = tmp_path / "scores"
        assert main(["evaluate", "--checkpoint", str(run / CHECKPOINT), "--out", str(out), data["train"]]) == 0
        eer = float((out / EER_SUMMARY).read_text().splitlines()[1].split(",")[1])
        assert eer <= 0.1

    def test_workers_do_not_change_scores(self, tmp_path, data, run):
        ckpt = str(run / CHECKPOINT)
        main(["evaluate", "--checkpoint", ckpt, "--out", str(tmp_path / "one"), data["eval"]])
        main(["evaluate", "--checkpoint", ckpt, "--out", str(tmp_path / "two"), "--workers", "2", data["eval"]])
        assert tree_bytes(tmp_path / "one") == tree_bytes(tmp_path / "two")

    def test_missing_key_file_leaves_no_output(self, tmp_path, data, run):
        (tmp_path / "eval" / "key.txt").unlink()
        out = tmp_path / "scores"
        assert main(["evaluate", "--checkpoint", str(run / CHECKPOINT), "--out", str(out), data["dev"], data["eval"]]) != 0
        assert not out.exists()

    def test_config_mismatch(self, tmp_path, data, run):
        other = tmp_path / "other.cfg"
        other.write_text(TOY + "merge = linm\n")
        argv = ["evaluate", "--config", str(other), "--checkpoint", str(run / CHECKPOINT), "--out", str(tmp_path / "s"), data["eval"]]
        assert main(argv) == 2

    def test_zero_workers_rejected(self, tmp_path, data, run):
        argv = ["evaluate", "--checkpoint", str(run / CHECKPOINT), "--out", str(tmp_path / "s"), "--workers", "0", data["eval"]]
        assert main(argv) == 2


class TestInspectWeights:
    def test_untrained_linm_is_uniform(self, tmp_path, data, capsys):
        still = tmp_path / "still.cfg"
        still.write_text(TOY.replace("peak_lr = 0.03", "peak_lr = 1e-12"))
        run = train(tmp_path, str(still), data, "run", "--merge", "linm")
        capsys.readouterr()
        assert main(["inspect-weights", "--checkpoint", str(run / CHECKPOINT)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "layer_index,weight"
        weights = np.array([float(line.split(",")[1]) for line in lines[1:]])
        assert [int(line.split(",")[0]) for line in lines[1:]] == [1, 2, 3, 4]
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(weights, 0.25, atol=1e-9)

    def test_attm_needs_data(self, tmp_path, cfg, data, capsys):
        run = train(tmp_path, cfg, data, "run")
        ckpt = str(run / CHECKPOINT)
        assert main(["inspect-weights", "--checkpoint", ckpt]) == 2
        assert "--data" in capsys.readouterr().err
        out = tmp_path / "w.csv"
        assert main(["inspect-weights", "--checkpoint", ckpt, "--data", data["eval"], "--out", str(out)]) == 0
        weights = np.array([float(line.split(",")[1]) for line in out.read_text().splitlines()[1:]])
        assert weights.shape == (4,) and np.all((weights > 0) & (weights < 1))

    def test_none_merge_has_no_weights(self, tmp_path, cfg, data):
        run = train(tmp_path, cfg, data, "run", "--merge", "none")
        assert main(["inspect-weights", "--checkpoint", str(run / CHECKPOINT)]) == 2


class TestGradcheck:
    def test_one_line_per_block(self, capsys):
        assert main(["gradcheck", "--seed", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert [line.split()[0] for line in lines] == list(BLOCKS)
        assert all(line.endswith(" ok") for line in lines)

    def test_corrupted_backward_fails(self, monkeypatch, capsys):
        monkeypatch.setattr(tn, "_swish_derivative", lambda x, sig: 1.1 * sig)
        assert main(["gradcheck"]) == 1
        assert "FAIL" in capsys.readouterr().out
