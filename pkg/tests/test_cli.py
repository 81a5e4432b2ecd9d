import itertools
import json

import numpy as np
import pytest

from vespa.ablation import evaluate_model, specialization_ablation
from vespa.checkpoint import load_checkpoint, save_checkpoint
from vespa.cli import main
from vespa.model import ModelConfig, compute_priors, init_params
from vespa.synthdata import Dataset, read_dataset, write_dataset

SMALL_CONFIG = """\
gen.sample_count = 600
gen.feature_dim = 12
gen.latent_dim = 4
gen.attribute_count = 5
model.trunk_widths = 16,16
model.view_branch_widths = 8
model.expert_widths = 8
train.epochs = 2
train.lr = 0.002
"""


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    conf = root / "small.txt"
    conf.write_text(SMALL_CONFIG)
    assert run("generate", "--config", conf, "--out", root / "data") == 0
    assert run("train", "--config", conf, "--data", root / "data", "--out", root / "run") == 0
    return root, conf


def test_generate_writes_files_matching_config(workspace):
    root, _ = workspace
    data = root / "data"
    for name in ("dataset.jsonl", "train.jsonl", "val.jsonl", "test.jsonl", "ground_truth.json", "config.resolved.txt"):
        assert (data / name).exists(), name
    header = json.loads((data / "dataset.jsonl").read_text().splitlines()[0])
    assert (header["D"], header["C"], header["V"], header["N"]) == (12, 5, 3, 600)
    sizes = [len(read_dataset(data / f"{s}.jsonl")) for s in ("train", "val", "test")]
    assert sizes == [420, 60, 120]
    assert "gen.sample_count = 600" in (data / "config.resolved.txt").read_text()


def test_generate_is_deterministic(workspace, tmp_path):
    root, conf = workspace
    assert run("generate", "--config", conf, "--out", tmp_path / "again") == 0
    for f in (root / "data").iterdir():
        assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes(), f.name


def test_seed_flag_changes_data(workspace, tmp_path):
    _, conf = workspace
    assert run("generate", "--config", conf, "--seed", 5, "--out", tmp_path / "s5") == 0
    text = (tmp_path / "s5" / "config.resolved.txt").read_text()
    assert "gen.seed = 5" in text and "split.seed = 5" in text


def test_invalid_ratio_exits_2_naming_field(tmp_path, capsys):
    code = run("generate", "--set", "split.ratios=0.6,0.6,0.1", "--out", tmp_path)
    assert code == 2
    assert "split.ratios" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    assert run("generate", "--set", "gen.bogus=1", "--out", tmp_path) == 2
    assert "gen.bogus" in capsys.readouterr().err


def test_train_outputs(workspace):
    root, _ = workspace
    out = root / "run"
    params, priors, state = load_checkpoint(out / "checkpoint.bin")
    assert params.config.attribute_count == 5 and state.t > 0
    log = (out / "train_log.txt").read_text().splitlines()
    assert len(log) == 2 and log[0].startswith("epoch=0 mean_joint=")
    assert "wall_ms" not in "".join(log)
    assert "wall_ms=" in (out / "timing.txt").read_text()
    assert priors.fingerprint == compute_priors(read_dataset(root / "data" / "train.jsonl").attrs).fingerprint


def test_train_is_deterministic(workspace, tmp_path):
    root, conf = workspace
    assert run("train", "--config", conf, "--data", root / "data", "--out", tmp_path) == 0
    for name in ("checkpoint.bin", "train_log.txt", "config.resolved.txt"):
        assert (tmp_path / name).read_bytes() == (root / "run" / name).read_bytes()


def test_all_unknown_views_need_transfer(workspace, tmp_path, capsys):
    root, conf = workspace
    hidden = read_dataset(root / "data" / "train.jsonl").without_views()
    write_dataset(hidden, tmp_path / "hidden.jsonl")
    assert run("train", "--config", conf, "--data", tmp_path / "hidden.jsonl", "--out", tmp_path / "o") == 2
    assert "--transfer" in capsys.readouterr().err


def test_transfer_keeps_view_branch(workspace, tmp_path):
    root, conf = workspace
    assert run("generate", "--config", conf, "--seed", 9, "--hide-views", "--out", tmp_path / "hid") == 0
    assert np.all(read_dataset(tmp_path / "hid" / "train.jsonl").views == -1)
    hidden = json.loads((tmp_path / "hid" / "hidden_views.json").read_text())
    assert len(hidden["train"]) == 420 and min(hidden["train"]) >= 0
    code = run("train", "--config", conf, "--data", tmp_path / "hid", "--init", root / "run" / "checkpoint.bin",
               "--transfer", "--out", tmp_path / "tr")
    assert code == 0
    before, _, _ = load_checkpoint(root / "run" / "checkpoint.bin")
    after, _, _ = load_checkpoint(tmp_path / "tr" / "checkpoint.bin")
    assert after.checksum("view") == before.checksum("view")
    assert after.checksum("expert0") != before.checksum("expert0")
    assert "train.view_branch_lr = 0.0" in (tmp_path / "tr" / "config.resolved.txt").read_text()


def test_transfer_rejects_nonzero_view_lr(workspace, tmp_path, capsys):
    root, conf = workspace
    code = run("train", "--config", conf, "--set", "train.view_branch_lr=0.001", "--data", root / "data",
               "--init", root / "run" / "checkpoint.bin", "--transfer", "--out", tmp_path)
    assert code == 2 and "view_branch_lr" in capsys.readouterr().err


def test_eval_report_equals_library(workspace, tmp_path):
    root, _ = workspace
    assert run("eval", "--checkpoint", root / "run" / "checkpoint.bin", "--data", root / "data", "--out", tmp_path) == 0
    params, _, _ = load_checkpoint(root / "run" / "checkpoint.bin")
    report, _ = evaluate_model(params, read_dataset(root / "data" / "test.jsonl"))
    kv = (tmp_path / "report.kv").read_text()
    assert kv == "".join(f"{k}={v}\n" for k, v in report.records())
    assert "view_accuracy.2=" in kv
    assert "view accuracy: front=" in (tmp_path / "report.txt").read_text()


def test_eval_without_views_gives_notice(workspace, tmp_path):
    root, _ = workspace
    write_dataset(read_dataset(root / "data" / "test.jsonl").without_views(), tmp_path / "t.jsonl")
    assert run("eval", "--checkpoint", root / "run" / "checkpoint.bin", "--data", tmp_path / "t.jsonl", "--out", tmp_path) == 0
    assert "not reported" in (tmp_path / "report.txt").read_text()
    assert "view_accuracy" not in (tmp_path / "report.kv").read_text()


def test_eval_attribute_count_mismatch(workspace, tmp_path, capsys):
    root, _ = workspace
    data = read_dataset(root / "data" / "test.jsonl")
    write_dataset(Dataset(data.x, data.attrs[:, :4], data.views), tmp_path / "c4.jsonl")
    assert run("eval", "--checkpoint", root / "run" / "checkpoint.bin", "--data", tmp_path / "c4.jsonl", "--out", tmp_path) == 2
    assert "C=5" in capsys.readouterr().err


def perfect_fixture(tmp_path):
    """A hand-set model that is exactly right on a hand-built dataset.

    x[:3] = +-1 encodes the three attributes, x[3:6] = +-1 the view.  The
    trunk is the identity (relu keeps the +1 entries), every expert reads
    its attribute coordinate with weight 100 and bias -50, and the view
    branch reads the view coordinates with weight 100.
    """
    cfg = ModelConfig(input_dim=8, attribute_count=3, trunk_widths=(8, 8), gate_tap=1,
                      view_branch_widths=(), expert_widths=())
    p = init_params(cfg, 0)
    for i in range(2):
        p.arrays[f"trunk.{i}.W"] = np.eye(8)
    p.arrays["view.0.W"] = np.zeros((8, 3))
    for v in range(3):
        p.arrays["view.0.W"][3 + v, v] = 100.0
    for e in range(3):
        w = np.zeros((8, 3))
        w[:3, :3] = 100 * np.eye(3)
        p.arrays[f"expert{e}.0.W"] = w
        p.arrays[f"expert{e}.0.b"] = np.full(3, -50.0)
    rows, attrs, views = [], [], []
    for bits in itertools.product((0, 1), repeat=3):
        for v in range(3):
            x = -np.ones(8)
            x[:3] = 2 * np.array(bits) - 1
            x[3 + v] = 1
            x[6:] = 0
            rows.append(x)
            attrs.append(bits)
            views.append(v)
    data = Dataset(np.array(rows), np.array(attrs), np.array(views))
    save_checkpoint(tmp_path / "perfect.bin", p, compute_priors(data.attrs))
    write_dataset(data, tmp_path / "perfect.jsonl")
    return tmp_path / "perfect.bin", tmp_path / "perfect.jsonl"


def test_perfect_checkpoint_scores_one(tmp_path):
    ckpt, data = perfect_fixture(tmp_path)
    assert run("eval", "--checkpoint", ckpt, "--data", data, "--out", tmp_path / "r") == 0
    kv = dict(line.split("=", 1) for line in (tmp_path / "r" / "report.kv").read_text().splitlines())
    for key in ("mA", "example_accuracy", "example_precision", "example_recall", "example_f1", "mAP",
                "view_accuracy.0", "view_accuracy.1", "view_accuracy.2"):
        assert float(kv[key]) == 1.0, key


def test_ablate_grid(workspace, tmp_path):
    root, _ = workspace
    ckpt = root / "run" / "checkpoint.bin"
    assert run("ablate", "--checkpoint", ckpt, "--data", root / "data", "--out", tmp_path) == 0
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == "subset\\unit,front,back,side"
    assert [l.split(",")[0] for l in lines[1:]] == ["front", "back", "side"]
    params, _, _ = load_checkpoint(ckpt)
    grid = specialization_ablation(params, read_dataset(root / "data" / "test.jsonl"))
    parsed = np.array([[float(c) for c in l.split(",")[1:]] for l in lines[1:]])
    assert np.array_equal(parsed, grid)


def test_ablate_needs_views(workspace, tmp_path, capsys):
    root, _ = workspace
    write_dataset(read_dataset(root / "data" / "test.jsonl").without_views(), tmp_path / "t.jsonl")
    assert run("ablate", "--checkpoint", root / "run" / "checkpoint.bin", "--data", tmp_path / "t.jsonl", "--out", tmp_path) == 2
    assert "view" in capsys.readouterr().err


def test_gradcheck_exit_codes(capsys):
    assert run("gradcheck") == 0
    assert "PASS" in capsys.readouterr().out
    assert run("gradcheck", "--corrupt", "expert2") == 1
    assert "failed parameter groups: expert2" in capsys.readouterr().out


def test_missing_data_is_usage_error(tmp_path):
    assert run("eval", "--checkpoint", tmp_path / "x.bin", "--data", tmp_path / "nope.jsonl", "--out", tmp_path) == 2


def test_corrupt_checkpoint_is_usage_error(workspace, tmp_path, capsys):
    root, _ = workspace
    (tmp_path / "bad.bin").write_bytes((root / "run" / "checkpoint.bin").read_bytes()[:100])
    assert run("eval", "--checkpoint", tmp_path / "bad.bin", "--data", root / "data", "--out", tmp_path) == 2
    assert "offset" in capsys.readouterr().err


def test_bad_subcommand_exits_2():
    assert main(["frobnicate"]) == 2
