import csv

import pytest

from lulc.cli import dispatch
from lulc.experiments import cli_walkthrough
from lulc.network import NetworkSpec, build_network, conv, fc, load_checkpoint, save_checkpoint
from lulc.ppm import read_ppm
from lulc.svm import load_svm
from lulc.synthetic import write_class_tree


@pytest.fixture
def data(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    write_class_tree("raw", 3, 10, size=8, seed=1)
    return tmp_path


def listing(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*"))


# -- usage errors -----------------------------------------------------------

def test_no_arguments_prints_usage(capsys):
    assert dispatch([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_suggests(capsys):
    assert dispatch(["agument", "--in", "x"]) == 1
    assert "augment" in capsys.readouterr().err


def test_misspelled_flag_suggests(data, capsys):
    assert dispatch(["split", "--data", "raw", "--out", "s.csv", "--ratio", "60,20,20"]) == 1
    assert "--ratios" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["split", "--data", "raw", "--out", "s.csv", "--ratios", "60,x"],
    ["split", "--data", "raw", "--out", "s.csv", "--ratios", "60,20,20", "--kfold", "5"],
    ["train", "--data", "raw", "--out", "m.bin", "--iters", "many"],
    ["augment", "--in", "raw"],
    ["eval", "--out", "cm.csv"],
    ["finetune", "--base", "m.bin", "--classes", "3", "--out", "m2.bin", "--bogus"],
])
def test_usage_errors_write_nothing(data, argv):
    before = listing(data)
    assert dispatch(argv) == 1
    assert listing(data) == before


def test_runtime_failure_exit_code(data, capsys):
    assert dispatch(["split", "--data", "missing", "--out", "s.csv"]) == 2
    assert "missing" in capsys.readouterr().err
    assert not (data / "s.csv").exists()


# -- subcommands ------------------------------------------------------------

def test_split_and_kfold(data):
    assert dispatch(["split", "--data", "raw", "--out", "s.csv"]) == 0
    rows = list(csv.DictReader(open("s.csv")))
    assert [sum(r["part"] == p for r in rows) for p in ("train", "val", "test")] == [18, 6, 6]
    assert dispatch(["split", "--data", "raw", "--out", "f.csv", "--kfold", "5"]) == 0
    folds = [r["fold"] for r in csv.DictReader(open("f.csv"))]
    assert sorted(set(folds)) == ["0", "1", "2", "3", "4"] and folds.count("0") == 6


def test_augment_nine_times(data):
    assert dispatch(["augment", "--in", "raw", "--out", "aug", "--angles", "5,10,30,40"]) == 0
    rows = list(csv.DictReader(open("aug/manifest.csv")))
    assert len(rows) == 30 * 9
    assert sorted({float(r["angle_degrees"]) for r in rows}) == [-40, -30, -10, -5, 0, 5, 10, 30, 40]
    assert (data / "aug/class00/img_000_r-30.ppm").exists()


def test_augment_output_size_upsamples(data):
    assert dispatch(["augment", "--in", "raw", "--out", "aug", "--angles", "5", "--output-size", "32"]) == 0
    assert read_ppm("aug/class01/img_003_r+05.ppm").shape == (32, 32, 3)


def test_train_finetune_frozen_body(data):
    assert dispatch(["train", "--data", "raw", "--out", "m.bin", "--iters", "20", "--base-lr", "0.01",
                     "--batch-size", "8", "--log", "log.csv", "--log-interval", "10"]) == 0
    assert open("log.csv").read().splitlines()[0] == "iteration,loss,train_accuracy"
    assert dispatch(["finetune", "--base", "m.bin", "--classes", "3", "--head-lr-mult", "10",
                     "--body-lr-mult", "0", "--data", "raw", "--iters", "20", "--base-lr", "0.01",
                     "--batch-size", "8", "--out", "ft.bin"]) == 0
    base, tuned = load_checkpoint("m.bin"), load_checkpoint("ft.bin")
    for name, blob in base.blobs.items():
        if name.startswith("fc8"):
            assert blob.tobytes() != tuned.blobs[name].tobytes()
        else:
            assert blob.tobytes() == tuned.blobs[name].tobytes(), name
    assert tuned.meta["iteration"] == 20


def test_finetune_head_only_to_twenty_one(data):
    spec = NetworkSpec([conv("conv1", 4, 3, activation="relu"), fc("fc7", 8, activation="relu"), fc("fc8", 1000)],
                       (3, 8, 8), 1000)
    save_checkpoint(build_network(spec, 0).to_checkpoint(), "big.bin")
    assert dispatch(["finetune", "--base", "big.bin", "--classes", "21", "--body-lr-mult", "0",
                     "--out", "small.bin"]) == 0
    small = load_checkpoint("small.bin")
    assert small.spec.num_classes == 21 and small.blobs["fc8.weights"].shape == (21, 8)


def test_extract_svm_and_eval_predictions(data):
    assert dispatch(["train", "--data", "raw", "--out", "m.bin", "--iters", "30", "--base-lr", "0.01",
                     "--batch-size", "8"]) == 0
    assert dispatch(["extract", "--ckpt", "m.bin", "--layer", "fc7", "--data", "raw", "--out", "f.csv"]) == 0
    header = open("f.csv").readline().strip().split(",")
    assert header[-1] == "label" and len(header) == 33
    assert dispatch(["svm-train", "--features", "f.csv", "--out", "m.svm", "--iters", "500"]) == 0
    assert load_svm("m.svm").weights.shape == (3, 32)
    assert dispatch(["svm-predict", "--model", "m.svm", "--features", "f.csv", "--out", "p.csv"]) == 0
    assert dispatch(["eval", "--predictions", "p.csv", "--out", "cm.csv", "--per-class", "r.csv",
                     "--merge", "0,1"]) == 0
    cm = list(csv.reader(open("cm.csv")))
    assert cm[0] == ["true\\predicted", "0+1", "2"]
    assert sum(int(v) for row in cm[1:] for v in row[1:]) == 30
    assert open("r.csv").readline().strip() == "class,recall"


def test_extract_unknown_layer_fails(data, capsys):
    dispatch(["train", "--data", "raw", "--out", "m.bin", "--iters", "1"])
    assert dispatch(["extract", "--ckpt", "m.bin", "--layer", "pool9", "--data", "raw", "--out", "f.csv"]) == 2
    assert "conv1" in capsys.readouterr().err and not (data / "f.csv").exists()


def test_cross_validate_cnn(data):
    assert dispatch(["cross-validate", "--data", "raw", "--k", "5", "--out", "cv.csv", "--iters", "20",
                     "--base-lr", "0.01", "--batch-size", "8", "--width", "4", "--hidden", "8"]) == 0
    lines = open("cv.csv").read().splitlines()
    assert lines[0] == "fold,accuracy" and len(lines) == 8


def test_viz_filters(data):
    dispatch(["train", "--data", "raw", "--out", "m.bin", "--iters", "1"])
    assert dispatch(["viz-filters", "--ckpt", "m.bin", "--layer", "conv1", "--out", "f.ppm"]) == 0
    assert read_ppm("f.ppm").shape == (3 * 3 + 4, 3 * 3 + 4, 3)
    assert dispatch(["viz-filters", "--ckpt", "m.bin", "--layer", "fc8", "--out", "g.ppm"]) == 2


def test_runs_are_byte_identical(tmp_path):
    a = cli_walkthrough(tmp_path / "a", seed=5, iterations=40)
    b = cli_walkthrough(tmp_path / "b", seed=5, iterations=40)
    assert a == b
    c = cli_walkthrough(tmp_path / "c", seed=6, iterations=40)
    assert a["model.bin"] != c["model.bin"]
