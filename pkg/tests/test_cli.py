import csv
import json

import pytest

from qroute.cli import CURVE_HEADER, EVAL_HEADER, EXIT_CAPACITY, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from qroute.environment import generate_instance


def save_instance(inst, path):
    path.write_text(inst.to_json())


def run(*argv):
    return main([str(a) for a in argv])


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert run("gen", "--seed", 3, "--n-requests", 2, "--count", 6, "--out", out) == EXIT_OK
    return out / "dataset.jsonl"


def test_gen_writes_dataset_and_manifest(tmp_path):
    assert run("gen", "--seed", 1, "--count", 4, "--out", tmp_path) == EXIT_OK
    lines = (tmp_path / "dataset.jsonl").read_text().splitlines()
    assert len(lines) == 4
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["command"] == "gen" and m["seed"] == 1 and m["config"]["count"] == 4
    assert m["started_at"] and m["finished_at"]
    assert "dataset.jsonl" in m["outputs"]


def test_gen_count_zero_and_negative(tmp_path):
    assert run("gen", "--count", 0, "--out", tmp_path / "a") == EXIT_OK
    assert (tmp_path / "a" / "dataset.jsonl").read_text() == ""
    assert run("gen", "--count", -1, "--out", tmp_path / "b") == EXIT_USAGE


def test_gen_seeds_differ(tmp_path):
    run("gen", "--seed", 1, "--out", tmp_path / "a")
    run("gen", "--seed", 2, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "dataset.jsonl").read_bytes() != (tmp_path / "b" / "dataset.jsonl").read_bytes()


@pytest.mark.parametrize("algo", ["qdqn", "ddqn-mlp", "ppo"])
def test_train_outputs_and_determinism(tmp_path, dataset, algo):
    args = ["train", "--algo", algo, "--dataset", dataset, "--episodes", 6, "--batch-size", 4, "--seed", 5]
    assert run(*args, "--out", tmp_path / "a") == EXIT_OK
    assert run(*args, "--out", tmp_path / "b") == EXIT_OK
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
    rows = read_rows(a / "curve.csv")
    assert rows[0] == CURVE_HEADER and len(rows) == 7
    assert read_rows(a / "timing.csv")[0] == ["episode", "wall_ms"]
    ckpt = json.loads((a / "checkpoint.json").read_text())
    assert ckpt["algo"] == algo
    m = json.loads((a / "manifest.json").read_text())
    if algo != "qdqn":
        assert m["hidden"] == 256
    assert m["instance_size"] == 5


def test_train_seed_changes_curve(tmp_path, dataset):
    base = ["train", "--algo", "ddqn-mlp", "--dataset", dataset, "--episodes", 5, "--batch-size", 4]
    run(*base, "--seed", 1, "--out", tmp_path / "a")
    run(*base, "--seed", 2, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "curve.csv").read_bytes() != (tmp_path / "b" / "curve.csv").read_bytes()


def test_train_flags_and_optimizer(tmp_path, dataset):
    assert run("train", "--dataset", dataset, "--episodes", 3, "--batch-size", 4, "--flags", "true",
               "--optimizer", "adam", "--lr", 0.005, "--out", tmp_path) == EXIT_OK
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["encode_flags"] is True
    assert m["trainer"]["optimizer"] == "adam" and m["trainer"]["learning_rate"] == 0.005
    assert json.loads((tmp_path / "checkpoint.json").read_text())["config"]["encode_flags"] is True


def test_manifest_written_before_work(tmp_path):
    # the run fails inside the command, the manifest is already there
    assert run("train", "--dataset", tmp_path / "missing.jsonl", "--out", tmp_path / "o") == EXIT_IO
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["command"] == "train" and m["finished_at"] is None


def test_train_usage_errors(tmp_path, dataset):
    assert run("train", "--out", tmp_path / "a") == EXIT_USAGE
    assert run("train", "--algo", "nope", "--dataset", dataset, "--out", tmp_path / "b") == EXIT_USAGE
    run("gen", "--count", 0, "--out", tmp_path / "e")
    assert run("train", "--dataset", tmp_path / "e" / "dataset.jsonl", "--out", tmp_path / "c") == EXIT_USAGE
    assert run("train", "--dataset", dataset, "--gamma", 1.5, "--out", tmp_path / "d") == EXIT_USAGE


def test_eval_baselines_and_checkpoint(tmp_path, dataset):
    assert run("eval", "--policy", "oracle", "--dataset", dataset, "--out", tmp_path / "o") == EXIT_OK
    rows = read_rows(tmp_path / "o" / "eval.csv")
    assert rows[0] == EVAL_HEADER and len(rows) == 7
    assert all(float(r[2]) == 0.0 and r[3] == "true" for r in rows[1:])
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["method"] == "oracle"

    run("train", "--algo", "ddqn-mlp", "--dataset", dataset, "--episodes", 3, "--batch-size", 4,
        "--out", tmp_path / "t")
    assert run("eval", "--checkpoint", tmp_path / "t" / "checkpoint.json", "--dataset", dataset,
               "--out", tmp_path / "c") == EXIT_OK
    rows = read_rows(tmp_path / "c" / "eval.csv")
    assert all(float(r[2]) >= -1e-9 for r in rows[1:])


def test_eval_checkpoint_size_mismatch(tmp_path, dataset):
    run("train", "--algo", "ddqn-mlp", "--dataset", dataset, "--episodes", 2, "--batch-size", 4,
        "--out", tmp_path / "t")
    run("gen", "--n-requests", 1, "--count", 2, "--out", tmp_path / "g")
    assert run("eval", "--checkpoint", tmp_path / "t" / "checkpoint.json",
               "--dataset", tmp_path / "g" / "dataset.jsonl", "--out", tmp_path / "e") == EXIT_USAGE


def test_eval_empty_dataset(tmp_path):
    run("gen", "--count", 0, "--out", tmp_path / "g")
    assert run("eval", "--policy", "random", "--dataset", tmp_path / "g" / "dataset.jsonl",
               "--out", tmp_path / "e") == EXIT_OK
    assert read_rows(tmp_path / "e" / "eval.csv") == [EVAL_HEADER]


def test_eval_errors(tmp_path, dataset):
    assert run("eval", "--dataset", dataset, "--out", tmp_path / "a") == EXIT_USAGE
    assert run("eval", "--policy", "random", "--dataset", tmp_path / "none.jsonl", "--out", tmp_path / "b") == EXIT_IO


def test_compare(tmp_path, dataset):
    run("eval", "--policy", "oracle", "--dataset", dataset, "--out", tmp_path / "o")
    run("eval", "--policy", "random", "--dataset", dataset, "--out", tmp_path / "r")
    assert run("compare", tmp_path / "o", tmp_path / "r", "--out", tmp_path / "c") == EXIT_OK
    rows = read_rows(tmp_path / "c" / "combined.csv")
    assert rows[0] == ["method", "run", *EVAL_HEADER]
    assert len(rows) == 13 and {r[0] for r in rows[1:]} == {"oracle", "random"}
    assert run("compare", tmp_path / "o", tmp_path / "missing", "--out", tmp_path / "d") == EXIT_IO
    assert run("compare", "--out", tmp_path / "e") == EXIT_USAGE


def test_qsvt_single_request(tmp_path):
    inst = generate_instance(4, 1)
    save_instance(inst, tmp_path / "inst.json")
    assert run("qsvt", "--instance", tmp_path / "inst.json", "--out", tmp_path / "q") == EXIT_OK
    res = json.loads((tmp_path / "q" / "result.json").read_text())
    assert res["routes"] == [[0, 1, 2, 0]] and res["feasible"]
    assert len(res["bitstring"]) == 4
    assert read_rows(tmp_path / "q" / "trace.csv")[0] == ["evaluation", "incumbent_energy"]
    assert json.loads((tmp_path / "q" / "qubo.json").read_text())


def test_qsvt_zero_penalty_reports_infeasible(tmp_path):
    inst = generate_instance(4, 1)
    save_instance(inst, tmp_path / "inst.json")
    assert run("qsvt", "--instance", tmp_path / "inst.json", "--penalty-scale", 0,
               "--out", tmp_path / "q") == EXIT_OK
    res = json.loads((tmp_path / "q" / "result.json").read_text())
    # with no penalties the empty assignment is optimal
    assert not res["feasible"]


def test_qsvt_capacity_and_usage(tmp_path):
    save_instance(generate_instance(0, 4), tmp_path / "big.json")
    assert run("qsvt", "--instance", tmp_path / "big.json", "--out", tmp_path / "a") == EXIT_CAPACITY
    assert run("qsvt", "--out", tmp_path / "b") == EXIT_USAGE
    assert run("qsvt", "--instance", tmp_path / "nope.json", "--out", tmp_path / "c") == EXIT_IO


def test_config_file_precedence(tmp_path, dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"count": 3, "seed": 9}))
    assert run("gen", "--config", cfg, "--seed", 4, "--out", tmp_path / "a") == EXIT_OK
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["config"]["count"] == 3 and m["config"]["seed"] == 4
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("gen", "--config", cfg, "--out", tmp_path / "b") == EXIT_USAGE


def test_replay_is_byte_identical(tmp_path, dataset):
    run("train", "--algo", "qdqn", "--dataset", dataset, "--episodes", 4, "--batch-size", 4,
        "--seed", 7, "--out", tmp_path / "a")
    assert run("replay", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == EXIT_OK
    assert (tmp_path / "a" / "curve.csv").read_bytes() == (tmp_path / "b" / "curve.csv").read_bytes()
    # a manifest also works as --config
    assert run("train", "--config", tmp_path / "a" / "manifest.json", "--out", tmp_path / "c") == EXIT_OK
    assert (tmp_path / "a" / "curve.csv").read_bytes() == (tmp_path / "c" / "curve.csv").read_bytes()


def test_bad_arguments_exit_usage(tmp_path):
    assert run("train", "--episodes", "many", "--out", tmp_path) == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE
