import json

import pytest

from abr_arena import cli, workload
from abr_arena.agent import Agent, AgentConfig
from abr_arena.workload import SynthManifestConfig, synth_manifest


def run_cli(*argv, capsys=None):
    code = cli.main(list(argv))
    if capsys is None:
        return code, "", ""
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_manifest(tmp_path, num_chunks=4):
    manifest = synth_manifest(SynthManifestConfig(num_chunks=num_chunks), seed=0)
    path = tmp_path / "video.json"
    workload.save_manifest(manifest, path)
    return path


def write_traces(tmp_path, count=3, seed=5):
    out = tmp_path / "traces"
    code = cli.main(["synth-traces", "--count", str(count), "--seed", str(seed),
                     "--out", str(out), "--duration-s", "60"])
    assert code == 0
    return out


def test_synth_traces_naming_and_determinism(tmp_path, capsys):
    out = tmp_path / "traces"
    code, _, _ = run_cli("synth-traces", "--count", "3", "--seed", "7",
                         "--out", str(out), capsys=capsys)
    assert code == 0
    names = sorted(p.name for p in out.glob("*.json"))
    assert names == ["trace_0000.json", "trace_0001.json", "trace_0002.json"]
    first = [(p.name, p.read_bytes()) for p in sorted(out.glob("*.json"))]
    run_cli("synth-traces", "--count", "3", "--seed", "7", "--out", str(out),
            capsys=capsys)
    second = [(p.name, p.read_bytes()) for p in sorted(out.glob("*.json"))]
    assert first == second


def test_synth_traces_count_zero_fails(tmp_path, capsys):
    code, _, err = run_cli("synth-traces", "--count", "0", "--out",
                           str(tmp_path / "x"), capsys=capsys)
    assert code == 1
    assert "error:" in err


def test_convert_trace_round_trip(tmp_path, capsys):
    src = tmp_path / "log.txt"
    src.write_text("0 1.0\n2 2.0\n4 1.0\n")
    dst = tmp_path / "out.json"
    code, _, _ = run_cli("convert-trace", "--in", str(src), "--format",
                         "two-column-text", "--out", str(dst), capsys=capsys)
    assert code == 0
    converted = workload.load_trace(dst, "canonical-json")
    direct = workload.load_trace(src, "two-column-text")
    assert converted == direct


def test_convert_trace_empty_file_fails(tmp_path, capsys):
    src = tmp_path / "empty.txt"
    src.write_text("")
    code, _, err = run_cli("convert-trace", "--in", str(src), "--format",
                           "two-column-text", "--out", str(tmp_path / "o.json"),
                           capsys=capsys)
    assert code == 1
    assert "no data rows" in err


def test_unknown_flag_is_validation_error(tmp_path, capsys):
    code, _, err = run_cli("synth-traces", "--count", "1", "--out",
                           str(tmp_path / "t"), "--bogus", capsys=capsys)
    assert code == 1
    assert "error:" in err


def train_config_doc(tmp_path, epochs=1):
    traces_dir = write_traces(tmp_path, count=5)
    manifest_path = write_manifest(tmp_path)
    return {
        "schema_version": 1,
        "seed": 3,
        "epochs": epochs,
        "matches_per_epoch": 2,
        "eval_every": 1,
        "checkpoint_every": 1,
        "baselines": ["constrained", "throughput"],
        "traces": {"dir": str(traces_dir)},
        "split": {"train": 0.6, "validation": 0.4},
        "manifest": {"path": str(manifest_path)},
        "session": {"buffer_capacity_s": 25.0, "history_len": 4},
    }


def test_train_end_to_end_and_flag_override(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(train_config_doc(tmp_path, epochs=5)))
    out = tmp_path / "run"
    # --epochs overrides the config value of 5.
    code, stdout, _ = run_cli("train", "--config", str(config), "--out", str(out),
                              "--epochs", "1", capsys=capsys)
    assert code == 0
    assert "trained 1 epochs" in stdout
    lines = (out / "epochs.csv").read_text().strip().splitlines()
    assert len(lines) == 3  # header, anchor row, one epoch
    assert (out / "eval.jsonl").exists()
    assert (out / "agent0_final.ckpt").exists()


def test_train_epochs_zero_logs_anchor_only(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(train_config_doc(tmp_path, epochs=0)))
    out = tmp_path / "zero"
    code, _, _ = run_cli("train", "--config", str(config), "--out", str(out),
                         capsys=capsys)
    assert code == 0
    assert len((out / "epochs.csv").read_text().strip().splitlines()) == 2


def test_train_rejects_bad_schema(tmp_path, capsys):
    doc = train_config_doc(tmp_path)
    doc["schema_version"] = 99
    config = tmp_path / "bad.json"
    config.write_text(json.dumps(doc))
    code, _, err = run_cli("train", "--config", str(config), "--out",
                           str(tmp_path / "r"), capsys=capsys)
    assert code == 1
    assert "schema" in err
    doc = train_config_doc(tmp_path)
    doc["unexpected"] = True
    config.write_text(json.dumps(doc))
    code, _, err = run_cli("train", "--config", str(config), "--out",
                           str(tmp_path / "r"), capsys=capsys)
    assert code == 1


def test_evaluate_checkpoint(tmp_path, capsys):
    traces_dir = write_traces(tmp_path, count=3)
    manifest_path = write_manifest(tmp_path)
    ckpt = tmp_path / "agent.ckpt"
    Agent(AgentConfig(history_len=4, num_levels=6), seed=0).save(ckpt)
    out = tmp_path / "eval.jsonl"
    code, stdout, _ = run_cli(
        "evaluate", "--checkpoint", str(ckpt), "--traces", str(traces_dir),
        "--manifest", str(manifest_path), "--baselines", "constrained",
        "--out", str(out), capsys=capsys)
    assert code == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(records) == 3  # |traces| x |baselines|
    assert "constrained" in stdout
    # Multiple baselines multiply the record count.
    code, _, _ = run_cli(
        "evaluate", "--checkpoint", str(ckpt), "--traces", str(traces_dir),
        "--manifest", str(manifest_path), "--baselines", "constrained,throughput",
        "--out", str(out), capsys=capsys)
    assert code == 0
    assert len(out.read_text().splitlines()) == 6


def test_evaluate_unknown_baseline(tmp_path, capsys):
    traces_dir = write_traces(tmp_path, count=2)
    manifest_path = write_manifest(tmp_path)
    ckpt = tmp_path / "agent.ckpt"
    Agent(AgentConfig(history_len=4, num_levels=6), seed=0).save(ckpt)
    code, _, err = run_cli(
        "evaluate", "--checkpoint", str(ckpt), "--traces", str(traces_dir),
        "--manifest", str(manifest_path), "--baselines", "mpc",
        "--out", str(tmp_path / "o.jsonl"), capsys=capsys)
    assert code == 1
    assert "constrained" in err and "throughput" in err


def test_tournament(tmp_path, capsys):
    traces_dir = write_traces(tmp_path, count=4)
    manifest_path = write_manifest(tmp_path)
    out = tmp_path / "ratings.json"
    code, stdout, _ = run_cli(
        "tournament", "--policies", "constrained,throughput", "--traces",
        str(traces_dir), "--manifest", str(manifest_path), "--out", str(out),
        capsys=capsys)
    assert code == 0
    ratings = json.loads(out.read_text())["ratings"]
    assert set(ratings) == {"constrained", "throughput"}
    assert sum(ratings.values()) == pytest.approx(2000.0, abs=1e-6)
    code, _, err = run_cli(
        "tournament", "--policies", "constrained", "--traces", str(traces_dir),
        "--manifest", str(manifest_path), "--out", str(out), capsys=capsys)
    assert code == 1
