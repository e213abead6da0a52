"""Command-line behavior: wiring, precedence, exit codes, stage chaining."""

import json

import numpy as np
import pytest

from hexflow import cli
from hexflow.ingest import FirstK, RandomKofFirstM
from hexflow.tokenizer import read_token_dataset

TINY_MODEL = ["--embed-dim", "16", "--n-heads", "2", "--n-layers", "1",
              "--mlp-hidden", "32"]


def _synth_tokens(tmp_path, name="toks.bin", **kw):
    path = str(tmp_path / name)
    args = ["synth", "--mode", "tokens", "--out", path,
            "--classes", "2", "--flows-per-class", "4",
            "--packets-min", "2", "--packets-max", "3",
            "--n-packets", "3", "--row-length", "12", "--seed", "1"]
    for flag, value in kw.items():
        args += [f"--{flag.replace('_', '-')}", str(value)]
    assert cli.main(args) == 0
    return path


# --- helpers and plumbing ---

def test_read_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\n\nsteps = 7\nrow-length=16\n  lr =1e-4  \n")
    assert cli.read_config_file(str(p)) == {
        "steps": "7", "row_length": "16", "lr": "1e-4"}
    p.write_text("steps 7\n")
    with pytest.raises(ValueError, match=":1:"):
        cli.read_config_file(str(p))


def test_settings_precedence():
    import argparse
    args = argparse.Namespace(steps=4, lr=None, seed=None)
    settings = cli.Settings(args, {"steps": "9", "lr": "0.5"})
    assert settings.get("steps", 1, conv=int) == 4          # flag wins
    assert settings.get("lr", 0.1, conv=float) == 0.5       # config wins
    assert settings.get("seed", 3, conv=int) == 3           # default
    assert settings.resolved == {"steps": 4, "lr": 0.5, "seed": 3}


def test_settings_bool_conversion():
    import argparse
    args = argparse.Namespace(a=None, b=None)
    s = cli.Settings(args, {"a": "yes", "b": "off"})
    assert s.get("a", False, conv=bool) is True
    assert s.get("b", True, conv=bool) is False
    with pytest.raises(ValueError):
        cli.Settings(args, {"a": "maybe"}).get("a", False, conv=bool)


def test_parse_packet_policy():
    assert cli.parse_packet_policy("first:5", 0) == FirstK(5)
    policy = cli.parse_packet_policy("rand:3of6", 9)
    assert isinstance(policy, RandomKofFirstM)
    assert (policy.k, policy.m) == (3, 6)
    for bad in ("first", "rand:3", "grab:2", "first:x", "rand:aofb"):
        with pytest.raises(ValueError):
            cli.parse_packet_policy(bad, 0)


# --- exit codes ---

def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["synth", "--does-not-exist", "1"])
    assert exc.value.code == 2


def test_missing_required_paths(tmp_path, capsys):
    assert cli.main(["synth", "--mode", "tokens"]) == 2         # no --out
    assert cli.main(["preprocess", "--pcap", str(tmp_path / "no.pcap"),
                     "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["pretrain", "--data", str(tmp_path / "no.bin")]) == 2
    assert cli.main(["evaluate", "--data", str(tmp_path / "no.bin"),
                     "--ckpt", str(tmp_path / "no.ckpt")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("not a pair\n")
    assert cli.main(["--config", str(cfg), "synth", "--mode", "tokens",
                     "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["--config", str(tmp_path / "missing.cfg"), "synth",
                     "--out", str(tmp_path / "x")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_thread_count(capsys):
    assert cli.main(["--threads", "0", "benchmark"]) == 2


def test_bad_synth_values_are_usage_errors(tmp_path):
    # SyntheticSpec rejects these with ValueError -> exit 2
    assert cli.main(["synth", "--mode", "tokens", "--out",
                     str(tmp_path / "x"), "--classes", "1"]) == 2
    assert cli.main(["synth", "--mode", "tokens", "--out",
                     str(tmp_path / "x"), "--noise", "1.5"]) == 2


# --- synth and preprocess ---

def test_synth_tokens_writes_dataset(tmp_path, capsys):
    path = _synth_tokens(tmp_path)
    out = capsys.readouterr().out
    assert "resolved configuration" in out and "8 records" in out
    ds = read_token_dataset(path)
    assert ds.grids.shape == (8, 3, 12)
    assert sorted(set(ds.labels.tolist())) == [0, 1]


def test_synth_tokens_split(tmp_path):
    path = str(tmp_path / "s.bin")
    assert cli.main(["synth", "--mode", "tokens", "--out", path,
                     "--classes", "2", "--flows-per-class", "4",
                     "--n-packets", "3", "--row-length", "12",
                     "--test-fraction", "0.25"]) == 0
    train = read_token_dataset(path + ".train")
    test = read_token_dataset(path + ".test")
    assert len(train) + len(test) == 8
    assert len(test) == 2


def test_synth_pcap_and_preprocess_chain(tmp_path, capsys):
    pcap = str(tmp_path / "traffic.pcap")
    assert cli.main(["synth", "--mode", "pcap", "--out", pcap,
                     "--classes", "2", "--flows-per-class", "3",
                     "--packets-min", "2", "--packets-max", "3",
                     "--seed", "2"]) == 0
    capsys.readouterr()

    out = str(tmp_path / "ds.bin")
    hexes = str(tmp_path / "flows.hex")
    assert cli.main(["preprocess", "--pcap", pcap, "--labels",
                     pcap + ".labels", "--out", out, "--hex-out", hexes,
                     "--n-packets", "3", "--row-length", "16",
                     "--packets", "first:3"]) == 0
    text = capsys.readouterr().out
    assert "flows:               6" in text
    assert "dropped non-ipv4:    0" in text
    ds = read_token_dataset(out)
    assert ds.grids.shape == (6, 3, 16)
    assert set(ds.labels.tolist()) == {0, 1}        # labels joined up
    assert open(hexes).read().count("\n") == 6


def test_preprocess_without_labels_marks_unlabeled(tmp_path, capsys):
    pcap = str(tmp_path / "t.pcap")
    cli.main(["synth", "--mode", "pcap", "--out", pcap, "--classes", "2",
              "--flows-per-class", "2", "--packets-min", "2",
              "--packets-max", "2"])
    out = str(tmp_path / "u.bin")
    assert cli.main(["preprocess", "--pcap", pcap, "--out", out,
                     "--n-packets", "2", "--row-length", "12"]) == 0
    ds = read_token_dataset(out)
    assert (ds.labels == -1).all()
    capsys.readouterr()
    # and fine-tuning on unlabeled data is a runtime failure
    assert cli.main(["finetune", "--data", out, "--steps", "1",
                     "--batch-size", "2", *TINY_MODEL]) == 1
    assert "label -1" in capsys.readouterr().err


def test_preprocess_random_policy(tmp_path):
    pcap = str(tmp_path / "t.pcap")
    cli.main(["synth", "--mode", "pcap", "--out", pcap, "--classes", "2",
              "--flows-per-class", "2", "--packets-min", "4",
              "--packets-max", "5", "--seed", "3"])
    a = str(tmp_path / "a.bin")
    b = str(tmp_path / "b.bin")
    for out in (a, b):
        assert cli.main(["preprocess", "--pcap", pcap, "--out", out,
                         "--n-packets", "2", "--row-length", "12",
                         "--packets", "rand:2of4", "--seed", "5"]) == 0
    assert np.array_equal(read_token_dataset(a).grids,
                          read_token_dataset(b).grids)


# --- training stages ---

def test_pretrain_finetune_evaluate_chain(tmp_path, capsys):
    data = _synth_tokens(tmp_path)
    pre_ckpt = str(tmp_path / "pre.ckpt")
    metrics = str(tmp_path / "pre.jsonl")
    assert cli.main(["pretrain", "--data", data, "--out", pre_ckpt,
                     "--metrics", metrics, "--steps", "2",
                     "--batch-size", "2", "--lr", "1e-4",
                     "--log-every", "1", *TINY_MODEL]) == 0
    out = capsys.readouterr().out
    assert "step 0:" in out and "checkpoint ->" in out
    records = [json.loads(line) for line in open(metrics)]
    assert [r["step"] for r in records] == [0, 1]
    assert all(np.isfinite(r["total"]) for r in records)

    fine_ckpt = str(tmp_path / "fine.ckpt")
    assert cli.main(["finetune", "--data", data, "--init", pre_ckpt,
                     "--out", fine_ckpt, "--eval-data", data,
                     "--steps", "2", "--batch-size", "4",
                     "--lr", "1e-4"]) == 0
    out = capsys.readouterr().out
    assert "warm start:" in out and "eval accuracy=" in out

    report = str(tmp_path / "report.txt")
    kv = str(tmp_path / "report.kv")
    assert cli.main(["evaluate", "--data", data, "--ckpt", fine_ckpt,
                     "--report", report, "--kv", kv]) == 0
    capsys.readouterr()
    assert "accuracy" in open(report).read()
    pairs = dict(line.split("=", 1) for line in
                 open(kv).read().strip().splitlines())
    assert 0.0 <= float(pairs["accuracy"]) <= 1.0

    # a pretrain-only checkpoint has no classifier head
    assert cli.main(["evaluate", "--data", data, "--ckpt", pre_ckpt]) == 1
    assert "classifier head" in capsys.readouterr().err


def test_pretrain_resume_roundtrip(tmp_path, capsys):
    data = _synth_tokens(tmp_path)
    ckpt = str(tmp_path / "mid.ckpt")
    assert cli.main(["pretrain", "--data", data, "--out", ckpt, "--steps",
                     "2", "--batch-size", "2", *TINY_MODEL]) == 0
    assert cli.main(["pretrain", "--data", data, "--resume", ckpt,
                     "--steps", "4", "--batch-size", "2",
                     *TINY_MODEL]) == 0
    out = capsys.readouterr().out
    assert "step 2:" in out          # picked up where the checkpoint left off


def test_finetune_grid_mismatch_fails(tmp_path, capsys):
    data = _synth_tokens(tmp_path)
    ckpt = str(tmp_path / "pre.ckpt")
    cli.main(["pretrain", "--data", data, "--out", ckpt, "--steps", "1",
              "--batch-size", "2", *TINY_MODEL])
    other = _synth_tokens(tmp_path, name="other.bin", row_length=16)
    capsys.readouterr()
    assert cli.main(["finetune", "--data", other, "--init", ckpt,
                     "--steps", "1", "--batch-size", "2"]) == 1
    assert "grid shape" in capsys.readouterr().err


def test_config_file_supplies_defaults_flags_override(tmp_path, capsys):
    data = _synth_tokens(tmp_path)
    cfg = tmp_path / "train.cfg"
    cfg.write_text("steps=9\nbatch-size=2\nlr=1e-4\nembed-dim=16\n"
                   "n-heads=2\nn-layers=1\nmlp-hidden=32\nlog-every=1\n")
    metrics = str(tmp_path / "m.jsonl")
    assert cli.main(["--config", str(cfg), "pretrain", "--data", data,
                     "--metrics", metrics, "--steps", "2"]) == 0
    out = capsys.readouterr().out
    assert "steps = 2" in out                   # flag beat the file
    assert "batch_size = 2" in out              # file beat the default
    records = [json.loads(line) for line in open(metrics)]
    assert records[-1]["step"] == 1


# --- audit and benchmark surfaces ---

GRADCHECK_TINY = ["gradcheck", "--n-packets", "2", "--row-length", "6",
                  "--embed-dim", "8", "--n-heads", "2", "--n-layers", "1",
                  "--mlp-hidden", "16", "--entries", "1",
                  "--batch-size", "2"]


def test_gradcheck_command(capsys):
    assert cli.main([*GRADCHECK_TINY, "--tol", "1e-4"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_tolerance_failure(capsys):
    assert cli.main([*GRADCHECK_TINY, "--tol", "1e-13"]) == 1
    assert "FAIL" in capsys.readouterr().err


def test_benchmark_command(capsys):
    assert cli.main(["benchmark", "--n-packets", "2", "--row-length", "8",
                     "--embed-dim", "8", "--n-heads", "2", "--batch", "1",
                     "--repeats", "1"]) == 0
    out = capsys.readouterr().out
    assert "active attention backend:" in out
    assert "flop" in out.lower() or "ratio" in out.lower()
