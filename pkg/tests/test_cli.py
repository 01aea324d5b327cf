import json

import pytest

from jactus.cli import main


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.csv"
    assert main(["gen-data", "--n", "300", "--noise", "0.1", "--output", str(data)]) == 0
    assert main(["train-dense", "--data", str(data), "--hidden", "16,16", "--epochs", "10",
                 "--out-dir", str(root / "dense")]) == 0
    assert main(["compress", "--checkpoint", str(root / "dense" / "model"), "--data", str(data),
                 "--k-min", "1", "--calibration-size", "128", "--out-dir", str(root / "comp")]) == 0
    return root, data


def test_gen_data_same_seed_same_file(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--n", "100", "--seed", "4", "--out-dir", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()


def test_compress_outputs(run, capsys):
    root, _ = run
    comp = root / "comp"
    for name in ("model", "bases", "stats", "allocation.csv", "report.json"):
        assert (comp / name).exists()
    report = json.loads((comp / "report.json").read_text())
    assert report["budget"]["used"] <= report["budget"]["B"]
    assert report["config"]["k_min"] == 1


def test_finetune_and_eval(run, tmp_path, capsys):
    root, data = run
    assert main(["finetune", "--checkpoint", str(root / "comp" / "model"), "--data", str(data),
                 "--epochs", "2", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "finetune_log.csv").read_text().startswith("epoch,step,loss,accuracy")
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(tmp_path / "model"), "--data", str(data), "--split", "all"]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header == "checkpoint,data,split,n,accuracy"
    assert row.split(",")[3] == "300"
    assert 0.0 <= float(row.split(",")[4]) <= 1.0


def test_report(run, capsys):
    root, _ = run
    assert main(["report", "--run-dir", str(root / "comp")]) == 0
    table = (root / "comp" / "rank_profile.csv").read_text().splitlines()
    assert table[0] == "layer_id,role,c,k_p,cost"
    assert "monotone across sweep" in capsys.readouterr().out


def test_report_empty_dir(tmp_path):
    assert main(["report", "--run-dir", str(tmp_path)]) == 2


def test_verify_passes(capsys):
    assert main(["verify", "--instances", "40", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "[FAIL]" not in out and out.count("[PASS]") == 5


def test_verify_is_reproducible(capsys):
    main(["verify", "--instances", "20", "--seed", "2"])
    first = capsys.readouterr().out
    main(["verify", "--instances", "20", "--seed", "2"])
    assert capsys.readouterr().out == first


def test_verify_detects_corrupted_blob(run, tmp_path, capsys):
    root, _ = run
    target = tmp_path / "model"
    target.mkdir()
    for path in (root / "comp" / "model").rglob("*"):
        if path.is_file():
            dest = target / path.relative_to(root / "comp" / "model")
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(path.read_bytes())
    blob = target / "tensors" / "fc2.s.f64"
    raw = bytearray(blob.read_bytes())
    raw[0] ^= 0xFF
    blob.write_bytes(bytes(raw))
    assert main(["verify", "--instances", "10", "--checkpoint", str(target)]) == 1
    assert "fc2.s" in capsys.readouterr().out


def test_config_file_merging(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 120, "noise": 0.0, "kind": "blobs", "seed": 9}))
    assert main(["gen-data", "--config", str(cfg), "--n", "140", "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "data.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 140  # flag beats file


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["gen-data", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2


def test_usage_errors(tmp_path):
    assert main(["train-dense", "--out-dir", str(tmp_path)]) == 2
    assert main(["gen-data", "--n", "5", "--out-dir", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2
