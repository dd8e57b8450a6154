import csv
import json

import pytest

from subbit.cli import main


@pytest.fixture
def model_dir(tmp_path):
    out = tmp_path / "model"
    assert main(["synth", "--layers", "2", "--n", "8", "--m", "32", "--r", "32",
                 "--seed", "1", "--out", str(out)]) == 0
    return out


def test_bits(capsys):
    assert main(["bits", "--base", "1.09", "--nm", "4:8"]) == 0
    assert capsys.readouterr().out.strip() == "0.545"


def test_bits_rejects_bad_ratio(capsys):
    with pytest.raises(SystemExit) as info:
        main(["bits", "--base", "1.09", "--nm", "9:8"])
    assert info.value.code == 2


def test_synth_writes_manifest(model_dir):
    doc = json.loads((model_dir / "manifest.json").read_text())
    assert [l["name"] for l in doc["layers"]] == ["layer0", "layer1"]


def test_quantize_report_flip(model_dir, tmp_path):
    packed = tmp_path / "packed"
    assert main(["quantize", "--manifest", str(model_dir / "manifest.json"), "--out", str(packed),
                 "--block-size", "16", "--nm", "5:8"]) == 0
    report = json.loads((packed / "report.json").read_text())
    assert "timings" not in report
    assert sorted(p.name for p in packed.glob("*.stbl")) == ["layer0.stbl", "layer1.stbl"]

    out = tmp_path / "bits.json"
    assert main(["report", "--packed", str(packed), "--calib", str(model_dir / "manifest.json"),
                 "--out", str(out)]) == 0
    layers = json.loads(out.read_text())["layers"]
    assert layers[0]["reconstruction_error"] == report["layers"][0]["reconstruction_error"]

    flip = tmp_path / "flip.csv"
    assert main(["flip", "--packed", str(packed / "layer0.stbl"),
                 "--calib", str(model_dir / "layer0.calib.f32"),
                 "--weight", str(model_dir / "layer0.weight.f32"),
                 "--fractions", "0,0.1", "--trials", "3", "--out", str(flip)]) == 0
    rows = list(csv.reader(flip.open()))
    assert rows[0] == ["fraction", "mean_err", "std_err"]
    assert len(rows) == 3


def test_quantize_with_timings(model_dir, tmp_path):
    report = tmp_path / "r.json"
    assert main(["quantize", "--manifest", str(model_dir / "manifest.json"), "--out",
                 str(tmp_path / "p"), "--block-size", "16", "--report", str(report), "--timings"]) == 0
    assert "timings" in json.loads(report.read_text())


def test_missing_manifest_exit_code(tmp_path, capsys):
    assert main(["quantize", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_numerical_failure_exit_code(model_dir, tmp_path):
    assert main(["quantize", "--manifest", str(model_dir / "manifest.json"), "--out",
                 str(tmp_path / "p"), "--block-size", "16", "--sigma", "50"]) == 3


def test_report_on_corrupt_file(tmp_path):
    (tmp_path / "x.stbl").write_bytes(b"nope")
    assert main(["report", "--packed", str(tmp_path), "--out", str(tmp_path / "o.json")]) == 2
