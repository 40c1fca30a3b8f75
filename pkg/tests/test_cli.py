import json
import logging

import pytest

from fediod.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main
from fediod.config import write_config


@pytest.fixture(autouse=True)
def _restore_logging():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, logging.FileHandler):
            root.removeHandler(handler)
            handler.close()


def test_run(make_config, tmp_path, capsys):
    cfg = make_config("standalone")
    path = tmp_path / "run.yaml"
    write_config(cfg, str(path))
    out_dir = tmp_path / "override"
    assert main(["run", str(path), "--output-dir", str(out_dir),
                 "--seed-override", "4"]) == EXIT_OK
    doc = json.loads((out_dir / "report.json").read_text())
    assert [s["seed"] for s in doc["seeds"]] == [4]
    assert (out_dir / "run.log").is_file()
    assert "standalone" in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("mode: fediod\ndataset:\n  kind: blobs\nfoo: 1\n")
    assert main(["run", str(path)]) == EXIT_CONFIG


def test_missing_config_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG


def test_unknown_mode_exit_code(make_config, tmp_path):
    path = tmp_path / "run.yaml"
    write_config(make_config("sideways"), str(path))
    assert main(["run", str(path)]) == EXIT_CONFIG


def test_run_failure_exit_code(make_config, tmp_path, capsys):
    path = tmp_path / "run.yaml"
    write_config(make_config(dataset={"kind": "idx",
                                      "images": str(tmp_path / "no-img"),
                                      "labels": str(tmp_path / "no-lbl")}),
                 str(path))
    assert main(["run", str(path)]) == EXIT_FAILURE
    assert "Run failed" in capsys.readouterr().err


def test_modes(capsys):
    assert main(["modes"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("fediod", "fedavg", "standalone", "centralized"):
        assert name in out
