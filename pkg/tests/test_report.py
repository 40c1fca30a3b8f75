import csv
import json
import re

import numpy as np
import pytest

from fediod.report import (
    RunReport,
    SeedReport,
    emit_svg,
    write_ledger_csv,
    write_losses_csv,
)
from fediod.services.channel import SERVER, Channel, CommLedger, node_name


def _seed(seed, acc, ledger=None, **extras):
    return SeedReport(seed, "fediod", [(1, acc / 2), (2, acc)], acc,
                      losses=[(1, "mimic", 0.5), (2, "mimic", 0.25)],
                      ledger=ledger, extras=extras)


def _ledger(n_messages):
    channel = Channel(CommLedger())
    for _ in range(n_messages):
        channel.send(node_name(0), SERVER, "logits", np.zeros(3))
    return channel.ledger


# ======================================================================
# RunReport
# ======================================================================

def test_mean_and_population_std():
    report = RunReport({}, "fediod", [_seed(s, a) for s, a in
                                      enumerate([0.5, 0.7, 0.9])])
    assert report.final_mean == pytest.approx(0.7)
    assert report.final_std == pytest.approx(np.sqrt(0.08 / 3))


def test_ledger_totals_summed_over_seeds():
    report = RunReport({}, "fediod", [_seed(0, 0.5, _ledger(1)),
                                      _seed(1, 0.6, _ledger(2))])
    totals = report.ledger_totals()
    assert totals["logits"] == 3 * 24
    assert totals["model_params"] == 0


def test_write_json(tmp_path):
    report = RunReport({"mode": "fediod"}, "fediod",
                       [_seed(0, 0.8, _ledger(1), score=np.float64(1.5),
                              accs=np.array([0.1, 0.2]))],
                       wall_clock_seconds=1.23456)
    path = tmp_path / "report.json"
    report.write_json(str(path))
    doc = json.loads(path.read_text())
    assert list(doc) == sorted(doc)
    assert doc["schema_version"] == 1
    assert doc["wall_clock_seconds"] == 1.235
    assert doc["final_accuracy_mean"] == pytest.approx(0.8)
    (seed,) = doc["seeds"]
    assert seed["accuracy_series"] == [[1, 0.4], [2, 0.8]]
    assert seed["extras"] == {"score": 1.5, "accs": [0.1, 0.2]}
    assert seed["ledger_messages"] == 1


# ======================================================================
# CSV
# ======================================================================

def test_losses_csv(tmp_path):
    path = tmp_path / "losses.csv"
    write_losses_csv([_seed(0, 0.5), _seed(3, 0.5)], str(path))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["seed", "step", "loss", "value"]
    assert rows[1] == ["0", "1", "mimic", "0.5"]
    assert len(rows) == 1 + 4


def test_ledger_csv_one_header(tmp_path):
    path = tmp_path / "ledger.csv"
    write_ledger_csv([_seed(0, 0.5, _ledger(2)), _seed(1, 0.5, _ledger(1))],
                     str(path))
    rows = list(csv.reader(path.open()))
    assert rows[0][0] == "seed"
    assert [r[0] for r in rows[1:]] == ["0", "0", "1"]


def test_ledger_csv_without_ledgers(tmp_path):
    path = tmp_path / "ledger.csv"
    write_ledger_csv([_seed(0, 0.5)], str(path))
    assert path.read_text().splitlines() == [
        "seed,sender,receiver,payload_kind,bytes,round,sanitized"]


# ======================================================================
# SVG
# ======================================================================

def _polylines(text):
    return re.findall(r'<polyline [^>]*points="([^"]+)"', text)


def test_svg_constant_series(tmp_path):
    path = tmp_path / "chart.svg"
    emit_svg({"acc": [0.5, 0.5, 0.5]}, str(path), title="flat")
    text = path.read_text()
    assert text.startswith("<svg")
    assert text.rstrip().endswith("</svg>")
    (points,) = _polylines(text)
    ys = {p.split(",")[1] for p in points.split()}
    assert len(ys) == 1


def test_svg_two_series_and_pairs(tmp_path):
    path = tmp_path / "chart.svg"
    emit_svg({"seed 0": [(2, 0.1), (4, 0.6)], "seed 1": [(2, 0.3), (4, 0.7)]},
             str(path), x_label="step")
    text = path.read_text()
    assert len(_polylines(text)) == 2
    assert "seed 1" in text


def test_svg_escapes_labels(tmp_path):
    path = tmp_path / "chart.svg"
    emit_svg({"a<b": [1.0, 2.0]}, str(path), title="x & y")
    text = path.read_text()
    assert "a&lt;b" in text and "x &amp; y" in text


@pytest.mark.parametrize("series", [{}, {"empty": []}])
def test_svg_needs_data(tmp_path, series):
    with pytest.raises(ValueError):
        emit_svg(series, str(tmp_path / "chart.svg"))
