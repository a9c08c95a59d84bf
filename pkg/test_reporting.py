"""
Tests for JSON run reports and history CSV files
"""

import csv
import json

from dataseq import DatasetStats
from reporting import ModelSummary, RunReport, write_history_csv, write_report
from trainer import EvalReport, IterationRecord


def history(k):
    return [IterationRecord(i, 0.5 / i, 0.6 / i, 0.4 / i, 2.0 / i, 1.5 / i, 0.01 * i) for i in range(1, k + 1)]


def summary(kind="eklf", k=3, rmse=0.25):
    return ModelSummary(
        kind=kind,
        evaluation=EvalReport(rmse=rmse, mae=0.2, count=10, elapsed_seconds=1.5, iterations_run=k),
        history=history(k),
        best_iteration=k,
        iterations_run=k,
        time_to_best_rmse=0.03,
        time_to_best_mae=0.03,
        elapsed_seconds=1.5,
    )


def test_minimal_evaluate_report(tmp_path):
    report = RunReport(command="evaluate", config={"input": "test.txt"}, seed=1, models=[summary(k=0)])
    path = tmp_path / "report.json"
    write_report(report, path)
    data = json.loads(path.read_text())
    assert data["rmse"] == 0.25 and data["mae"] == 0.2
    assert data["history"] == []
    assert "models" not in data and "grid" not in data


def test_history_length():
    data = RunReport(command="train", config={}, seed=1, models=[summary(k=4)]).to_dict()
    assert len(data["history"]) == 4
    assert data["iterations_run"] == 4
    assert data["history"][0]["objective_before_q"] == 2.0


def test_no_timing_zeroes_wall_time():
    report = RunReport(
        command="compare",
        config={},
        seed=1,
        stats=DatasetStats(nodes=4, slots=2, known=3, density=3 / 32),
        models=[summary("eklf"), summary("static", rmse=0.3)],
        total_seconds=12.0,
    )
    data = report.to_dict(include_timing=False)
    assert data["total_seconds"] == 0.0 and data["elapsed_seconds"] == 0.0
    assert data["models"]["static"]["rmse"] == 0.3
    assert data["models"]["static"]["time_to_best_rmse"] == 0.0
    assert all(r["elapsed_seconds"] == 0.0 for r in data["models"]["eklf"]["history"])
    assert data["stats"]["density_percent"] == "9.3750%"
    assert report.to_dict()["total_seconds"] == 12.0


def test_history_csv(tmp_path):
    path = tmp_path / "history.csv"
    write_history_csv(history(3), path, include_timing=False)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3
    assert float(rows[1]["val_rmse"]) == 0.3
    assert rows[2]["elapsed_seconds"] == "0.0"
