"""Tests for coldstart_lab.report module."""

from __future__ import annotations

import pytest

from coldstart_lab.evaluator import MetricReport
from coldstart_lab.experiments import ExperimentResult, VariantResult
from coldstart_lab.report import ReportGenerator


@pytest.fixture
def generator():
    return ReportGenerator()


class TestMetricsTable:
    def test_rows(self, generator):
        reports = [MetricReport(task=1, k=20, n_users=12, recall=0.25, ndcg=0.125, map=0.0625),
                   MetricReport(task=2, k=20, n_users=0)]
        table = generator.metrics_table(reports)
        assert table.startswith("# Meta-test Results")
        assert "| Task | Users | Recall@20 | NDCG@20 | MAP@20 |" in table
        assert "| 1 | 12 | 0.2500 | 0.1250 | 0.0625 |" in table
        assert "| 2 | 0 | - | - | - |" in table

    def test_custom_title(self, generator):
        assert generator.metrics_table([], title="MF-BPR Baseline").startswith("# MF-BPR Baseline")


class TestTrainingSummary:
    def test_epoch_rows(self, generator):
        records = [
            {"config": {"seed": 0}},
            {"epoch": 1, "task": 0, "query_loss": 0.5},
            {"epoch": 1, "task": 1, "query_loss": 0.7},
            {"epoch": 1, "val_recall": 0.125, "augmented_edges": 40},
            {"epoch": 2, "val_recall": float("nan")},
        ]
        summary = generator.training_summary(records)
        assert "| 1 | 0.1250 | 40 | 0.6000 |" in summary
        assert "| 2 | - | - | - |" in summary

    def test_empty(self, generator):
        assert generator.training_summary([]).count("\n") == 3


class TestExperimentTable:
    def test_best_variant(self, generator):
        result = ExperimentResult("sparsity", [0, 1], [
            VariantResult("support-5", recall=[0.1, 0.2], ndcg=[0.1, 0.1]),
            VariantResult("support-30", recall=[0.3, 0.3], ndcg=[0.2, 0.2]),
        ])
        table = generator.experiment_table(result)
        assert "# Experiment: sparsity" in table
        assert "Seeds: 0, 1" in table
        assert "| support-30 | 0.3000 | 0.0000 | 0.2000 | 2 |" in table
        assert "**Best Variant**: support-30" in table
