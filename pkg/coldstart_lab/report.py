"""Report generation: markdown tables for metric reports, training logs and experiments."""

from __future__ import annotations

import math

from coldstart_lab.evaluator import MetricReport
from coldstart_lab.experiments import ExperimentResult


class ReportGenerator:
    """Generate markdown reports from evaluation and experiment results."""

    def metrics_table(self, reports: list[MetricReport], title: str = "Meta-test Results") -> str:
        """One row per task with Recall, NDCG and MAP at K."""
        lines = [f"# {title}\n"]
        k = reports[0].k if reports else 10
        lines.append(f"| Task | Users | Recall@{k} | NDCG@{k} | MAP@{k} |")
        lines.append("|------|-------|-----------|---------|--------|")
        for r in reports:
            if r.n_users == 0:
                lines.append(f"| {r.task} | 0 | - | - | - |")
                continue
            lines.append(f"| {r.task} | {r.n_users} | {r.recall:.4f} | {r.ndcg:.4f} | {r.map:.4f} |")
        return "\n".join(lines)

    def training_summary(self, records: list[dict]) -> str:
        """Validation recall per epoch plus the number of augmented edges, from train_log records."""
        lines = ["# Training Summary\n"]
        lines.append("| Epoch | Val Recall | Augmented Edges | Mean Query Loss |")
        lines.append("|-------|------------|-----------------|-----------------|")
        epochs: dict[int, dict] = {}
        for rec in records:
            if "epoch" not in rec:
                continue
            row = epochs.setdefault(rec["epoch"], {"losses": []})
            if "val_recall" in rec:
                row["val_recall"] = rec["val_recall"]
            if "augmented_edges" in rec:
                row["edges"] = rec["augmented_edges"]
            if rec.get("query_loss") is not None:
                row["losses"].append(rec["query_loss"])
        for epoch in sorted(epochs):
            row = epochs[epoch]
            recall = row.get("val_recall")
            recall_text = "-" if recall is None or math.isnan(recall) else f"{recall:.4f}"
            loss = f"{sum(row['losses']) / len(row['losses']):.4f}" if row["losses"] else "-"
            lines.append(f"| {epoch} | {recall_text} | {row.get('edges', '-')} | {loss} |")
        return "\n".join(lines)

    def experiment_table(self, result: ExperimentResult) -> str:
        """Per-variant means over seeds and the number of seeds each variant won."""
        lines = [f"# Experiment: {result.preset}\n"]
        lines.append(f"Seeds: {', '.join(str(s) for s in result.seeds)}\n")
        lines.append("| Variant | Mean Recall | Std | Mean NDCG | Wins |")
        lines.append("|---------|-------------|-----|-----------|------|")
        wins = result.wins()
        for v in result.variants:
            lines.append(f"| {v.name} | {v.mean_recall:.4f} | {v.std_recall:.4f} | {v.mean_ndcg:.4f} | {wins[v.name]} |")

        best = max(result.variants, key=lambda v: v.mean_recall, default=None)
        if best is not None:
            lines.append(f"\n**Best Variant**: {best.name} (mean recall: {best.mean_recall:.4f})")
        return "\n".join(lines)
