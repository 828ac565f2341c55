"""Dev-set evaluation: linking metrics, execution accuracy, threshold sweep."""
from __future__ import annotations

import sqlite3
from dataclasses import dataclass, field

from .metrics import (ExReport, execution_accuracy, pr_auc, precision_recall,
                      roc_auc)
from .model import ModelParams
from .pipeline import TrainingExample, infer, link_schema
from .tokenizer import Vocab

SWEEP_THRESHOLDS = [0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01]


@dataclass
class EvalResult:
    precision: float
    recall: float
    roc_auc: float
    pr_auc: float
    ex: float
    ex_counts: dict[str, int]
    threshold: float
    per_example: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "precision": self.precision,
            "recall": self.recall,
            "roc_auc": self.roc_auc,
            "pr_auc": self.pr_auc,
            "ex": self.ex,
            "ex_counts": self.ex_counts,
        }


def collect_link_scores(params: ModelParams, examples: list[TrainingExample]
                        ) -> tuple[list[float], list[int]]:
    """Micro-averaged pools of marker scores and gold labels."""
    scores: list[float] = []
    labels: list[int] = []
    for ex in examples:
        scored = link_schema(params, ex)
        gold = ex.link
        for t, c, s in scored:
            scores.append(s)
            labels.append(1 if (t, c) in gold else 0)
    return scores, labels


def evaluate(params: ModelParams, examples: list[TrainingExample], vocab: Vocab,
             db_paths: dict[str, str], threshold: float = 0.05,
             max_new: int = 64, average: str = "micro") -> EvalResult:
    if average not in ("micro", "macro"):
        raise ValueError("average must be micro or macro")
    scores, labels = collect_link_scores(params, examples)
    if average == "macro":
        # per-example precision/recall, then mean; AUCs stay pooled because
        # single-example pools can be single-class
        ps, rs = [], []
        for ex in examples:
            s = [sc for _, _, sc in link_schema(params, ex)]
            l = [1 if (t, c) in ex.link else 0
                 for t, c, _ in ex.seg.marker_columns]
            ep, er = precision_recall(s, l, threshold)
            ps.append(ep)
            rs.append(er)
        p, r = sum(ps) / len(ps), sum(rs) / len(rs)
    else:
        p, r = precision_recall(scores, labels, threshold)
    roc = roc_auc(scores, labels)
    pr = pr_auc(scores, labels)
    report = ExReport()
    per_example = []
    connections: dict[str, sqlite3.Connection] = {}
    try:
        for ex in examples:
            if ex.db_id not in connections:
                connections[ex.db_id] = sqlite3.connect(db_paths[ex.db_id])
            result = infer(params, ex, vocab, threshold=threshold, max_new=max_new)
            verdict = execution_accuracy(result.sql, ex.gold_sql, connections[ex.db_id])
            report.add(verdict)
            per_example.append({
                "example_id": ex.example_id,
                "verdict": verdict,
                "pred_sql": result.sql,
                "gold_sql": ex.gold_sql,
                "timings_ms": result.timings_ms,
            })
    finally:
        for conn in connections.values():
            conn.close()
    return EvalResult(p, r, roc, pr, report.accuracy, report.counts(),
                      threshold, per_example)


def threshold_sweep(params: ModelParams, examples: list[TrainingExample],
                    vocab: Vocab, db_paths: dict[str, str],
                    thresholds: list[float] | None = None,
                    max_new: int = 64) -> list[dict]:
    """(threshold -> precision, recall, EX) rows, one linking pass reused
    across thresholds; generation reruns per threshold since pruning
    depends on the predicted set."""
    thresholds = thresholds if thresholds is not None else SWEEP_THRESHOLDS
    scores, labels = collect_link_scores(params, examples)
    rows = []
    for t in thresholds:
        p, r = precision_recall(scores, labels, t)
        result = evaluate(params, examples, vocab, db_paths, threshold=t,
                          max_new=max_new)
        rows.append({"threshold": t, "precision": p, "recall": r,
                     "ex": result.ex})
    return rows


def sweep_csv(rows: list[dict]) -> str:
    lines = ["threshold,precision,recall,ex"]
    for row in rows:
        lines.append(f"{row['threshold']:.6g},{row['precision']:.6f},"
                     f"{row['recall']:.6f},{row['ex']:.6f}")
    return "\n".join(lines) + "\n"


def sweep_svg(rows: list[dict], width: int = 480, height: int = 320) -> str:
    """Deterministic line plot of precision/recall/EX against threshold."""
    pad = 40
    xs = [row["threshold"] for row in rows]
    xmin, xmax = min(xs), max(xs)
    span = (xmax - xmin) or 1.0

    def px(x: float) -> float:
        return pad + (x - xmin) / span * (width - 2 * pad)

    def py(y: float) -> float:
        return height - pad - y * (height - 2 * pad)

    series = [("precision", "#1f77b4"), ("recall", "#2ca02c"), ("ex", "#d62728")]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for key, color in series:
        pts = " ".join(f"{px(row['threshold']):.1f},{py(row[key]):.1f}" for row in rows)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
    for i, (key, color) in enumerate(series):
        y = pad + 14 * i
        parts.append(f'<text x="{width - pad - 70}" y="{y}" fill="{color}" font-size="12">{key}</text>')
    parts.append("</svg>")
    return "".join(parts)
