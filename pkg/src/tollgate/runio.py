"""Run artifact serialization: episode logs, summaries, manifests.

Episode logs are line-delimited JSON, one object per gate step, with sorted
keys so identical runs serialize byte for byte. Summaries are plain CSV.
The manifest embeds the resolved scenario document plus its hash, which
makes a run directory self-describing for later audits.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

from .gate import EpisodeLog

EPISODE_LOG_NAME = "episodes.jsonl"
SUMMARY_NAME = "summary.csv"
MANIFEST_NAME = "manifest.json"
BOUNDARY_LOG_NAME = "boundaries.jsonl"

_SUMMARY_FIELDS = (
    "episode",
    "b_final",
    "charged_sum",
    "terminal_loss",
    "n_execute",
    "n_downgrade",
    "n_escalate_approved",
    "n_escalate_denied",
    "n_block",
)


def episode_json_lines(logs: Sequence[EpisodeLog]) -> list[str]:
    lines = []
    for log in logs:
        for entry in log.entries:
            lines.append(
                json.dumps(
                    {
                        "episode": log.episode,
                        "step": entry.step,
                        "time": entry.time,
                        "state": entry.state,
                        "proposed": entry.proposed,
                        "envelope_value": entry.envelope_value,
                        "verdict": entry.verdict.value,
                        "executed": entry.executed,
                        "budget_after": entry.budget_after,
                        "boundary_version": entry.boundary_version,
                    },
                    sort_keys=True,
                )
            )
    return lines


def write_episode_logs(out_dir: Path, logs: Sequence[EpisodeLog]) -> Path:
    path = out_dir / EPISODE_LOG_NAME
    text = "\n".join(episode_json_lines(logs))
    path.write_text(text + ("\n" if text else ""))
    return path


def write_boundary_log(out_dir: Path, logs: Sequence[EpisodeLog]) -> Path:
    path = out_dir / BOUNDARY_LOG_NAME
    lines = []
    for log in logs:
        for rec in log.boundary_records:
            lines.append(json.dumps({"episode": log.episode, **rec}, sort_keys=True))
    text = "\n".join(lines)
    path.write_text(text + ("\n" if text else ""))
    return path


def summary_rows(logs: Sequence[EpisodeLog]) -> list[dict]:
    rows = []
    for log in logs:
        counts = log.decision_counts()
        rows.append(
            {
                "episode": log.episode,
                "b_final": repr(log.budget_final),
                "charged_sum": repr(log.charged_total),
                "terminal_loss": repr(log.terminal_loss),
                "n_execute": counts["EXECUTE"],
                "n_downgrade": counts["DOWNGRADE"],
                "n_escalate_approved": counts["ESCALATE_APPROVED"],
                "n_escalate_denied": counts["ESCALATE_DENIED"],
                "n_block": counts["BLOCK"],
            }
        )
    return rows


def write_summary_csv(out_dir: Path, logs: Sequence[EpisodeLog]) -> Path:
    path = out_dir / SUMMARY_NAME
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(summary_rows(logs))
    return path


def write_manifest(
    out_dir: Path,
    scenario_name: str,
    scenario_document: dict,
    scenario_hash: str,
    seed: int,
    episodes: int,
    extra: dict | None = None,
) -> Path:
    path = out_dir / MANIFEST_NAME
    manifest = {
        "scenario_name": scenario_name,
        "config_hash": scenario_hash,
        "seed": seed,
        "episodes": episodes,
        "artifacts": {
            "episode_log": EPISODE_LOG_NAME,
            "summary": SUMMARY_NAME,
            "boundary_log": BOUNDARY_LOG_NAME,
        },
        "scenario_document": scenario_document,
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def read_manifest(run_dir: Path) -> dict:
    return json.loads((Path(run_dir) / MANIFEST_NAME).read_text())


def read_episode_records(run_dir: Path) -> list[dict]:
    path = Path(run_dir) / EPISODE_LOG_NAME
    records = []
    for line in path.read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def read_summary(run_dir: Path) -> list[dict]:
    path = Path(run_dir) / SUMMARY_NAME
    with path.open() as fh:
        return list(csv.DictReader(fh))


def write_calibration_csv(path: Path, rows: Iterable[dict]) -> Path:
    rows = list(rows)
    n_features = len(rows[0]["features"]) if rows else 0
    fields = ["time", "state", "action"] + [f"f{i}" for i in range(n_features)] + [
        "true_positive_toll"
    ]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow(
                [row["time"], row["state"], row["action"]]
                + [repr(x) for x in row["features"]]
                + [repr(row["true_positive_toll"])]
            )
    return Path(path)
