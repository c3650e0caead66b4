"""Report files: delimited tables, JSON detail, and matplotlib figures.

Every report embeds the experiment's config hash and the provider handshake
for provenance.  Scores are stored raw in JSON and rendered as percentages
with one decimal in the delimited tables.  Figures are rendered next to the
tables with the Agg backend; byte output is deterministic for fixed inputs.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def pct(value: float | None) -> str:
    if value is None:
        return "-"
    return f"{100.0 * value:.1f}"


def provenance_comments(config_hash: str, provider_meta: dict, command: str,
                        ) -> list[str]:
    provider = " ".join(f"{key}={provider_meta[key]}" for key in sorted(provider_meta))
    return [
        f"# config_hash = {config_hash}",
        f"# provider = {provider}",
        f"# command = {command}",
    ]


def write_tsv(path, comments: list[str], header: list[str],
              rows: list[list[str]]) -> None:
    lines = list(comments)
    lines.append("\t".join(header))
    lines.extend("\t".join(row) for row in rows)
    _write_text(path, "\n".join(lines) + "\n")


def write_json(path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _write_text(path, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)


def read_config_hash(path) -> str | None:
    """Recover the embedded config hash from a report or tree file."""
    if not os.path.exists(path):
        return None
    try:
        if str(path).endswith(".json"):
            with open(path, encoding="utf-8") as handle:
                payload = json.load(handle)
            return payload.get("metadata", {}).get("config_hash")
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].partition("=")
                if key.strip() == "config_hash":
                    return value.strip()
    except (OSError, json.JSONDecodeError):
        return None
    return None


def outputs_current(paths: list, config_hash: str) -> bool:
    return all(read_config_hash(path) == config_hash for path in paths)


# -- figures ------------------------------------------------------------------


def _save(fig, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_figure(cells, path) -> None:
    """Score against k, one line per layer."""
    fig, ax = plt.subplots(figsize=(6, 4))
    layers = sorted({cell.layer for cell in cells})
    for layer in layers:
        points = sorted((c.k, c.uuas) for c in cells
                        if c.layer == layer and c.uuas is not None)
        if points:
            ax.plot([p[0] for p in points], [100.0 * p[1] for p in points],
                    marker="o", label=f"layer {layer}")
    ax.set_xlabel("substitutions per position (k)")
    ax.set_ylabel("UUAS (%)")
    ax.set_title("Attachment score vs. substitution count")
    ax.grid(True, alpha=0.3)
    if layers:
        ax.legend()
    _save(fig, path)


def relation_figure(relations: dict[str, dict], path, top: int = 20) -> None:
    """Horizontal bars of per-relation recall, most frequent relations first."""
    ranked = sorted(relations.items(), key=lambda item: -item[1]["total"])[:top]
    fig, ax = plt.subplots(figsize=(6, max(2.5, 0.35 * len(ranked) + 1)))
    names = [name for name, _ in ranked][::-1]
    values = [100.0 * entry["recall"] for _, entry in ranked][::-1]
    ax.barh(names, values)
    ax.set_xlabel("recall (%)")
    ax.set_xlim(0, 100)
    ax.set_title("Gold relation recall")
    fig.tight_layout()
    _save(fig, path)


def agreement_figure(rows: list[dict], baselines: dict[str, float], path) -> None:
    """Recall against k per construction, with published baselines as lines."""
    fig, ax = plt.subplots(figsize=(6, 4))
    kinds = sorted({row["kind"] for row in rows})
    for kind in kinds:
        points = sorted((row["k"], row["recall"]) for row in rows
                        if row["kind"] == kind and row["recall"] is not None)
        ax.plot([p[0] for p in points], [100.0 * p[1] for p in points],
                marker="o", label=kind)
    for kind, value in sorted(baselines.items()):
        ax.axhline(value, linestyle="--", alpha=0.5)
        ax.annotate(f"conditional-MI {kind} ({value})", xy=(0.02, value),
                    xycoords=("axes fraction", "data"), fontsize=7, alpha=0.7)
    ax.set_ylim(0, 100)
    ax.set_xlabel("substitutions per position (k)")
    ax.set_ylabel("subject-verb edge recall (%)")
    ax.set_title("Agreement constructions")
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, path)


def headsel_figure(label_rows: list[dict], tree_rows: list[dict], path) -> None:
    """Left: per-relation selection accuracy vs k; right: UAS/LAS vs k."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    labels = sorted({row["label"] for row in label_rows})
    for label in labels:
        points = sorted((row["k"], row["accuracy"]) for row in label_rows
                        if row["label"] == label and row["accuracy"] is not None)
        left.plot([p[0] for p in points], [100.0 * p[1] for p in points],
                  marker="o", label=label)
    left.set_xlabel("k")
    left.set_ylabel("head selection accuracy (%)")
    left.set_title("Dependent-to-parent selection")
    left.grid(True, alpha=0.3)
    if labels:
        left.legend(fontsize=8)
    for metric in ("uas", "las"):
        points = sorted((row["k"], row[metric]) for row in tree_rows
                        if row.get(metric) is not None)
        if points:
            right.plot([p[0] for p in points], [100.0 * p[1] for p in points],
                       marker="s", label=metric.upper())
    right.set_xlabel("k")
    right.set_ylabel("attachment score (%)")
    right.set_title("Directed tree induction")
    right.grid(True, alpha=0.3)
    right.legend()
    fig.tight_layout()
    _save(fig, path)
