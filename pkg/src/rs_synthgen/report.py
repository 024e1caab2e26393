"""Static HTML run report.

Single self-contained page: stage summary, fine-tune loss tail, distribution
score, downstream metrics, and a small grid of generated samples embedded as
base64 PNG so the file has no external references.
"""

from __future__ import annotations

import base64
import html
import json
from pathlib import Path

_PAGE = """<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Synthetic data pipeline report</title>
<style>
body {{ font-family: system-ui, sans-serif; margin: 2rem auto; max-width: 60rem; color: #222; }}
h1 {{ font-size: 1.5rem; }} h2 {{ font-size: 1.15rem; margin-top: 2rem; }}
table {{ border-collapse: collapse; margin: 0.5rem 0; }}
td, th {{ border: 1px solid #bbb; padding: 0.3rem 0.7rem; text-align: left; }}
.grid {{ display: flex; flex-wrap: wrap; gap: 0.5rem; }}
.grid figure {{ margin: 0; text-align: center; font-size: 0.75rem; }}
.grid img {{ width: 96px; height: 96px; image-rendering: pixelated; border: 1px solid #ccc; }}
.missing {{ color: #888; font-style: italic; }}
</style>
</head>
<body>
<h1>Synthetic data pipeline report</h1>
{body}
</body>
</html>
"""


def _table(rows: list[tuple[str, str]]) -> str:
    cells = "\n".join(
        f"<tr><th>{html.escape(k)}</th><td>{html.escape(v)}</td></tr>" for k, v in rows
    )
    return f"<table>\n{cells}\n</table>"


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _section_fid(fid_report: dict | None) -> str:
    if fid_report is None:
        return '<h2>Distribution score</h2>\n<p class="missing">fid stage has not run</p>'
    rows = [
        ("mean score", _fmt(fid_report["mean_fid"])),
        ("per-run", ", ".join(_fmt(s) for s in fid_report["per_run"])),
        ("sample size", _fmt(fid_report["sample_size"])),
        ("runs", _fmt(fid_report["runs"])),
        ("extractor", str(fid_report["extractor_id"])),
        ("real / generated pool", f"{fid_report['n_real']} / {fid_report['n_gen']}"),
    ]
    return "<h2>Distribution score</h2>\n" + _table(rows)


def _section_metrics(metrics: dict | None) -> str:
    if metrics is None:
        return '<h2>Downstream classification</h2>\n<p class="missing">train-downstream stage has not run</p>'
    rows = [
        ("test loss", _fmt(metrics["test_loss"])),
        ("overall accuracy", _fmt(metrics["overall_accuracy"])),
        ("average accuracy", _fmt(metrics["average_accuracy"])),
        ("macro F1", _fmt(metrics["macro_f1"])),
        ("jaccard", _fmt(metrics["jaccard"])),
    ]
    block = "<h2>Downstream classification</h2>\n" + _table(rows)
    conf = metrics.get("confusion")
    if conf:
        header = "".join(f"<th>{i}</th>" for i in range(len(conf)))
        body = "\n".join(
            "<tr><th>{}</th>{}</tr>".format(i, "".join(f"<td>{v}</td>" for v in row))
            for i, row in enumerate(conf)
        )
        block += f"\n<p>Confusion matrix (rows true, columns predicted):</p>\n<table>\n<tr><th></th>{header}</tr>\n{body}\n</table>"
    return block


def _section_finetune(ledger_tail: list[dict] | None, best: dict | None) -> str:
    if ledger_tail is None:
        return '<h2>Fine-tuning</h2>\n<p class="missing">finetune stage has not run</p>'
    rows = [(f"step {e['step']}", _fmt(e["loss"])) for e in ledger_tail]
    block = "<h2>Fine-tuning</h2>\n" + _table(rows)
    if best:
        block += f"\n<p>Selected checkpoint: step {best['step']} ({html.escape(best['path'])})</p>"
    return block


def _section_samples(samples: list[tuple[str, bytes]]) -> str:
    if not samples:
        return '<h2>Generated samples</h2>\n<p class="missing">generate stage has not run</p>'
    figures = []
    for class_name, png_bytes in samples:
        b64 = base64.b64encode(png_bytes).decode("ascii")
        figures.append(
            f'<figure><img src="data:image/png;base64,{b64}" alt="{html.escape(class_name)}">'
            f"<figcaption>{html.escape(class_name)}</figcaption></figure>"
        )
    return '<h2>Generated samples</h2>\n<div class="grid">\n' + "\n".join(figures) + "\n</div>"


def render_report(
    fid_report: dict | None,
    metrics: dict | None,
    ledger_tail: list[dict] | None,
    best_checkpoint: dict | None,
    samples: list[tuple[str, bytes]],
    provenance_summary: list[dict],
) -> str:
    """Assemble the report page from whatever stage outputs exist."""
    parts = [
        _section_finetune(ledger_tail, best_checkpoint),
        _section_fid(fid_report),
        _section_metrics(metrics),
        _section_samples(samples),
    ]
    if provenance_summary:
        rows = [(r["command"], r["timestamp"]) for r in provenance_summary]
        parts.append("<h2>Provenance</h2>\n" + _table(rows))
    return _PAGE.format(body="\n\n".join(parts))


def write_report(path: Path | str, html_text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(html_text, encoding="utf-8")


def load_json_if_exists(path: Path) -> dict | None:
    if not Path(path).exists():
        return None
    return json.loads(Path(path).read_text(encoding="utf-8"))
