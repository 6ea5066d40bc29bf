"""Terminal display for suppression, evaluation, oracle and timing results."""

import json
from typing import List, Optional, Sequence

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from metrics import EvalReport
from synthcrowd import OracleSurvival

console = Console()


def rate_to_color(rate: float, higher_is_better: bool = True) -> str:
    """Get color for a rate in [0, 1]."""
    good = rate if higher_is_better else 1.0 - rate
    if good >= 0.8:
        return "green"
    elif good >= 0.5:
        return "yellow"
    else:
        return "red"


def display_config(title: str, config: dict) -> None:
    """Echo the effective configuration of a command."""
    console.print(
        Panel(
            json.dumps(config, sort_keys=True, indent=2),
            title=f"[bold blue]{title}[/bold blue]",
            border_style="blue",
        )
    )


def display_nms_summary(rows: Sequence[tuple], method: str, threshold: float) -> None:
    """Per-image kept/suppressed counts. rows: (image_id, input, kept, suppressed)."""
    table = Table(
        title=f"{method} @ {threshold:g}",
        box=box.ROUNDED,
        show_header=True,
        header_style="bold cyan",
    )
    table.add_column("Image", style="dim")
    table.add_column("Input", justify="right")
    table.add_column("Kept", justify="right", style="green")
    table.add_column("Suppressed", justify="right", style="red")

    total_in = total_kept = total_sup = 0
    for image_id, n_in, n_kept, n_sup in rows:
        table.add_row(str(image_id), str(n_in), str(n_kept), str(n_sup))
        total_in += n_in
        total_kept += n_kept
        total_sup += n_sup
    table.add_section()
    table.add_row("[bold]Total[/bold]", str(total_in), str(total_kept), str(total_sup))
    console.print(table)


def display_report(report: EvalReport, report_visible: Optional[EvalReport] = None, title: str = "EVALUATION") -> None:
    """MR, MR-V, AP and recall with match counts."""
    table = Table(box=box.ROUNDED, show_header=True, header_style="bold cyan")
    table.add_column("Metric", style="bold", width=12)
    table.add_column("Value", justify="right", width=12)
    table.add_column("Details", width=40)

    mr_color = rate_to_color(report.mr, higher_is_better=False)
    table.add_row("MR", f"[{mr_color}]{report.mr * 100:.2f}%[/{mr_color}]",
                  f"raw {report.mr_raw:.6g}, FPPI in {list(report.config.fppi_range)}")
    if report_visible is not None:
        mrv_color = rate_to_color(report_visible.mr, higher_is_better=False)
        table.add_row("MR-V", f"[{mrv_color}]{report_visible.mr * 100:.2f}%[/{mrv_color}]",
                      f"raw {report_visible.mr_raw:.6g}, visible boxes")
    ap_color = rate_to_color(report.ap)
    table.add_row("AP", f"[{ap_color}]{report.ap * 100:.2f}%[/{ap_color}]",
                  f"all-point, IoU {report.config.match_iou:g}")
    table.add_row("Recall", f"{report.recall * 100:.2f}%", "all detections counted")
    c = report.counts
    table.add_row("Counts", str(c.num_det),
                  f"gt {c.num_gt}, tp {c.num_tp}, fp {c.num_fp}, images {report.num_images}")

    console.print()
    console.print(Panel(table, title=f"[bold blue]{title}[/bold blue]", border_style="blue"))


def display_survival(rows: List[OracleSurvival]) -> None:
    """Perfect-detector survival per method and threshold."""
    table = Table(
        title="Perfect-detector survival",
        box=box.ROUNDED,
        show_header=True,
        header_style="bold cyan",
    )
    table.add_column("Method", style="bold")
    table.add_column("Threshold", justify="center")
    table.add_column("Kept", justify="right")
    table.add_column("Total", justify="right")
    table.add_column("Survival", justify="right")
    table.add_column("Missed", justify="right")

    for row in rows:
        color = rate_to_color(row.fraction)
        table.add_row(
            row.method,
            f"{row.threshold:g}",
            str(row.kept),
            str(row.total),
            f"[{color}]{row.fraction * 100:.2f}%[/{color}]",
            f"{(1 - row.fraction) * 100:.2f}%",
        )
    console.print(table)


def display_bench(rows: Sequence[tuple], method: str) -> None:
    """Timing rows: (n, repeat, mean seconds, kept)."""
    table = Table(title=f"Suppression timing: {method}", box=box.ROUNDED, header_style="bold cyan")
    table.add_column("n", justify="right")
    table.add_column("Repeat", justify="right")
    table.add_column("Mean time", justify="right")
    table.add_column("Kept", justify="right")
    for n, repeat, seconds, kept in rows:
        table.add_row(str(n), str(repeat), f"{seconds * 1000:.3f} ms", str(kept))
    console.print(table)
