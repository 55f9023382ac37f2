"""Display formatting using Rich library."""

from rich.console import Console
from rich.table import Table
from rich.panel import Panel
from rich import box

console = Console()


def print_success(message):
    console.print(f"[green]{message}[/green]")


def print_error(message):
    console.print(f"[red]{message}[/red]")


def print_warning(message):
    console.print(f"[yellow]{message}[/yellow]")


def print_info(message):
    console.print(f"[cyan]{message}[/cyan]")


def _fmt(value, digits=4):
    return "[dim]n/a[/dim]" if value is None else f"{value:.{digits}f}"


def display_dataset_summary(counts, students, windows, content_hash):
    """Show split sizes of a prepared cache."""
    console.print()
    console.print(Panel.fit(
        f"[bold blue]Prepared dataset[/bold blue]\n[dim]content hash {content_hash[:16]}[/dim]",
        border_style="blue"
    ))

    table = Table(show_header=False, box=box.ROUNDED, border_style="cyan")
    table.add_column("Metric", style="bold")
    table.add_column("Value", justify="right")
    table.add_row("Students", f"{students:,}")
    table.add_row("Windows", f"{windows:,}")
    for split in ("train", "val", "test"):
        table.add_row(f"{split.capitalize()} records", f"{counts.get(split, 0):,}")
    console.print(table)
    console.print()


def display_training_log(log, title="Training"):
    """Per-epoch losses and validation metrics."""
    table = Table(title=title, box=box.ROUNDED, border_style="green")
    table.add_column("Epoch", justify="right", style="bold")
    table.add_column("Loss", justify="right")
    table.add_column("Pred", justify="right")
    table.add_column("CL", justify="right")
    table.add_column("Pert", justify="right")
    table.add_column("Val AUC", justify="right")
    table.add_column("Val ACC", justify="right")
    table.add_column("", justify="center")

    for trace in log.epochs:
        marker = "[green]*[/green]" if trace.improved else ""
        if trace.aborted:
            marker = "[red]aborted[/red]"
        table.add_row(
            str(trace.epoch),
            _fmt(trace.total_loss),
            _fmt(trace.pred_loss),
            _fmt(trace.cl_loss),
            _fmt(trace.pert_loss),
            _fmt(trace.val_auc),
            _fmt(trace.val_acc),
            marker,
        )
    console.print(table)
    if log.best_epoch is not None:
        console.print(f"[dim]Best epoch: {log.best_epoch}{' (stopped early)' if log.stopped_early else ''}[/dim]")


def display_report(report, title=None):
    """Overall and per-bucket ACC/AUC."""
    table = Table(title=title or f"Evaluation ({report.split})", box=box.ROUNDED, border_style="blue")
    table.add_column("Length", style="bold cyan")
    table.add_column("Records", justify="right")
    table.add_column("ACC", justify="right")
    table.add_column("AUC", justify="right")

    for bucket in report.buckets:
        table.add_row(bucket.label, f"{bucket.count:,}", _fmt(bucket.acc), _fmt(bucket.auc))
    table.add_section()
    overall = report.overall
    table.add_row("[bold]Overall[/bold]", f"{overall.count:,}", _fmt(overall.acc), _fmt(overall.auc))
    console.print(table)


def display_verification(report):
    """One row per self-check."""
    table = Table(title="Verification", box=box.ROUNDED, border_style="magenta")
    table.add_column("Check", style="bold")
    table.add_column("Result", justify="center")
    table.add_column("Value", justify="right")
    table.add_column("Threshold", justify="right")
    table.add_column("Seconds", justify="right")
    table.add_column("Detail", style="dim")

    for check in report.checks:
        result = "[green]PASS[/green]" if check.passed else "[red]FAIL[/red]"
        value = "" if check.value is None else f"{check.value:.3g}"
        threshold = "" if check.threshold is None else f"{check.threshold:.0e}"
        table.add_row(check.name, result, value, threshold, f"{check.seconds:.2f}", check.detail)
    console.print(table)


def display_similarity(result, side, path):
    console.print(Panel.fit(
        f"[bold]Practice-number similarity ({side})[/bold]\n"
        f"Counts 0..{len(result.counts) - 1} written to {path}\n"
        f"Spearman(|i-j|, similarity): {_fmt(result.spearman, 3)}",
        border_style="cyan"
    ))
    if result.zero_norm:
        print_warning(f"Zero-norm vectors at counts: {result.zero_norm}")
