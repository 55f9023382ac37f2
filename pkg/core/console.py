"""Tagged progress/warning lines on stderr.

Lines look like ``[Data] skipped 3 malformed rows`` so stdout stays free for reports.
"""

from rich.console import Console
from rich.markup import escape

console = Console(stderr=True, highlight=False)

# Flipped off by tests and the verify command to keep output quiet.
VERBOSE = True


def log_info(tag: str, message: str) -> None:
    if VERBOSE:
        console.print(f"[dim]{escape(f'[{tag}]')}[/dim] {escape(message)}")


def log_warning(tag: str, message: str) -> None:
    console.print(f"[yellow]{escape(f'[{tag}] {message}')}[/yellow]")


def set_verbose(enabled: bool) -> None:
    global VERBOSE
    VERBOSE = enabled
