# Filename: ui/console.py
"""
Rich rendering of command results for the terminal.
"""

from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.panel import Panel
from rich.table import Table as RichTable

from assets.styles import THEME
from core.scheme import VariableScheme
from core.sequence import DecomposabilityReport


def make_console(quiet: bool = False, stderr: bool = True) -> Console:
    """Console for diagnostics; quiet consoles swallow everything."""
    return Console(theme=THEME, stderr=stderr, quiet=quiet, highlight=False)


def render_error(console: Console, title: str, message: str,
                 witnesses: Optional[List[Dict[str, Any]]] = None) -> None:
    console.print(Panel(message, title=f"[error]{title}[/error]", border_style="error"))
    if not witnesses:
        return
    table = RichTable(title="Witnesses", header_style="header", border_style="border")
    keys = list(witnesses[0].keys())
    for key in keys:
        table.add_column(key, style="code" if key == "effect" else "value")
    for w in witnesses:
        table.add_row(*(str(w.get(k, "")) for k in keys))
    console.print(table)


def render_check(console: Console, scheme: VariableScheme, labels: List[str],
                 report: DecomposabilityReport) -> None:
    """Prefix-by-prefix verdict of the ordered-decomposability check."""
    console.print(f"[label]Sequence[/label] [value]{', '.join(labels)}[/value]")
    table = RichTable(header_style="header", border_style="border")
    table.add_column("prefix", justify="right")
    table.add_column("maximal marginals")
    table.add_column("ordering")
    table.add_column("ok")
    for p in report.prefixes:
        table.add_row(str(p.length), ", ".join(scheme.label(m) for m in p.maximal),
                      ", ".join(scheme.label(m) for m in p.ordering),
                      "[ok]yes[/ok]" if p.ok else "[error]no[/error]")
    if report.prefixes:
        console.print(table)
    if report.decomposable:
        console.print("[ok]ordered decomposable[/ok]")
    else:
        console.print(f"[error]not ordered decomposable[/error], failing prefix "
                      f"[value]{report.failing_prefix}[/value]")


def render_fit(console: Console, doc: Dict[str, Any]) -> None:
    conv = doc["convergence"]
    table = RichTable(title="Fit", title_style="title", header_style="header", border_style="border")
    table.add_column("quantity", style="label")
    table.add_column("value", style="value", justify="right")
    for key in ("G2", "df", "p", "BIC"):
        if key in doc:
            table.add_row(key, f"{doc[key]:.6g}" if isinstance(doc[key], float) else str(doc[key]))
    table.add_row("algorithm", conv["algorithm"])
    table.add_row("iterations", str(conv["iterations"]))
    table.add_row("converged", "[ok]yes[/ok]" if conv["converged"] else "[warn]no[/warn]")
    if conv.get("epsilon_flag"):
        table.add_row("zero cells", "[warn]replaced by epsilon[/warn]")
    console.print(table)


def render_compile(console: Console, doc: Dict[str, Any]) -> None:
    console.print(f"[label]Marginals[/label] [value]{', '.join(doc['marginals'])}[/value]")
    table = RichTable(title=f"{doc['provenance']} model, df = {doc['df']}", title_style="title",
                      header_style="header", border_style="border")
    table.add_column("marginal")
    table.add_column("effect", style="code")
    table.add_column("dimension", justify="right")
    for z in doc["zeroed_effects"]:
        table.add_row(z["marginal"], z["effect"], str(z["dimension"]))
    console.print(table)
    if "remaining_effects" in doc:
        console.print(f"[label]Remaining effects[/label] [value]{', '.join(doc['remaining_effects'])}[/value]")
