from rich.theme import Theme

# Colors
LILAC = "#6C4EB4"
DARK_BG = "#1e1e1e"
LIGHT_TEXT = "#eeeeee"
ACCENT = "#9b59b6"

# Console theme for every command
THEME = Theme({
    "title": f"bold {LIGHT_TEXT} on {LILAC}",
    "header": f"bold {LILAC}",
    "label": f"bold {ACCENT}",
    "value": LIGHT_TEXT,
    "ok": "bold green",
    "warn": "bold yellow",
    "error": "bold red",
    "muted": "grey58",
    "code": f"{LIGHT_TEXT} on {DARK_BG}",
    "border": LILAC,
})
