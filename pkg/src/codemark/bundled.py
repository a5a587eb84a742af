"""Access to the bundled mini-language corpus."""
from __future__ import annotations

from importlib import resources


def corpus_texts() -> dict[str, str]:
    """Bundled corpus files, name -> source text, in name order."""
    root = resources.files("codemark") / "corpus"
    out = {}
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".mini"):
            out[entry.name] = entry.read_text(encoding="utf-8")
    return out
