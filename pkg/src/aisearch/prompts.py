"""Prompt templates stored as text files, addressed by tag."""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

DEFAULT_DIR = Path(__file__).parent / "data" / "prompts"


class PromptBook:
    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else DEFAULT_DIR

    def template(self, tag: str) -> str:
        return _read(self.directory / f"{tag}.txt")

    def render(self, tag: str, **fields) -> str:
        return self.template(tag).format(**fields)


@lru_cache(maxsize=None)
def _read(path: Path) -> str:
    if not path.exists():
        raise FileNotFoundError(f"no prompt template at {path}")
    return path.read_text(encoding="utf-8")


DEFAULT = PromptBook()
