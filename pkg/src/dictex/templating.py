"""Prompt templates: packaged text files with ``{name}`` placeholders.

Variants live as data files so prompt changes never require code changes;
callers may also pass their own template text to override the packaged one.
"""

from __future__ import annotations

from importlib import resources
from typing import Iterable, Mapping


class TemplateError(Exception):
    """A template is missing or lacks a required placeholder."""


def load_template(name: str, required: Iterable[str]) -> str:
    """Load a packaged template and check its required placeholders."""
    try:
        text = resources.files("dictex").joinpath("templates", name).read_text("utf-8")
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise TemplateError(f"template {name!r} not found") from exc
    validate_template(text, required, name=name)
    return text


def validate_template(text: str, required: Iterable[str], *, name: str = "<inline>") -> None:
    missing = [key for key in required if "{" + key + "}" not in text]
    if missing:
        raise TemplateError(f"template {name!r} missing placeholders: {', '.join(missing)}")


def render(text: str, values: Mapping[str, str]) -> str:
    """Substitute ``{key}`` markers; unknown markers are left untouched."""
    for key, value in values.items():
        text = text.replace("{" + key + "}", value)
    return text
