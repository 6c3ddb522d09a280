"""Prompt template loading and slot filling.

Templates are UTF-8 data files under `prompts/` with `{{slot}}`
placeholders, kept out of code so they stay diffable.
"""
from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")


class MissingSlot(KeyError):
    pass


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return (
        resources.files("limgen").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    )


def template_slots(template: str) -> set[str]:
    return set(_SLOT_RE.findall(template))


def render_prompt(name: str, **slots: str) -> str:
    template = load_template(name)

    def fill(match: re.Match) -> str:
        key = match.group(1)
        if key not in slots:
            raise MissingSlot(key)
        return slots[key]

    return _SLOT_RE.sub(fill, template)
