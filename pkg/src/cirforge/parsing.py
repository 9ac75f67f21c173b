"""Extraction of structured payloads from raw chat-model replies.

Models wrap their JSON in code fences, lead-ins ("Sure! Here you go:") and
trailing commentary; these helpers locate the outermost JSON value and
normalize the two inventory shapes seen in practice (a label->descriptors
map, or an array of {label, descriptors} objects).
"""

from __future__ import annotations

import json
import re
from typing import Any

from cirforge.core import ObjectEntry, ObjectInventory


class ParseError(ValueError):
    """Extraction failure with a machine-readable code (signals a retry)."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


_decoder = json.JSONDecoder()

_LIST_ITEM = re.compile(r"^\s*(?:\d+\s*[.)]\s*|[-*•]\s+)(.*\S)\s*$")


def extract_json_value(text: str) -> tuple[Any, str]:
    """First parseable JSON value in the text, with the exact substring it spans."""
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                value, end = _decoder.raw_decode(text, i)
            except json.JSONDecodeError:
                continue
            return value, text[i:end]
    raise ParseError("no_parseable_json", f"no JSON value in reply: {text[:80]!r}")


def extract_json_values(text: str, limit: int) -> list[tuple[Any, str]]:
    """Up to ``limit`` consecutive JSON values, scanning left to right."""
    found: list[tuple[Any, str]] = []
    pos = 0
    while len(found) < limit and pos < len(text):
        ch = text[pos]
        if ch in "{[":
            try:
                value, end = _decoder.raw_decode(text, pos)
            except json.JSONDecodeError:
                pos += 1
                continue
            found.append((value, text[pos:end]))
            pos = end
        else:
            pos += 1
    if len(found) < limit:
        raise ParseError(
            "no_parseable_json", f"expected {limit} JSON values, found {len(found)}"
        )
    return found


def _entry(label: Any, descriptors: Any) -> ObjectEntry:
    if not isinstance(label, str) or not label.strip():
        raise ParseError("bad_object_shape", f"object label {label!r} is not a non-empty string")
    if (
        not isinstance(descriptors, list)
        or not descriptors
        or not all(isinstance(d, str) and d.strip() for d in descriptors)
    ):
        raise ParseError(
            "descriptor_not_list",
            f"descriptors for {label!r} must be a non-empty list of strings",
        )
    return ObjectEntry(label=label, descriptors=tuple(descriptors))


def inventory_from_json(value: Any, image_id: str = "") -> ObjectInventory:
    """Normalize either accepted inventory shape, preserving object order."""
    entries: list[ObjectEntry] = []
    if isinstance(value, dict):
        for label, descriptors in value.items():
            entries.append(_entry(label, descriptors))
    elif isinstance(value, list):
        for item in value:
            if not isinstance(item, dict):
                raise ParseError("bad_object_shape", f"expected object entry, got {item!r}")
            keyed = {k.lower(): v for k, v in item.items()}
            entries.append(_entry(keyed.get("label"), keyed.get("descriptors")))
    else:
        raise ParseError("bad_object_shape", f"inventory must be a map or array, got {type(value).__name__}")
    if not entries:
        raise ParseError("empty_inventory", "inventory contains no objects")
    return ObjectInventory(image_id=image_id, objects=tuple(entries))


def extract_inventory(text: str, image_id: str = "") -> ObjectInventory:
    """Parse a stage-1/2 reply into an inventory (fences and prose tolerated)."""
    value, _ = extract_json_value(text)
    return inventory_from_json(value, image_id=image_id)


def extract_captions(text: str) -> list[str]:
    """Parse a stage-3 reply: JSON string array, or a numbered/bulleted list.

    An explicit empty JSON array is a successful parse meaning "no
    differences"; ``no_captions`` is raised only when no list structure can
    be found at all.
    """
    try:
        value, _ = extract_json_value(text)
    except ParseError:
        value = None
    if isinstance(value, list) and all(isinstance(c, str) for c in value):
        return [c.strip() for c in value if c.strip()] if value else []

    captions = [m.group(1) for m in map(_LIST_ITEM.match, text.splitlines()) if m]
    if not captions:
        raise ParseError("no_captions", f"no captions in reply: {text[:80]!r}")
    return captions


def inventory_to_json(inventory: ObjectInventory) -> str:
    """Canonical map-shape serialization (insertion order = prominence order)."""
    return json.dumps(
        {o.label: list(o.descriptors) for o in inventory.objects}, ensure_ascii=False
    )
