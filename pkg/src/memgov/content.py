"""Canonical content bytes, content hashing and the JSONL claim format."""

from __future__ import annotations

import hashlib
import json
import unicodedata
from typing import Iterable

from .model import ClaimTuple, MalformedContent


def canonicalize(raw: bytes | str) -> bytes:
    """UTF-8, NFC, LF line endings, no trailing whitespace on any line."""
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedContent(f"content is not valid UTF-8: {exc}") from exc
    else:
        text = raw
    text = unicodedata.normalize("NFC", text)
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = [line.rstrip() for line in text.split("\n")]
    return "\n".join(lines).encode("utf-8")


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def claim_to_json(claim: ClaimTuple) -> str:
    return json.dumps(
        {
            "topic": claim.topic,
            "polarity": claim.polarity,
            "strength": claim.strength,
            "text": claim.text,
        },
        ensure_ascii=False,
        sort_keys=False,
    )


def claims_to_bytes(claims: Iterable[ClaimTuple]) -> bytes:
    """Serialize claims as canonical JSONL (one claim per line, trailing LF)."""
    body = "".join(claim_to_json(c) + "\n" for c in claims)
    return canonicalize(body)


def parse_claims(data: bytes) -> list[ClaimTuple]:
    """Parse canonical JSONL claim bytes. Blank lines are skipped."""
    text = data.decode("utf-8")
    claims: list[ClaimTuple] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedContent(f"line {lineno}: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise MalformedContent(f"line {lineno}: expected an object")
        try:
            topic = obj["topic"]
            polarity = obj["polarity"]
            strength = obj["strength"]
        except KeyError as exc:
            raise MalformedContent(f"line {lineno}: missing field {exc.args[0]!r}") from exc
        text_field = obj.get("text", "")
        if not isinstance(topic, str) or not isinstance(text_field, str):
            raise MalformedContent(f"line {lineno}: topic and text must be strings")
        if isinstance(polarity, bool) or not isinstance(polarity, int):
            raise MalformedContent(f"line {lineno}: polarity must be -1 or 1")
        if isinstance(strength, bool) or not isinstance(strength, (int, float)):
            raise MalformedContent(f"line {lineno}: strength must be a number")
        try:
            claims.append(ClaimTuple(topic, polarity, float(strength), text_field))
        except ValueError as exc:
            raise MalformedContent(f"line {lineno}: {exc}") from exc
    return claims
