"""Small helpers shared by every prompt builder and reply parser."""

import json
import re

_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)\n?```", re.S)
_SQL_FENCE = re.compile(r"```(?:sql)?\s*\n(.*?)\n?```", re.S | re.I)


def extract_json(text):
    """Parse the first JSON value in a reply, with or without a code fence."""
    if text is None:
        raise ValueError("empty reply")
    text = text.strip()
    m = _FENCE.search(text)
    if m:
        text = m.group(1).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    start = min((i for i in (text.find("{"), text.find("[")) if i >= 0), default=-1)
    if start < 0:
        raise ValueError("reply contains no JSON")
    try:
        value, _ = json.JSONDecoder().raw_decode(text[start:])
    except json.JSONDecodeError as exc:
        raise ValueError(f"reply is not valid JSON: {exc}") from None
    return value


def extract_sql(text):
    """Query text from a reply: the first fenced block if any, else the whole reply."""
    text = (text or "").strip()
    m = _SQL_FENCE.search(text)
    if m:
        text = m.group(1)
    return text.strip().rstrip(";").strip()


def section(prompt, title):
    """Body of the ``### title`` section of a prompt, or ``None``."""
    m = re.search(r"^### " + re.escape(title) + r"\n(.*?)(?=^### |\Z)", prompt, re.S | re.M)
    return m.group(1).strip("\n") if m else None


def json_block(prompt, title):
    body = section(prompt, title)
    return None if body is None else extract_json(body)
