"""CSV output: a ``#`` comment block (version, config echo) then a header row."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(columns: Sequence[str], rows: Iterable[Sequence], meta: Mapping | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# extramerge {__version__}\n")
    for key, value in (meta or {}).items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(dest, columns, rows, meta=None) -> str:
    text = render_csv(columns, rows, meta)
    if dest is not None:
        Path(dest).write_text(text, encoding="utf-8")
    return text


def read_csv(path):
    """Return ``(meta, rows)`` where ``rows`` are dicts keyed by column name."""
    meta = {}
    body = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key] = value
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))
