"""Plain-text ``key = value`` files used for dataset manifests and run configs."""

from pathlib import Path

from .errors import DataError


def parse_kv(text: str, source: str = "<string>") -> dict:
    """Parse ``key = value`` lines. Blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise DataError(f"{source}:{lineno}: empty key")
        if key in out:
            raise DataError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return parse_kv(text, str(path))


def format_kv(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def write_kv(path, items: dict):
    Path(path).write_text(format_kv(items), encoding="utf-8")
