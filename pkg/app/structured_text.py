"""Tokenizer for the sectioned ``key = value`` text format.

Shared by the materials parameter file and the run configuration. A file is a
sequence of ``[section]`` headers followed by ``key = value`` lines; ``#``
starts a comment anywhere on a line.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple


@dataclass(frozen=True)
class Entry:
    section: str
    key: str
    value: str
    line: int


def tokenize(text: str) -> Tuple[List[Entry], Dict[str, int], List[str]]:
    """Split structured text into entries.

    Args:
        text: Raw file contents

    Returns:
        A tuple (entries, sections, errors). ``sections`` maps every section
        header to the line it was declared on; ``errors`` holds one
        ``line N: ...`` message per malformed line. Parsing never stops at the
        first error.
    """
    entries: List[Entry] = []
    sections: Dict[str, int] = {}
    errors: List[str] = []
    seen: Dict[Tuple[str, str], int] = {}
    section = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                errors.append(f"line {lineno}: malformed section header '{raw.strip()}'")
                section = None
                continue
            section = line[1:-1].strip()
            if section in sections:
                errors.append(
                    f"line {lineno}: duplicate section [{section}] "
                    f"(first declared on line {sections[section]})"
                )
            sections.setdefault(section, lineno)
            continue

        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got '{line}'")
            continue
        if section is None:
            errors.append(f"line {lineno}: key outside of any [section]")
            continue

        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            errors.append(f"line {lineno}: missing key before '='")
            continue
        if (section, key) in seen:
            errors.append(
                f"line {lineno}: duplicate key '{key}' in [{section}] "
                f"(first set on line {seen[(section, key)]})"
            )
            continue
        seen[(section, key)] = lineno
        entries.append(Entry(section=section, key=key, value=value, line=lineno))

    return entries, sections, errors


def render(sections: Dict[str, Dict[str, str]], header: str = "") -> str:
    """Render ordered sections back into structured text."""
    lines: List[str] = []
    if header:
        lines.extend(f"# {row}" if row else "#" for row in header.splitlines())
        lines.append("")
    for name, values in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {value}" for key, value in values.items())
        lines.append("")
    return "\n".join(lines)
