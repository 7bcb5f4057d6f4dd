"""Writes the golden containers read by tests/golden.rs.

Uses only the standard library so the byte layout is spelled out
independently of the Rust writer.
"""

import json
import struct
from pathlib import Path

ROLES = {
    "visual-feature": 1,
    "text-feature": 2,
    "text-token-sequence": 3,
    "frame-sequence": 4,
    "projection-head": 5,
}


def put_str(out, s):
    b = s.encode("utf-8")
    out += struct.pack("<H", len(b)) + b


def container(role, cols, entries, metadata=""):
    """entries: list of (id, rows, labels or None)."""
    out = bytearray(b"PACSCTNR")
    out += struct.pack("<HBB", 1, 1, ROLES[role])
    meta = metadata.encode("utf-8")
    out += struct.pack("<I", len(meta)) + meta
    total = sum(len(rows) for _, rows, _ in entries)
    out += struct.pack("<QQQ", total, cols, len(entries))
    for ident, rows, _ in entries:
        put_str(out, ident)
        out += struct.pack("<Q", len(rows))
    if role == "text-token-sequence":
        for _, _, labels in entries:
            for label in labels:
                put_str(out, label)
    for _, rows, _ in entries:
        for row in rows:
            assert len(row) == cols
            out += struct.pack(f"<{cols}f", *row)
    return bytes(out)


def main():
    here = Path(__file__).parent
    text = container(
        "text-feature",
        4,
        [
            ("caption-1", [[0.1, -0.25, 3.5, 1e-3]], None),
            ("caption-2", [[-1.0, 0.0, 2.0 / 3.0, 65504.0]], None),
        ],
        json.dumps({"backbone": "toy-vit-b32", "exporter": "golden"}, separators=(",", ":")),
    )
    (here / "golden_text.pacs").write_bytes(text)
    tokens = container(
        "text-token-sequence",
        4,
        [
            ("caption-1", [[1.0, 0.0, 0.0, 0.0], [0.5, 0.5, -0.125, 2.0]], ["a", "dog"]),
            ("caption-2", [[0.0, 0.2, 0.9, -7.5]], ["cat"]),
        ],
    )
    (here / "golden_tokens.pacs").write_bytes(tokens)


if __name__ == "__main__":
    main()
