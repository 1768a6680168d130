"""Plain-text prediction, ground-truth and match files.

Prediction file::

    # image: 0007
    12.5 3.25 40 3.25 0.91
    ...

Each ``# image: <id>`` header starts a block; records are ``x1 y1 x2 y2 score``.
Ground-truth files have the same shape without the score column. Match files
use ``# pair: <id>`` headers and ``i j`` records (0-based line indices).
Blank lines and other ``#`` comments are ignored.
"""
from __future__ import annotations

from pathlib import Path

from .decode import ScoredSegment
from .geom import LineSegment


class FormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path, self.lineno = path, lineno


def _num(v: float) -> str:
    return repr(float(v))


def _blocks(path, header: str, ncols: int):
    """Yield (id, [(lineno, fields)]) blocks from a file."""
    out: dict[str, list] = {}
    order = []
    cur = None
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith(header + ":"):
                    cur = body[len(header) + 1:].strip()
                    if not cur:
                        raise FormatError(path, lineno, f"empty {header} id")
                    if cur in out:
                        raise FormatError(path, lineno, f"duplicate {header} id {cur!r}")
                    out[cur] = []
                    order.append(cur)
                continue
            if cur is None:
                raise FormatError(path, lineno, f"record before any '# {header}:' header")
            parts = line.split()
            if len(parts) != ncols:
                raise FormatError(path, lineno, f"expected {ncols} fields, got {len(parts)}")
            out[cur].append((lineno, parts))
    return [(k, out[k]) for k in order]


def _floats(path, lineno, parts):
    try:
        vals = [float(p) for p in parts]
    except ValueError as e:
        raise FormatError(path, lineno, str(e)) from None
    if any(v != v or v in (float("inf"), float("-inf")) for v in vals):
        raise FormatError(path, lineno, "non-finite value")
    return vals


def write_predictions(path, preds: dict) -> None:
    """``preds`` maps image id -> list of ScoredSegment (or (segment, score))."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for img_id, items in preds.items():
            f.write(f"# image: {img_id}\n")
            for seg, score in items:
                (x1, y1), (x2, y2) = seg
                f.write(" ".join(_num(v) for v in (x1, y1, x2, y2, score)) + "\n")


def read_predictions(path) -> dict[str, list[ScoredSegment]]:
    res = {}
    for img_id, rows in _blocks(path, "image", 5):
        items = []
        for lineno, parts in rows:
            x1, y1, x2, y2, s = _floats(path, lineno, parts)
            if not 0.0 <= s <= 1.0:
                raise FormatError(path, lineno, f"score {s} outside [0, 1]")
            items.append(ScoredSegment(LineSegment.from_coords(x1, y1, x2, y2), s))
        res[img_id] = items
    return res


def write_ground_truth(path, gts: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for img_id, segs in gts.items():
            f.write(f"# image: {img_id}\n")
            for (x1, y1), (x2, y2) in segs:
                f.write(" ".join(_num(v) for v in (x1, y1, x2, y2)) + "\n")


def read_ground_truth(path) -> dict[str, list[LineSegment]]:
    res = {}
    for img_id, rows in _blocks(path, "image", 4):
        res[img_id] = [LineSegment.from_coords(*_floats(path, n, p)) for n, p in rows]
    return res


def write_matches(path, matches: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for pair_id, pairs in matches.items():
            f.write(f"# pair: {pair_id}\n")
            for i, j in pairs:
                f.write(f"{int(i)} {int(j)}\n")


def read_matches(path) -> dict[str, list[tuple[int, int]]]:
    res = {}
    for pair_id, rows in _blocks(path, "pair", 2):
        pairs = []
        for lineno, parts in rows:
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError as e:
                raise FormatError(path, lineno, str(e)) from None
            if i < 0 or j < 0:
                raise FormatError(path, lineno, "negative line index")
            pairs.append((i, j))
        res[pair_id] = pairs
    return res


def ensure_parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p
