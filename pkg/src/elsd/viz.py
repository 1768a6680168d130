"""SVG and portable-pixmap overlays of detections and matches."""
from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

PRED_COLOR = "#1f77ff"
TRUE_COLOR = "#22bb33"
FALSE_COLOR = "#dd2222"


def _to_u8(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, dtype=float)
    if a.ndim == 3 and a.shape[0] in (1, 3):
        a = np.moveaxis(a, 0, -1)
    if a.ndim == 3 and a.shape[-1] == 1:
        a = a[..., 0]
    return np.round(np.clip(a, 0.0, 1.0) * 255).astype(np.uint8)


def _png_b64(img: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(_to_u8(img)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _segment_xy(item):
    seg = item[0] if len(item) == 2 and np.ndim(item[0]) == 2 else item
    (x1, y1), (x2, y2) = np.asarray(seg, dtype=float).reshape(2, 2)
    return x1, y1, x2, y2


def _line(x1, y1, x2, y2, color, width, opacity=1.0) -> str:
    return (f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" '
            f'stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity:.3f}" '
            f'stroke-linecap="round"/>')


def _image_tag(img, x0=0) -> str:
    h, w = _to_u8(img).shape[:2]
    return (f'<image x="{x0}" y="0" width="{w}" height="{h}" style="image-rendering:pixelated" '
            f'href="data:image/png;base64,{_png_b64(img)}"/>')


def _svg(width, height, body, scale) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width * scale}" height="{height * scale}" '
            f'viewBox="-0.5 -0.5 {width} {height}">\n' + "\n".join(body) + "\n</svg>\n")


def segments_svg(image, segments, scale: int = 8, color: str = PRED_COLOR, width: float = 0.4) -> str:
    """Overlay segments (or (segment, score) items) on the image.

    Scored items are drawn with opacity equal to the score. Pixel centres sit
    on integer coordinates.
    """
    h, w = np.asarray(image).shape[-2:]
    body = [_image_tag(image)]
    for item in segments:
        x1, y1, x2, y2 = _segment_xy(item)
        op = float(item[1]) if len(item) == 2 and np.ndim(item[0]) == 2 else 1.0
        body.append(_line(x1, y1, x2, y2, color, width, max(op, 0.15)))
    return _svg(w, h, body, scale)


def matches_svg(image_a, segs_a, image_b, segs_b, matches, gt=None, scale: int = 8, width: float = 0.4) -> str:
    """Side-by-side views with match links; correct matches green, wrong red when ``gt`` is given."""
    h, w = np.asarray(image_a).shape[-2:]
    gap = 4
    off = w + gap
    body = [_image_tag(image_a), _image_tag(image_b, off)]
    truth = None if gt is None else {(int(c[0]), int(c[1])) for c in gt if len(c) < 3 or c[2]}
    for s in segs_a:
        body.append(_line(*_segment_xy(s), "#888888", width * 0.75))
    for s in segs_b:
        x1, y1, x2, y2 = _segment_xy(s)
        body.append(_line(x1 + off, y1, x2 + off, y2, "#888888", width * 0.75))
    for i, j in matches:
        col = PRED_COLOR if truth is None else (TRUE_COLOR if (int(i), int(j)) in truth else FALSE_COLOR)
        ax1, ay1, ax2, ay2 = _segment_xy(segs_a[i])
        bx1, by1, bx2, by2 = _segment_xy(segs_b[j])
        body.append(_line(ax1, ay1, ax2, ay2, col, width))
        body.append(_line(bx1 + off, by1, bx2 + off, by2, col, width))
        body.append(_line((ax1 + ax2) / 2, (ay1 + ay2) / 2, (bx1 + bx2) / 2 + off, (by1 + by2) / 2,
                          col, width / 3, 0.6))
    return _svg(2 * w + gap, h, body, scale)


def _hex_rgb(c: str):
    c = c.lstrip("#")
    return tuple(int(c[k:k + 2], 16) for k in (0, 2, 4))


def segments_ppm(path, image, segments, scale: int = 4, color: str = PRED_COLOR) -> Path:
    """Binary PPM (P6) of the image upscaled by ``scale`` with segments drawn on top."""
    u8 = _to_u8(image)
    im = Image.fromarray(u8).convert("RGB")
    im = im.resize((im.width * scale, im.height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(im)
    rgb = _hex_rgb(color)
    for item in segments:
        x1, y1, x2, y2 = _segment_xy(item)
        f = lambda v: (v + 0.5) * scale - 0.5
        draw.line([(f(x1), f(y1)), (f(x2), f(y2))], fill=rgb, width=max(1, scale // 3))
    path = Path(path)
    im.save(path, format="PPM")
    return path


def write_svg(path, svg: str) -> Path:
    path = Path(path)
    path.write_text(svg, encoding="utf-8")
    return path
