from html import escape
from pathlib import Path
from typing import Sequence, Union

from pgspot.models.reports import ResultRecord

PathLike = Union[str, Path]


def overlay_svg(results: Sequence[ResultRecord], width: int, height: int, image_href: str = "") -> str:
    """SVG drawing of result polygons and transcripts over the source image."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">'
    ]
    if image_href:
        parts.append(f'<image xlink:href="{escape(image_href)}" width="{width}" height="{height}"/>')
    for result in results:
        points = " ".join(f"{x:.1f},{y:.1f}" for x, y in result.poly)
        color = "orange" if result.flags else "lime"
        parts.append(f'<polygon points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if result.text:
            x, y = result.poly[0]
            parts.append(f'<text x="{x:.1f}" y="{y - 2:.1f}" font-size="12" fill="{color}">{escape(result.text)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_overlay(path: PathLike, results: Sequence[ResultRecord], width: int, height: int, image_href: str = ""):
    Path(path).write_text(overlay_svg(results, width, height, image_href), encoding="utf-8")
