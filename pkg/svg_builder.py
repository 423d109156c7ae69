#!/usr/bin/env python3
"""
Minimal SVG writer: rectangles and text accumulated into one string
Integer coordinates only, so output is byte-stable across platforms
"""

from xml.sax.saxutils import escape


class SvgCanvas:
    def __init__(self, width: int, height: int, font_size: int = 10):
        self.svg = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="{font_size}">\n'
        )

    def filled_rectangle(self, x: int, y: int, width: int, height: int, fill: str, title: str = "") -> None:
        if title:
            self.svg += (
                f'<rect x="{x}" y="{y}" width="{width}" height="{height}" fill="{fill}">'
                f'<title>{escape(title)}</title></rect>\n'
            )
        else:
            self.svg += f'<rect x="{x}" y="{y}" width="{width}" height="{height}" fill="{fill}"/>\n'

    def text(self, x: int, y: int, string: str, anchor: str = "start") -> None:
        self.svg += f'<text x="{x}" y="{y}" text-anchor="{anchor}">{escape(str(string))}</text>\n'

    def get_svg(self) -> str:
        return f"{self.svg}</svg>\n"
