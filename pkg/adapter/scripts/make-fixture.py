#!/usr/bin/env python3
"""Build the two-page fixture PDF used by the adapter tests.

Page 1 mixes word-by-word draws, a multi-word draw (so the word splitter has
work to do), and one embedded raster image.  Page 2 holds a small numeric
grid.  The output is committed; rerun this only to change the fixture.
"""

import io
from pathlib import Path

from PIL import Image
from reportlab.lib.utils import ImageReader
from reportlab.pdfgen import canvas

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "fixture.pdf"

PAGE = (612, 792)


def words(c, x, y, parts, gap=6):
    for part in parts:
        c.drawString(x, y, part)
        x += c.stringWidth(part) + gap


def main() -> None:
    c = canvas.Canvas(str(OUT), pagesize=PAGE)
    c.setTitle("adapter fixture")

    # page 1
    c.setFont("Helvetica-Bold", 16)
    words(c, 72, 720, ["Fixture", "Report"])
    c.setFont("Helvetica", 11)
    # single draw call with internal spaces: the adapter must split it
    c.drawString(72, 690, "Tokens are extracted with their boxes.")
    words(c, 72, 672, ["Each", "word", "keeps", "its", "own", "position."])

    img = Image.new("RGB", (60, 40), (180, 40, 40))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    buf.seek(0)
    c.drawImage(ImageReader(buf), 72, 520, width=120, height=80)
    c.showPage()

    # page 2
    c.setFont("Helvetica-Bold", 11)
    words(c, 72, 700, ["Metric", "Value"])
    c.setFont("Helvetica", 11)
    words(c, 72, 684, ["accuracy", "0.94"])
    words(c, 72, 668, ["loss", "0.21"])
    c.setFont("Helvetica", 9)
    c.drawString(300, 40, "2")
    c.showPage()

    c.save()
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
