# SPDX-License-Identifier: Apache-2.0
"""Regenerates the toy corpus: 20 interleaved docs with small PNG images."""
import json
import random
from pathlib import Path

from PIL import Image, ImageDraw

COLORS = {"red": (220, 40, 40), "green": (40, 180, 60), "blue": (40, 70, 220), "yellow": (230, 210, 40)}
SHAPES = ["circle", "square", "bar"]
SIZES = [(28, 28), (56, 28), (28, 56), (56, 56), (40, 30), (64, 36)]

root = Path(__file__).resolve().parent
(root / "images").mkdir(exist_ok=True)
rng = random.Random(7)
docs = []
for i in range(20):
    color = rng.choice(sorted(COLORS))
    shape = SHAPES[i % len(SHAPES)]
    w, h = SIZES[i % len(SIZES)]
    img = Image.new("RGB", (w, h), (245, 245, 245))
    d = ImageDraw.Draw(img)
    box = (w // 5, h // 5, w - w // 5, h - h // 5)
    if shape == "circle":
        d.ellipse(box, fill=COLORS[color])
    elif shape == "square":
        d.rectangle(box, fill=COLORS[color])
    else:
        d.rectangle((box[0], h // 2 - 2, box[2], h // 2 + 2), fill=COLORS[color])
    image_id = f"img{i:02d}"
    img.save(root / "images" / f"{image_id}.png")
    blocks = [{"image": image_id, "w": w, "h": h}, {"text": f"a {color} {shape}."}]
    if i % 4 == 1:
        blocks = [{"text": "look: "}] + blocks
    docs.append({"doc_id": f"doc{i:02d}", "blocks": blocks})

with open(root / "docs.jsonl", "w") as f:
    for doc in docs:
        f.write(json.dumps(doc) + "\n")
