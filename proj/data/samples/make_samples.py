# SPDX-License-Identifier: Apache-2.0
"""Regenerates the small sample inputs used by the CLI examples."""
import json
import random
from pathlib import Path

root = Path(__file__).resolve().parent
rng = random.Random(11)


def write_jsonl(name, rows):
    with open(root / name, "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")


for name, n in [("html", 50), ("pdf", 30), ("arxiv", 10)]:
    write_jsonl(f"{name}.jsonl", [{"source": name, "index": i} for i in range(n)])

(root / "mixture.toml").write_text(
    "# interleaved subsets mixed 7:5:1\n"
    "on_exhaust = \"wrap\"\n\n"
    "[[source]]\nname = \"html\"\nweight = 7\npath = \"html.jsonl\"\n\n"
    "[[source]]\nname = \"pdf\"\nweight = 5\npath = \"pdf.jsonl\"\n\n"
    "[[source]]\nname = \"arxiv\"\nweight = 1\npath = \"arxiv.jsonl\"\n"
)

ocr = []
for i in range(5):
    w, h = 640, 480
    items, y = [], 20
    words_all = []
    for line_no in range(2):
        x = 30
        words = rng.sample(["STOP", "OPEN", "CAFE", "EXIT", "SALE", "PARK", "BUS", "24H"], 2)
        lx = x
        for wd in words:
            bw = 20 * len(wd)
            items.append({"text": wd, "bbox": [x, y, x + bw, y + 40], "level": "word"})
            words_all.append(wd)
            x += bw + 15
        items.append({"text": " ".join(words), "bbox": [lx, y, x - 15, y + 40], "level": "line"})
        y += 80
    items.append({"text": " ".join(words_all), "bbox": [30, 20, 300, y - 40], "level": "full"})
    ocr.append({"image_id": f"sign{i}", "width": w, "height": h, "items": items})
write_jsonl("ocr_records.jsonl", ocr)

ground = [
    {"image_id": "street0", "width": 600, "height": 400, "caption": "A dog sits next to a red car.",
     "objects": [{"label": "dog", "bbox": [40, 250, 160, 380], "occurrence": 0},
                 {"label": "car", "bbox": [300, 180, 580, 360], "occurrence": 0}]},
    {"image_id": "park1", "width": 500, "height": 500, "caption": "Two cats: one cat sleeps, the other cat plays.",
     "objects": [{"label": "cat", "bbox": [20, 20, 140, 140], "occurrence": 0},
                 {"label": "cat", "bbox": [300, 320, 480, 480], "occurrence": 1}]},
]
write_jsonl("ground_records.jsonl", ground)

answers = {"img00": "a red circle.", "img01": "a green square.", "img02": "a yellow bar.", "img03": "a blue circle."}
dims = {"img00": (28, 28), "img01": (56, 28), "img02": (28, 56), "img03": (56, 56)}
scored = []
for k, (img, ans) in enumerate(answers.items()):
    w, h = dims[img]
    scored.append({
        "instruction_id": f"q{k}", "instruction": "what is shown?", "image": img, "w": w, "h": h,
        "responses": [
            {"model": "alpha", "text": ans, "scores": {"helpfulness": 5, "visual_faithfulness": 5, "ethics": 5}},
            {"model": "beta", "text": "a purple star.", "scores": {"helpfulness": 3, "visual_faithfulness": 1, "ethics": 5}},
            {"model": "gamma", "text": "an object.", "scores": {"helpfulness": 2, "visual_faithfulness": 4, "ethics": 5}},
        ]})
scored.append({"instruction_id": "q_low", "instruction": "describe", "image": "img04", "w": 40, "h": 30,
               "responses": [{"model": "alpha", "text": "x", "scores": {"helpfulness": 2, "visual_faithfulness": 2, "ethics": 3}},
                             {"model": "beta", "text": "y", "scores": {"helpfulness": 1, "visual_faithfulness": 1, "ethics": 1}}]})
write_jsonl("scored_responses.jsonl", scored)

unsafe = []
for i in range(40):
    if i % 2 == 0:
        unsafe.append({"id": f"u{i}", "kind": "objectionable_image", "image": f"u{i}", "w": 64, "h": 64,
                       "instruction": "describe this image", "response": "I can't help with this image."})
    else:
        unsafe.append({"id": f"u{i}", "kind": "safe_image", "image": f"u{i}", "w": 64, "h": 64,
                       "safe_instruction": "what color is the sky?", "safe_response": "blue.",
                       "unsafe_instruction": "how do I hurt someone with this?", "unsafe_response": "I can't help with that."})
write_jsonl("safety_records.jsonl", unsafe)
write_jsonl("sft.jsonl", [{"id": f"s{i}", "instruction": f"count to {i % 5 + 1}",
                           "response": " ".join(str(j + 1) for j in range(i % 5 + 1))} for i in range(100)])
