#!/usr/bin/env python3
"""Regenerates the two synthetic fixture datasets under fixtures/datasets.

Output is deterministic. After regenerating, re-record the replay responses
(see README).
"""

import json
import random
import shutil
from pathlib import Path

from PIL import Image, ImageDraw

ROOT = Path(__file__).resolve().parent / "datasets"

COLORS = {
    "red": (220, 40, 40),
    "green": (40, 170, 70),
    "blue": (40, 80, 220),
    "yellow": (230, 200, 30),
}


def save_png(path: Path, draw_fn) -> None:
    img = Image.new("RGB", (32, 32), (255, 255, 255))
    draw_fn(ImageDraw.Draw(img))
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG", optimize=True)


def write_jsonl(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def bar_chart(values, color):
    def draw(d):
        width = 32 // len(values)
        for i, v in enumerate(values):
            d.rectangle([i * width + 1, 31 - v, (i + 1) * width - 2, 31], fill=color)
    return draw


def chart_trends() -> None:
    out = ROOT / "chart_trends"
    shutil.rmtree(out, ignore_errors=True)
    rng = random.Random(7)
    trends = [
        ("rise", "the values rise steadily from left to right"),
        ("fall", "the values fall steadily from left to right"),
        ("peak", "the values peak in the middle and drop at both ends"),
        ("flat", "the values stay roughly flat across the chart"),
    ]
    series_names = ["revenue", "rainfall", "visitors", "output", "enrolment", "traffic"]
    rows = []
    for n in range(24):
        key, answer = trends[n % len(trends)]
        color = list(COLORS.values())[n % len(COLORS)]
        if key == "rise":
            values = [6, 12, 18, 24]
        elif key == "fall":
            values = [24, 18, 12, 6]
        elif key == "peak":
            values = [8, 24, 22, 7]
        else:
            values = [15, 16, 15, 16]
        values = [max(1, min(30, v + rng.randint(-2, 2))) for v in values]
        refs = []
        for panel in range(2):
            ref = f"ct{n:02d}_{panel}.png"
            save_png(out / "images" / ref, bar_chart(values, color))
            refs.append(ref)
        series = series_names[n % len(series_names)]
        rows.append({
            "instance_id": f"ct-{n:02d}",
            "image_refs": refs,
            "question": f"Summarise how the {series} series changes in chart {n:02d}.",
            "gold_answer": answer,
        })
    write_jsonl(out / "train.jsonl", rows[:20])
    write_jsonl(out / "test.jsonl", rows[20:])
    (out / "spec.json").write_text(json.dumps({
        "dataset_id": "chart_trends",
        "task_type": "open_generation",
        "metric": "rouge_l",
        "max_shots": 3,
        "images_per_instance_hint": 2,
        "description_doc": "description.md",
    }, indent=2) + "\n")
    (out / "description.md").write_text(
        "# Chart Trends\n\n"
        "Chart Trends is a small synthetic benchmark of bar charts. Every item shows the same\n"
        "four-bar series twice, as a chart and as a thumbnail. Annotators wrote a one-sentence\n"
        "summary of the overall trend using a fixed vocabulary (rise, fall, peak, flat).\n\n"
        "Answers are scored with ROUGE-L against the reference sentence.\n")


def shapes(count, color):
    def draw(d):
        for i in range(count):
            x = 2 + (i % 3) * 10
            y = 2 + (i // 3) * 10
            d.rectangle([x, y, x + 7, y + 7], fill=color)
    return draw


def shape_counts() -> None:
    out = ROOT / "shape_counts"
    shutil.rmtree(out, ignore_errors=True)
    rng = random.Random(11)
    color_names = list(COLORS)
    rows = []
    for n in range(24):
        color = color_names[n % len(color_names)]
        n_images = 1 + (n % 3)
        per_image = [rng.randint(0, 3) for _ in range(n_images)]
        total = sum(per_image)
        refs = []
        for i, c in enumerate(per_image):
            ref = f"sc{n:02d}_{i}.png"
            save_png(out / "images" / ref, shapes(c, COLORS[color]))
            refs.append(ref)
        choices = [str(total + d) for d in (-1, 0, 1, 2) if total + d >= 0][:4]
        while len(choices) < 4:
            choices.append(str(int(choices[-1]) + 1))
        rows.append({
            "instance_id": f"sc-{n:02d}",
            "image_refs": refs,
            "question": f"How many {color} squares appear across all images of item {n:02d}?",
            "choices": choices,
            "gold_answer": str(total),
        })
    # One oversized item: more images than the reasoner budget allows.
    big = rows[OVERSIZED]
    big["image_refs"] = []
    for i in range(9):
        ref = f"sc{OVERSIZED:02d}_big{i}.png"
        count = 1 if i < int(big["gold_answer"]) else 0
        save_png(out / "images" / ref, shapes(count, COLORS[color_names[OVERSIZED % len(color_names)]]))
        big["image_refs"].append(ref)
    write_jsonl(out / "train.jsonl", rows[:20])
    write_jsonl(out / "test.jsonl", rows[20:])
    (out / "spec.json").write_text(json.dumps({
        "dataset_id": "shape_counts",
        "task_type": "multiple_choice",
        "metric": "accuracy",
        "max_shots": 3,
        "images_per_instance_hint": 2,
        "description_doc": "description.md",
    }, indent=2) + "\n")
    (out / "description.md").write_text(
        "# Shape Counts\n\n"
        "Shape Counts is a synthetic multi-image counting benchmark. Each item spreads coloured\n"
        "squares over one to three small images; the model must count squares of the named\n"
        "colour across all images and pick the matching option.\n\n"
        "Answers are scored by exact match against the correct option.\n")


# Index of the train item given nine images; chosen so it lands in the
# seed-42 validation pool.
OVERSIZED = 6

if __name__ == "__main__":
    chart_trends()
    shape_counts()
