"""Regenerates the bundled synthetic corpus (12 COCO-style, 8 BDD-style images)."""
import json
import os

import numpy as np
from PIL import Image

HERE = os.path.dirname(os.path.abspath(__file__))
W, H = 64, 48
rng = np.random.default_rng(7)


def texture():
    base = rng.integers(40, 200, size=3)
    noise = rng.integers(-30, 30, size=(H, W, 3))
    return np.clip(base + noise, 1, 255).astype(np.uint8)


def rect_mask(x0, y0, x1, y1):
    m = np.zeros((H, W), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def rle_counts(m):
    flat = m.T.reshape(-1)
    counts, cur, run = [], False, 0
    for v in flat:
        if v != cur:
            counts.append(run)
            cur, run = v, 0
        run += 1
    counts.append(run)
    return counts


def rle_string(counts):
    s = []
    for i, c in enumerate(counts):
        x = c - counts[i - 2] if i > 2 else c
        while True:
            c5 = x & 0x1F
            x >>= 5
            more = (x != -1) if (c5 & 0x10) else (x != 0)
            if more:
                c5 |= 0x20
            s.append(chr(c5 + 48))
            if not more:
                break
    return "".join(s)


def coco():
    cats = ["person", "bicycle", "car", "motorcycle", "bus", "truck", "traffic light", "dog"]
    out = {"images": [], "annotations": [], "categories": [{"id": i + 1, "name": n} for i, n in enumerate(cats)]}
    os.makedirs(os.path.join(HERE, "coco", "images"), exist_ok=True)
    ann_id = 1
    for k in range(12):
        img_id = k + 1
        name = f"{img_id:012d}.png"
        Image.fromarray(texture()).save(os.path.join(HERE, "coco", "images", name))
        out["images"].append({"id": img_id, "file_name": name, "width": W, "height": H})
        n = 1 + k % 3
        for j in range(n):
            cat = cats[int(rng.integers(0, 7))] if j else "car"
            x0, y0 = int(rng.integers(0, 40)), int(rng.integers(0, 28))
            x1, y1 = x0 + int(rng.integers(6, 24)), y0 + int(rng.integers(6, 20))
            x1, y1 = min(x1, W), min(y1, H)
            mode = (k + j) % 3
            if mode == 0:
                seg = [[x0, y0, x1, y0, x1, y1, (x0 + x1) / 2, y1 + 0.0, x0, (y0 + y1) / 2]]
            else:
                counts = rle_counts(rect_mask(x0, y0, x1, y1))
                seg = {"size": [H, W], "counts": counts if mode == 1 else rle_string(counts)}
            out["annotations"].append(
                {"id": ann_id, "image_id": img_id, "category_id": cats.index(cat) + 1, "segmentation": seg, "iscrowd": 0}
            )
            ann_id += 1
        if k % 4 == 0:
            counts = rle_counts(rect_mask(50, 30, 60, 44))
            out["annotations"].append(
                {"id": ann_id, "image_id": img_id, "category_id": 8, "segmentation": [[50, 0, 60, 0, 60, 10, 50, 10]], "iscrowd": 0}
            )
            ann_id += 1
            out["annotations"].append(
                {"id": ann_id, "image_id": img_id, "category_id": 1, "segmentation": {"size": [H, W], "counts": counts}, "iscrowd": 1}
            )
            ann_id += 1
    with open(os.path.join(HERE, "coco", "annotations.json"), "w") as f:
        json.dump(out, f, indent=1)


def bdd():
    os.makedirs(os.path.join(HERE, "bdd100k", "images"), exist_ok=True)
    os.makedirs(os.path.join(HERE, "bdd100k", "bitmasks"), exist_ok=True)
    for k in range(8):
        stem = f"b{k:03d}"
        Image.fromarray(texture()).save(os.path.join(HERE, "bdd100k", "images", stem + ".png"))
        bm = np.zeros((H, W, 4), dtype=np.uint8)
        n = 1 + k % 3
        for j in range(n):
            cat = 3 if j == 0 else int(rng.integers(1, 9))
            x0, y0 = int(rng.integers(0, 40)), int(rng.integers(0, 28))
            x1, y1 = min(x0 + int(rng.integers(8, 26)), W), min(y0 + int(rng.integers(8, 20)), H)
            inst = 10 + j
            bm[y0:y1, x0:x1] = [cat, 0, inst // 256, inst % 256]
        Image.fromarray(bm, "RGBA").save(os.path.join(HERE, "bdd100k", "bitmasks", stem + ".png"))


if __name__ == "__main__":
    coco()
    bdd()
