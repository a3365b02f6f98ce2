"""Episode sampling, query pools, appearance counts, and dataset disk IO.

A training episode pairs a query patch (a cropped ground-truth instance)
with one target page containing at least one instance of the same class.
Evaluation fixes one seeded query per class for the whole run.

On disk a dataset is one grayscale PNG per page plus a JSON sidecar per
split::

    {"pages": [{"id": ..., "file": ..., "instances":
        [{"class_id": ..., "xmin": ..., "ymin": ..., "xmax": ..., "ymax": ...}]}],
     "classes": [{"class_id": ..., "split": "seen"|"unseen"}]}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .synth import CharacterClass, Dataset, Instance, Page
from .tensor import Rng

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class Episode:
    query_class: int
    query_patch: np.ndarray          # uint8 crop, raw resolution
    query_box: tuple[float, float, float, float]
    query_page_id: int
    target: Page
    gt_boxes: np.ndarray             # [G, 4] boxes of query_class in target
    same_instance: bool = False      # query crop coincides with the only gt


def crop_instance(page: Page, box) -> np.ndarray:
    """Integer crop of a box from a page image (bounds-clipped, >= 2 px)."""
    h, w = page.image.shape
    x0 = int(np.clip(np.floor(box[0]), 0, w - 2))
    y0 = int(np.clip(np.floor(box[1]), 0, h - 2))
    x1 = int(np.clip(np.ceil(box[2]), x0 + 2, w))
    y1 = int(np.clip(np.ceil(box[3]), y0 + 2, h))
    return page.image[y0:y1, x0:x1].copy()


def class_occurrences(dataset: Dataset, split: str) -> dict[int, list[tuple[int, int]]]:
    """class id -> [(page index, instance index)] within a split."""
    occ: dict[int, list[tuple[int, int]]] = {}
    for pi, page in enumerate(dataset.pages.get(split, [])):
        for ii, inst in enumerate(page.instances):
            occ.setdefault(inst.class_id, []).append((pi, ii))
    return occ


def appearance_counts(dataset: Dataset, split: str) -> dict[int, int]:
    """Ground-truth instances per class in a split, recounted from pages."""
    if split not in dataset.pages:
        raise DataError(f"unknown split {split!r} (have {sorted(dataset.pages)})")
    counts: dict[int, int] = {}
    for page in dataset.pages[split]:
        for inst in page.instances:
            counts[inst.class_id] = counts.get(inst.class_id, 0) + 1
    return counts


def sample_episode(dataset: Dataset, split: str, rng: Rng) -> Episode:
    """One episode: class uniform over classes present in the split.

    Uniform-over-classes (not instances) keeps rare classes as visible to
    training as frequent ones; the long tail is a property of the pages,
    not of the sampler. The query and target instances are distinct
    occurrences whenever the class has at least two.
    """
    if split == "train":
        allowed = {c for c in dataset.classes if dataset.classes[c].split == "seen"}
    else:
        allowed = set(dataset.classes)
    occ = class_occurrences(dataset, split)
    present = sorted(c for c in occ if c in allowed and occ[c])
    if not present:
        raise DataError(f"split {split!r} has no usable classes")
    cid = present[rng.choice(len(present))]
    occurrences = occ[cid]
    qi = rng.choice(len(occurrences))
    if len(occurrences) >= 2:
        others = [o for i, o in enumerate(occurrences) if i != qi]
        target_occ = others[rng.choice(len(others))]
        same = False
    else:
        target_occ = occurrences[qi]
        same = True
        log.debug("class %d has a single occurrence; query and target coincide", cid)
    q_page = dataset.pages[split][occurrences[qi][0]]
    q_inst = q_page.instances[occurrences[qi][1]]
    t_page = dataset.pages[split][target_occ[0]]
    gt = np.array([inst.box for inst in t_page.instances if inst.class_id == cid],
                  dtype=np.float64)
    return Episode(query_class=cid, query_patch=crop_instance(q_page, q_inst.box),
                   query_box=q_inst.box, query_page_id=q_page.page_id, target=t_page,
                   gt_boxes=gt, same_instance=same)


@dataclass(frozen=True)
class QueryRef:
    class_id: int
    patch: np.ndarray
    page_index: int
    instance_index: int


def query_pool(dataset: Dataset, split: str, seed: int) -> dict[int, QueryRef]:
    """One seeded reference patch per class present in the split.

    The draw is a single stream over classes in sorted-id order, so the
    pool is a pure function of (dataset, split, seed).
    """
    rng = Rng(seed)
    occ = class_occurrences(dataset, split)
    pool: dict[int, QueryRef] = {}
    for cid in sorted(occ):
        occurrences = occ[cid]
        pick = occurrences[rng.choice(len(occurrences))]
        page = dataset.pages[split][pick[0]]
        inst = page.instances[pick[1]]
        pool[cid] = QueryRef(class_id=cid, patch=crop_instance(page, inst.box),
                             page_index=pick[0], instance_index=pick[1])
    return pool


# -- disk IO --------------------------------------------------------------


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    classes_json = [{"class_id": cid, "split": dataset.classes[cid].split}
                    for cid in sorted(dataset.classes)]
    for split, pages in dataset.pages.items():
        entries = []
        for page in pages:
            fname = f"{split}_{page.page_id:04d}.png"
            Image.fromarray(page.image, mode="L").save(out / fname)
            entries.append({
                "id": page.page_id,
                "file": fname,
                "instances": [
                    {"class_id": inst.class_id,
                     "xmin": inst.box[0], "ymin": inst.box[1],
                     "xmax": inst.box[2], "ymax": inst.box[3]}
                    for inst in page.instances
                ],
            })
        sidecar = {"pages": entries, "classes": classes_json}
        (out / f"{split}.json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_dataset(in_dir) -> Dataset:
    """Rebuild a dataset from sidecars + PNGs. Style vectors and draw logs
    are generation-time artifacts and do not round-trip; appearance counts
    are recounted."""
    root = Path(in_dir)
    sidecars = sorted(root.glob("*.json"))
    sidecars = [p for p in sidecars if p.stem in ("train", "test")]
    if not sidecars:
        raise DataError(f"{root}: no train.json/test.json sidecar found")
    classes: dict[int, CharacterClass] = {}
    dataset = Dataset(classes=classes)
    for sidecar in sidecars:
        split = sidecar.stem
        payload = json.loads(sidecar.read_text())
        for c in payload["classes"]:
            cid = int(c["class_id"])
            if cid not in classes:
                classes[cid] = CharacterClass(class_id=cid, split=c["split"])
        pages = []
        for entry in payload["pages"]:
            img = np.asarray(Image.open(root / entry["file"]).convert("L"))
            instances = [
                Instance(class_id=int(i["class_id"]),
                         box=(float(i["xmin"]), float(i["ymin"]),
                              float(i["xmax"]), float(i["ymax"])))
                for i in entry["instances"]
            ]
            pages.append(Page(page_id=int(entry["id"]), image=img, instances=instances))
        dataset.pages[split] = pages
        dataset.counts[split] = {}
    for split in dataset.pages:
        dataset.counts[split] = appearance_counts(dataset, split)
    return dataset
