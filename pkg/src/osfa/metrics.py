"""Per-class AP at IoU 0.5, appearance-thresholded means, and the
comparison-table renderer.

AP is the all-point interpolated form: area under the monotone envelope of
the precision-recall curve (the PASCAL VOC 2010+ convention). A detection
matches the ground-truth box it overlaps most; if that box was already
claimed by a higher-scoring detection, the detection is a false positive.
Detections are ranked by score with a full tie-break on box coordinates,
so input order never matters.

The appearance-thresholded mean drops every class with fewer than ``thr``
test-set instances before averaging; an empty bucket is reported as an
explicit marker, never as 0.0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import boxes as B
from .data import appearance_counts, query_pool
from .detector import DetectorConfig, detect
from .synth import Dataset

# Canonical row order and display names for comparison tables.
VARIANT_LABELS: dict[str, str] = {
    "none": "Default",
    "ours": "+Ours",
    "gblur": "+Gblur",
    "solarize": "+Solarize",
    "rcrop": "+Rcrop",
    "fixed": "+Fixed",
    "single": "+Single",
    "channel": "+Channel-wise",
    "position": "+Position-wise",
    "position_channel": "+Position-Channel",
}
ROW_ORDER = list(VARIANT_LABELS)

SEEN_THRESHOLDS = (0, 80, 160, 320)
UNSEEN_THRESHOLDS = (0, 20, 40, 80, 100)


class EvalError(ValueError):
    pass


iou = B.iou  # box-overlap ratio; re-exported as part of this module's API


def ap50(detections, gt_boxes, iou_threshold: float = 0.5) -> float | None:
    """All-point interpolated AP for one class.

    ``detections``: iterable of (score, box) or (score, box, image_id).
    ``gt_boxes``: iterable of box or (image_id, box). Image ids partition
    the matching; omitted ids default to a single image. Returns None when
    there is nothing to score (no gt and no detections: class skipped).
    """
    dets = []
    for d in detections:
        if len(d) == 2:
            score, box = d
            img = 0
        else:
            score, box, img = d
        dets.append((float(score), B.check_box(box), img))
    gts = []
    for g in gt_boxes:
        if isinstance(g, tuple) and len(g) == 2 and not np.isscalar(g[1]):
            img, box = g
        else:
            img, box = 0, g
        gts.append((img, B.check_box(box)))

    if not gts:
        return None if not dets else 0.0
    if not dets:
        return 0.0

    # Canonical ranking: score desc, then box coordinates, then image id.
    dets.sort(key=lambda d: (-d[0], d[1][0], d[1][1], d[1][2], d[1][3], repr(d[2])))

    gt_by_img: dict = {}
    for img, box in gts:
        gt_by_img.setdefault(img, []).append(box)
    matched = {img: np.zeros(len(boxes_), dtype=bool) for img, boxes_ in gt_by_img.items()}

    tp = np.zeros(len(dets))
    fp = np.zeros(len(dets))
    for i, (score, box, img) in enumerate(dets):
        candidates = gt_by_img.get(img, [])
        if not candidates:
            fp[i] = 1
            continue
        overlaps = np.array([B.iou(box, g) for g in candidates])
        j = int(overlaps.argmax())
        if overlaps[j] >= iou_threshold and not matched[img][j]:
            matched[img][j] = True
            tp[i] = 1
        else:
            fp[i] = 1

    n_gt = len(gts)
    acc_tp = np.cumsum(tp)
    acc_fp = np.cumsum(fp)
    recall = acc_tp / n_gt
    precision = acc_tp / (acc_tp + acc_fp)

    # Monotone envelope, integrated over recall steps.
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, precision):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def thresholded_map(per_class_ap: dict[int, float], counts: dict[int, int],
                    thr: int) -> float | None:
    """Mean AP over classes appearing at least ``thr`` times.

    Classes below the threshold are excluded entirely. None marks an empty
    bucket (no class survives), which renders as a dash, never as 0.0.
    """
    missing = [c for c in per_class_ap if c not in counts]
    if missing:
        raise EvalError(f"counts missing for classes {missing}")
    survivors = [ap for c, ap in per_class_ap.items() if counts[c] >= thr]
    if not survivors:
        return None
    return float(np.mean(survivors))


@dataclass
class EvalResult:
    block: str                                   # "seen" | "unseen"
    per_class_ap50: dict[int, float] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)
    thresholded: dict[int, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "block": self.block,
            "per_class_ap50": {str(k): v for k, v in sorted(self.per_class_ap50.items())},
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "thresholded": {str(k): v for k, v in sorted(self.thresholded.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(
            block=d["block"],
            per_class_ap50={int(k): float(v) for k, v in d["per_class_ap50"].items()},
            counts={int(k): int(v) for k, v in d["counts"].items()},
            thresholded={int(k): (None if v is None else float(v))
                         for k, v in d["thresholded"].items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalResult":
        return cls.from_dict(json.loads(text))


def evaluate(params, sigma, dataset: Dataset, block: str, thr_list,
             config: DetectorConfig = DetectorConfig(), query_seed: int = 0,
             oracle_gt: bool = False, exclude_query_source: bool = False) -> EvalResult:
    """Run the detector over the test split for one class block.

    Every class present in the test split and belonging to ``block`` is
    scored with its one seeded query over all test pages. ``oracle_gt``
    replaces the detector with one that emits the ground truth verbatim
    (a plumbing check: every AP must come out 1.0).
    ``exclude_query_source`` drops the query's own source instance from the
    ground truth; by default it stays in.
    """
    if block not in ("seen", "unseen"):
        raise EvalError(f"block must be 'seen' or 'unseen', got {block!r}")
    counts = appearance_counts(dataset, "test")
    pool = query_pool(dataset, "test", query_seed)
    class_ids = [c for c in sorted(pool) if dataset.classes[c].split == block]

    # Target features depend only on the page, so detection results can be
    # collected page-major; detect() itself re-extracts, which is the
    # simple-but-slower route taken here for the oracle-free path.
    per_class: dict[int, float] = {}
    pages = dataset.pages["test"]
    for cid in class_ids:
        ref = pool[cid]
        dets = []
        gts = []
        for pi, page in enumerate(pages):
            for ii, inst in enumerate(page.instances):
                if inst.class_id != cid:
                    continue
                if exclude_query_source and pi == ref.page_index and ii == ref.instance_index:
                    continue
                gts.append((pi, inst.box))
            if oracle_gt:
                for inst in page.instances:
                    if inst.class_id == cid:
                        dets.append((1.0, inst.box, pi))
                continue
            for det in detect(ref.patch, page.image, params, sigma, mode="infer",
                              config=config, query_class=cid):
                dets.append((det.score, det.box, pi))
        ap = ap50(dets, gts)
        if ap is None:
            continue
        per_class[cid] = ap

    thresholded = {int(t): thresholded_map(per_class, counts, int(t)) for t in thr_list}
    return EvalResult(block=block,
                      per_class_ap50=per_class,
                      counts={c: counts.get(c, 0) for c in per_class},
                      thresholded=thresholded)


# -- comparison tables ----------------------------------------------------


@dataclass
class ReportTable:
    """Aggregated mean +/- std cells for (block, variant, thr)."""

    blocks: list[str]
    thr_lists: dict[str, list[int]]
    cells: dict[tuple[str, str, int], tuple[float | None, float | None, int]]
    variants: list[str]

    def render_text(self) -> str:
        lines = []
        for block in self.blocks:
            thrs = self.thr_lists[block]
            lines.append(f"[{block}]")
            header = f"{'thr':<18}" + "".join(f"{t:>14}" for t in thrs)
            lines.append(header)
            for variant in self.variants:
                label = VARIANT_LABELS.get(variant, variant)
                row = f"{label:<18}"
                for t in thrs:
                    mean, std, n = self.cells.get((block, variant, t), (None, None, 0))
                    if mean is None:
                        row += f"{'—':>14}"
                    else:
                        row += f"{mean:>8.3f}±{std:<5.3f}"
                lines.append(row)
            lines.append("")
        return "\n".join(lines)

    def render_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["block", "variant", "thr", "mean_ap50", "std_ap50", "n_seeds"])
        for block in self.blocks:
            for variant in self.variants:
                for t in self.thr_lists[block]:
                    mean, std, n = self.cells.get((block, variant, t), (None, None, 0))
                    writer.writerow([
                        block, variant, t,
                        "" if mean is None else repr(float(mean)),
                        "" if std is None else repr(float(std)),
                        n,
                    ])
        return buf.getvalue()


def parse_report_csv(text: str) -> dict[tuple[str, str, int], tuple[float | None, float | None, int]]:
    cells = {}
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        mean = None if row["mean_ap50"] == "" else float(row["mean_ap50"])
        std = None if row["std_ap50"] == "" else float(row["std_ap50"])
        cells[(row["block"], row["variant"], int(row["thr"]))] = (mean, std, int(row["n_seeds"]))
    return cells


def report(results: list[tuple[str, int, EvalResult]]) -> ReportTable:
    """Aggregate (variant, seed, result) triples into the comparison table.

    Cells are mean ± std (population) over seeds. All results of one block
    must share the same thr list; a mismatch is an error, not a guess.
    """
    if not results:
        raise EvalError("report: no results")
    blocks: list[str] = []
    thr_lists: dict[str, list[int]] = {}
    by_cell: dict[tuple[str, str, int], list[float]] = {}
    variants_seen: list[str] = []
    for variant, _seed, res in results:
        if res.block not in blocks:
            blocks.append(res.block)
            thr_lists[res.block] = sorted(res.thresholded)
        elif thr_lists[res.block] != sorted(res.thresholded):
            raise EvalError(
                f"inconsistent thr lists for block {res.block!r}: "
                f"{thr_lists[res.block]} vs {sorted(res.thresholded)}")
        if variant not in variants_seen:
            variants_seen.append(variant)
        for t, v in res.thresholded.items():
            if v is not None:
                by_cell.setdefault((res.block, variant, int(t)), []).append(float(v))

    ordered = [v for v in ROW_ORDER if v in variants_seen]
    ordered += [v for v in sorted(variants_seen) if v not in ordered]
    blocks.sort(key=lambda b: (b != "seen", b))

    cells: dict[tuple[str, str, int], tuple[float | None, float | None, int]] = {}
    for block in blocks:
        for variant in ordered:
            for t in thr_lists[block]:
                vals = by_cell.get((block, variant, t))
                if not vals:
                    cells[(block, variant, t)] = (None, None, 0)
                else:
                    arr = np.asarray(vals)
                    cells[(block, variant, t)] = (float(arr.mean()), float(arr.std()), len(vals))
    return ReportTable(blocks=blocks, thr_lists=thr_lists, cells=cells, variants=ordered)
