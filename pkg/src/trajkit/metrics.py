"""Tracking evaluation: localization, association and classification scores.

Per frame, predicted and ground-truth boxes are matched one-to-one by
Hungarian assignment on IoU, restricted to pairs with IoU at or above the
threshold (maximum match count first, maximum total IoU among those).
From the per-frame matches:

- LocA = 100 * TP / (TP + FP + FN) over all frames,
- AssA = 100 * mean over matched instances of
  TPA / (TPA + FNA + FPA), the co-assignment Jaccard of one
  (pred track, gt track) pair,
- ClsA = 100 * fraction of matched instances whose predicted track label
  equals the ground-truth category,
- TETA = mean of the three.

Scores are reported overall and per vocabulary split. A split keeps its own
ground-truth tracks plus the predictions matched to them; predictions that
never match anything count against the overall scores only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .io import BBox

_INADMISSIBLE = 1e9  # assignment cost for pairs below the IoU threshold


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    splits: Mapping[int, str] = field(default_factory=dict)  # category id -> base | novel

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")


@dataclass
class SplitScores:
    teta: float = 0.0
    loc_a: float = 0.0
    ass_a: float = 0.0
    cls_a: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def to_dict(self) -> dict:
        return {"teta": self.teta, "loc_a": self.loc_a, "ass_a": self.ass_a,
                "cls_a": self.cls_a, "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass
class EvalReport:
    overall: SplitScores
    base: SplitScores
    novel: SplitScores

    def to_dict(self) -> dict:
        return {"overall": self.overall.to_dict(), "base": self.base.to_dict(),
                "novel": self.novel.to_dict()}

    def format_table(self) -> str:
        header = f"{'scope':<9}{'TETA':>8}{'LocA':>8}{'AssA':>8}{'ClsA':>8}{'TP':>7}{'FP':>7}{'FN':>7}"
        lines = [header]
        for name in ("overall", "base", "novel"):
            s: SplitScores = getattr(self, name)
            lines.append(f"{name:<9}{s.teta:>8.2f}{s.loc_a:>8.2f}{s.ass_a:>8.2f}"
                         f"{s.cls_a:>8.2f}{s.tp:>7}{s.fp:>7}{s.fn:>7}")
        return "\n".join(lines)


def iou(b1: BBox, b2: BBox) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    x1, y1, w1, h1 = b1
    x2, y2, w2, h2 = b2
    ix = min(x1 + w1, x2 + w2) - max(x1, x2)
    iy = min(y1 + h1, y2 + h2) - max(y1, y2)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = w1 * h1 + w2 * h2 - inter
    return inter / union if union > 0.0 else 0.0


def iou_matrix(boxes_a: Sequence[BBox], boxes_b: Sequence[BBox]) -> np.ndarray:
    """(len(a), len(b)) pairwise IoU, vectorized."""
    if len(boxes_a) == 0 or len(boxes_b) == 0:
        return np.zeros((len(boxes_a), len(boxes_b)))
    a = np.asarray(boxes_a, dtype=np.float64)
    b = np.asarray(boxes_b, dtype=np.float64)
    ix = (np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2])
          - np.maximum(a[:, None, 0], b[None, :, 0]))
    iy = (np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3])
          - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def frame_matching(pred_boxes: Sequence[BBox], gt_boxes: Sequence[BBox],
                   iou_threshold: float = 0.5) -> list[tuple[int, int]]:
    """Optimal one-to-one box matching within one frame.

    Only pairs with IoU >= iou_threshold are admissible. Among admissible
    matchings the result maximizes the number of pairs, then the total IoU;
    greedy per-box choices are not optimal in general.
    """
    m = iou_matrix(pred_boxes, gt_boxes)
    if m.size == 0:
        return []
    cost = np.where(m >= iou_threshold, 1.0 - m, _INADMISSIBLE)
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if m[r, c] >= iou_threshold]


def _pair_scores(pairs, pair_tpa, pred_present, gt_present, pred_label, gt_cat):
    """Association and classification sums over matched instances."""
    tp = ass = cls = 0.0
    for (pi, gi) in pairs:
        tpa = pair_tpa[(pi, gi)]
        union = pred_present[pi] + gt_present[gi] - tpa
        ass += tpa * (tpa / union)
        cls += tpa * (1.0 if pred_label[pi] == gt_cat[gi] else 0.0)
        tp += tpa
    return tp, ass, cls


def _make_scores(tp, fp, fn, ass_sum, cls_sum):
    s = SplitScores(tp=int(tp), fp=int(fp), fn=int(fn))
    denom = tp + fp + fn
    s.loc_a = 100.0 * tp / denom if denom else 0.0
    s.ass_a = 100.0 * ass_sum / tp if tp else 0.0
    s.cls_a = 100.0 * cls_sum / tp if tp else 0.0
    s.teta = (s.loc_a + s.ass_a + s.cls_a) / 3.0
    return s


def evaluate(preds, gts, cfg: EvalConfig | None = None) -> EvalReport:
    """Score predicted tracks against ground truth.

    ``preds`` need ``track_id``, ``boxes`` (frame -> bbox) and ``label``;
    ``gts`` need ``track_id``, ``boxes`` and ``category_id``. Track ids only
    name the tracks, scores are invariant under renaming.
    """
    cfg = cfg or EvalConfig()
    pred_boxes = [dict(p.boxes) for p in preds]
    gt_boxes = [dict(g.boxes) for g in gts]
    pred_label = [getattr(p, "label", None) for p in preds]
    gt_cat = [g.category_id for g in gts]
    frames = sorted({f for bx in pred_boxes for f in bx} | {f for bx in gt_boxes for f in bx})

    pair_tpa: dict[tuple[int, int], int] = {}
    tp = fp = fn = 0
    for frame in frames:
        ps = [(i, bx[frame]) for i, bx in enumerate(pred_boxes) if frame in bx]
        gs = [(j, bx[frame]) for j, bx in enumerate(gt_boxes) if frame in bx]
        matches = frame_matching([b for _, b in ps], [b for _, b in gs], cfg.iou_threshold)
        tp += len(matches)
        fp += len(ps) - len(matches)
        fn += len(gs) - len(matches)
        for r, c in matches:
            key = (ps[r][0], gs[c][0])
            pair_tpa[key] = pair_tpa.get(key, 0) + 1

    pred_present = [len(bx) for bx in pred_boxes]
    gt_present = [len(bx) for bx in gt_boxes]
    matched_pred = [0] * len(preds)
    for (pi, gi), tpa in pair_tpa.items():
        matched_pred[pi] += tpa

    all_pairs = list(pair_tpa)
    tp_all, ass_all, cls_all = _pair_scores(all_pairs, pair_tpa, pred_present,
                                            gt_present, pred_label, gt_cat)
    overall = _make_scores(tp_all, fp, fn, ass_all, cls_all)

    per_split = {}
    for split in ("base", "novel"):
        gt_in = {gi for gi in range(len(gts)) if cfg.splits.get(gt_cat[gi]) == split}
        pairs = [(pi, gi) for (pi, gi) in all_pairs if gi in gt_in]
        tp_s, ass_s, cls_s = _pair_scores(pairs, pair_tpa, pred_present,
                                          gt_present, pred_label, gt_cat)
        fn_s = sum(gt_present[gi] for gi in gt_in) - tp_s
        pred_in = {pi for (pi, gi) in pairs}
        fp_s = sum(pred_present[pi] - matched_pred[pi] for pi in pred_in)
        per_split[split] = _make_scores(tp_s, fp_s, fn_s, ass_s, cls_s)
    return EvalReport(overall=overall, base=per_split["base"], novel=per_split["novel"])
