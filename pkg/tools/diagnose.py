"""Where does detection quality break: proposal recall or score ranking?"""
import numpy as np
from osfa.synth import GenConfig, generate_dataset
from osfa.data import query_pool
from osfa.engine import TrainConfig, load_checkpoint_params
from osfa.detector import detect, query_feature, extract_features, match_features, propose
from osfa.boxes import iou_matrix
from osfa.augment import augment_query

ds = generate_dataset(GenConfig(n_seen=20, n_unseen=10, train_pages=200, test_pages=60, seed=0))
cfg = TrainConfig().detector
params, sigma = load_checkpoint_params("/tmp/pilot_run/checkpoint.osfa", cfg)
pool = query_pool(ds, "test", 0)

# 1) RPN proposal recall at IoU 0.5 over test pages (class-conditioned)
hits, total = 0, 0
score_same, score_other = [], []
for cid in sorted(pool)[:8]:
    ref = pool[cid]
    for page in ds.pages["test"][:25]:
        gt = np.array([i.box for i in page.instances if i.class_id == cid])
        other = np.array([i.box for i in page.instances if i.class_id != cid])
        fq = query_feature(ref.patch, params, cfg)
        ft = extract_features(page.image, params, cfg)
        sim = match_features(fq, ft, cfg)
        props = propose(sim, params, cfg, image_hw=page.image.shape)
        boxes = np.array([p.box for p in props]) if props else np.zeros((0, 4))
        if len(gt) and len(boxes):
            m = iou_matrix(boxes, gt)
            hits += int((m.max(axis=0) >= 0.5).sum())
        total += len(gt)
        # 2) do final detections score same-class boxes above other-class?
        dets = detect(ref.patch, page.image, params, sigma, "infer", cfg)
        for d in dets:
            db = np.array(d.box)[None, :]
            if len(gt) and iou_matrix(db, gt).max() >= 0.5:
                score_same.append(d.score)
            elif len(other) and iou_matrix(db, other).max() >= 0.5:
                score_other.append(d.score)
print(f"RPN+refine proposal recall@0.5 (top-100): {hits}/{total} = {hits/max(total,1):.2f}")
print(f"scores on same-class boxes: n={len(score_same)} mean={np.mean(score_same) if score_same else 0:.3f}")
print(f"scores on other-class boxes: n={len(score_other)} mean={np.mean(score_other) if score_other else 0:.3f}")
