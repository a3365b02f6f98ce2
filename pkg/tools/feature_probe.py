"""Are backbone instance features class-separable? Nearest-prototype test."""
import numpy as np
from osfa.synth import GenConfig, generate_dataset
from osfa.engine import TrainConfig, load_checkpoint_params
from osfa.detector import extract_features, roi_align
from osfa.tensor import Rng

ds = generate_dataset(GenConfig(n_seen=20, n_unseen=10, train_pages=200, test_pages=60, seed=0))
cfg = TrainConfig().detector
params, sigma = load_checkpoint_params("/tmp/pilot_run/checkpoint.osfa", cfg)

# collect pooled (GAP over roi_align K=7 pre-projection) per test instance
feats, labels = [], []
for page in ds.pages["test"]:
    ft = extract_features(page.image, params, cfg)
    for inst in page.instances:
        f = roi_align(ft, inst.box, 7, cfg.stride).data.mean(axis=(1, 2))
        feats.append(f / max(np.linalg.norm(f), 1e-9))
        labels.append(inst.class_id)
feats = np.array(feats); labels = np.array(labels)
print("instances:", len(labels), "classes:", len(set(labels.tolist())))

# leave-one-out nearest neighbor by cosine
sims = feats @ feats.T
np.fill_diagonal(sims, -np.inf)
nn = sims.argmax(axis=1)
acc = (labels[nn] == labels).mean()
print(f"1-NN cosine accuracy: {acc:.3f} (chance ~ {1/len(set(labels.tolist())):.3f})")

# also same-class vs diff-class cosine stats
same, diff = [], []
for i in range(len(labels)):
    for j in range(i+1, len(labels)):
        (same if labels[i]==labels[j] else diff).append(sims[i,j] if i!=j else 0)
print(f"mean same-class cos {np.mean(same):.3f}, diff-class cos {np.mean(diff):.3f}")
