"""Pilot: reference-scale training run to tune lr/episodes for the smoke gate."""
import sys, time
import numpy as np
from osfa.synth import GenConfig, generate_dataset
from osfa.data import sample_episode
from osfa.engine import TrainConfig, Seeds, train, make_sigma
from osfa.metrics import evaluate, SEEN_THRESHOLDS
from osfa.detector import init_detector_params
from osfa.engine import load_checkpoint_params
from osfa import engine

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 0.05
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 10
episodes = int(sys.argv[3]) if len(sys.argv) > 3 else 100
opt = sys.argv[4] if len(sys.argv) > 4 else "sgd"

t0 = time.time()
ds = generate_dataset(GenConfig(n_seen=20, n_unseen=10, train_pages=200, test_pages=60, seed=0))
print(f"dataset: {time.time()-t0:.1f}s; test counts: {sorted(ds.counts['test'].values(), reverse=True)}")

cfg = TrainConfig(epochs=epochs, episodes_per_epoch=episodes, learning_rate=lr,
                  optimizer=opt, aug_variant="channel", seeds=Seeds(0, 1, 2))
t0 = time.time()
rec = train(cfg, ds, "/tmp/pilot_run")
t_train = time.time() - t0
print(f"train {epochs}x{episodes}: {t_train:.0f}s")
print("loss curve:", [round(v, 3) for v in rec.loss_curve])

params, sigma = load_checkpoint_params("/tmp/pilot_run/checkpoint.osfa", cfg.detector)
t0 = time.time()
res = evaluate(params, sigma, ds, "seen", [0], cfg.detector, query_seed=0)
print(f"eval: {time.time()-t0:.0f}s")
print("per-class AP:", {k: round(v, 2) for k, v in sorted(res.per_class_ap50.items())})
print("seen thr=0 mean AP50:", res.thresholded[0])
print("sigma:", np.round(sigma.values.data, 3))
