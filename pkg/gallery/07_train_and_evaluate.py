"""Short training run on synthetic scenes with disjoint train/val categories.

Run: python3 gallery/07_train_and_evaluate.py [EPOCHS] [N_TRAIN]
"""
import sys

from ssdcount.data import split_configs, synth_dataset
from ssdcount.train import TrainConfig, evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3
n = int(sys.argv[2]) if len(sys.argv) > 2 else 16
tc, vc = split_configs()
tr, va = synth_dataset(tc, n, seed=1), synth_dataset(vc, 8, seed=2)

cfg = TrainConfig(epochs=epochs)
res = train(cfg, tr, va, log_fn=lambda e: print(
    f"epoch {e['epoch']:>2}  train MAE {e['train_mae']:.2f}  val MAE {e['val_mae']:.2f}  "
    f"OT iters {e.get('ot_iterations_mean', 0):.0f}"))
rep = evaluate(res.model, va)
print("val (gt, predicted):", [(g, round(p, 1)) for g, p in rep.per_sample])
