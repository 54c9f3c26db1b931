"""Generate synthetic shapes, overfit a small model on them, save and reload.

    python demos/05_train.py [out_dir]

Uses reduced widths so it finishes in about a minute.
"""
import sys
from pathlib import Path

from hfcn import dataio
from hfcn.model import HfcnConfig, forward, predict
from hfcn.trainer import TrainConfig, evaluate, load_checkpoint, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
manifest = dataio.gen_synthetic(out / "data", count=8, size=64, num_classes=4, seed=0)
print("classes:", manifest.classes)

cfg = HfcnConfig(num_classes=4, widths=(8, 16, 32, 32, 32), convs_per_block=(2, 2, 2, 2, 2), height=64, width=64)
tc = TrainConfig(lr=1e-3, batch_size=4, epochs=150, seed=0, checkpoint=str(out / "model.ckpt"), eval_every=50)
ckpt, lines = train(cfg, tc, manifest, log_path=out / "train.log")
for line in lines[::50] + [lines[-1]]:
    print(line)

report = evaluate(ckpt.params, dataio.Dataset(manifest, "train"))
print(report.to_text())

# the reloaded checkpoint predicts the same labels
again = load_checkpoint(out / "model.ckpt")
img = dataio.decode_image(manifest.pairs("train")[0][0])
labels = predict(forward(again.params, img))
dataio.export_colorized(out / "pred0.ppm", labels[0], manifest.palette, manifest.ignore_index)
print("wrote", out / "pred0.ppm")
