"""Short ablation over the nine lambda groups on a tiny synthetic set.

    python demos/06_ablation.py

The numbers after a handful of epochs say little about the groups; this
shows the mechanics. Use ``hfcn ablate`` with more epochs for a real run.
"""
import tempfile

from hfcn import cli, dataio
from hfcn.model import HfcnConfig
from hfcn.objective import LAMBDA_GROUPS

with tempfile.TemporaryDirectory() as tmp:
    manifest = dataio.gen_synthetic(tmp, count=10, size=32, num_classes=3, seed=0)
    cfg = HfcnConfig(num_classes=3, widths=(4, 4, 8, 8, 8), convs_per_block=(1, 1, 1, 1, 1), height=32, width=32)
    rows = cli.run_ablation(manifest, list(LAMBDA_GROUPS), cfg, epochs=5, lr=1e-3, batch=4, momentum=0.9, seed=0)
    print(cli.format_ablation(rows))
