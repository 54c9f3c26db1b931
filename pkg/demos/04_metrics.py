"""Confusion-matrix metrics on a hand-made prediction.

    python demos/04_metrics.py
"""
import numpy as np

from hfcn.metrics import ConfusionMatrix

gt = np.zeros((8, 8), int)
gt[:, 4:] = 1
gt[6:, :2] = 2
pred = gt.copy()
pred[:, 4] = 0      # a column of class 1 called background
pred[0, 0] = 255    # ignored in the ground truth below
gt[0, 0] = 255

cm = ConfusionMatrix(3, ignore_index=255)
cm.accumulate(pred, gt)
print("rows = truth, columns = prediction")
print(cm.counts)
print(cm.report().to_text())
