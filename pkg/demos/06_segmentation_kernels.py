# Focal, Dice and combined losses, the SCSE skip recalibration and mask metrics.
import numpy as np

from dmhclust.seg_ops import (CombinedLossConfig, FocalParams, SCSEParams, combined_loss,
                              focal_loss, mask_metrics, scse_attention, scse_recalibrate)

rng = np.random.default_rng(0)
target = np.zeros((16, 16))
target[5:8, 6:9] = 1  # a small lesion
good = np.clip(target * 0.9 + rng.uniform(0, 0.1, target.shape), 0, 1)
bad = rng.uniform(0, 1, target.shape)

for name, pred in (("good", good), ("noisy", bad)):
    total, parts = combined_loss(pred, target, CombinedLossConfig())
    print(f"{name:5s} focal {parts['focal']:.4f} dice {parts['dice']:.4f} combined {total:.4f}")

# gamma = 0 and alpha = 0.5 reduce focal loss to half the cross-entropy
p = np.clip(bad, 1e-7, 1 - 1e-7)
bce = -np.mean(target * np.log(p) + (1 - target) * np.log(1 - p))
print("focal(gamma=0, alpha=0.5) =", focal_loss(bad, target, FocalParams(0.5, 0.0)), " 0.5*BCE =", bce / 2)

f_e, f_d = rng.standard_normal((2, 8, 8, 4))
params = SCSEParams.random(4, reduction=2, seed=1)
fused, channel, spatial = scse_attention(f_e, f_d, params)
print("channel attention:", np.round(channel, 3))
print("spatial attention range:", spatial.min().round(3), spatial.max().round(3))
print("output shape:", scse_recalibrate(f_e, f_d, params).shape)

iou, acc, prec, rec = mask_metrics((good >= 0.5).astype(float), target)
print(f"IoU {iou:.3f} accuracy {acc:.3f} precision {prec:.3f} recall {rec:.3f}")
