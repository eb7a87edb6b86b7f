"""Train a small evidential surrogate and inspect what it learned.

The network maps simulation parameters to a four-channel NIG field.
Targets are min-max normalized to [-1, 1] over the training split (the
tanh head lives there); predictions come back in original units.
"""

import numpy as np

from evisurro import data as dat
from evisurro import metrics as mx
from evisurro import training as tr
from evisurro.network import NetConfig

spec = dat.SimulatorSpec(d=3, grid_shape=(16, 16), noise_model="heteroscedastic", seed=0)
ds = dat.generate_dataset(spec, n_train=64, n_cal=32, n_test=16, seed=3)

net_config = NetConfig(input_dim=3, hidden_sizes=(48, 96), grid_shape=(16, 16), seed=0)
train_config = tr.TrainConfig(epochs=150, batch_size=16, seed=0)
ckpt = tr.fit(ds, net_config, train_config)

print(f"epoch-mean loss: {ckpt.loss_history[0]:.4f} (first)"
      f" -> {ckpt.loss_history[-1]:.4f} (last)")
print(f"normalization: [{ckpt.transform.y_min:.3f}, {ckpt.transform.y_max:.3f}] -> [-1, 1]")

test = ds.split("test")
x = np.stack([m.params for m in test])
truth = np.stack([m.field for m in test]).astype(np.float64)
summary = ckpt.predict(x)
pred = np.asarray(summary.prediction)

train_fields = np.stack([m.field for m in ds.split("train")]).astype(np.float64)
data_range = float(train_fields.max() - train_fields.min())
psnrs = [mx.psnr(pred[i], truth[i], data_range) for i in range(len(test))]
ssims = [mx.ssim(pred[i], truth[i], data_range) for i in range(len(test))]
print(f"\ntest PSNR: mean {np.mean(psnrs):.2f} dB, SSIM: mean {np.mean(ssims):.4f}")

# Does predicted aleatoric variance track the simulator's noise field?
sigma_true = np.stack([m.truth_noise_var for m in test]).astype(np.float64)
corr = mx.correlation_report(np.asarray(summary.aleatoric), sigma_true)
print(f"aleatoric vs true noise variance: voxel-level corr {corr.voxel_level:.3f}")

# Does predicted epistemic variance track where the model is wrong?
err = np.abs(pred - truth)
corr_e = mx.correlation_report(np.asarray(summary.epistemic), err)
print(f"epistemic vs |error|: voxel {corr_e.voxel_level:.3f},"
      f" member {corr_e.member_level:.3f}")
