"""Evidential surrogate modeling with conformally calibrated intervals.

Subpackages by concern:

- ``special``: log-gamma / incomplete-beta / Student-t kernels
- ``evidential``: NIG hyperparameters, estimators, losses, gradients
- ``network``: dense evidential regressor with exact backprop
- ``training``: Adam loop, normalization, checkpoints
- ``data``: synthetic ensemble simulators and dataset persistence
- ``conformal``: split conformal calibration and coverage audits
- ``metrics``: PSNR / SSIM / correlation evaluation
- ``cli`` / ``server``: pipeline entry points
"""

__version__ = "0.1.0"
