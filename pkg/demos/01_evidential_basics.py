"""A tour of the evidential layer on a single output element.

Four hyperparameters (gamma, nu, alpha, beta) describe a Normal-Inverse-
Gamma belief over a Gaussian's mean and variance. Everything else is
closed form: the point prediction, the aleatoric/epistemic split, the
Student-t predictive distribution, and equal-tailed predictive intervals.
"""

import numpy as np

from evisurro import evidential as ev
from evisurro.special import student_t_logpdf

m = ev.EvidentialParams(gamma=0.3, nu=2.0, alpha=3.0, beta=0.8)
print("hyperparameters:", m)
print(f"prediction  E[mu]      = {ev.predict_mean(m):.4f}")
print(f"aleatoric   E[sigma^2] = {ev.aleatoric(m):.4f}")
print(f"epistemic   Var[mu]    = {ev.epistemic(m):.4f}")
print(f"ratio epistemic/aleatoric = 1/nu = {ev.epistemic(m) / ev.aleatoric(m):.4f}")

dist = ev.predictive_dist(m)
print(f"\npredictive Student-t: loc={dist.loc}, scale={float(dist.scale):.4f}, "
      f"df={float(dist.df)}")

# The NLL used in training is exactly the negative predictive log-density.
y = 0.8
print(f"\nNLL at y={y}: {ev.nll_loss(m, y):.6f}")
print(f"-log St(y):  {-student_t_logpdf(y, dist):.6f}  (identical by marginalization)")

# Intervals nest as confidence grows.
print("\nraw predictive intervals:")
for delta in (0.32, 0.10, 0.05, 0.01):
    iv = ev.raw_interval(m, delta)
    print(f"  {iv.confidence:4.0%}: [{float(iv.lo):+.4f}, {float(iv.hi):+.4f}]"
          f"  width {float(iv.width):.4f}")

# The three loss terms react differently to a confident miss.
w = ev.LossWeights(lambda_reg=0.01, xi_reg=0.05)
print("\nloss anatomy as the residual grows:")
for y in (0.3, 0.6, 1.5):
    print(f"  y={y:+.1f}: nll={ev.nll_loss(m, y):+.4f}"
          f"  reg={ev.reg_loss(m, y):.4f}  u={ev.u_loss(m, y):.4f}"
          f"  total={ev.total_loss(m, y, w):+.4f}")

# Analytic gradients drive training; check one against finite differences.
g = ev.loss_gradients(m, 0.9, w)
step = 1e-6
m_hi = ev.EvidentialParams(m.gamma, m.nu, m.alpha + step, m.beta)
m_lo = ev.EvidentialParams(m.gamma, m.nu, m.alpha - step, m.beta)
fd = (ev.total_loss(m_hi, 0.9, w) - ev.total_loss(m_lo, 0.9, w)) / (2 * step)
print(f"\nd(total)/d(alpha): analytic {g[2]:+.8f}  finite-diff {fd:+.8f}")
