"""The objectives and schedules, one by one, on small hand-made tensors.

Walks through the adversarial losses (domain map + class-conditional maps),
the segmentation losses (cross-entropy and its symmetric, noise-robust
variant), the identity and consistency terms, and the fade / EMA schedules
that glue the phases together.
"""

import torch

from segadapt import losses
from segadapt.data import onehot_encode
from segadapt.training import Schedule, ema_update, lambda_fade

torch.manual_seed(0)

# --- segmentation losses -----------------------------------------------
# uniform logits score ln K; a confident correct prediction scores ~0
import math
import numpy as np

y = torch.as_tensor(onehot_encode(np.array([[0, 1], [2, 3]]), 4))
uniform = torch.zeros(2, 2, 4)
confident = (y * 40.0) - 20.0
print(f"seg_ce(uniform)   = {losses.seg_ce(uniform, y):.4f}  (ln 4 = {math.log(4):.4f})")
print(f"seg_ce(confident) = {losses.seg_ce(confident, y):.2e}")

# the symmetric variant adds a reverse term that caps how much one wrong
# pseudo-label can hurt; with beta=0 it reduces to the plain cross-entropy
noisy = confident.clone()
print(f"sym_ce            = {losses.sym_ce(noisy, y):.4f}")
print(f"sym_ce(beta=0)    = {losses.sym_ce(noisy, y, beta=0.0):.2e}")

# --- adversarial losses -------------------------------------------------
# the domain map is pushed to 1 on real and 0 on translated pixels; the
# class-conditional maps receive feedback only where the labels say so
d_fake = torch.full((4, 4), 0.3)
d_real = torch.full((4, 4), 0.8)
print(f"\ndgan_loss_d mean  = {losses.dgan_loss_d(d_fake, d_real).mean():.4f}")
print(f"dgan_loss_g mean  = {losses.dgan_loss_g(d_fake).mean():.4f}")

y5 = torch.as_tensor(onehot_encode(np.random.default_rng(0).integers(0, 5, (4, 4)), 5))
fake_cls = torch.rand(4, 4, 5)
real_cls = torch.rand(4, 4, 5)
cmap = losses.cgan_loss_d(fake_cls, y5, real_cls, y5)
print(f"cgan_loss_d is zero off-label: {bool((cmap * (1 - y5) * (1 - y5)).sum() == 0)}")

# totals follow the sum-over-pixels / divide-by-HW convention
dmap = losses.dgan_loss_d(d_fake, d_real)
cmap4 = losses.cgan_loss_d(torch.rand(4, 4, 5), y5, torch.rand(4, 4, 5), y5)
gan_sum = losses.gan_total(dmap, cmap4, lambda_cgan=0.3, k=5)
print(f"disc_total        = {losses.disc_total(torch.tensor(0.0), gan_sum, 4, 4):.4f}")

# --- identity + consistency --------------------------------------------
x = torch.rand(8, 8, 3) * 2 - 1
print(f"\nidentity_loss(x, x)        = {losses.identity_loss(x, x):.1f}")
print(f"identity_loss(x + .5, x)   = {losses.identity_loss(x + 0.5, x):.1f}  (= H*W*3*0.5)")

teacher = torch.randn(8, 8, 5)
student = teacher + 0.1 * torch.randn(8, 8, 5)
print(f"consistency_loss           = {losses.consistency_loss(teacher, student):.5f}")

# --- schedules -----------------------------------------------------------
sched = Schedule(fade_start=20, fade_end=100, lambda_max=0.3)
print("\nfade:", {s: round(lambda_fade(s, sched), 3) for s in (0, 20, 60, 100, 500)})

teacher_p = {"w": np.array([1.0])}
student_p = {"w": np.array([0.0])}
for _ in range(3):
    teacher_p = ema_update(teacher_p, student_p, decay=0.999)
print(f"teacher weight after 3 EMA steps toward 0: {teacher_p['w'][0]:.6f}")
