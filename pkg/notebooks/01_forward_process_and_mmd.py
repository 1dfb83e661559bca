# %% [markdown]
# # Forward process and the batch MMD term
#
# The noise schedule, the closed-form marginal against step-by-step noising,
# and why the batch MMD loss never exceeds the per-sample denoising loss.

# %%
import numpy as np

from dmsynth.diffusion import forward_marginal_sample, forward_step_sample, make_schedule
from dmsynth.matching import batch_mmd_loss, mmd_sq_linear, mmd_sq_rbf

s = make_schedule()  # T = 200, beta 1e-4 .. 0.02
print("T", s.T, "alpha_bar_T", s.alpha_bar[-1])

# %% [markdown]
# Noise a fixed point 200 times, one step at a time, and compare with a
# single draw from the closed form at t = T.

# %%
rng = np.random.default_rng(0)
n, x0 = 20_000, np.array([1.0, -2.0])
x = np.tile(x0, (n, 1))
for t in range(1, s.T + 1):
    x = forward_step_sample(s, x, t, rng.standard_normal(x.shape))
closed = forward_marginal_sample(s, np.tile(x0, (n, 1)), s.T, rng.standard_normal((n, 2)))
print("step-by-step mean", x.mean(axis=0), "var", x.var(axis=0))
print("closed form  mean", closed.mean(axis=0), "var", closed.var(axis=0))
print("expected     mean", np.sqrt(s.alpha_bar[-1]) * x0, "var", 1 - s.alpha_bar[-1])

# %% [markdown]
# The batch MMD loss is the squared norm of the mean residual, so by Jensen it
# sits below the mean squared residual. Identical residuals give equality;
# antisymmetric ones cancel to zero.

# %%
r = rng.standard_normal((64, 2))
print("batch mmd", batch_mmd_loss(r), "<= mean sq", np.mean(np.sum(r * r, axis=1)))
print("identical rows", batch_mmd_loss(np.tile(r[:1], (8, 1))), r[0] @ r[0])
print("antisymmetric", batch_mmd_loss(np.vstack([r[:4], -r[:4]])))

# %% [markdown]
# Two-sample estimators on shifted Gaussians: both grow with the shift.

# %%
a = rng.standard_normal((500, 2))
for shift in (0.0, 0.5, 1.0, 2.0):
    b = rng.standard_normal((500, 2)) + [shift, 0]
    print(f"shift {shift:.1f}  linear {mmd_sq_linear(a, b):.4f}  rbf {mmd_sq_rbf(a, b, 1.0):.4f}")
