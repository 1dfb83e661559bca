# %% [markdown]
# # Generalization bound and membership inference
#
# The finite-class bound against a Monte Carlo estimate, then the
# likelihood-ratio attack on hand-made confidences and on a small
# direct-versus-synthetic experiment.

# %%
import math

import numpy as np

from dmsynth.privacy import (
    LiraVariant, MiaConfig, ShadowEnsemble, fit_lira, lira_score, roc_low_fpr, run_mia_experiment,
)
from dmsynth.taskbench import BenchConfig, ClassifierConfig, GeneratorConfig, TaskSpec
from dmsynth.theory import BoundParams, FiniteClassExperiment, bound_violation_mc, gen_bound

print("bound, |F| = 50, delta = .05, |S| = 500:", gen_bound(BoundParams(math.log(50), 0.05, 500)))
for t in (0.05, 0.1, 0.15):
    res = bound_violation_mc(FiniteClassExperiment(), 500, t, 500, seed=0)
    print(f"t = {t}: violation rate {res.empirical_rate:.3f}, cap {res.analytic_cap:.3f}")

# %% [markdown]
# LiRA on synthetic confidences: members sit half a unit higher in logit
# space. Each point has 8 shadow models, half trained with it.

# %%
rng = np.random.default_rng(0)
n, k = 400, 8
member = np.arange(n) < n // 2
shadow_in = rng.permuted(np.tile(np.arange(k) < k // 2, (n, 1)), axis=1).T  # exactly half IN per point
base = rng.normal(2.0, 1.0, n)
shadow_conf = base + 0.5 * shadow_in + 0.3 * rng.standard_normal((k, n))
target_conf = base + 0.5 * member + 0.3 * rng.standard_normal(n)
ens = ShadowEnsemble(shadow_in, shadow_conf)
for v in LiraVariant:
    scores = lira_score(target_conf, fit_lira(ens, v), v)
    roc = roc_low_fpr(scores, member, 0.01)
    print(f"{v.value:15s} TPR at 1% FPR {roc.tpr_at_target:.3f}")

# %% [markdown]
# A small end-to-end run: shadows and target classifiers on a 20-D task with
# overlapping classes. Budgets are far below the defaults, so expect a weak
# signal; the full-size run lives in the acceptance tests.

# %%
bench = BenchConfig(
    generator=GeneratorConfig(hidden=(32, 32), encoder_epochs=2, pretrain_steps=200, finetune_steps=100),
    classifier=ClassifierConfig(epochs=20),
)
spec = TaskSpec(dim=20, separation=1.0, n_train=400, n_test=400, n_pretrain=400, ood_shift=None)
for arm in ("direct", "synthetic"):
    rep = run_mia_experiment(spec, MiaConfig(num_shadows=4, arm=arm, seeds=(0,), pool_size=200,
                                             epoch_multiplier=5, bench=bench))
    print(arm, "TPR at 0.1% FPR", rep.tprs, "shuffled", rep.shuffled_tprs)
