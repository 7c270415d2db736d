"""Small end-to-end walk-through of the three training stages using the library API.

Runs in under a minute on a laptop. The full-size pipeline is driven by the
`dkroot` command instead (see README).

    python3 demos/walkthrough.py
"""

import numpy as np

from dkroot.contrastive import EncoderConfig, PretrainConfig, embed, epoch_means, pretrain
from dkroot.dataset import fit_zscore, split_dataset, zscore_fit_transform
from dkroot.diffusion import DiffusionConfig, ViewPolicy, augment_pair, train_diffusion
from dkroot.finetune import Ablation, AblationData, FinetuneConfig, predict, train_ablation
from dkroot.metrics import PointCloud, accuracy, silhouette
from dkroot.synth import make_expert_pool, make_rule_pool

# Two label sources: many rule-labeled samples (noisy) and a few expert-labeled ones.
rule = make_rule_pool(400, seed=0)
expert = make_expert_pool(90, seed=0)
train, val, test = split_dataset(expert, (0.6, 0.2, 0.2), seed=0)
print(f"rule pool {len(rule)}, expert train/val/test {len(train)}/{len(val)}/{len(test)}")
print(f"rule labels agree with the generator on {np.mean(rule.labels == rule.meta['true_labels']):.1%}")

# z-score with statistics from the training data only
stats = fit_zscore(np.concatenate([rule.values, train.values]))
rule, train, val, test = (zscore_fit_transform(d, stats) for d in (rule, train, val, test))

# Stage I: label-conditioned noise predictor on expert samples
dcfg = DiffusionConfig(epochs=40, channels=(16, 32), embed_dim=8)
pred, schedule, losses = train_diffusion(train, dcfg)
print(f"diffusion loss {losses[0]:.3f} -> {losses[-1]:.3f}")

rng = np.random.default_rng(0)
weak, strong = augment_pair(test.values[:5], test.labels[:5], ViewPolicy(), pred, schedule, rng)
dist = lambda v: np.sqrt(((v - test.values[:5]) ** 2).sum(axis=(1, 2))).mean()
print(f"mean L2 from the original: weak view {dist(weak):.2f}, strong view {dist(strong):.2f}")

# Stage II: supervised contrastive pretraining on the rule-labeled pool
small = EncoderConfig(channels=(16, 32, 32))
pcfg = PretrainConfig(epochs=15, batch_size=64, encoder=small)
encoder, trace = pretrain(rule, pred, schedule, ViewPolicy(), pcfg)
per_epoch = epoch_means(trace)
print(f"pretrain loss per epoch {per_epoch[0]:.3f} -> {per_epoch[-1]:.3f}")
sil = silhouette(PointCloud(embed(test.values, encoder), test.labels))
print(f"silhouette of test embeddings after pretraining {sil:.3f}")

# Stage III: fine-tune on the expert labels, next to two baselines.
# With 18 test samples the ordering here is noise; `dkroot run all --seeds 5`
# gives the full-size comparison on a 600-sample test pool.
data = AblationData(train, val, rule, encoder)
for mode in (Ablation.DKROOT_FULL, Ablation.CNN_EXP, Ablation.FT_LINEAR):
    r = train_ablation(mode, data, FinetuneConfig(epochs=30, seed=0), encoder_config=small)
    acc = accuracy(predict(test.values, r.encoder, r.head), test.labels)
    print(f"{mode.value:12s} held-out expert accuracy {acc:.3f} (best epoch {r.best_epoch})")
