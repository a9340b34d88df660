"""The three evaluation protocols on a freshly trained model.

Scores a synthetic test set, then walks through the held-out PR curve,
precision-at-N under the One/Two/All instance-sampling settings, and
Macro F1.
"""

from relattn.config import ModelConfig
from relattn.data import SynthSpec, generate_synthetic
from relattn.evaluation import (PnSetting, gold_facts, hard_predictions, macro_f1, p_at_n,
                                pr_curve, score_test_set)
from relattn.training import train

config = ModelConfig.from_profile("synth", seed=1, epochs=6, batch_size=25)
train_ds = generate_synthetic(SynthSpec(bags_per_relation=60, seed=2), config)
test_ds = generate_synthetic(SynthSpec(bags_per_relation=24, seed=3), config)
print(f"training on {len(train_ds.bags)} bags ...")
model = train(train_ds, config).model

records = score_test_set(test_ds, model)
gold = gold_facts(test_ds)
print(f"\nscored {len(records)} (bag, relation) candidates against "
      f"{len(gold)} gold facts")

points, auc = pr_curve(records, gold)
print(f"\nPR curve: AUC = {auc:.3f}")
for k in (1, 10, 50, 200, len(points)):
    precision, recall = points[k - 1]
    print(f"  rank {k:4d}: precision {precision:.3f}  recall {recall:.3f}")

print("\nP@N with instance subsampling (multi-instance bags only):")
for mode in ("one", "two", "all"):
    sampled = score_test_set(test_ds, model, pn=PnSetting(mode=mode, seed=0))
    row = "  ".join(f"P@{n}={p_at_n(sampled, gold, n):.3f}" for n in (10, 30, 50))
    print(f"  {mode:>4}: {row}")

preds = hard_predictions(test_ds, model)
per_class, macro = macro_f1(preds, test_ds)
print("\nper-class F1 (argmax predictions):")
for cls, precision, recall, f1 in per_class:
    print(f"  {test_ds.relations[cls]:>6}: P={precision:.3f} R={recall:.3f} F1={f1:.3f}")
print(f"  macro F1 = {macro:.3f}")
