"""Dropping responses the reference model finds implausible keeps entropy in check.

Runs CAPO with and without the reference-perplexity mask over a few seeds and
compares the final mean policy entropy.
"""

from capo import TaskSpec, TrainConfig, generate_task, pretrain_reference, train

print(f"{'seed':>4} {'masked':>8} {'no mask':>8}  mask thresholds (ppl)")
for seed in range(3):
    task = generate_task(TaskSpec(seed=seed))
    ref = pretrain_reference(task)
    _, with_mask = train(task, ref, TrainConfig(seed=seed))
    _, without = train(task, ref, TrainConfig(seed=seed, mask_enabled=False))
    m = with_mask.mask
    print(f"{seed:>4} {with_mask.final.entropy:>8.3f} {without.final.entropy:>8.3f}  "
          f"keep correct <= {m.ref_high:.2f}, keep incorrect >= {m.ref_low:.2f}; "
          f"{with_mask.column('masked_fraction')[1:].mean():.1%} of responses dropped")
