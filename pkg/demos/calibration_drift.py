"""Reward-only training sharpens confident mistakes; pairwise advantages do not.

Trains GRPO and CAPO from the same reference policy on one toy task and
prints accuracy and ranking calibration (AUC-mean of lpm) as training runs.

    python demos/calibration_drift.py [seed]
"""

import sys

from capo import TaskSpec, TrainConfig, generate_task, pretrain_reference, train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
task = generate_task(TaskSpec(seed=seed))
ref = pretrain_reference(task)
print(f"{task.n_questions} questions, {int(task.hard.sum())} of them hard (the cluster template is a trap)\n")

histories = {algo: train(task, ref, TrainConfig(algo=algo, seed=seed))[1] for algo in ("grpo", "capo")}

print(f"{'step':>5} | {'GRPO acc':>8} {'AUC':>6} | {'CAPO acc':>8} {'AUC':>6}")
for g, c in zip(histories["grpo"].records, histories["capo"].records):
    if g.step % 60 == 0 or g.step == histories["grpo"].final.step:
        print(f"{g.step:>5} | {g.eval_accuracy:>8.3f} {g.auc_mean:>6.3f} | {c.eval_accuracy:>8.3f} {c.auc_mean:>6.3f}")

peak = max(r.auc_mean for r in histories["grpo"].records)
print(f"\nGRPO AUC-mean peaked at {peak:.3f} and finished at {histories['grpo'].final.auc_mean:.3f}.")
print(f"CAPO finished at {histories['capo'].final.auc_mean:.3f} with accuracy {histories['capo'].final.eval_accuracy:.3f}.")
