"""Picking one answer out of many samples: votes weighted by sequence probability.

Each answer's score is the sum of exp(lpm) over the samples that produced it.
A confident minority can beat an unconfident majority.
"""

import numpy as np

from capo import (
    TaskSpec,
    TrainConfig,
    aggregate,
    evaluate,
    generate_task,
    pretrain_reference,
    select_answer,
    train,
)

answers = ["41", "41", "41", "42", "42"]
lpms = [-3.0, -2.8, -3.2, -0.3, -0.4]
for agg in aggregate(answers, lpms):
    print(f"answer {agg.answer_label}: {agg.supporter_count} votes, score {agg.aggregated_confidence:.3f}")
print("selected:", select_answer(answers, lpms), "(majority vote would say 41)\n")

task = generate_task(TaskSpec(seed=1))
ref = pretrain_reference(task)
for algo in ("grpo", "capo"):
    params, _ = train(task, ref, TrainConfig(algo=algo, seed=1))
    rep = evaluate(params, task, n=16, seed=123)
    print(f"{algo}: mean@16 {rep.mean_at_k:.3f}, selected-answer accuracy {rep.tts_accuracy:.3f}, "
          f"precision at half coverage {rep.precision_at(0.5):.3f}")
