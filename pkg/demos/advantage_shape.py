"""How much push each response gets, as a function of how confidently it is ranked.

A group-relative advantage is the same for every correct response. The
pairwise logistic advantage shrinks for a correct response that already
outranks the incorrect ones, and grows for one that is ranked below them.
"""

import numpy as np

from capo import advantage_curve, capo_advantage, grpo_advantage

print("gap = lpm(correct) - lpm(incorrect); magnitude of the pair's advantage, tau = 0.6")
for gap, mag in advantage_curve(-3.0, 3.0, 7, 0.6):
    print(f"  gap {gap:+.1f}  {mag:.3f}  {'#' * round(40 * mag)}")

lpms = np.array([-0.2, -1.5, -0.4, -2.5])
rewards = np.array([1, 1, 0, 0])
print("\none group: two correct and two incorrect responses")
print("  lpm      ", lpms)
print("  reward   ", rewards)
print("  GRPO     ", grpo_advantage(rewards))
print("  CAPO     ", capo_advantage(lpms, rewards, 0.6).round(3))
print("The unconfident correct answer (lpm -1.5) and the confident wrong one (-0.4)")
print("receive the largest updates; the already well-ranked pair is left mostly alone.")
