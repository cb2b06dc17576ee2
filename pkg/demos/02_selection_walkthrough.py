"""The batch objective and greedy selection, step by step.

Two word groups: group 'a' has error decaying as 1/n, group 'b' is stuck at
a flat 0.5 (irreducible noise). Both are equally common in the corpus.
A good selector spends its budget on 'a' sentences: their error still
responds to labels, while 'b' gains nothing.
"""

import numpy as np

from groupdecay.corpus import Sentence, Token
from groupdecay.decay import DecayFit, DecayParams
from groupdecay.partition import build_identity_partition
from groupdecay.selection import SelectionState, edg_score, objective, select_batch


def sent(i, words):
    return Sentence(id=i, tokens=tuple(Token(surface=w) for w in words))


pool = [sent(0, ["a"]), sent(1, ["b"]), sent(2, ["a", "a"]), sent(3, ["b", "b"])]
partition = build_identity_partition(pool)

# fitted curves: e_a(n) = 1/n (b=1, a1=1, a0=1), e_b(n) = 0.5 flat
params = DecayParams(
    a0=1.0, a_half=0.0, a1=1.0, a2=0.0, a3=0.0,
    b=np.array([1.0, 0.0]), c=np.array([0.0, 0.5]),
)
state = SelectionState(
    partitions=[partition],
    fits=[DecayFit(params=params, history=[], objective_value=0.0, converged=True)],
    train_mass=[np.array([1.0, 1.0])],   # one labeled token of each word so far
    da_mass=[np.array([10.0, 10.0])],    # equal corpus presence
    token_budget=3,
    epsilon=1e-3,
)

print(f"objective before selection: H = {objective(state, 0):.2f}")
print("  group a contributes -e_a(1)*10 = -10, group b -0.5*10 = -5\n")

for s in pool:
    print(f"sentence {s.id} {[t.surface for t in s.tokens]}: "
          f"score = {edg_score(state, s):.4f}")

batch = select_batch(state, pool)
print(f"\ngreedy batch at budget 3 tokens: sentences {batch.sentence_ids} "
      f"({batch.token_count} tokens)")
print(f"objective after selection: H = {objective(state, 0):.2f}")
print("all budget went to group 'a'; the flat group scores only epsilon")
