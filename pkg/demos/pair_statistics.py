"""
============================
Testing a pair of conditions
============================

How a single condition pair is judged: the co-occurrence table, the
two-sided Fisher exact test, the Bonferroni correction and the binomial
test that decides which condition tends to come first.
"""

# %%
# Co-occurrence and the Fisher test
# ---------------------------------

from datetime import date, timedelta

from mltctraj.cohort import FirstDiagnosisSequence, Stratum
from mltctraj.pairstats import (ContingencyTable, binomial_direction_test,
                                bonferroni_adjust, fisher_exact_two_sided,
                                significant_pairs)

table = ContingencyTable(n11=8, n10=2, n01=1, n00=9)
print("Fisher p for", table, "=", fisher_exact_two_sided(table))   # 23/4199

# %%
# Bonferroni over m tests multiplies each p by m and caps at one; a pair
# is significant when the adjusted value is strictly below alpha.

for adj, sig in bonferroni_adjust([1e-6, 2e-4, 0.03], alpha=0.001):
    print(f"adjusted {adj:.2e}  significant={sig}")

# %%
# Direction
# ---------
#
# Among co-affected patients whose two first diagnoses are at least half a
# year apart, count who had A first and who had B first.

for fwd, bwd in [(9, 1), (15, 15), (40, 5)]:
    p, direction = binomial_direction_test(fwd, bwd)
    print(f"{fwd:2d} vs {bwd:2d}: p = {p:.4g}  -> {direction}")

# %%
# The same thing on a toy stratum
# -------------------------------
#
# 60 patients get condition 1 then condition 2 about a year later; 140
# have neither.  One candidate pair, so Bonferroni leaves p unchanged.

start = date(2005, 1, 1)
seqs = {}
for i in range(200):
    entries = ()
    if i < 60:
        entries = ((1, start + timedelta(days=i)), (2, start + timedelta(days=400 + i)))
    seqs[f"p{i:03d}"] = FirstDiagnosisSequence(f"p{i:03d}", entries)
stratum = Stratum("female", "ge_45", frozenset(seqs))
for pair in significant_pairs(stratum, seqs):
    print(pair.c1, pair.c2, pair.table, f"p_adj={pair.adjusted_p:.3g}",
          pair.direction, "significant" if pair.significant else "")
