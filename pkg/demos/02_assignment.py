"""How balanced are the four randomisation rules?

For each rule, assign 1000 units in four strata many times and look at the
within-stratum imbalance D(s) = sum (A - 1/2) scaled by sqrt(n). Its variance
is the gamma(s) that enters the analytic standard error.
"""

import numpy as np

from carq import SchemeSpec, gamma_of
from carq.assign import assign_from_uniforms

rng = np.random.default_rng(7)
B, n = 400, 1000
s = rng.integers(1, 5, (B, n))
u = rng.random((B, n))
share = 0.25

print("rule  Var(D(1)/sqrt(n))  p(s)*gamma   max|D(1)|")
for kind in ("srs", "wei", "bcd", "sbr"):
    a = assign_from_uniforms(SchemeSpec(kind), s, u)
    d = ((a - 0.5) * (s == 1)).sum(axis=1)
    print(f"{kind:4s}  {np.var(d / np.sqrt(n)):17.4f}  {share * gamma_of(SchemeSpec(kind)):10.4f}"
          f"   {np.abs(d).max():8.1f}")
