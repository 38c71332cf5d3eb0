"""Standard errors and Wald tests for one experiment.

Under a biased-coin design the naive analytic and weighted bootstrap
standard errors of the simple estimator ignore the balance the design
enforces; the adjusted formula and the covariate-adaptive bootstrap do not.
"""

import numpy as np

from carq import DgpSpec, SchemeSpec, generate_sample, qte, se_adjusted, se_naive, wald
from carq.assign import gamma_of
from carq.bootstrap import bootstrap, se_from_draws

scheme = SchemeSpec("bcd")
smp = generate_sample(DgpSpec(1), 400, scheme, np.random.default_rng(11)).sample
tau = 0.5

ses = {
    "s/naive": se_naive(smp, tau, 0.5).se,
    "s/adj": se_adjusted(smp, tau, 0.5, gamma_of(scheme)).se,
}
for kind, tag in (("weighted", "W"), ("ca", "CA")):
    draws = bootstrap(smp, kind, ["sqr", "ipw"], taus=[tau], B=500, seed=3, scheme=scheme)
    for est in ("sqr", "ipw"):
        ses[f"{'s' if est == 'sqr' else est}/{tag}"] = se_from_draws(draws[("qte", est, tau)])

est = {"s": qte(smp, tau, "sqr").value, "ipw": qte(smp, tau, "ipw").value}
print("method     estimate      se      t   reject")
for name, se in ses.items():
    e = est[name.split("/")[0]]
    w = wald(e, se)
    print(f"{name:8s} {e:9.4f} {se:8.4f} {w.t:6.2f}   {w.reject}")
