"""Population parameters of the simulation designs.

The estimands of designs 3 and 4 have no closed form, so they are computed
by brute force: quantiles of very large potential-outcome samples, averaged
over independent repetitions.
"""

from carq import DgpSpec, true_value

for design in (1, 2, 3, 4):
    for tau in (0.25, 0.5, 0.75):
        tv = true_value(DgpSpec(design), tau, oracle_n=200_000, oracle_reps=5)
        print(f"design {design}  q({tau:.2f}) = {tv.value:8.4f}  (mc se {tv.mc_se:.4f})")
    tv = true_value(DgpSpec(design), None, "ate", oracle_n=200_000, oracle_reps=5)
    print(f"design {design}  ATE     = {tv.value:8.4f}  (mc se {tv.mc_se:.4f})")
