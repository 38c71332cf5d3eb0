"""A small rejection-rate study.

Runs a reduced version of the null-hypothesis experiment for all four
rules. With only 200 replications expect Monte Carlo noise of about 1.5
percentage points around 5%. Set CARQ_THREADS to use more processes.
"""

from carq import DgpSpec, McConfig, SchemeSpec, run_table
from carq.montecarlo import TABLE1_METHODS

configs = [McConfig(dgp=DgpSpec(1), scheme=SchemeSpec(k), n=200, target=0.5,
                    methods=TABLE1_METHODS, reps=200, boot_b=200, seed=1, true_value=0.0)
           for k in ("srs", "wei", "bcd", "sbr")]
table = run_table(configs)
print(table.to_wide(percent=True))
