"""Percentile bootstrap intervals for a fitted model.

Run with ``python3 demos/04_bootstrap.py`` (about a minute).
"""

from mselect import fit
from mselect.bootstrap import bootstrap
from mselect.sim import generate, scenario1

data = generate(scenario1(n=200, missing_rate=0.1), seed=11)
point = fit(data.dataset)
rep = bootstrap(data.dataset, B=30, seed=0, point=point)
print(f"{rep.replications_used} refits used, {rep.failures} failed")
for row in rep.table():
    if row["parameter"] in ("sigma", "rho", "psi[1,2]", "beta1[1]"):
        print("{parameter:>9}: {estimate:7.3f}  se {se:.3f}  95% CI ({ci_lower:.3f}, {ci_upper:.3f})".format(**row))
