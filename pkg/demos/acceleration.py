"""Effect of the valid inequalities and of refining similar lines together.

Neither setting changes the optimum; both can cut the number of model solves.
"""
from lineplan.dfra import DfraOptions, run
from lineplan.synthetic import tight_threshold_example, twin_lines_example

inst = tight_threshold_example()
for ht in (0.0, inst.max_headway / 2, inst.max_headway):
    res = run(inst, options=DfraOptions(valid_inequality_headway=ht))
    print(f"tight threshold, ht={ht:g}: {res.iterations} solves, objective {res.objective:.2f}")

inst = twin_lines_example()
for kappa in (0, 1, 2):
    res = run(inst, options=DfraOptions(kappa=kappa))
    print(f"twin lines, kappa={kappa}: {res.iterations} solves, objective {res.objective:.2f}")
