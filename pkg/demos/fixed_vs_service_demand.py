"""Compare a fixed-demand plan with service-dependent plans at the same budget.

With fixed demand the long line runs at its cheapest headway even though
nobody would ride it; judged by what passengers accept, half the demand is
lost. The service-dependent model spends the same budget differently.
"""
from lineplan.evaluate import LineConcept, assign_logit, assign_shortest, metrics, rigid_benchmark
from lineplan.paths import generate_paths
from lineplan.synthetic import rigid_gap_example

inst = rigid_gap_example()
bench = rigid_benchmark(inst)
print(f"operating budget taken from the fixed-demand plan: {bench.budget:g}")
for row in bench.table():
    print(f"  {row['variant']:>4}  objective {row['objective']:9.2f}  captured {row['demand_captured_pct']:5.1f}%"
          f"  lines {row['lines']}  vehicles {row['vehicles']:g}")

# how the service-dependent plan fares when passengers choose for themselves
plan = bench.variants["T"].solution
concept = LineConcept.from_solution(plan)
ps = generate_paths(inst)
for name, a in (("logit", assign_logit(concept, ps)), ("shortest", assign_shortest(concept, ps))):
    m = metrics(concept, a, inst)
    print(f"{name:>8}: captured {m.demand_captured_pct:.1f}%, passenger cost {m.passenger_cost:.2f}, "
          f"arcs over capacity {m.over_capacity_arcs}")
