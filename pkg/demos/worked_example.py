"""Walk through the single-line example one model solve at a time.

The refinement loop starts from an optimistic plan (shortest headway at the
price of the longest), finds it cannot be operated, tightens the offending
headway and tries again. Run with ``python demos/worked_example.py``.
"""
from lineplan.dfra import run
from lineplan.milp import solve_direct
from lineplan.paths import generate_paths
from lineplan.synthetic import single_line_example


def show(title, instance):
    print(f"== {title}")
    line = instance.lines[0]
    print("headway -> vehicles:", ", ".join(f"{h:g}->{v}" for h, v in line.profile.entries))
    res = run(instance)
    for r in res.log:
        rep = ", ".join(f"{h:g}:{b:g}" for h, b in r.representation["L1"].items())
        h, z = r.opened.get("L1"), r.vehicles.get("L1")
        verdict = "operable" if r.violations == 0 else "not operable"
        print(f"  solve {r.iteration}: offered {{{rep}}}  picked h={h:g} z={z:g}  "
              f"lower {r.lower_bound:.2f}  repaired {r.upper_bound:.2f}  {verdict}")
    full = solve_direct(instance, generate_paths(instance))
    print(f"  result {res.objective:.2f} after {res.iterations} solves; full model {full.objective:.2f}\n")


if __name__ == "__main__":
    show("base time values", single_line_example())
    show("time values tripled", single_line_example(tripled=True))
