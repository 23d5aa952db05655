import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lineplan.cgn import build_cgn  # noqa: E402
from lineplan.dfra import DfraOptions, run  # noqa: E402
from lineplan.milp import solve_direct  # noqa: E402
from lineplan.paths import generate_paths  # noqa: E402
from lineplan.synthetic import random_instance  # noqa: E402

SUITE_SIZE = 200


@dataclass
class SuiteCase:
    seed: int
    instance: object
    pathset: object
    optimum: float
    # valid-inequality setting -> DfraResult
    runs: dict = field(default_factory=dict)
    seconds: float = 0.0


def ht_settings(instance):
    """Valid-inequality thresholds exercised by the random suite: off, default, all."""
    return {"off": 0.0, "half": instance.max_headway / 2.0, "max": instance.max_headway}


@pytest.fixture(scope="session")
def random_suite():
    """Random tiny instances, each with its full-model optimum and DFRA runs."""
    cases = []
    for seed in range(SUITE_SIZE):
        t0 = time.perf_counter()
        inst = random_instance(seed)
        cgn = build_cgn(inst)
        ps = generate_paths(inst, cgn)
        direct = solve_direct(inst, ps)
        case = SuiteCase(seed, inst, ps, direct.objective)
        for name, ht in ht_settings(inst).items():
            case.runs[name] = run(inst, ps, DfraOptions(valid_inequality_headway=ht))
        case.seconds = time.perf_counter() - t0
        cases.append(case)
    return cases


def rel_close(a, b, rel=1e-6):
    return math.isclose(a, b, rel_tol=rel, abs_tol=rel)
