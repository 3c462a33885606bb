import sys

import numpy as np
import pytest

from icbar import emcore
from icbar.data import SubjectRecord


def rec(sid, exams, z, j=None, cause=None, missing=False):
    return SubjectRecord(str(sid), np.asarray(exams, dtype=float), np.asarray(z, dtype=float), j, cause, missing)


def random_toy(seed, r=(0.0, 0.0), n=5, d=2, time_varying=False):
    """Small random dataset with every subject category, plus a state with
    random positive jumps and coefficients and fresh slot weights."""
    rng = np.random.default_rng(seed)
    while True:
        out = _draw_toy(rng, r, n, d, time_varying)
        if out is not None:
            return out


def _draw_toy(rng, r, n, d, time_varying):
    while True:
        recs = []
        for i in range(n):
            J = int(rng.integers(1, 4))
            exams = np.cumsum(rng.uniform(0.2, 1.0, J))
            z = rng.normal(size=(J, d)) if time_varying else rng.normal(size=d)
            u = rng.random()
            if u < 0.3:
                recs.append(rec(i, exams, z))
            else:
                j = int(rng.integers(1, J + 1))
                if u < 0.45:
                    recs.append(rec(i, exams, z, j, None, True))
                else:
                    recs.append(rec(i, exams, z, j, int(rng.integers(1, 3))))
        if any(s.event_observed for s in recs) and any(not s.event_observed for s in recs):
            break
    problem = emcore.Problem(recs, r)
    state = emcore.initial_state(
        problem,
        beta=rng.normal(scale=0.4, size=(problem.K, d)),
        lam=[rng.uniform(0.02, 0.15, m) for m in problem.m],
    )
    surv = emcore._survival_censored(problem, emcore._all_loads(problem, state), strict=False)
    if surv.size and surv.min() < 0.05:
        return None
    state.omega = emcore.e_step(problem, state)
    return problem, state


@pytest.fixture
def toy():
    return random_toy


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
