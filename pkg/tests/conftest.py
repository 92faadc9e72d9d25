"""Shared pytest configuration: acceptance-criteria summary reporting."""

import re

CRITERIA = {
    1: "continuous observer converges in all three modes by t=20 s",
    2: "output linearity: innovation equals C times the error state",
    3: "exponential error decay and non-increasing Lyapunov value",
    4: "nilpotent factorization of the transition matrix",
    5: "trace-potential identities and bounds",
    6: "static degeneracy classification over seeded configurations",
    7: "Gramian verdicts and geometric condition checks",
    8: "sampled-measurement estimator accuracy and covariance contraction",
    9: "camera-loss fallback stays bounded; dead reckoning diverges",
    10: "attitude convergence from antipodal initializations",
}

_NODE_RE = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = _NODE_RE.search(getattr(rep, "nodeid", ""))
            if m is None:
                continue
            k = int(m.group(1))
            outcomes[k] = outcomes.get(k, True) and key == "passed"
    if not outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(CRITERIA):
        if k in outcomes:
            status = "PASS" if outcomes[k] else "FAIL"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(
            f"[{status}] criterion {k}: {CRITERIA[k]}")
