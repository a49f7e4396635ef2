import time

SESSION_BUDGET_S = 300.0


def pytest_configure(config):
    config._session_t0 = time.perf_counter()


def pytest_sessionfinish(session, exitstatus):
    # Acceptance criterion 10 gate: the whole suite must finish inside the
    # budget. Runs offline by construction (no downloads anywhere).
    elapsed = time.perf_counter() - session.config._session_t0
    ok = elapsed < SESSION_BUDGET_S
    print(
        f"\n[acceptance criterion 10] full suite elapsed {elapsed:.1f}s "
        f"(budget {SESSION_BUDGET_S:.0f}s, offline): {'PASS' if ok else 'FAIL'}"
    )
    if not ok and session.exitstatus == 0:
        session.exitstatus = 1
