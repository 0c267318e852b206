#!/usr/bin/env python3
"""
Run the oracle and gradient test suites in-process
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import importlib
import inspect
import time
import traceback
from typing import List, Tuple

SELFTEST_SUITES = ('utils.test_geometry', 'utils.test_diffcore')


def collect_tests(module_name: str) -> List[Tuple[str, object]]:
    """Fixture-free `test_*` functions of a suite, in definition order"""
    module = importlib.import_module(module_name)
    tests = []
    for name, fn in vars(module).items():
        if name.startswith('test_') and inspect.isfunction(fn) and not inspect.signature(fn).parameters:
            tests.append((name, fn))
    return tests


def run_selftest(suites=SELFTEST_SUITES, verbose: bool = True) -> int:
    """Return the number of failed tests"""
    failures = 0
    total = 0
    start = time.perf_counter()
    for suite in suites:
        if verbose:
            print(f"[*] {suite}")
        for name, fn in collect_tests(suite):
            total += 1
            try:
                fn()
            except Exception as e:
                failures += 1
                print(f"[-] {name}: {type(e).__name__}: {e}")
                if verbose:
                    traceback.print_exc()
            else:
                if verbose:
                    print(f"[+] {name}")
    elapsed = time.perf_counter() - start
    if failures:
        print(f"[-] {failures} of {total} tests failed ({elapsed:.1f}s)")
    else:
        print(f"[+] All {total} tests passed ({elapsed:.1f}s)")
    return failures


if __name__ == "__main__":
    sys.exit(1 if run_selftest() else 0)
