"""End-to-end acceptance: drive the anvil CLI with this worker underneath.

One test per criterion; each prints a PASS/FAIL verdict line.
"""

import json
import os
import shutil
import subprocess
import sys
import time
from contextlib import contextmanager

HERE = os.path.dirname(__file__)
SUBJECTS = os.path.join(HERE, "subjects")
SPECS = os.path.join(HERE, "specs")

WORKER_CMD = f"{sys.executable} -m anvilworker {SUBJECTS}"


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL: {name}", flush=True)
        raise
    print(f"ACCEPTANCE PASS: {name}", flush=True)


def run_anvil(tmp_path, spec_name, *extra):
    driver = shutil.which("anvil")
    cmd = [driver] if driver else [sys.executable, "-m", "anvil.cli"]
    report = os.path.join(str(tmp_path), f"{spec_name}.report.json")
    argv = cmd + [
        "--spec", os.path.join(SPECS, f"{spec_name}.an"),
        "--worker", WORKER_CMD,
        "--seed", "7",
        "--report", report,
        *extra,
    ]
    started = time.monotonic()
    proc = subprocess.run(argv, capture_output=True, timeout=120)
    elapsed = time.monotonic() - started
    with open(report, "rb") as fh:
        machine = json.loads(fh.read().decode("utf-8"))
    return proc, machine, elapsed


def crashes_of(machine):
    out = {}
    for fn in machine["functions"]:
        for u in fn["unique_crashes"]:
            out[(u["exc_type"], u["location"])] = (fn["name"], u)
    return out


def test_densenet_reproduction(tmp_path):
    with criterion("end-to-end dense-stack bug: 1 unique crash, depth=10"):
        proc, machine, elapsed = run_anvil(tmp_path, "densenet")
        assert proc.returncode == 1, proc.stderr.decode()
        assert elapsed < 60.0
        assert machine["unique_bugs"] == 1
        sigs = crashes_of(machine)
        assert len(sigs) == 1
        (exc_type, location), (owner, crash) = next(iter(sigs.items()))
        assert exc_type == "TypeError"
        assert location == "densenet.py:10"
        assert owner == "DenseNet"
        # shrunk reproducer pins the range minimum and the -1 literal
        assert crash["reproducer"]["depth"] == "10"
        assert crash["reproducer"]["dense_layers"] == "-1"
        # no spurious failures: a full campaign dispatched, single signature
        fn = next(f for f in machine["functions"] if f["name"] == "DenseNet")
        assert fn["dispatched"] == 100
        assert fn["health"] == "ok"


def test_precondition_shields_assertion(tmp_path):
    with criterion("precondition end-to-end: @require shields the assertion"):
        _, with_req, _ = run_anvil(tmp_path, "densenet")
        with_sigs = crashes_of(with_req)
        assert not any(e == "AssertionError" for e, _ in with_sigs)

        proc, without_req, _ = run_anvil(tmp_path, "densenet_norequire")
        assert proc.returncode == 1
        without_sigs = crashes_of(without_req)
        assert ("AssertionError", "densenet.py:23") in without_sigs
        # the rejected counter moves to zero once the require is gone
        fn = next(f for f in without_req["functions"] if f["name"] == "DenseNet")
        assert fn["rejected"] == 0


def test_cc_example_decouples_constructor(tmp_path):
    with criterion("cc_example decoupling: method campaign runs clean"):
        proc, machine, _ = run_anvil(
            tmp_path, "widgets", "--only", "Widget.ping", "--max-examples", "20"
        )
        assert proc.returncode == 0, proc.stderr.decode()
        assert machine["unique_bugs"] == 0
        ping = next(f for f in machine["functions"] if f["name"] == "Widget.ping")
        assert ping["dispatched"] == 20
        assert ping["health"] == "ok"
        assert ping["unique_crashes"] == []


def test_widget_constructor_still_tested_on_its_own(tmp_path):
    # companion check: without --only, the constructor campaign does find
    # the generated-input crash while the method campaign stays clean.
    proc, machine, _ = run_anvil(tmp_path, "widgets", "--max-examples", "10")
    assert proc.returncode == 1
    sigs = crashes_of(machine)
    assert ("ValueError", "widgets.py:7") in sigs
    ping = next(f for f in machine["functions"] if f["name"] == "Widget.ping")
    assert ping["unique_crashes"] == []
    assert ping["dispatched"] == 10
