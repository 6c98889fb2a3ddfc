"""teeport python driver.

usage: driver.py <spec.json> [random-source]

spec: project_root, module, qualname, params (semantic types), ret, mode.
  run       one case on stdin -> `ok <literal>` | `err <message>`
  coverage  {"case": line, "random": source} per stdin line -> one JSON report
  bench     {"cases": [line...], "runs": r, "iterations": n} on stdin -> seconds per
            run, each run calling every case n times
"""

import importlib
import json
import sys
import time
import traceback

sys.dont_write_bytecode = True
here = sys.path[0]

with open(sys.argv[1], encoding="utf-8") as fh:
    spec = json.load(fh)
sys.path.insert(0, spec["project_root"])
for extra in spec.get("extra_paths", []):
    sys.path.insert(0, extra)

import teeport_rt as rt  # noqa: E402

rt.install_shim(sys.argv[2] if len(sys.argv) > 2 and sys.argv[2] else None)


def oneline(text):
    return " ".join(str(text).split())


def load_args(line):
    args = rt.parse_case(line)
    params = spec["params"]
    if len(args) != len(params):
        raise TypeError("expected %d arguments, found %d" % (len(params), len(args)))
    out = []
    for a, ty in zip(args, params):
        if ty == "float" and isinstance(a, int) and not isinstance(a, bool):
            a = float(a)
        if not rt.matches(a, ty):
            raise TypeError("argument does not match %s" % ty)
        out.append(a)
    return out


try:
    module = importlib.import_module(spec["module"])
    fn, call = rt.resolve(module, spec["qualname"])
except Exception as exc:  # import failures are driver errors, not case errors
    sys.stdout.write("fatal %s\n" % oneline("%s: %s" % (type(exc).__name__, exc)))
    sys.exit(3)

mode = spec["mode"]

if mode == "run":
    line = sys.stdin.readline()
    try:
        result = call(*load_args(line))
        text = rt.literal(result, spec["ret"])
    except BaseException as exc:
        sys.stdout.write("err %s\n" % oneline("%s: %s" % (type(exc).__name__, exc)))
        sys.stdout.flush()
        sys.exit(1)
    sys.stdout.write("ok %s\n" % text)

elif mode == "coverage":
    statements, branches = rt.analyze(fn)
    lines, arcs, cases = set(), set(), []
    for raw in sys.stdin.read().splitlines():
        if not raw.strip():
            continue
        req = json.loads(raw)
        rt.install_shim(req.get("random"))
        tracer = rt.Tracer(fn.__code__)
        try:
            args = load_args(req["case"])
            result = tracer.run(call, args)
            rt.literal(result, spec["ret"])
        except BaseException as exc:
            cases.append({"ok": False, "error": oneline("%s: %s" % (type(exc).__name__, exc))})
            continue
        cases.append({"ok": True})
        lines |= tracer.lines
        arcs |= tracer.arcs
    json.dump(
        {
            "statements": statements,
            "branches": [list(b) for b in branches],
            "executed": sorted(lines),
            "arcs": sorted(list(a) for a in arcs),
            "cases": cases,
        },
        sys.stdout,
    )

elif mode == "bench":
    req = json.loads(sys.stdin.read())
    cases = [load_args(c) for c in req.get("cases") or [req["case"]]]
    runs = []
    for _ in range(int(req["runs"])):
        start = time.perf_counter()
        for _ in range(int(req["iterations"])):
            for args in cases:
                call(*args)
        runs.append(time.perf_counter() - start)
    json.dump({"runs": runs}, sys.stdout)

else:
    traceback.print_stack()
    sys.exit(3)
