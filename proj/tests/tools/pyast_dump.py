"""Differential check of the C++ Python front end against CPython's ast.

Usage: pyast_dump.py <pyast_dump binary> [file-or-dir...] [--limit N]

Without paths, the running interpreter's standard library is checked.

For every .py file, both sides list definitions (qualified name, first and
last line) and dotted call sites (name, line). Files CPython cannot parse must
be rejected by the C++ parser too. Exits non-zero on any difference.
"""
import ast
import os
import subprocess
import sysconfig
import sys
import warnings
from collections import Counter


def dotted(node):
    parts = []
    while isinstance(node, ast.Attribute):
        parts.append(node.attr)
        node = node.value
    if not isinstance(node, ast.Name):
        return ""
    parts.append(node.id)
    return ".".join(reversed(parts))


def expected(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tree = ast.parse(data, filename=path)
    except (SyntaxError, ValueError):
        return None
    out = []

    def visit(node, scope):
        inner = scope
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            inner = f"{scope}.{node.name}" if scope else node.name
            out.append(f"D {inner} {node.lineno} {node.end_lineno}")
        elif isinstance(node, ast.Call):
            name = dotted(node.func)
            if name:
                out.append(f"C {name} {node.lineno}")
        for child in ast.iter_child_nodes(node):
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)) and child in node.decorator_list:
                visit(child, scope)
            else:
                visit(child, inner)

    visit(tree, "")
    return Counter(out)


def collect(paths):
    files = []
    for p in paths:
        if os.path.isdir(p):
            for root, _, names in os.walk(p):
                files.extend(os.path.join(root, n) for n in names if n.endswith(".py"))
        else:
            files.append(p)
    return sorted(files)


def main(argv):
    limit = None
    if "--limit" in argv:
        i = argv.index("--limit")
        limit = int(argv[i + 1])
        del argv[i : i + 2]
    binary, paths = argv[1], argv[2:] or [sysconfig.get_paths()["stdlib"]]
    files = collect(paths)
    if limit is not None:
        files = files[:limit]
    actual = {}
    chunk = 200
    for start in range(0, len(files), chunk):
        proc = subprocess.run([binary] + files[start : start + chunk], capture_output=True, check=True)
        current = None
        for line in proc.stdout.decode("utf-8", "replace").splitlines():
            if line.startswith("F "):
                current = line[2:]
                actual[current] = Counter()
            elif line.startswith("E "):
                actual[current] = None
            else:
                actual[current][line] += 1

    failures = 0
    for path in files:
        want = expected(path)
        got = actual.get(path)
        if want == got:
            continue
        failures += 1
        if want is None or got is None:
            print(f"MISMATCH {path}: cpython {'rejects' if want is None else 'accepts'}, "
                  f"pkgscope {'rejects' if got is None else 'accepts'}")
        else:
            missing = want - got
            extra = got - want
            print(f"MISMATCH {path}: missing {sorted(missing)[:5]} extra {sorted(extra)[:5]}")
    print(f"{len(files) - failures}/{len(files)} files agree")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
