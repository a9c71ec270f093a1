"""Minimal local runner: runner.py <code_file> <input_file>.

Loads the program, calls its solve(s) with the whole input file as one
string and lets whatever it prints go to stdout. Exit 0 when solve returns,
1 when it raises, 2 when the program cannot be loaded or has no solve.
"""
import sys
import traceback


def main(argv):
    if len(argv) != 3:
        print("usage: runner.py <code_file> <input_file>", file=sys.stderr)
        return 2
    try:
        with open(argv[1], encoding="utf-8") as f:
            source = f.read()
        with open(argv[2], encoding="utf-8") as f:
            data = f.read()
    except OSError as e:
        print(e, file=sys.stderr)
        return 2
    namespace = {"__name__": "__guest__"}
    try:
        exec(compile(source, argv[1], "exec"), namespace)
    except BaseException:
        traceback.print_exc()
        return 2
    solve = namespace.get("solve")
    if not callable(solve):
        print("program defines no solve(s)", file=sys.stderr)
        return 2
    try:
        solve(data)
    except BaseException:
        sys.stdout.flush()
        traceback.print_exc()
        return 1
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
