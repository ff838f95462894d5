"""Misbehaving external solver: solves correctly but forgets to write
the binary variables out."""

import sys

from myopic.linprog import parse_mps, solve_milp


def main() -> int:
    inp, outp = sys.argv[1], sys.argv[2]
    with open(inp) as fh:
        model = parse_mps(fh.read())
    binaries = {v.name for v in model.variables if v.kind == "binary"}
    sol = solve_milp(model)
    with open(outp, "w") as fh:
        if sol.status != "optimal":
            fh.write(f"status {sol.status}\n")
            return 0
        fh.write(f"objective {sol.objective:.12g}\n")
        for name, val in sol.values.items():
            if name not in binaries:
                fh.write(f"{name} {val:.12g}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
