"""Export the whole topology evolution ladder as DOT and JSON files."""

import argparse
from pathlib import Path

from codecforge.graph import TopologyKind, build_topology, to_dot, to_json


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/evolution")
    parser.add_argument("--levels", type=int, default=4)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in TopologyKind:
        g = build_topology(kind, args.levels)
        (out / f"{kind.value}_l{args.levels}.dot").write_text(to_dot(g))
        (out / f"{kind.value}_l{args.levels}.json").write_text(to_json(g))
        print(f"{kind.value}: {len(g.nodes)} nodes, {len(g.edges())} edges")
    print(f"wrote DOT/JSON pairs to {out}")
    return 0


if __name__ == "__main__":
    main()
