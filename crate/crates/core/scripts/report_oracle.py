#!/usr/bin/env python3
"""Expected `report` output for the committed fixture run sets.

Recomputes means, sample standard deviations and deltas from the best
accuracies stored in each runset.json and lays out the text table.

Usage: python3 report_oracle.py <runs dir> <output table>
"""

import json
import statistics
import sys
from pathlib import Path

ORDER = ["Baseline", "Random", "TrueAdv", "Controller",
         "1-Adv-0Ep", "1-Adv-100Ep", "Smooth", "Cyclic"]


def main():
    runs_dir, out = Path(sys.argv[1]), Path(sys.argv[2])
    groups = {}
    for path in sorted(runs_dir.glob("*/runset.json")):
        data = json.loads(path.read_text())
        key = (data["config"]["strategy"], data["config"]["multiplicity"])
        groups.setdefault(key, []).extend(r["best_test_accuracy"] for r in data["runs"])
    keys = sorted(groups, key=lambda k: (ORDER.index(k[0]), k[1]))
    base = statistics.fmean(groups[("Baseline", 1)])
    rows = []
    for strategy, m in keys:
        values = groups[(strategy, m)]
        mean = statistics.fmean(values)
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        delta = "-" if (strategy, m) == ("Baseline", 1) else f"{100 * (mean - base):+.2f}"
        rows.append([strategy, str(m), str(len(values)), f"{100 * mean:.2f} ({100 * std:.2f})", delta])
    header = ["Strategy", "M", "Runs", "Accuracy", "Delta"]
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(5)]

    def line(cells):
        parts = [c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))]
        return "  ".join(parts).rstrip()

    text = [line(header), "  ".join("-" * w for w in widths)] + [line(r) for r in rows]
    out.write_text("\n".join(text) + "\n")


if __name__ == "__main__":
    main()
