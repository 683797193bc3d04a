"""The pinned golden configurations and a regeneration entry point.

Run ``python3 tests/golden/pinned.py`` from the repository root only when
an intentional change alters the numerical output.
"""

import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
CONFIGS = HERE / "configs"

PINNED = {
    "finite_example3": ["simulate", "finite", "--model", str(CONFIGS / "example3.json"), "--n", "20",
                        "--t", "1", "--dt", "0.01", "--seed", "7", "--reps", "2", "--jump-log"],
    "limit_arctan": ["simulate", "limit", "--model", str(CONFIGS / "arctan.json"), "--m", "20",
                     "--t", "0.5", "--dt", "0.01", "--seed", "0x2a", "--reps", "2", "--grid", "0,0.25,0.5"],
    "multipop_tree": ["simulate", "multipop", "--model", str(CONFIGS / "tree.json"), "--t", "0.5",
                      "--dt", "0.01", "--seed", "3", "--reps", "2", "--system", "limit", "--grid", "0,0.5"],
}


def run_pinned(name, out_dir, jobs=1):
    from cmkv.cli import run

    return run(PINNED[name] + ["--out", str(out_dir), "--jobs", str(jobs)])


def csv_files(directory):
    return sorted(p.name for p in Path(directory).glob("*.csv"))


if __name__ == "__main__":
    for name in PINNED:
        target = HERE / name
        shutil.rmtree(target, ignore_errors=True)
        code = run_pinned(name, target)
        (target / "manifest.json").unlink()
        print(name, code, csv_files(target), file=sys.stderr)
