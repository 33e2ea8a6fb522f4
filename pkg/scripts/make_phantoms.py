#!/usr/bin/env python3
"""Write the pinned 20-subject phantom dataset to disk.

Usage: python scripts/make_phantoms.py OUT_DIR [--container {vgh,nii}]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from segloop.harness.cli import main as cli_main  # noqa: E402
from segloop.harness.phantom import PhantomSpec  # noqa: E402

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out")
    parser.add_argument("--container", choices=["vgh", "nii"], default="vgh")
    args = parser.parse_args()
    import json
    import tempfile
    spec = PhantomSpec(dims=(64, 64, 64), count=20, seed=20240501)
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(spec.to_dict(), fh)
        spec_path = fh.name
    sys.exit(cli_main(["phantom", "--spec", spec_path, "--out", args.out,
                       "--container", args.container]))
