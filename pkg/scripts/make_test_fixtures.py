#!/usr/bin/env python3
"""Regenerate the frozen oracle fixtures under tests/fixtures/.

Run from the repository root. The outputs are committed; the test suite reads
them instead of trusting the implementation under test.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402
import synth  # noqa: E402


def rle_fixture(path):
    rng = np.random.default_rng(20240517)
    records = []
    for i in range(50):
        arr = synth.random_mask(rng, max_h=96, max_w=96)
        counts = oracles.rle_counts_from_mask(arr)
        records.append(
            {
                "height": int(arr.shape[0]),
                "width": int(arr.shape[1]),
                "counts": [int(c) for c in counts],
                "rle": oracles.rle_string_from_counts(counts),
            }
        )
    path.write_text(json.dumps(records, indent=1))
    print(f"wrote {path} ({len(records)} masks)")


def detection_fixture(path):
    gts, dts = synth.metrics_fixture()
    metrics = oracles.ref_detection_metrics(gts, dts)
    path.write_text(json.dumps({k: round(v, 10) for k, v in metrics.items()}, indent=1))
    print(f"wrote {path}")
    for k, v in metrics.items():
        print(f"  {k:6s} = {v:.6f}")


def main():
    fixtures = ROOT / "tests" / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)
    rle_fixture(fixtures / "rle_reference.json")
    detection_fixture(fixtures / "detection_metrics_expected.json")


if __name__ == "__main__":
    main()
