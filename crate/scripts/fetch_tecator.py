#!/usr/bin/env python3
"""Download the Tecator meat spectra from StatLib and write data/tecator.csv.

The StatLib file is free text followed by 240 samples of 125 numbers each:
100 absorbances (850-1050 nm), 22 principal components, then moisture, fat
and protein. Only the first 215 samples are used; the response is fat.

    python3 scripts/fetch_tecator.py            # download
    python3 scripts/fetch_tecator.py tecator    # convert a local copy
"""

import json
import re
import sys
import urllib.request
from pathlib import Path

URL = "http://lib.stat.cmu.edu/datasets/tecator"
SAMPLES, WIDTH, KEEP, POINTS, FAT = 240, 125, 215, 100, 123
NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


def convert(text: str, out: Path) -> None:
    tokens = NUMBER.findall(text)
    if len(tokens) < SAMPLES * WIDTH:
        sys.exit(f"expected at least {SAMPLES * WIDTH} numbers, found {len(tokens)}")
    # the free-text header contains stray numbers, so count from the end
    values = [float(t) for t in tokens[-SAMPLES * WIDTH:]]
    rows = [values[i * WIDTH:(i + 1) * WIDTH] for i in range(KEEP)]
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as f:
        f.write(",".join(["y"] + [f"x1_{g + 1}" for g in range(POINTS)]) + "\n")
        for r in rows:
            f.write(",".join(repr(v) for v in [r[FAT]] + r[:POINTS]) + "\n")
    descriptor = {"predictors": ["absorbance"], "physical_grid": {"start": 850.0, "end": 1050.0}}
    out.with_suffix(".json").write_text(json.dumps(descriptor, indent=2) + "\n")
    print(f"wrote {out} ({KEEP} samples x {POINTS} wavelengths) and {out.with_suffix('.json')}")


def main() -> None:
    out = Path(__file__).resolve().parent.parent / "data" / "tecator.csv"
    if len(sys.argv) > 1:
        text = Path(sys.argv[1]).read_text()
    else:
        with urllib.request.urlopen(URL, timeout=60) as resp:
            text = resp.read().decode("latin-1")
    convert(text, out)


if __name__ == "__main__":
    main()
