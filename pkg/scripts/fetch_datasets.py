"""Download the case-study datasets into data/.

Not part of the library and never run by the tests; the bench command only
reads local CSV files. Whitespace-delimited sources are converted to CSV
with a header and the response in the last column. Spreadsheet sources
(energy efficiency, concrete) are saved as-is; export them to CSV by hand.

    python3 scripts/fetch_datasets.py [--list] [name ...]
"""

import argparse
import sys
import urllib.request
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "data"

SOURCES = {
    "boston_housing": "http://lib.stat.cmu.edu/datasets/boston",
    "yacht_hydrodynamics": "https://archive.ics.uci.edu/ml/machine-learning-databases/00243/yacht_hydrodynamics.data",
    "airfoil_self_noise": "https://archive.ics.uci.edu/ml/machine-learning-databases/00291/airfoil_self_noise.dat",
    "energy_efficiency": "https://archive.ics.uci.edu/ml/machine-learning-databases/00242/ENB2012_data.xlsx",
    "concrete": "https://archive.ics.uci.edu/ml/machine-learning-databases/concrete/compressive/Concrete_Data.xls",
}

HEADERS = {
    "boston_housing": ["CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE", "DIS",
                       "RAD", "TAX", "PTRATIO", "B", "LSTAT", "MEDV"],
    "yacht_hydrodynamics": ["lcb", "prismatic", "length_displacement",
                            "beam_draught", "length_beam", "froude", "resistance"],
    "airfoil_self_noise": ["frequency", "angle", "chord", "velocity",
                           "thickness", "sound_pressure"],
}


def _numbers(text: str, skip: int = 0) -> list[float]:
    lines = text.splitlines()[skip:]
    return [float(tok) for ln in lines for tok in ln.split()]


def convert(name: str, text: str) -> str:
    header = HEADERS[name]
    # the Boston source wraps each record over two lines after a 22-line preamble
    vals = _numbers(text, skip=22 if name == "boston_housing" else 0)
    k = len(header)
    if len(vals) % k:
        raise ValueError(f"{name}: {len(vals)} values do not split into rows of {k}")
    rows = [vals[i:i + k] for i in range(0, len(vals), k)]
    return "\n".join([",".join(header)] + [",".join(repr(v) for v in r) for r in rows]) + "\n"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help=f"subset of {', '.join(SOURCES)}")
    ap.add_argument("--list", action="store_true", help="print the URLs and exit")
    args = ap.parse_args(argv)
    names = args.names or list(SOURCES)
    unknown = [n for n in names if n not in SOURCES]
    if unknown:
        ap.error(f"unknown dataset(s): {', '.join(unknown)}")
    if args.list:
        for n in names:
            print(f"{n}\t{SOURCES[n]}")
        return 0
    DATA.mkdir(exist_ok=True)
    for n in names:
        url = SOURCES[n]
        with urllib.request.urlopen(url, timeout=60) as resp:
            payload = resp.read()
        if n in HEADERS:
            out = DATA / f"{n}.csv"
            out.write_text(convert(n, payload.decode("latin-1")))
        else:
            out = DATA / Path(url).name
            out.write_bytes(payload)
        print(f"{n}: {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
