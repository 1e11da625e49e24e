"""Build data/support.csv from the public SUPPORT2 export.

Keeps patients with complete physiology, one-hot encodes the categorical
columns and writes 23 covariates plus `time` (days) and `event` (death).

Usage: python scripts/prepare_support.py [support2.csv] [out.csv]

The input defaults to the copy bundled in the auton-survival 0.1.0 wheel,
looked up next to this script or in the current directory.
"""

import io
import sys
import zipfile
from pathlib import Path

import pandas as pd

NUMERIC = ["age", "num.co", "meanbp", "hrt", "resp", "temp", "wblc", "sod", "crea"]
REQUIRED = ["meanbp", "hrt", "resp", "temp", "wblc", "sod", "crea"]
WHEEL = "auton_survival-0.1.0-py3-none-any.whl"
MEMBER = "auton_survival/datasets/support2.csv"


def read_raw(path):
    if path is not None:
        return pd.read_csv(path)
    for base in (Path(__file__).parent, Path.cwd()):
        wheel = base / WHEEL
        if wheel.exists():
            with zipfile.ZipFile(wheel) as z:
                return pd.read_csv(io.BytesIO(z.read(MEMBER)))
    sys.exit(f"pass the path of support2.csv or place {WHEEL} next to this script")


def one_hot(column, levels, prefix):
    return pd.DataFrame({f"{prefix}_{lvl}": (column == lvl).astype(int) for lvl in levels})


def encode(raw):
    df = raw.dropna(subset=REQUIRED).reset_index(drop=True)
    race = df["race"].fillna("other")
    parts = [
        df[NUMERIC].rename(columns={"num.co": "num_co"}),
        one_hot(df["sex"], ["female", "male"], "sex"),
        one_hot(race, ["white", "black", "asian", "hispanic", "other"], "race"),
        one_hot(df["diabetes"], [0, 1], "diabetes"),
        one_hot(df["dementia"], [0, 1], "dementia"),
        one_hot(df["ca"], ["no", "yes", "metastatic"], "ca"),
        pd.DataFrame({"time": df["d.time"], "event": df["death"].astype(int)}),
    ]
    return pd.concat(parts, axis=1)


def main():
    src = sys.argv[1] if len(sys.argv) > 1 else None
    out = Path(sys.argv[2] if len(sys.argv) > 2 else Path(__file__).parent.parent / "data" / "support.csv")
    df = encode(read_raw(src))
    df.to_csv(out, index=False)
    covariates = df.shape[1] - 2
    print(
        f"{len(df)} patients, {covariates} covariates, "
        f"censoring {1 - df['event'].mean():.3f}, median time {df['time'].median():.0f}"
    )


if __name__ == "__main__":
    main()
