"""Turn a dataclass of experiment settings into command-line flags."""
import argparse
import csv
import dataclasses
from pathlib import Path


def parse_config(cls, description: str):
    p = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        kind = type(f.default)
        flag = "--" + f.name.replace("_", "-")
        if kind is bool:
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=f.default)
        else:
            p.add_argument(flag, type=kind, default=f.default)
    return cls(**vars(p.parse_args()))


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")
