"""A desk-sized regression study driven through the command line.

Run with ``python demos/desk_study.py [output-directory]``.

Writes a configuration file, runs ``wss simulate`` on it exactly as a user
would from the shell, then reads the CSV reports back and prints the bias
table, the size and power of the five Wald tests and the run manifest.
"""
import csv
import json
import sys
import tempfile
from pathlib import Path

from wss.cli import main
from wss.config import default_config


def write_config(path: Path) -> Path:
    cfg = default_config("sim-regression")
    block = dict(cfg.regression, n=[20], psi=[0.25, 0.5])
    text = json.loads(cfg.to_json())
    text.update(regression=block, replicates=300, seed=2024, workers=1)
    path.write_text(json.dumps(text, indent=2))
    return path


def show(out: Path):
    files = sorted(p.name for p in out.iterdir())
    print("report files:", ", ".join(files))
    for name in files:
        if name.endswith(".csv"):
            with open(out / name, newline="") as fh:
                rows = list(csv.DictReader(fh))
            print(f"\n-- {name} ({len(rows)} rows)")
            keys = list(rows[0])
            print("  ".join(f"{k:>11.11s}" for k in keys))
            for r in rows:
                print("  ".join(f"{_fmt(r[k]):>11.11s}" for k in keys))
    manifest = json.loads((out / "manifest.json").read_text())
    print("\nmanifest:", {k: manifest[k] for k in ("config_hash", "seed", "version") if k in manifest})


def _fmt(value: str) -> str:
    try:
        return f"{float(value):.4f}" if "." in value else value
    except ValueError:
        return value


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="wss-desk-"))
    out.mkdir(parents=True, exist_ok=True)
    cfg = write_config(out / "study.json")
    print(f"$ wss simulate --config {cfg} --out {out / 'report'}")
    status = main(["simulate", "--config", str(cfg), "--out", str(out / "report")])
    print(f"exit status {status}\n")
    show(out / "report")
