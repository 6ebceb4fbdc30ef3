"""Summary export: per-domain metrics as JSON and CSV with a fixed schema."""
import csv
import json
from pathlib import Path

SCHEMA_VERSION = "msda-report/1"
METRIC_FIELDS = ("eer", "cllr", "cllr_cal", "cllr_min", "n_target", "n_nontarget")
CSV_FIELDS = ("domain",) + METRIC_FIELDS


def fmt(x):
    """Fixed 6-decimal rendering used by every report file."""
    return f"{float(x):.6f}"


def _rounded(value):
    return value if isinstance(value, int) else float(fmt(value))


def export_report(results, out_dir):
    """Write ``summary.json`` and ``summary.csv``; returns the normalised results.

    Floats are rounded to 6 decimals, keys appear in a fixed order and the
    schema version is embedded. An empty domain list gives valid files.
    """
    out_dir = Path(out_dir)
    domains = []
    for d in results.get("domains", []):
        entry = {"domain": str(d["domain"])}
        entry.update({k: _rounded(d[k]) for k in METRIC_FIELDS})
        domains.append(entry)
    summary = {"schema_version": SCHEMA_VERSION, "method": results.get("method"),
               "seed": results.get("seed"), "domains": domains}
    if domains:
        summary["average_eer"] = _rounded(sum(d["eer"] for d in domains) / len(domains))
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        fh.write(f"# {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for d in domains:
            w.writerow([d["domain"]] + [d[k] if isinstance(d[k], int) else fmt(d[k])
                                        for k in METRIC_FIELDS])
    return summary


def read_report(out_dir):
    """``(summary_json, csv_rows)`` as written by :func:`export_report`."""
    out_dir = Path(out_dir)
    with open(out_dir / "summary.json") as fh:
        summary = json.load(fh)
    with open(out_dir / "summary.csv", newline="") as fh:
        header = fh.readline().strip()
        if header != f"# {SCHEMA_VERSION}":
            raise ValueError(f"unexpected report schema line {header!r}")
        rows = []
        for row in csv.DictReader(fh):
            rows.append({"domain": row["domain"],
                         **{k: int(row[k]) if k.startswith("n_") else float(row[k])
                            for k in METRIC_FIELDS}})
    return summary, rows
