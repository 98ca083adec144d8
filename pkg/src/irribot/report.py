"""Rendering and serialization of trial results.

The summary table mirrors the field-results layout: one row per environment,
eight fixed metric columns, literal N/A for leveling columns on flat terrain.
results.json carries the full config echo plus every per-trial report, so a
stored file can be re-rendered byte-identically without re-simulating.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import fields, is_dataclass

from irribot.fieldsim import ENV_NAMES
from irribot.mission import TrialReport

SCHEMA_VERSION = 1

TABLE_COLUMNS = (
    "Acc %", "Time ms", "FP %", "Error mm",
    "Leveling s", "SSE °", "Volume mL", "Eff %",
)

# summary key and rendering precision per column, in column order
_COLUMN_SPECS = (
    ("accuracy_pct", 1),
    ("mean_inference_ms", 0),
    ("fp_pct", 1),
    ("mean_positioning_error_mm", 1),
    ("leveling_mean_s", 2),
    ("sse_mean_deg", 2),
    ("mean_volume_ml", 1),
    ("efficiency_pct", 1),
)

_CSV_FIELDS = tuple(f.name for f in fields(TrialReport))


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def summarize_env(reports):
    """Column means over one environment's trials, plus derived aggregates."""
    summary = {
        "trials": len(reports),
        "accuracy_pct": _mean(r.accuracy_pct for r in reports),
        "frame_accuracy_pct": _mean(r.frame_accuracy_pct for r in reports),
        "fp_pct": _mean(r.fp_pct for r in reports),
        "mean_inference_ms": _mean(r.mean_inference_ms for r in reports),
        "mean_positioning_error_mm": _mean(r.mean_positioning_error_mm for r in reports),
        "leveling_mean_s": _mean(r.leveling_mean_s for r in reports),
        "sse_mean_deg": _mean(r.sse_mean_deg for r in reports),
        "mean_volume_ml": _mean(r.mean_volume_ml for r in reports),
        "efficiency_pct": _mean(r.efficiency_pct for r in reports),
        "water_savings_pct": _mean(r.water_savings_pct for r in reports),
        "serviced_total": sum(r.serviced for r in reports),
        "pots_total": sum(r.pots for r in reports),
        "aborted_trials": sum(1 for r in reports if r.aborted),
    }
    return summary


def build_results(cfg_dict, env_reports, endurance_min=None):
    """Assemble the results payload.

    cfg_dict: plain-dict echo of the run configuration.
    env_reports: {env_name: [TrialReport, ...]} in trial order.
    endurance_min: optional {env_name: minutes} from looping endurance runs.
    """
    environments = {}
    for name, reports in env_reports.items():
        environments[name] = {
            "summary": summarize_env(reports),
            "trials": [r.to_dict() for r in reports],
        }
        if endurance_min and name in endurance_min:
            environments[name]["endurance_runtime_min"] = endurance_min[name]
    return {"schema_version": SCHEMA_VERSION, "config": cfg_dict,
            "environments": environments}


def results_to_json(payload):
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def load_results(path):
    with open(path) as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# text rendering


def _cell(value, digits):
    if value is None:
        return "N/A"
    return f"{value:.{digits}f}"


def render_summary_table(payload):
    """Fixed-column table, one row per environment present in the payload."""
    names = [n for n in ENV_NAMES if n in payload["environments"]]
    names += [n for n in payload["environments"] if n not in ENV_NAMES]
    rows = []
    for name in names:
        summary = payload["environments"][name]["summary"]
        rows.append([name] + [_cell(summary.get(key), d) for key, d in _COLUMN_SPECS])
    headers = ["Environment", *TABLE_COLUMNS]
    widths = [max(len(headers[c]), *(len(r[c]) for r in rows)) if rows else len(headers[c])
              for c in range(len(headers))]
    def fmt(cells):
        first = cells[0].ljust(widths[0])
        rest = [cells[c].rjust(widths[c]) for c in range(1, len(cells))]
        return "  ".join([first, *rest]).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def render_report(payload):
    """Table plus the derived lines a field report would quote."""
    out = [render_summary_table(payload)]
    names = [n for n in ENV_NAMES if n in payload["environments"]]
    names += [n for n in payload["environments"] if n not in ENV_NAMES]
    savings = []
    for name in names:
        s = payload["environments"][name]["summary"].get("water_savings_pct")
        if s is not None:
            savings.append(f"  {name}: {s:.1f}%")
    if savings:
        out.append("\nWater savings vs flood baseline:\n" + "\n".join(savings) + "\n")
    runtimes = []
    for name in names:
        m = payload["environments"][name].get("endurance_runtime_min")
        if m is not None:
            runtimes.append(f"  {name}: {m:.1f} min")
    if runtimes:
        out.append("\nBattery endurance (looping missions to cutoff):\n"
                   + "\n".join(runtimes) + "\n")
    return "".join(out)


# --------------------------------------------------------------------------
# CSV


def trials_csv_text(env_reports):
    """One row per trial across all environments, full float precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for name in env_reports:
        for r in env_reports[name]:
            writer.writerow(
                ["" if (v := getattr(r, f)) is None else v for f in _CSV_FIELDS]
            )
    return buf.getvalue()


def parse_trials_csv(text):
    """Inverse of trials_csv_text, for consistency checks and replay tooling."""
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for raw in reader:
        row = {}
        for key, val in raw.items():
            if val == "":
                row[key] = None
            elif key in ("env", "abort_cause"):
                row[key] = val
            elif key == "aborted":
                row[key] = val == "True"
            elif key in ("trial", "seed", "pots", "serviced"):
                row[key] = int(val)
            else:
                row[key] = float(val)
        rows.append(row)
    return rows


def trace_csv_text(traces):
    """Tick-level mission traces: {(env, trial): [(t, phase, pot, tilt, V), ...]}."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["env", "trial", "t", "phase", "pot", "tilt_deg", "voltage"])
    for (env, trial), rows in traces.items():
        for t, phase, pot, tilt, volts in rows:
            writer.writerow([env, trial, f"{t:.2f}", phase, pot,
                             f"{tilt:.4f}", f"{volts:.4f}"])
    return buf.getvalue()
