"""File formats: key-value parameter documents and the cohort CSV files.

Parameter documents are plain text, one ``key = value`` per line, ``#``
comments allowed; arrays are bracketed comma lists (nested for matrices).
Floats are always written with 17 significant digits.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import Dataset, FixedEffects, Hyperparameters, PatientRecord, RandomEffects


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _fmt_value(v) -> str:
    if isinstance(v, np.ndarray):
        v = v.tolist()
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    if isinstance(v, str):
        return v
    return fmt(v)


def _parse_value(text: str):
    text = text.strip()
    if text.startswith("["):
        try:
            return np.array(json.loads(text), dtype=float)
        except (ValueError, json.JSONDecodeError) as exc:
            raise ValidationError(f"malformed array value: {text!r}") from exc
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def write_params(path, values: dict) -> None:
    lines = [f"{key} = {_fmt_value(val)}" for key, val in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


FIXED_KEYS = ("t0", "sigma_tau", "sigma_xi", "g", "v0", "sigma_noise", "nu", "rho", "beta", "zeta")


def fixed_effects_from_dict(d: dict) -> FixedEffects:
    missing = [k for k in FIXED_KEYS if k not in d]
    if missing:
        raise ValidationError(f"missing parameter(s): {', '.join(missing)}")
    fe = FixedEffects(**{k: d[k] for k in FIXED_KEYS})
    fe.validate()
    return fe


def save_fixed_effects(path, fe: FixedEffects, extra: dict | None = None) -> None:
    values = dict(fe.as_dict())
    values.update(extra or {})
    write_params(path, values)


def load_fixed_effects(path) -> FixedEffects:
    return fixed_effects_from_dict(read_params(path))


HYPER_KEYS = ("n_outcomes", "n_events", "n_sources", "sigma_g", "sigma_v0", "sigma_nu",
              "sigma_rho", "sigma_beta", "sigma_zeta")


def hyperparameters_from_dict(d: dict, **defaults) -> Hyperparameters:
    merged = {**defaults, **{k: d[k] for k in HYPER_KEYS if k in d}}
    unknown = set(d) - set(HYPER_KEYS)
    if unknown:
        raise ValidationError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
    return Hyperparameters(**merged)


# --- cohort CSV files --------------------------------------------------------


def _read_csv(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    return header, rows


def _number(path, rowno, column, text, cast=float):
    try:
        value = cast(text)
    except ValueError:
        raise ValidationError(f"{path}: row {rowno}, column '{column}': cannot parse {text!r}") from None
    if cast is float and not np.isfinite(value):
        raise ValidationError(f"{path}: row {rowno}, column '{column}': non-finite value")
    return value


def read_dataset(directory, allow_missing_visits: bool = False) -> Dataset:
    """Read ``visits.csv`` and ``events.csv`` from ``directory``."""
    directory = Path(directory)
    vpath, epath = directory / "visits.csv", directory / "events.csv"
    header, rows = _read_csv(vpath)
    if header[:2] != ["patient_id", "time_years"] or len(header) < 4:
        raise ValidationError(f"{vpath}: header must be patient_id,time_years,y_0,...,y_K-1")
    K = len(header) - 2
    visits: dict[str, list] = {}
    for rowno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(f"{vpath}: row {rowno}: expected {len(header)} columns, got {len(row)}")
        pid = row[0].strip()
        t = _number(vpath, rowno, "time_years", row[1])
        y = [_number(vpath, rowno, header[2 + k], row[2 + k]) for k in range(K)]
        for k, val in enumerate(y):
            if not 0 < val < 1:
                raise ValidationError(f"{vpath}: row {rowno}, column '{header[2 + k]}': value {val} outside (0, 1)")
        visits.setdefault(pid, []).append((t, y))

    header, rows = _read_csv(epath)
    if header != ["patient_id", "event_time_years", "event_code"]:
        raise ValidationError(f"{epath}: header must be patient_id,event_time_years,event_code")
    events = {}
    for rowno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise ValidationError(f"{epath}: row {rowno}: expected 3 columns, got {len(row)}")
        pid = row[0].strip()
        if pid in events:
            raise ValidationError(f"{epath}: row {rowno}: duplicate patient '{pid}'")
        events[pid] = (_number(epath, rowno, "event_time_years", row[1]),
                       _number(epath, rowno, "event_code", row[2], int))

    missing = [pid for pid in visits if pid not in events]
    if missing:
        raise ValidationError(f"{epath}: no event row for patient '{missing[0]}'")
    order = list(visits) + ([pid for pid in events if pid not in visits] if allow_missing_visits else [])
    patients = []
    for pid in order:
        vis = sorted(visits.get(pid, []), key=lambda v: v[0])
        times = np.array([v[0] for v in vis])
        values = np.array([v[1] for v in vis]).reshape(len(vis), K)
        t_e, code = events[pid]
        patients.append(PatientRecord(pid, times, values, t_e, code))
    return Dataset(patients, n_outcomes=K)


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(x) for x in row])


def write_dataset(directory, dataset: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    K = dataset.n_outcomes
    write_csv(
        directory / "visits.csv",
        ["patient_id", "time_years"] + [f"y_{k}" for k in range(K)],
        ([p.id, t, *y] for p in dataset.patients for t, y in zip(p.times, p.values)),
    )
    write_csv(
        directory / "events.csv",
        ["patient_id", "event_time_years", "event_code"],
        ([p.id, p.event_time, p.event_code] for p in dataset.patients),
    )


def write_random_effects(path, ids, re: RandomEffects) -> None:
    Ns = re.sources.shape[1]
    write_csv(
        path,
        ["patient_id", "xi", "tau"] + [f"s_{m + 1}" for m in range(Ns)],
        ([pid, x, t, *s] for pid, x, t, s in zip(ids, re.xi, re.tau, re.sources)),
    )


def read_random_effects(path) -> tuple[list, RandomEffects]:
    header, rows = _read_csv(path)
    if header[:3] != ["patient_id", "xi", "tau"]:
        raise ValidationError(f"{path}: header must start with patient_id,xi,tau")
    ids, vals = [], []
    for rowno, row in enumerate(rows, start=2):
        ids.append(row[0].strip())
        vals.append([_number(path, rowno, header[c], row[c]) for c in range(1, len(header))])
    arr = np.array(vals).reshape(len(rows), len(header) - 1)
    return ids, RandomEffects(arr[:, 0], arr[:, 1], arr[:, 2:])
