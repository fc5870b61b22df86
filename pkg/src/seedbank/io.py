"""CSV and report-file formats."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import yaml

from .dynamics import CompleteDataset, ObservedDataset
from .errors import ParseError

COMPLETE_HEADER = ["pop", "cycle", "S", "T", "R", "V", "F"]
OBSERVED_HEADER = ["pop", "cycle", "R", "V", "F"]


def fmt(x):
    """Six significant digits, ``.`` decimal separator."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".6g")


def write_complete_csv(data: CompleteDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPLETE_HEADER)
        for k in range(data.K):
            for i in range(data.n + 1):
                w.writerow([k, i, *map(int, data.states[k, i])])
            w.writerow([k, data.n + 1, int(data.terminal[k, 0]), int(data.terminal[k, 1]), "", "", ""])


def write_observed_csv(data: ObservedDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVED_HEADER)
        for k in range(data.K):
            for i in range(data.n + 1):
                w.writerow([k, i, *map(int, data.counts[k, i])])


def _int(text, line, path, column):
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"column {column}: expected an integer, got {text!r}", line, path) from None
    if value < 0 and column != "pop":
        raise ParseError(f"column {column}: counts must be nonnegative, got {value}", line, path)
    return value


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1, path) from None
        rows = [(reader.line_num, row) for row in reader if row]
    return [h.strip() for h in header], rows


def _assemble(records, path, width, needs_terminal):
    """``records`` maps pop -> {cycle: (line, values)}; returns arrays in pop order."""
    pops = sorted(records)
    if not pops:
        raise ParseError("no data rows", 2, path)
    lengths = set()
    for p in pops:
        cycles = records[p]
        last = max(cycles) - (1 if needs_terminal else 0)
        expected = set(range(last + 1 + (1 if needs_terminal else 0)))
        if set(cycles) != expected:
            missing = sorted(expected - set(cycles))
            line = min(ln for ln, _ in cycles.values())
            raise ParseError(f"population {p}: cycles not contiguous from 0 (missing {missing})", line, path)
        lengths.add(last)
    if len(lengths) != 1:
        raise ParseError(f"trajectories have unequal lengths: {sorted(lengths)}", None, path)
    n = lengths.pop()
    if n < 0:
        raise ParseError("a population has only a terminal row", None, path)
    return pops, n


def read_complete_csv(path) -> CompleteDataset:
    header, rows = _read_rows(path)
    if header != COMPLETE_HEADER:
        raise ParseError(f"expected header {','.join(COMPLETE_HEADER)}, got {','.join(header)}", 1, path)
    records = {}
    for line, row in rows:
        if len(row) != 7:
            raise ParseError(f"expected 7 fields, got {len(row)}", line, path)
        pop = _int(row[0], line, path, "pop")
        cycle = _int(row[1], line, path, "cycle")
        if all(c.strip() == "" for c in row[4:]):
            values = (_int(row[2], line, path, "S"), _int(row[3], line, path, "T"), None)
        else:
            values = tuple(_int(v, line, path, col) for v, col in zip(row[2:], COMPLETE_HEADER[2:]))
        slot = records.setdefault(pop, {})
        if cycle in slot:
            raise ParseError(f"duplicate row for population {pop}, cycle {cycle}", line, path)
        slot[cycle] = (line, values)
    pops, n = _assemble(records, path, 5, needs_terminal=True)
    states = np.empty((len(pops), n + 1, 5), dtype=np.int64)
    terminal = np.empty((len(pops), 2), dtype=np.int64)
    for k, p in enumerate(pops):
        for i in range(n + 1):
            line, values = records[p][i]
            if len(values) != 5:
                raise ParseError(f"population {p}, cycle {i}: R, V, F missing before the terminal cycle", line, path)
            states[k, i] = values
        line, values = records[p][n + 1]
        if len(values) != 3 or values[2] is not None:
            raise ParseError(f"population {p}: terminal row (cycle {n + 1}) must leave R, V, F empty", line, path)
        terminal[k] = values[:2]
    return CompleteDataset(states, terminal)


def read_observed_csv(path) -> ObservedDataset:
    """Reads the observed format; a complete-format file is projected onto ``(R, V, F)``."""
    header, rows = _read_rows(path)
    if header == COMPLETE_HEADER:
        from .dynamics import observe

        return observe(read_complete_csv(path))
    if header != OBSERVED_HEADER:
        raise ParseError(f"expected header {','.join(OBSERVED_HEADER)}, got {','.join(header)}", 1, path)
    records = {}
    for line, row in rows:
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", line, path)
        pop = _int(row[0], line, path, "pop")
        cycle = _int(row[1], line, path, "cycle")
        values = tuple(_int(v, line, path, col) for v, col in zip(row[2:], OBSERVED_HEADER[2:]))
        slot = records.setdefault(pop, {})
        if cycle in slot:
            raise ParseError(f"duplicate row for population {pop}, cycle {cycle}", line, path)
        slot[cycle] = (line, values)
    pops, n = _assemble(records, path, 3, needs_terminal=False)
    counts = np.array([[records[p][i][1] for i in range(n + 1)] for p in pops], dtype=np.int64)
    return ObservedDataset(counts)


def write_estimate_csv(rows, path):
    """``rows`` are ``(parameter, estimate, std_error)`` triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "estimate", "std_error"])
        for name, est, se in rows:
            w.writerow([name, fmt(est), fmt(se)])


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(fmt(value)) if math.isfinite(value) else fmt(value)
    return value


def write_kv_report(entries: dict, path):
    """Structured key-value report (YAML mapping, insertion order kept)."""
    Path(path).write_text(yaml.safe_dump(_plain(entries), sort_keys=False, default_flow_style=None))


def read_kv_file(path):
    """Flat ``key: value`` mapping.  Returns ``(values, key_lines)``."""
    text = Path(path).read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ParseError(f"malformed config: {problem}", line, path) from None
    if data is None:
        return {}, {}
    if not isinstance(data, dict):
        raise ParseError("config must be a flat key: value mapping", 1, path)
    key_lines = {}
    for key_node, _ in node.value:
        key_lines[key_node.value] = key_node.start_mark.line + 1
    return data, key_lines
