"""

data_io.py

functions for managing file input/output and extract/transform/load routines:
the canonical dataset CSV, ingest of externally laid out tables, split
manifests, run configs, reports and plot-ready tables.

"""

# standard library
import json
from collections import Counter
from pathlib import Path
# dependencies (3rd party)
import numpy
import petl as etl

from .exceptions import DataValidationError, ParseError, UsageError
from .geo import GeodeticPosition
from .split import RawDataset, RawSample, SPLIT_NAMES
from .utils import canonical_json, clean, msg

BASE_COLUMNS = ("q", "t", "lat_bs", "lon_bs", "lat_ue", "lon_ue", "height_m", "beam")
MANIFEST_COLUMNS = ("q", "t", "split")


def power_columns(M):
    return tuple("p{0}".format(i) for i in range(M))


def canonical_header(M, with_powers=True):
    return BASE_COLUMNS + (power_columns(M) if with_powers else ())


# -----------------------------------------------------------------------------
# canonical dataset

def _sample_row(s):
    row = [
        s.seq_index, s.sample_index,
        float(s.bs_pos.latitude_deg), float(s.bs_pos.longitude_deg),
        float(s.ue_pos.latitude_deg), float(s.ue_pos.longitude_deg),
        float(s.height_m), s.beam,
    ]
    if s.powers is not None:
        row.extend(float(p) for p in s.powers)
    return row


def write_dataset(d, path):
    """
    Write a RawDataset as canonical CSV: header row, UTF-8, \\n line endings,
    power columns p0..p{M-1} as a block when every sample carries powers.
    Floats are written in shortest round-trip form, so re-reading and
    re-writing a file reproduces it byte for byte.
    """
    with_powers = d.has_powers
    rows = [canonical_header(d.codebook_size, with_powers)]
    rows.extend(_sample_row(s) for s in d.samples)
    etl.wrap(rows).tocsv(str(path), encoding="utf-8", lineterminator="\n")
    return path


def _parse_sample(rec, M, line, beam_base=0):
    """RawSample from a dict of canonical fields (string values)"""
    try:
        q = int(rec["q"])
        t = int(rec["t"])
        beam = int(rec["beam"]) - beam_base
        height = float(rec["height_m"])
        bs = GeodeticPosition(float(rec["lat_bs"]), float(rec["lon_bs"]), 0.0)
        ue = GeodeticPosition(float(rec["lat_ue"]), float(rec["lon_ue"]), height)
        powers = None
        if rec.get("powers") is not None:
            powers = tuple(float(p) for p in rec["powers"])
        if not 0 <= beam < M:
            raise DataValidationError("beam {0} outside codebook of size {1}".format(beam + beam_base, M))
        return RawSample(q, t, bs, ue, height, beam, powers)
    except (TypeError, ValueError) as e:
        raise ParseError("could not parse row: {0}".format(e), line)
    except DataValidationError as e:
        raise ParseError(str(e), line)


def read_dataset(path, codebook_size=None):
    """
    Read a canonical dataset CSV into a RawDataset.

    Required Inputs:
        - path: canonical CSV (see canonical_header)
    Optional Inputs:
        - codebook_size: M. Taken from the power columns when present; needed
            for files without powers (falls back to max(beam)+1 with a warning).
    Outputs:
        - RawDataset, ascending by (q, t)
    Raises ParseError (with the 1-based line number) on malformed rows.
    """
    table = etl.fromcsv(str(path), encoding="utf-8")
    header = tuple(etl.header(table))
    if header[:len(BASE_COLUMNS)] != BASE_COLUMNS:
        raise ParseError("header must start with {0}, got {1}".format(",".join(BASE_COLUMNS), ",".join(header)), 1)
    n_powers = len(header) - len(BASE_COLUMNS)
    if n_powers and header[len(BASE_COLUMNS):] != power_columns(n_powers):
        raise ParseError("power columns must be p0..p{0}".format(n_powers - 1), 1)
    if n_powers and codebook_size is not None and codebook_size != n_powers:
        raise UsageError("codebook size {0} disagrees with {1} power columns".format(codebook_size, n_powers))

    width = len(header)
    raw = []
    for i, row in enumerate(etl.data(table)):
        line = i + 2
        if len(row) != width:
            raise ParseError("expected {0} fields, got {1}".format(width, len(row)), line)
        rec = dict(zip(BASE_COLUMNS, row))
        rec["powers"] = row[len(BASE_COLUMNS):] if n_powers else None
        raw.append((rec, line))

    M = n_powers or codebook_size
    if not M:
        try:
            M = max(int(rec["beam"]) for rec, _ in raw) + 1 if raw else 2
        except ValueError as e:
            raise ParseError("could not parse beam column: {0}".format(e))
        M = max(M, 2)
        msg("no power columns and no codebook size given; assuming M={0}".format(M), "warning")

    samples = []
    prev = None
    for rec, line in raw:
        s = _parse_sample(rec, M, line)
        if prev is not None and s.key <= prev:
            raise ParseError("rows must be strictly ascending by (q, t)", line)
        prev = s.key
        samples.append(s)
    return RawDataset(samples, M)


# -----------------------------------------------------------------------------
# ingest

def read_mapping(path):
    """load a column mapping JSON file (canonical field -> external column)"""
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except ValueError as e:
            raise UsageError("could not read column mapping {0}: {1}".format(path, e))


def _power_sources(mapping, header):
    """external power columns in beam order"""
    if "powers" in mapping:
        cols = list(mapping["powers"])
    elif "power_prefix" in mapping:
        prefix = mapping["power_prefix"]
        found = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
        cols = sorted(found, key=lambda h: int(h[len(prefix):]))
    else:
        return []
    missing = [c for c in cols if c not in header]
    if missing:
        raise UsageError("mapped power columns not in input: {0}".format(", ".join(missing)))
    return cols


def ingest(path, mapping=None, beam_base=1, strict=False, codebook_size=None):
    """
    Extract, Transform, and Load an externally laid out table into a RawDataset.

    Required Inputs:
        - path: input CSV
    Optional Inputs:
        - mapping: canonical field -> external column name. A numeric value is
            used as a constant (e.g. a fixed BS latitude). Powers come from
            "powers" (column list, beam order) or "power_prefix" (numbered
            columns). Defaults to the canonical names.
        - beam_base: index of the first beam in the input. Default: 1
        - strict: abort on the first invalid row instead of dropping it
        - codebook_size: M; defaults to the number of power columns
    Outputs:
        - RawDataset (rows sorted by (q, t))
        - counts: OrderedDict-like dict of rows read / kept / dropped, drop
            reasons and sequence gaps
    """
    table = etl.fromcsv(str(path), encoding="utf-8")
    header = tuple(etl.header(table))
    mapping = dict(mapping) if mapping else {}
    if not mapping:
        mapping = {c: c for c in BASE_COLUMNS}
        mapping["power_prefix"] = "p"

    pcols = _power_sources(mapping, header)
    M = codebook_size or len(pcols)
    if not M:
        raise UsageError("codebook size is required when the input has no power columns")
    if pcols and len(pcols) != M:
        raise UsageError("codebook size {0} disagrees with {1} power columns".format(M, len(pcols)))

    # number rows before any reordering so errors point at input lines
    t1 = etl.addrownumbers(table, field="_row")
    for field in BASE_COLUMNS:
        src = mapping.get(field)
        if src is None:
            raise UsageError("no mapping for column '{0}'".format(field))
        if isinstance(src, (int, float)):
            t1 = etl.addfield(t1, "_" + field, src)
        elif src not in header:
            raise UsageError("mapped column '{0}' for '{1}' not in input".format(src, field))
        else:
            t1 = etl.addfield(t1, "_" + field, lambda r, s=src: clean(r[s]))
    keep = ["_row"] + ["_" + f for f in BASE_COLUMNS] + pcols
    t2 = etl.cut(t1, *keep)

    reasons = Counter()
    parsed = []
    for rec in etl.dicts(t2):
        line = rec["_row"] + 1
        fields = {f: rec["_" + f] for f in BASE_COLUMNS}
        fields["powers"] = [rec[c] for c in pcols] if pcols else None
        try:
            parsed.append(_parse_sample(fields, M, line, beam_base))
        except ParseError as e:
            if strict:
                raise
            reasons[_reason(e)] += 1
            msg("dropped {0}".format(e), "warning")

    parsed.sort(key=lambda s: s.key)
    samples = []
    gaps = 0
    for s in parsed:
        if samples and s.key == samples[-1].key:
            if strict:
                raise ParseError("duplicate sample (q={0}, t={1})".format(*s.key))
            reasons["duplicate"] += 1
            continue
        if samples and s.seq_index == samples[-1].seq_index and s.sample_index != samples[-1].sample_index + 1:
            gaps += 1
        samples.append(s)

    n_rows = len(parsed) + sum(v for k, v in reasons.items() if k != "duplicate")
    counts = {
        "rows": n_rows,
        "kept": len(samples),
        "dropped": n_rows - len(samples),
        "reasons": dict(sorted(reasons.items())),
        "gaps": gaps,
    }
    if counts["dropped"]:
        msg("{0} of {1} rows dropped by validation".format(counts["dropped"], n_rows), "warning")
    if gaps:
        msg("{0} gap(s) in sample indices within sequences".format(gaps))
    return RawDataset(samples, M), counts


def _reason(err):
    text = str(err)
    if "argmax" in text:
        return "beam_power_mismatch"
    if "outside codebook" in text:
        return "beam_out_of_range"
    if "could not parse" in text:
        return "unparseable"
    return "invalid_value"


# -----------------------------------------------------------------------------
# manifests

def write_manifest(path, splits):
    """one row per sample: q, t and the split it belongs to, ascending by (q, t)"""
    rows = []
    for name, part in zip(SPLIT_NAMES, splits):
        rows.extend((s.seq_index, s.sample_index, name) for s in part.samples)
    rows.sort()
    etl.wrap([MANIFEST_COLUMNS] + rows).tocsv(str(path), encoding="utf-8", lineterminator="\n")
    return path


def read_manifest(path, d):
    """
    apply a split manifest to a dataset. Every sample must be assigned exactly
    once. Returns (train, val, test) RawDatasets.
    """
    table = etl.fromcsv(str(path), encoding="utf-8")
    if tuple(etl.header(table)) != MANIFEST_COLUMNS:
        raise ParseError("manifest header must be {0}".format(",".join(MANIFEST_COLUMNS)), 1)
    assignment = {}
    for i, (q, t, name) in enumerate(etl.data(table)):
        if name not in SPLIT_NAMES:
            raise ParseError("unknown split '{0}'".format(name), i + 2)
        try:
            key = (int(q), int(t))
        except ValueError as e:
            raise ParseError(str(e), i + 2)
        if key in assignment:
            raise ParseError("sample {0} assigned twice".format(key), i + 2)
        assignment[key] = name
    keys = {s.key for s in d.samples}
    if set(assignment) != keys:
        raise DataValidationError(
            "manifest covers {0} samples, dataset has {1} ({2} unmatched)".format(
                len(assignment), len(keys), len(set(assignment) ^ keys)))
    return tuple(d.subset([s for s in d.samples if assignment[s.key] == name]) for name in SPLIT_NAMES)


# -----------------------------------------------------------------------------
# run artifacts

def write_table(rows, path):
    """write a list of dicts (sharing one key order) as CSV"""
    if not rows:
        raise DataValidationError("no rows to write to {0}".format(path))
    header = list(rows[0].keys())
    etl.fromdicts(rows, header=header).tocsv(str(path), encoding="utf-8", lineterminator="\n")
    return path


def read_table(path):
    return list(etl.dicts(etl.fromcsv(str(path), encoding="utf-8")))


def write_lines(path, lines):
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def write_config(path, config):
    Path(path).write_text(canonical_json(config), encoding="utf-8")
    return path


def read_config(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def window_powers(d, windows, V):
    """(N, V+1, M) power vectors at each window's label positions, or None when
    the dataset has no powers"""
    if not d.has_powers or not windows:
        return None
    lookup = {s.key: s.powers for s in d.samples}
    return numpy.array([
        [lookup[(w.origin[0], w.origin[1] + v)] for v in range(V + 1)] for w in windows
    ], dtype=numpy.float64)
