'''
utils.py

Some utilities: messaging, units, seeded random streams, run paths and hashing.
'''

import hashlib
import json
import os
from pathlib import Path

import click
import numpy
import pint

units = pint.UnitRegistry()

# the toolkit never reads the clock for randomness; every stream is derived from
# the run seed plus one of these ids
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_SYNTH = 3
STREAM_RESAMPLE = 4

DEFAULT_RUN_DIR = "runs"
RUN_DIR_ENVVAR = "GPSBEAM_RUN_DIR"

_quiet = False


def set_quiet(flag=True):
    """silence informational messages (warnings and errors still print)"""
    global _quiet
    _quiet = bool(flag)


def msg(text, status=None):
    """
    output messages through Click.echo (cross-platform shell printing).

    status: None for progress, "warning" or "error" for stderr diagnostics
    """
    if status == "warning":
        click.echo(click.style("WARNING: ", fg="yellow") + str(text), err=True)
    elif status == "error":
        click.echo(click.style("ERROR: ", fg="red") + str(text), err=True)
    elif not _quiet:
        click.echo(text)


def derive_rng(seed, *stream):
    """a numpy Generator for one named stream of a seeded run.

    The same (seed, stream) always yields the same sequence, so independent
    consumers (init, shuffling, per-sequence synthesis) never share state.
    """
    return numpy.random.default_rng([int(seed)] + [int(s) for s in stream])


def run_path(run_dir, name=None):
    """complete path generator for run outputs. Creates the run directory.

    Inputs:
        run_dir: directory; falls back to $GPSBEAM_RUN_DIR, then ./runs
        name: file name within the run directory (optional)
    Returns:
        a pathlib.Path
    """
    base = Path(run_dir or os.environ.get(RUN_DIR_ENVVAR) or DEFAULT_RUN_DIR)
    base.mkdir(parents=True, exist_ok=True)
    if name is None:
        return base
    return base / name


def canonical_json(obj):
    """stable JSON text used for config files and hashing"""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def clean(val):
    """post-process empty values ("") read from CSV tables."""
    if val in ["", None]:
        return None
    else:
        return val
