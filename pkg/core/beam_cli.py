'''
GPS-aided beam prediction & tracking command line interface
'''

import sys
from pathlib import Path

import click

# application
from core.logic import RunConfig, TrainedModel, train as train_model, report_for, evaluate_windows, breakdown as breakdown_study
from core.logic.data_io import (
    read_dataset, write_dataset, ingest as ingest_table, read_mapping,
    write_manifest, read_manifest, write_table, write_lines, write_config
)
from core.logic.exceptions import BeamError, UsageError
from core.logic.geo import GeodeticPosition
from core.logic.metrics import report_lines, top_k_table, reliability_curve, scenario_noise_power
from core.logic.nn import HyperParams
from core.logic.split import SplitConfig, SPLIT_NAMES, split_dataset, split_report, reduce_codebook
from core.logic.synth import ScenarioConfig, generate
from core.logic.utils import msg, set_quiet, run_path, RUN_DIR_ENVVAR

CHECKPOINT_NAME = "checkpoint.bin"
MANIFEST_NAME = "manifest.csv"
CONFIG_NAME = "config.json"

RELIABILITY_GRID_DB = tuple(x / 2.0 for x in range(0, 21))


def _check_output(path, force):
    if Path(path).exists() and not force:
        raise UsageError("{0} exists; pass --force to overwrite".format(path))


def _split_config(f_train, f_val, f_test, min_seq_len=SplitConfig.min_seq_len):
    return SplitConfig(f_train=f_train, f_val=f_val, f_test=f_test, min_seq_len=min_seq_len)


def _splits_for(model, d, manifest):
    """the split of d the model was trained with: from a manifest when one is
    available, otherwise recomputed from the checkpoint's split settings"""
    if manifest and Path(manifest).exists():
        return read_manifest(manifest, d)
    s = model.meta["split"]
    cfg = SplitConfig(s["f_train"], s["f_val"], s["f_test"], tuple(s["chunk_percentages"]), s["min_seq_len"])
    return split_dataset(d, cfg, model.meta["split_method"])


# main click entry point
@click.group()
@click.option('--quiet', '-q', is_flag=True, help="only print warnings and errors")
def cli(quiet):
    """
    GPS-aided mmWave beam prediction & tracking toolkit.
    """
    set_quiet(quiet)


@cli.command()
@click.option('--output', '-o', required=True, type=click.Path(dir_okay=False), help="canonical dataset CSV to write")
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--sequences', default=20, show_default=True, type=int, help="number of trajectories")
@click.option('--len', 'seq_len', default=60, show_default=True, type=int, help="samples per trajectory (1 Hz)")
@click.option('--M', '--codebook', 'M', default=32, show_default=True, type=int, help="codebook size")
@click.option('--bs-lat', default=33.4199, show_default=True, type=float)
@click.option('--bs-lon', default=-111.9290, show_default=True, type=float)
@click.option('--sector', nargs=2, default=(-60.0, 60.0), show_default=True, type=float, help="served azimuth arc, degrees from north")
@click.option('--kappa', default=ScenarioConfig.kappa, show_default=True, type=float, help="angular power decay per squared bin width")
@click.option('--jitter', default=2.0, show_default=True, type=float, help="waypoint jitter, meters")
@click.option('--drift', is_flag=True, help="slide each sequence's sub-arc across the sector with q")
@click.option('--force', is_flag=True, help="overwrite an existing output")
def synth(output, seed, sequences, seq_len, M, bs_lat, bs_lon, sector, kappa, jitter, drift, force):
    """
    Generate a synthetic UAV scenario with geometric beam labels.
    """
    _check_output(output, force)
    cfg = ScenarioConfig(
        bs_pos=GeodeticPosition(bs_lat, bs_lon, 0.0), M=M, sector=tuple(sector),
        n_sequences=sequences, seq_len=seq_len, jitter_m=jitter, seed=seed,
        kappa=kappa, drift=drift,
    )
    d = generate(cfg)
    write_dataset(d, output)
    write_config(Path(output).with_suffix(".config.json"), cfg.to_dict())
    msg("Dataset saved\n\t{0} ({1} rows)".format(output, len(d)))
    return output


@cli.command()
@click.argument('input_csv', type=click.Path(exists=True, dir_okay=False))
@click.option('--output', '-o', required=True, type=click.Path(dir_okay=False), help="canonical dataset CSV to write")
@click.option('--mapping', type=click.Path(exists=True, dir_okay=False), help="JSON column mapping (canonical -> input column)")
@click.option('--beam-base', default=1, show_default=True, type=int, help="index of the first beam in the input")
@click.option('--M', 'M', default=None, type=int, help="codebook size (defaults to the number of power columns)")
@click.option('--reduce-codebook', 'reduce_to', default=None, type=int, help="merge adjacent beams down to this codebook size")
@click.option('--strict', is_flag=True, help="abort on the first invalid row")
@click.option('--force', is_flag=True, help="overwrite an existing output")
def ingest(input_csv, output, mapping, beam_base, M, reduce_to, strict, force):
    """
    Convert an externally laid out table into the canonical dataset CSV.
    """
    _check_output(output, force)
    d, counts = ingest_table(
        input_csv,
        mapping=read_mapping(mapping) if mapping else None,
        beam_base=beam_base, strict=strict, codebook_size=M,
    )
    if reduce_to:
        d = reduce_codebook(d, reduce_to)
    write_dataset(d, output)
    write_config(Path(output).with_suffix(".ingest.json"), {
        "input": str(input_csv), "mapping": mapping, "beam_base": beam_base, "codebook_size": d.codebook_size,
        "reduce_codebook": reduce_to, "strict": strict, "counts": counts,
    })
    msg("Ingested {0} of {1} rows\n\t{2}".format(counts["kept"], counts["rows"], output))
    return output


@cli.command()
@click.argument('dataset', type=click.Path(exists=True, dir_okay=False))
@click.option('--method', type=click.Choice(['adjusted', 'sequential']), default='adjusted', show_default=True)
@click.option('--train', 'f_train', default=0.65, show_default=True, type=float)
@click.option('--val', 'f_val', default=0.15, show_default=True, type=float)
@click.option('--test', 'f_test', default=0.20, show_default=True, type=float)
@click.option('--run-dir', envvar=RUN_DIR_ENVVAR, type=click.Path(file_okay=False), help="output directory [$GPSBEAM_RUN_DIR or ./runs]")
def split(dataset, method, f_train, f_val, f_test, run_dir):
    """
    Split a dataset and report per-split label distributions.
    """
    cfg = _split_config(f_train, f_val, f_test)
    d = read_dataset(dataset)
    splits = split_dataset(d, cfg, method)
    rows, score = split_report(d, splits)
    write_config(run_path(run_dir, CONFIG_NAME), {"dataset": str(dataset), "method": method, "split": cfg.to_dict()})
    write_manifest(run_path(run_dir, MANIFEST_NAME), splits)
    write_table(rows, run_path(run_dir, "distribution.csv"))
    write_lines(run_path(run_dir, "split.txt"), [
        "method={0}".format(method),
        "similarity_score={0!r}".format(score),
    ] + ["size.{0}={1}".format(n, len(p)) for n, p in zip(SPLIT_NAMES, splits)])
    msg("{0} split: {1} (similarity score {2:.6f})".format(
        method, " / ".join(str(len(p)) for p in splits), score))
    return score


@cli.command()
@click.argument('dataset', type=click.Path(exists=True, dir_okay=False))
@click.option('--run-dir', envvar=RUN_DIR_ENVVAR, type=click.Path(file_okay=False), help="output directory [$GPSBEAM_RUN_DIR or ./runs]")
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--split-method', type=click.Choice(['adjusted', 'sequential']), default='adjusted', show_default=True)
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False), help="reuse an existing split manifest")
@click.option('--train', 'f_train', default=0.65, show_default=True, type=float)
@click.option('--val', 'f_val', default=0.15, show_default=True, type=float)
@click.option('--test', 'f_test', default=0.20, show_default=True, type=float)
@click.option('--features', type=click.Choice(['combined', 'position', 'unit_vector']), default='combined', show_default=True)
@click.option('--select', type=click.Choice(['best', 'final']), default='best', show_default=True)
@click.option('--decoder-h0', type=click.Choice(['context', 'zero']), default='context', show_default=True)
@click.option('--bounds-scope', type=click.Choice(['train', 'all']), default='train', show_default=True)
@click.option('--dtype', type=click.Choice(['float64', 'float32']), default='float64', show_default=True)
@click.option('--epochs', default=20, show_default=True, type=int)
@click.option('--batch-size', default=8, show_default=True, type=int)
@click.option('--lr', default=5e-4, show_default=True, type=float)
@click.option('--window', '-W', 'W', default=8, show_default=True, type=int, help="observation window length")
@click.option('--horizon', '-V', 'V', default=3, show_default=True, type=int, help="future steps predicted")
@click.option('--min-seq-len', default=None, type=int, help="shortest sequence kept whole by the adjusted split [default: W+V]")
@click.option('--M', '--codebook', 'M', default=None, type=int, help="codebook size (needed when the dataset has no power columns)")
def train(dataset, run_dir, seed, split_method, manifest, f_train, f_val, f_test, features, select,
          decoder_h0, bounds_scope, dtype, epochs, batch_size, lr, W, V, min_seq_len, M):
    """
    Train the beam prediction & tracking model.
    """
    d = read_dataset(dataset, M)
    drops = tuple(e for e in HyperParams().lr_drop_epochs if e <= epochs)
    hp = HyperParams(epochs=epochs, train_batch=batch_size, lr=lr, lr_drop_epochs=drops, W=W, V=V, M=d.codebook_size)
    cfg = RunConfig(
        split=_split_config(f_train, f_val, f_test, min_seq_len or W + V), hp=hp, seed=seed, method=split_method,
        feature_set=features, bounds_scope=bounds_scope, select=select, decoder_h0=decoder_h0,
        dtype=dtype, dataset=str(dataset),
    )
    splits = read_manifest(manifest, d) if manifest else split_dataset(d, cfg.split, cfg.method)

    write_config(run_path(run_dir, CONFIG_NAME), cfg.to_dict())
    write_manifest(run_path(run_dir, MANIFEST_NAME), splits)
    model, report = train_model(d, cfg, splits=splits)
    model.save(run_path(run_dir, CHECKPOINT_NAME))
    write_lines(run_path(run_dir, "report.txt"), report.lines())
    write_lines(run_path(run_dir, "timing.txt"), ["wall_time_s={0:.3f}".format(report.wall_time)])
    msg("Run saved\n\t{0}".format(run_path(run_dir)))
    return model


@cli.command(name="eval")
@click.argument('checkpoint', type=click.Path(exists=True, dir_okay=False))
@click.argument('dataset', type=click.Path(exists=True, dir_okay=False))
@click.option('--split', 'split_name', type=click.Choice(list(SPLIT_NAMES)), default='test', show_default=True)
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False), help="split manifest [default: next to the checkpoint]")
@click.option('--topk', multiple=True, type=int, help="additional Top-K accuracies to report (repeatable)")
@click.option('--noise-floor', type=click.Choice(['sample', 'scenario']), default='sample', show_default=True)
@click.option('--out-dir', type=click.Path(file_okay=False), help="where to write reports [default: the checkpoint's directory]")
def evaluate_cmd(checkpoint, dataset, split_name, manifest, topk, noise_floor, out_dir):
    """
    Evaluate a checkpoint on one split: metrics report plus plot-ready tables.
    """
    model = TrainedModel.load(checkpoint)
    d = read_dataset(dataset, model.params.config.M)
    part = _splits_for(model, d, manifest or Path(checkpoint).parent / MANIFEST_NAME)[SPLIT_NAMES.index(split_name)]
    out = Path(out_dir or Path(checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)

    _, per_step = evaluate_windows(model, part)
    report = report_for(model, per_step, noise_floor=noise_floor)
    write_config(out / "eval_{0}.config.json".format(split_name), {
        "checkpoint": str(checkpoint), "dataset": str(dataset), "split": split_name,
        "topk": sorted(topk), "noise_floor": noise_floor,
    })
    lines = report_lines(report, topk=(1,) + tuple(topk))
    write_lines(out / "metrics_{0}.txt".format(split_name), lines)
    write_table(top_k_table(report), out / "topk_{0}.csv".format(split_name))
    write_table(report.overhead, out / "overhead_{0}.csv".format(split_name))

    if report.has_powers:
        noise = scenario_noise_power(per_step) if noise_floor == "scenario" else None
        rows = []
        for v, step in enumerate(per_step):
            for row in reliability_curve(step, RELIABILITY_GRID_DB, noise):
                row["step"] = v
                rows.append(row)
        write_table(rows, out / "reliability_{0}.csv".format(split_name))
    for line in lines:
        msg(line)
    return report


@cli.command()
@click.argument('checkpoint', type=click.Path(exists=True, dir_okay=False))
@click.argument('dataset', type=click.Path(exists=True, dir_okay=False))
@click.option('--split', 'split_name', type=click.Choice(list(SPLIT_NAMES)), default='test', show_default=True)
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False), help="split manifest [default: next to the checkpoint]")
@click.option('--n-samples', default=56, show_default=True, type=int, help="windows per resampling draw")
@click.option('--rounds', default=20, show_default=True, type=int, help="resampling rounds")
@click.option('--height-edges', nargs=2, default=(40.0, 80.0), show_default=True, type=float)
@click.option('--speed-edges', nargs=2, default=(8.0, 14.0), show_default=True, type=float)
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--out-dir', type=click.Path(file_okay=False), help="where to write tables [default: the checkpoint's directory]")
def breakdown(checkpoint, dataset, split_name, manifest, n_samples, rounds, height_edges, speed_edges, seed, out_dir):
    """
    Accuracy and power loss by UAV height and speed category.
    """
    model = TrainedModel.load(checkpoint)
    d = read_dataset(dataset, model.params.config.M)
    part = _splits_for(model, d, manifest or Path(checkpoint).parent / MANIFEST_NAME)[SPLIT_NAMES.index(split_name)]
    out = Path(out_dir or Path(checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)

    write_config(out / "breakdown_{0}.config.json".format(split_name), {
        "checkpoint": str(checkpoint), "dataset": str(dataset), "split": split_name, "n_samples": n_samples,
        "rounds": rounds, "height_edges": list(height_edges), "speed_edges": list(speed_edges), "seed": seed,
    })
    rows, resampled = breakdown_study(model, part, tuple(height_edges), tuple(speed_edges), n_samples, rounds, seed)
    write_table(rows, out / "breakdown.csv")
    write_table(resampled, out / "resampled.csv")
    for row in resampled:
        msg("{0:<7} {1:<7} n={2:<5} top1 {3:.3f} +/- {4:.3f}".format(
            row["factor"], row["category"], row["count"], row["top1_mean.step0"], row["top1_std.step0"]))
    return rows


def main(argv=None):
    """run the CLI and map failures to exit codes:
    0 success, 1 usage, 2 data validation, 3 runtime"""
    try:
        cli.main(args=argv, prog_name="gpsbeam", standalone_mode=False)
    except click.exceptions.Abort:
        msg("aborted", "error")
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except BeamError as e:
        msg(str(e), "error")
        return e.exit_code
    except Exception as e:
        msg("{0}: {1}".format(type(e).__name__, e), "error")
        return 3
    return 0


if __name__ == '__main__':
    sys.exit(main())
