"""

Core - GPS-aided beam prediction & tracking

The functions here are called from the CLI (core/beam_cli.py) and the tests.

---

# Some notes

- Dataset: one row per 1 Hz sample, grouped into sequences (q) of consecutive
    samples (t). Each carries the BS and UE positions, the UE flight height,
    the optimal beam and, optionally, the received power of every beam.
- Splitting: sequential or adjusted (label-distribution aware). Normalization
    bounds are fitted on the train split only.
- Windows: W past positions -> the beams at t..t+V.
- Model: conv + GRU encoder/decoder, trained with Adam; the lowest validation
    loss epoch is kept unless `select="final"`.

Output of a training run is a checkpoint (parameters + everything needed to
rebuild the features) and a TrainReport.
"""

# -----------------------------------------------------------------------------
# IMPORTS
#

# standard library imports
import time
from collections import OrderedDict
from dataclasses import dataclass, field

# dependencies
import numpy

# application imports
from .exceptions import EmptySet, InsufficientData, UsageError
from .geo import NormalizationBounds, feature_columns, fit_bounds
from .metrics import build_report, eval_samples, DEFAULT_TARGETS, DEFAULT_THRESHOLDS_DB
from .nn import (
    HyperParams, ModelConfig, AdamState, PROB_FLOOR,
    init_params, forward, cross_entropy, backward, adam_step, lr_schedule,
    predict, count_params, size_mib, save_checkpoint, load_checkpoint
)
from .split import SplitConfig, SPLIT_NAMES, split_dataset, build_windows, window_arrays, sample_speeds
from .studies import categorize_height, categorize_speed, category_breakdown, resampled_top1, \
    HEIGHT_EDGES_M, SPEED_EDGES_MPS
from .data_io import window_powers
from .utils import derive_rng, config_hash, msg, STREAM_SHUFFLE


# -----------------------------------------------------------------------------
# Globals
#

SELECT_RULES = ("best", "final")
BOUNDS_SCOPES = ("train", "all")


@dataclass(frozen=True)
class RunConfig:
    """fully resolved settings of a training run"""
    split: SplitConfig = field(default_factory=SplitConfig)
    hp: HyperParams = field(default_factory=HyperParams)
    seed: int = 0
    method: str = "adjusted"
    feature_set: str = "combined"
    bounds_scope: str = "train"
    select: str = "best"
    decoder_h0: str = "context"
    dtype: str = "float64"
    dataset: str = None

    def __post_init__(self):
        feature_columns(self.feature_set)
        if self.method not in ("adjusted", "sequential"):
            raise UsageError("unknown split method '{0}' (sequential|adjusted)".format(self.method))
        if self.bounds_scope not in BOUNDS_SCOPES:
            raise UsageError("bounds scope must be one of {0}".format(BOUNDS_SCOPES))
        if self.select not in SELECT_RULES:
            raise UsageError("model selection must be one of {0}".format(SELECT_RULES))

    def model_config(self):
        return ModelConfig(
            n_features=len(feature_columns(self.feature_set)),
            M=self.hp.M, W=self.hp.W, V=self.hp.V,
            decoder_h0=self.decoder_h0, dtype=self.dtype,
        )

    def to_dict(self):
        return OrderedDict([
            ("bounds_scope", self.bounds_scope),
            ("dataset", self.dataset),
            ("decoder_h0", self.decoder_h0),
            ("dtype", self.dtype),
            ("feature_set", self.feature_set),
            ("hyperparams", self.hp.to_dict()),
            ("method", self.method),
            ("seed", self.seed),
            ("select", self.select),
            ("split", self.split.to_dict()),
        ])


@dataclass
class TrainReport:
    train_loss: list
    val_loss: list
    val_top1: list
    lr: list
    selected_epoch: int
    select: str
    seed: int
    config_hash: str
    windows: dict
    wall_time: float = 0.0

    def lines(self):
        """`key=value` lines; wall time is left out so identical runs match byte for byte"""
        out = [
            ("seed", self.seed),
            ("config_hash", self.config_hash),
            ("select", self.select),
            ("selected_epoch", self.selected_epoch),
        ]
        for name in SPLIT_NAMES:
            out.append(("windows." + name, self.windows[name]))
        for e, (lr, tl, vl, acc) in enumerate(zip(self.lr, self.train_loss, self.val_loss, self.val_top1), start=1):
            out.append(("epoch{0}.lr".format(e), lr))
            out.append(("epoch{0}.train_loss".format(e), tl))
            out.append(("epoch{0}.val_loss".format(e), vl))
            for v, a in enumerate(acc):
                out.append(("epoch{0}.val_top1.step{1}".format(e, v), a))
        return ["{0}={1}".format(k, repr(v) if isinstance(v, float) else v) for k, v in out]


@dataclass
class TrainedModel:
    """model parameters plus the run context needed to rebuild its inputs"""
    params: object
    meta: dict

    @property
    def bounds(self):
        return NormalizationBounds.from_dict(self.meta["bounds"])

    @property
    def columns(self):
        return feature_columns(self.meta["feature_set"])

    @property
    def hp(self):
        return HyperParams.from_dict(self.meta["hyperparams"])

    def save(self, path):
        return save_checkpoint(path, self.params, self.meta)

    @classmethod
    def load(cls, path):
        params, meta = load_checkpoint(path)
        return cls(params, meta)


# -----------------------------------------------------------------------------
# Helpers
#

def _split_windows(d, bounds, hp, columns):
    windows = build_windows(d, bounds, hp.W, hp.V)
    if not windows:
        return windows, None, None
    X, Y = window_arrays(windows)
    return windows, X[:, :, list(columns)], Y


def validation_scores(params, X, Y, batch_size):
    """(loss, per-step Top-1) of a window set in eval mode. The loss uses the
    training objective: per-window sum over steps of -ln p, averaged."""
    scores = predict(params, X, batch_size)
    p = numpy.take_along_axis(scores, Y[..., None], axis=-1)[..., 0]
    loss = float((-numpy.log(numpy.maximum(p, PROB_FLOOR))).sum(axis=1).mean())
    top1 = [float(v) for v in (numpy.argmax(scores, axis=-1) == Y).mean(axis=0)]
    return loss, top1


# -----------------------------------------------------------------------------
# Application controller
#

def train(dataset, cfg=None, splits=None):
    """Split, window and train on a RawDataset.

    Arguments:
        dataset {RawDataset} -- the full dataset
        cfg {RunConfig} -- run settings (default: {RunConfig()})
        splits {tuple} -- <optional> precomputed (train, val, test) RawDatasets,
            e.g. read back from a split manifest (default: {None})

    Returns:
        (TrainedModel, TrainReport)
    """
    cfg = cfg or RunConfig()
    hp = cfg.hp
    if hp.M != dataset.codebook_size:
        raise UsageError("hyperparameter M={0} does not match the dataset codebook ({1})".format(
            hp.M, dataset.codebook_size))
    started = time.perf_counter()

    # -----------------------------------------------------
    # SPLIT

    if splits is None:
        msg("Splitting {0} samples ({1})...".format(len(dataset), cfg.method))
        splits = split_dataset(dataset, cfg.split, cfg.method)
    train_d, val_d, test_d = splits
    if len(train_d) < 2:
        raise InsufficientData("the train split holds {0} sample(s)".format(len(train_d)))

    # -----------------------------------------------------
    # NORMALIZATION BOUNDS (train split only unless told otherwise)

    fit_on = train_d if cfg.bounds_scope == "train" else dataset
    bounds = fit_bounds([s.ue_pos for s in fit_on.samples])

    # -----------------------------------------------------
    # WINDOWS

    columns = feature_columns(cfg.feature_set)
    sets = {}
    for name, part in zip(SPLIT_NAMES, splits):
        windows, X, Y = _split_windows(part, bounds, hp, columns)
        if name != "test" and not windows:
            raise InsufficientData(
                "the {0} split yields no windows with W={1}, V={2}".format(name, hp.W, hp.V))
        sets[name] = (X, Y, len(windows))
    msg("Windows: " + ", ".join("{0}={1}".format(n, sets[n][2]) for n in SPLIT_NAMES))

    Xtr, Ytr, n_train = sets["train"]
    Xva, Yva, _ = sets["val"]

    # -----------------------------------------------------
    # TRAIN

    model_cfg = cfg.model_config()
    params = init_params(model_cfg, cfg.seed)
    count, size_bytes = count_params(params)
    msg("Model: {0} trainable parameters ({1:.3f} MiB at 32 bits)".format(count, size_mib(size_bytes)))

    state = AdamState()
    history = OrderedDict((k, []) for k in ("train_loss", "val_loss", "val_top1", "lr"))
    best = None
    for epoch in range(1, hp.epochs + 1):
        lr = lr_schedule(epoch, hp)
        order = derive_rng(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n_train)
        total = 0.0
        for start in range(0, n_train, hp.train_batch):
            idx = order[start:start + hp.train_batch]
            params.zero_grad()
            loss = cross_entropy(forward(params, Xtr[idx], mode="train"), Ytr[idx])
            backward(loss)
            adam_step(params, params.grads(), state, hp, epoch)
            total += float(loss.data) * len(idx)

        val_loss, val_top1 = validation_scores(params, Xva, Yva, hp.val_batch)
        history["train_loss"].append(total / n_train)
        history["val_loss"].append(val_loss)
        history["val_top1"].append(val_top1)
        history["lr"].append(lr)
        msg("epoch {0:>3d}  lr {1:.2e}  train {2:.5f}  val {3:.5f}  top1 {4}".format(
            epoch, lr, total / n_train, val_loss, " ".join("{0:.3f}".format(a) for a in val_top1)))

        # strict < keeps the earlier epoch on ties
        if best is None or val_loss < best[0]:
            best = (val_loss, epoch, params.copy())

    if cfg.select == "best":
        selected_epoch, chosen = best[1], best[2]
    else:
        selected_epoch, chosen = hp.epochs, params
    msg("Selected epoch {0} ({1})".format(selected_epoch, cfg.select))

    resolved = cfg.to_dict()
    meta = OrderedDict([
        ("bounds", bounds.to_dict()),
        ("bounds_scope", cfg.bounds_scope),
        ("config_hash", config_hash(resolved)),
        ("feature_set", cfg.feature_set),
        ("hyperparams", hp.to_dict()),
        ("seed", cfg.seed),
        ("select", cfg.select),
        ("selected_epoch", selected_epoch),
        ("split", cfg.split.to_dict()),
        ("split_method", cfg.method),
    ])
    report = TrainReport(
        train_loss=history["train_loss"],
        val_loss=history["val_loss"],
        val_top1=history["val_top1"],
        lr=history["lr"],
        selected_epoch=selected_epoch,
        select=cfg.select,
        seed=cfg.seed,
        config_hash=meta["config_hash"],
        windows={n: sets[n][2] for n in SPLIT_NAMES},
        wall_time=time.perf_counter() - started,
    )
    msg("Training finished in {0:.1f} s".format(report.wall_time))
    return TrainedModel(chosen, meta), report


def evaluate_windows(model, d, batch_size=None):
    """eval-mode predictions on a split -> (windows, per-step EvalSample lists)"""
    hp = model.hp
    windows, X, Y = _split_windows(d, model.bounds, hp, model.columns)
    if not windows:
        raise EmptySet("the split yields no windows with W={0}, V={1}".format(hp.W, hp.V))
    scores = predict(model.params, X, batch_size or hp.test_batch)
    return windows, eval_samples(scores, Y, window_powers(d, windows, hp.V))


def evaluate(model, d, noise_floor="sample", batch_size=None,
             targets=DEFAULT_TARGETS, thresholds_db=DEFAULT_THRESHOLDS_DB):
    """Evaluate a trained model on one split.

    Arguments:
        model {TrainedModel} -- trained (or loaded) model
        d {RawDataset} -- the split to evaluate

    Keyword Arguments:
        noise_floor {str} -- "sample" (smallest power per sample) or "scenario"
        batch_size {int} -- <optional> forward batch size (default: hp.test_batch)

    Returns:
        MetricsReport
    """
    _, per_step = evaluate_windows(model, d, batch_size)
    return report_for(model, per_step, noise_floor, targets, thresholds_db)


def report_for(model, per_step, noise_floor="sample", targets=DEFAULT_TARGETS, thresholds_db=DEFAULT_THRESHOLDS_DB):
    """MetricsReport of per-step EvalSample lists already produced by evaluate_windows"""
    count, size_bytes = count_params(model.params)
    return build_report(per_step, model.params.config.M, count, size_bytes, noise_floor, targets, thresholds_db)


def breakdown(model, d, height_edges=HEIGHT_EDGES_M, speed_edges=SPEED_EDGES_MPS,
              n_samples=56, rounds=20, seed=0):
    """Top-1 / power loss by flight height and ground speed category.

    Returns (breakdown rows, resampled rows); each row carries a "factor"
    column naming the category family.
    """
    windows, per_step = evaluate_windows(model, d)
    heights = {s.key: s.height_m for s in d.samples}
    speeds = dict(zip((s.key for s in d.samples), sample_speeds(d)))
    factors = OrderedDict([
        ("height", [categorize_height(heights[w.origin], height_edges) for w in windows]),
        ("speed", [categorize_speed(speeds[w.origin], speed_edges) for w in windows]),
    ])
    rows, resampled = [], []
    for factor, cats in factors.items():
        for row in category_breakdown(per_step, cats):
            rows.append(OrderedDict([("factor", factor)] + list(row.items())))
        for row in resampled_top1(per_step, cats, n_samples, rounds, seed):
            resampled.append(OrderedDict([("factor", factor)] + list(row.items())))
    return rows, resampled
