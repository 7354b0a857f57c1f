"""Experiment configuration and the commands behind the CLI.

Every command is a function of (config, input files). Outputs are CSV
with a header row plus a sidecar JSON holding the normalised config and
the package version; floats use the shortest round-trip repr so reruns
are byte-identical.
"""
import csv
import dataclasses
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .allocator import (build_outage_table, exhaustive_oracle, indicator_bits, pack_indicators,
                        predicted_outages, solve_group, ORACLE_LIMIT)
from .channel import ChannelParams
from .codec import CodecConfig
from .csi import LengthSet
from .dataio import SyntheticSpec, read_cifar_batch, synth_images
from .errors import ConfigError, FormatError
from .evaluator import (build_dataset, enforce_monotone, fit_stats, init_model, load_checkpoint, rmse_db,
                        save_checkpoint, train)
from .outage import LinkRunner, OutageConfig, make_tape, run_sdop
from .policies import FixedPolicy, GroupPolicy, InstancePolicy
from .numerics import RngStream

SENTINEL = "NA"
ENV_SEED = "SCAN_SEED"
ENV_OUT = "SCAN_OUT"
ENV_IMAGES = "SCAN_IMAGES"
ENV_CHECKPOINT = "SCAN_CHECKPOINT"

# stream ids under the master seed
S_EVAL_IMAGES, S_TRAIN_IMAGES, S_TAPE, S_DATASET, S_INIT, S_SHUFFLE = 1, 2, 3, 4, 5, 6


@dataclass(frozen=True)
class ImageSource:
    path: str | None = None
    limit: int | None = None
    synthetic: SyntheticSpec | None = None
    count: int = 0


@dataclass(frozen=True)
class EvaluatorSettings:
    lam: float = 1.0
    hidden: tuple = (64, 32)
    step_size: float = 1e-3
    epochs: int = 60
    batch_size: int = 64
    samples_per_image: int = 8
    holdout: float = 0.2
    snr_db: tuple | None = None
    checkpoint: str | None = None
    images: ImageSource | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    seed: int
    channel: ChannelParams
    power: float
    n_streams: int
    snr_db: tuple
    lengths: LengthSet
    rho: float
    D_th: float
    L_th: float
    trials: int
    confidence: float
    images: ImageSource
    evaluator: EvaluatorSettings
    coarse_length: int = 16
    fixed_b: int | None = None

    @property
    def gamma_th(self) -> float:
        return 10.0 * math.log10(1.0 / self.D_th)

    @property
    def codec(self) -> CodecConfig:
        return CodecConfig(rho=self.rho)

    def sigma2(self, snr: float) -> float:
        return self.power / 10.0 ** (snr / 10.0)


def _get(d, key, kind, where, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{where}{key}", "required field missing")
        return default
    v = d[key]
    ok = {"int": lambda x: isinstance(x, int) and not isinstance(x, bool),
          "num": lambda x: isinstance(x, (int, float)) and not isinstance(x, bool),
          "str": lambda x: isinstance(x, str),
          "list": lambda x: isinstance(x, list),
          "dict": lambda x: isinstance(x, dict)}[kind]
    if not ok(v):
        raise ConfigError(f"{where}{key}", f"expected {kind}, got {type(v).__name__}")
    return v


def _finite(v, path):
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    return float(v)


def _image_source(d, where) -> ImageSource:
    path = _get(d, "path", "str", where)
    syn = _get(d, "synthetic", "dict", where)
    if (path is None) == (syn is None):
        raise ConfigError(f"{where}path", "give exactly one of 'path' or 'synthetic'")
    if path is not None:
        limit = _get(d, "limit", "int", where)
        if limit is not None and limit < 1:
            raise ConfigError(f"{where}limit", "must be >= 1")
        return ImageSource(path=path, limit=limit)
    w = f"{where}synthetic."
    n = _get(syn, "n", "int", w, required=True)
    if n < 1:
        raise ConfigError(f"{w}n", "must be >= 1")
    lo = _get(syn, "complexity", "num", w, 0.5)
    hi = _get(syn, "complexity_high", "num", w)
    if not 0 < lo <= 1:
        raise ConfigError(f"{w}complexity", "must lie in (0, 1]")
    if hi is not None and not lo <= hi <= 1:
        raise ConfigError(f"{w}complexity_high", "must lie in [complexity, 1]")
    return ImageSource(synthetic=SyntheticSpec(complexity=float(lo), complexity_high=hi), count=n)


def parse_config(doc: dict, env=None) -> ExperimentConfig:
    """Validate a config document. Environment overrides apply to seed and paths only."""
    env = os.environ if env is None else env
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    exp_id = _get(doc, "experiment_id", "str", "", "experiment")
    seed = _get(doc, "seed", "int", "", 0)
    if ENV_SEED in env:
        try:
            seed = int(env[ENV_SEED])
        except ValueError:
            raise ConfigError("seed", f"{ENV_SEED} is not an integer") from None
    if not 0 <= seed < 2**63:
        raise ConfigError("seed", "must be a non-negative 63-bit integer")

    ch = _get(doc, "channel", "dict", "", {})
    try:
        channel = ChannelParams(
            n_tx=_get(ch, "n_tx", "int", "channel.", 16), n_rx=_get(ch, "n_rx", "int", "channel.", 16),
            n_clusters=_get(ch, "n_clusters", "int", "channel.", 4), n_rays=_get(ch, "n_rays", "int", "channel.", 5),
            angle_spread=math.radians(_get(ch, "angle_spread_deg", "num", "channel.", 7.5)))
    except ValueError as exc:
        raise ConfigError("channel", str(exc)) from None

    link = _get(doc, "link", "dict", "", {})
    power = _finite(_get(link, "power", "num", "link.", 1.0), "link.power")
    if power <= 0:
        raise ConfigError("link.power", "must be positive")
    n_streams = _get(link, "n_streams", "int", "link.", 2)
    if not 1 <= n_streams <= min(channel.n_tx, channel.n_rx):
        raise ConfigError("link.n_streams", "must lie in [1, min(n_tx, n_rx)]")
    snr = _get(link, "snr_db", "list", "link.")
    sig = _get(link, "sigma2", "list", "link.")
    if (snr is None) == (sig is None):
        raise ConfigError("link.snr_db", "give exactly one of 'snr_db' or 'sigma2'")
    if snr is not None:
        vals = []
        for i, v in enumerate(snr):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"link.snr_db[{i}]", "expected a number")
            vals.append(_finite(v, f"link.snr_db[{i}]"))
        grid = tuple(vals)
    else:
        vals = []
        for i, v in enumerate(sig):
            if not (isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0):
                raise ConfigError(f"link.sigma2[{i}]", "must be a positive finite number")
            vals.append(10.0 * math.log10(power / v))
        grid = tuple(vals)
    if not grid:
        raise ConfigError("link.snr_db", "SNR grid is empty")

    raw_lengths = _get(doc, "lengths", "list", "", list(LengthSet().values))
    try:
        lengths = LengthSet(tuple(raw_lengths))
    except (ValueError, TypeError) as exc:
        raise ConfigError("lengths", str(exc)) from None
    if lengths[-1] > 2 * channel.n_tx * channel.n_rx:
        raise ConfigError("lengths", f"longest length exceeds 2*n_rx*n_tx = {2 * channel.n_tx * channel.n_rx}")

    rho = _finite(_get(doc, "rho", "num", "", 1 / 6), "rho")
    if not 0 < rho <= 1:
        raise ConfigError("rho", "must lie in (0, 1]")
    g_th = _get(doc, "gamma_th", "num", "")
    d_th = _get(doc, "d_th", "num", "")
    if g_th is not None and d_th is not None:
        raise ConfigError("gamma_th", "give at most one of 'gamma_th' or 'd_th'")
    if d_th is None:
        d_th = 10.0 ** (-_finite(26.0 if g_th is None else g_th, "gamma_th") / 10.0)
    if not (math.isfinite(d_th) and d_th > 0):
        raise ConfigError("d_th", "must be positive and finite")

    l_th = _finite(_get(doc, "l_th", "num", "", lengths[len(lengths) // 2]), "l_th")
    if not lengths[0] <= l_th <= lengths[-1]:
        raise ConfigError("l_th", f"must satisfy L_1 = {lengths[0]} <= l_th <= L_T = {lengths[-1]}")
    coarse = _get(doc, "coarse_length", "int", "", 16)
    if not 1 <= coarse <= lengths[0]:
        raise ConfigError("coarse_length", f"must satisfy 1 <= coarse_length <= L_1 = {lengths[0]}")
    trials = _get(doc, "trials", "int", "", 200)
    if trials < 1:
        raise ConfigError("trials", "must be >= 1")
    confidence = _finite(_get(doc, "confidence", "num", "", 0.95), "confidence")
    if not 0 < confidence < 1:
        raise ConfigError("confidence", "must lie in (0, 1)")
    fixed_b = _get(doc, "fixed_b", "int", "")
    if fixed_b is not None and fixed_b not in lengths.values:
        raise ConfigError("fixed_b", "must be one of the configured lengths")

    images = _image_source(_get(doc, "images", "dict", "", required=True), "images.")
    if ENV_IMAGES in env:
        images = ImageSource(path=env[ENV_IMAGES], limit=images.limit)

    ev = _get(doc, "evaluator", "dict", "", {})
    hidden = _get(ev, "hidden", "list", "evaluator.", [64, 32])
    if not hidden or not all(isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hidden):
        raise ConfigError("evaluator.hidden", "must be a non-empty list of positive integers")
    ev_snr = _get(ev, "snr_db", "list", "evaluator.")
    if ev_snr is not None:
        if len(ev_snr) != 2 or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in ev_snr) \
                or ev_snr[0] > ev_snr[1]:
            raise ConfigError("evaluator.snr_db", "must be [low, high] finite with low <= high")
        ev_snr = (float(ev_snr[0]), float(ev_snr[1]))
    settings = EvaluatorSettings(
        lam=_finite(_get(ev, "lambda", "num", "evaluator.", 1.0), "evaluator.lambda"),
        hidden=tuple(hidden),
        step_size=_finite(_get(ev, "step_size", "num", "evaluator.", 1e-3), "evaluator.step_size"),
        epochs=_get(ev, "epochs", "int", "evaluator.", 60),
        batch_size=_get(ev, "batch_size", "int", "evaluator.", 64),
        samples_per_image=_get(ev, "samples_per_image", "int", "evaluator.", 8),
        holdout=_finite(_get(ev, "holdout", "num", "evaluator.", 0.2), "evaluator.holdout"),
        snr_db=ev_snr,
        checkpoint=env.get(ENV_CHECKPOINT, _get(ev, "checkpoint", "str", "evaluator.")),
        images=_image_source(ev["images"], "evaluator.images.") if "images" in ev else None)
    if settings.lam < 0:
        raise ConfigError("evaluator.lambda", "must be >= 0")
    if settings.step_size < 0:
        raise ConfigError("evaluator.step_size", "must be >= 0")
    for name in ("epochs", "batch_size", "samples_per_image"):
        if getattr(settings, name) < (0 if name == "epochs" else 1):
            raise ConfigError(f"evaluator.{name}", "out of range")
    if not 0 <= settings.holdout < 1:
        raise ConfigError("evaluator.holdout", "must lie in [0, 1)")

    return ExperimentConfig(exp_id, seed, channel, power, n_streams, grid, lengths, rho, float(d_th), l_th,
                            trials, confidence, images, settings, coarse, fixed_b)


def load_config(path, env=None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc, env)


def config_echo(cfg: ExperimentConfig) -> dict:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        return v
    out = plain(cfg)
    out["gamma_th"] = cfg.gamma_th
    return out


def load_images(src: ImageSource, seed: int, stream: int):
    if src.path is not None:
        images = read_cifar_batch(src.path)
        return images[: src.limit] if src.limit else images
    return synth_images(src.synthetic, src.count, RngStream(seed, stream))


@dataclass
class ResultRow:
    experiment_id: str
    seed: int
    snr_db: float
    policy: str
    B: object
    gamma_th: float
    psnr_mean: float
    psnr_std: float
    psnr_min: float
    sdop: float
    ci_low: float
    ci_high: float
    avg_length: float
    pred_rmse: object = SENTINEL


RESULT_COLUMNS = tuple(f.name for f in dataclasses.fields(ResultRow))


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else SENTINEL
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_cell(getattr(r, c)) for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_outputs(out_dir, name: str, csv_text: str, meta: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{name}.csv"
    target.write_text(csv_text)
    (out / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return target


def _meta(cfg, command, **extra):
    return {"version": f"scansim v{__version__}", "command": command, "config": config_echo(cfg), **extra}


def _psnr_row(cfg, snr, policy, B, distortions, est, avg_len, pred_rmse=SENTINEL):
    psnr = -10.0 * np.log10(np.maximum(distortions, 1e-10))
    return ResultRow(cfg.experiment_id, cfg.seed, float(snr), policy, B, cfg.gamma_th, float(psnr.mean()),
                     float(psnr.std()), float(psnr.min()), est.p_hat, est.ci_low, est.ci_high, float(avg_len),
                     pred_rmse)


def _runner(cfg, images):
    return LinkRunner(images, cfg.channel, cfg.codec, cfg.power, cfg.n_streams, cfg.coarse_length)


def cmd_simulate_link(cfg: ExperimentConfig) -> list[ResultRow]:
    """PSNR and fixed-length SDOP for every (SNR, B) grid point, on one shared tape."""
    images = load_images(cfg.images, cfg.seed, S_EVAL_IMAGES)
    tape = make_tape(len(images), cfg.trials, RngStream(cfg.seed, S_TAPE))
    runner = _runner(cfg, images)
    oc = OutageConfig(cfg.D_th, cfg.trials, cfg.confidence)
    rows = []
    for snr in cfg.snr_db:
        for B in cfg.lengths:
            run = run_sdop(tape, cfg.sigma2(snr), FixedPolicy(B), oc, runner)
            rows.append(_psnr_row(cfg, snr, "fixed", B, run.distortions, run.estimate, B))
    return rows


@dataclass
class TrainOutput:
    checkpoint: bytes
    trace: list
    initial_loss: float
    heldout_rmse: float
    final_loss: float
    rows: list = field(default_factory=list)


def cmd_train_evaluator(cfg: ExperimentConfig) -> TrainOutput:
    ev = cfg.evaluator
    src = ev.images or cfg.images
    images = load_images(src, cfg.seed, S_TRAIN_IMAGES)
    n_hold = int(round(len(images) * ev.holdout))
    if len(images) - n_hold < 1:
        raise ConfigError("evaluator.holdout", "no training images left after the held-out split")
    train_imgs, hold_imgs = images[: len(images) - n_hold], images[len(images) - n_hold:]
    lo, hi = ev.snr_db if ev.snr_db is not None else (min(cfg.snr_db), max(cfg.snr_db))
    s2_range = (cfg.sigma2(hi), cfg.sigma2(lo))
    common = dict(cfg=cfg.codec, n_streams=cfg.n_streams, power=cfg.power, coarse_length=cfg.coarse_length)
    data = build_dataset(train_imgs, cfg.channel, cfg.lengths, s2_range, ev.samples_per_image,
                         RngStream(cfg.seed, S_DATASET, (0,)), **common)
    model = init_model(data[0].features.size, hidden=ev.hidden, lam=ev.lam, rng=RngStream(cfg.seed, S_INIT),
                       stats=fit_stats(data, cfg.lengths))
    result = train(model, data, ev.epochs, ev.step_size, RngStream(cfg.seed, S_SHUFFLE), ev.batch_size)
    rmse = float("nan")
    if hold_imgs:
        held = build_dataset(hold_imgs, cfg.channel, cfg.lengths, s2_range, ev.samples_per_image,
                             RngStream(cfg.seed, S_DATASET, (1,)), **common)
        rmse = rmse_db(result.model, held)
    loss = result.trace[-1] if result.trace else result.initial_loss
    row = ResultRow(cfg.experiment_id, cfg.seed, float("nan"), "evaluator", SENTINEL, cfg.gamma_th,
                    float("nan"), float("nan"), float("nan"), float("nan"), float("nan"), float("nan"),
                    float("nan"), rmse)
    return TrainOutput(save_checkpoint(result.model), result.trace, result.initial_loss, rmse, loss, [row])


def trace_csv(initial: float, trace) -> str:
    """Epoch 0 is the loss at initialisation; epoch e >= 1 the mean batch loss of epoch e."""
    lines = ["epoch,mean_loss"] + [f"0,{_cell(initial)}"] + [f"{i},{_cell(v)}" for i, v in enumerate(trace, 1)]
    return "\n".join(lines) + "\n"


def _load_model(cfg):
    path = cfg.evaluator.checkpoint
    if not path:
        raise ConfigError("evaluator.checkpoint", "adaptive policies need a trained evaluator checkpoint")
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError("evaluator.checkpoint", f"cannot read {path}: {exc.strerror}") from None
    return load_checkpoint(blob)


def make_policy(cfg: ExperimentConfig, name: str, fixed_b: int | None = None, model=None):
    if name == "fixed":
        B = fixed_b if fixed_b is not None else cfg.fixed_b
        if B is None:
            B = min(cfg.lengths, key=lambda L: (abs(L - cfg.L_th), L))
        if B not in cfg.lengths.values:
            raise ConfigError("--fixed-b", f"{B} is not in the length set {cfg.lengths.values}")
        return FixedPolicy(B)
    model = model if model is not None else _load_model(cfg)
    if name == "instance":
        return InstancePolicy(model, cfg.D_th, cfg.lengths, cfg.codec, cfg.n_streams)
    if name == "group":
        return GroupPolicy(model, cfg.D_th, cfg.L_th, cfg.lengths, cfg.codec, cfg.n_streams)
    raise ConfigError("--policy", f"unknown policy {name!r}")


def cmd_eval_sdop(cfg: ExperimentConfig, policy: str = "fixed", fixed_b: int | None = None,
                  model=None, distortion_fn=None) -> list[ResultRow]:
    """SDOP per SNR point on the shared tape for one policy."""
    images = load_images(cfg.images, cfg.seed, S_EVAL_IMAGES)
    tape = make_tape(len(images), cfg.trials, RngStream(cfg.seed, S_TAPE))
    pol = make_policy(cfg, policy, fixed_b, model)
    runner = _runner(cfg, images)
    oc = OutageConfig(cfg.D_th, cfg.trials, cfg.confidence)
    rows = []
    for snr in cfg.snr_db:
        run = run_sdop(tape, cfg.sigma2(snr), pol, oc, runner, distortion_fn)
        B = pol.B if policy == "fixed" else SENTINEL
        rows.append(_psnr_row(cfg, snr, policy, B, run.distortions, run.estimate, run.average_length))
    return rows


def read_prediction_table(path, n_lengths: int | None = None):
    """M x T predicted distortions.

    An optional first row lists the lengths; it is recognised as strictly
    increasing integers (a distortion row never increases with length).
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read table {path}: {exc.strerror}", offset=0) from None
    rows, pos = [], 0
    for line in text.splitlines(keepends=True):
        cells = next(csv.reader([line]), [])
        if any(c.strip() for c in cells):
            rows.append((pos, [c.strip() for c in cells]))
        pos += len(line)
    if not rows:
        raise FormatError("empty prediction table", offset=0)
    header, body = None, rows
    first = rows[0][1]
    if len(first) > 1 and all(c.isdigit() for c in first) \
            and all(int(a) < int(b) for a, b in zip(first, first[1:])):
        header, body = tuple(int(c) for c in rows[0][1]), rows[1:]
    values = []
    for i, (off, cells) in enumerate(body, 1):
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise FormatError(f"non-numeric entry in table row {i}", offset=off) from None
        if values and len(vals) != len(values[0]):
            raise FormatError(f"row {i} has {len(vals)} columns, expected {len(values[0])}", offset=off)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise FormatError(f"row {i} has a negative or non-finite distortion", offset=off)
        values.append(vals)
    if not values:
        raise FormatError("prediction table has no data rows", offset=len(text))
    table = np.array(values)
    if n_lengths is not None and table.shape[1] != n_lengths:
        raise FormatError(f"table has {table.shape[1]} columns but the length set has {n_lengths}", offset=0)
    return header, table


def cmd_allocate(table_path, L_th: float, lengths: LengthSet, D_th: float) -> dict:
    header, d_hat = read_prediction_table(table_path, len(lengths))
    if header is not None and header != tuple(lengths):
        raise FormatError(f"table header {header} does not match the length set {tuple(lengths)}", offset=0)
    d_hat = np.array([enforce_monotone(r) for r in d_hat])
    table = build_outage_table(d_hat, D_th, lengths)
    omega = solve_group(table, L_th, lengths)
    greedy = predicted_outages(table, omega.omega)
    M, T = table.G.shape
    report = {"omega": list(omega.omega), "lengths_assigned": list(omega.values),
              "average_length": omega.average_length, "L_th": float(L_th), "D_th": float(D_th),
              "predicted_outages": greedy, "indicator_bits": indicator_bits(T, M),
              "indicator_hex": pack_indicators(omega.omega, T).hex(),
              "oracle_outages": None, "oracle_gap": None}
    if T**M <= ORACLE_LIMIT:
        best, _ = exhaustive_oracle(table, L_th, lengths)
        report["oracle_outages"] = best
        report["oracle_gap"] = greedy - best
    return report
