"""Transmitter-side quality predictor trained by distillation from the codec.

Two fully connected ReLU trunks share the standardised feature vector.

* content trunk(features) -> base PSNR and predicted teacher features F_p
* residual trunk(features, B) -> PSNR loss gamma_d and per-band errors

The predicted PSNR is ``gamma_base - gamma_d``. Head outputs are
de-standardised with statistics frozen from the training set, so the
losses are evaluated in the targets' natural units.
"""
import io
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, LinkConfig, sample_channel, svd_precoder
from .codec import (CodecConfig, ImageSample, band_errors, band_slices, dct_coefficients, mse_to_psnr,
                    n_symbols, psnr_to_mse, send_image, teacher_features)
from .csi import CsiCodeword, LengthSet, decode_csi, encode_csi
from .errors import DegenerateChannelWarning, FormatError, InvalidInputError, TrainingDivergedError
from .numerics import RngStream, as_generator

COARSE_LENGTH = 16
N_BANDS = 16
CHECKPOINT_MAGIC = b"SCANEVAL"
CHECKPOINT_VERSION = 1

LIST_PARAMS = ("C_W", "C_b", "R_W", "R_b")
PARAM_ORDER = ("C_W", "C_b", "g_W", "g_b", "F_W", "F_b", "R_W", "R_b", "d_W", "d_b", "E_W", "E_b")
STAT_ORDER = ("x_mean", "x_std", "b_mean", "b_std", "g_mean", "g_std", "F_mean", "F_std", "E_mean", "E_std")


def extract_features(s: ImageSample, cw_coarse: CsiCodeword, sigma2: float, lengths=LengthSet(),
                     cfg: CodecConfig = CodecConfig(), n_bands: int = N_BANDS, n_streams: int = 2) -> np.ndarray:
    """Feature vector, in order:

    1. DCT energy fraction of each of ``n_bands`` scan-order bands
    2. energy fraction inside the first round(t/T * 2K) scan-order
       coefficients, t = 1..T (T = len(lengths))
    3. log(1 + mean squared pixel gradient)
    4. the ``n_streams`` largest singular values of the coarse CSI estimate
    5. log(sigma2)
    """
    energy = dct_coefficients(s) ** 2
    total = energy.sum()
    bands = np.array([energy[sl].sum() for sl in band_slices(energy.size, n_bands)])
    bands = bands / total if total > 0 else np.zeros(n_bands)

    kept = min(2 * n_symbols(s.size, cfg.rho), s.size)
    T = len(lengths)
    cum = np.concatenate([[0.0], np.cumsum(energy)])
    cuts = [int(round(t / T * kept)) for t in range(1, T + 1)]
    retained = np.array([cum[c] / total if total > 0 else 1.0 for c in cuts])

    px = s.pixels
    grad = np.concatenate([np.diff(px, axis=0).ravel(), np.diff(px, axis=1).ravel()])
    grad_energy = math.log1p(float(np.mean(grad**2))) if grad.size else 0.0

    H_coarse = decode_csi(cw_coarse)
    sig = np.zeros(n_streams)
    if np.any(H_coarse):
        # a short codeword often decodes to a rank-deficient estimate; that is expected here
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateChannelWarning)
            sig = np.asarray(svd_precoder(H_coarse, n_streams)[2], dtype=float)

    return np.concatenate([bands, retained, [grad_energy], sig, [math.log(sigma2)]])


@dataclass
class EvalSample:
    features: np.ndarray
    B: int
    sigma2: float
    gamma_t: float
    F_t: np.ndarray
    band_err_t: np.ndarray
    h_coarse: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class EvaluatorModel:
    """Weights (the trainable parameter set) plus frozen normalisation statistics."""

    params: dict
    stats: dict
    lam: float = 1.0
    hidden: tuple = (64, 32)

    @property
    def n_features(self) -> int:
        return int(self.stats["x_mean"].size)

    @property
    def n_bands(self) -> int:
        return int(self.stats["F_mean"].size)

    def copy(self) -> "EvaluatorModel":
        return EvaluatorModel({k: [a.copy() for a in v] if isinstance(v, list) else v.copy()
                               for k, v in self.params.items()},
                              {k: v.copy() for k, v in self.stats.items()}, self.lam, tuple(self.hidden))

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in _param_arrays(self)])


def _param_arrays(m):
    out = []
    for name in PARAM_ORDER:
        v = m.params[name]
        out.extend(v if isinstance(v, list) else [v])
    return out


def identity_stats(n_features: int, n_bands: int) -> dict:
    return {"x_mean": np.zeros(n_features), "x_std": np.ones(n_features), "b_mean": np.zeros(1),
            "b_std": np.ones(1), "g_mean": np.zeros(1), "g_std": np.ones(1), "F_mean": np.zeros(n_bands),
            "F_std": np.ones(n_bands), "E_mean": np.zeros(n_bands), "E_std": np.ones(n_bands)}


def init_model(n_features: int, n_bands: int = N_BANDS, hidden=(64, 32), lam: float = 1.0, rng=None,
               stats: dict | None = None) -> EvaluatorModel:
    """He-initialised weights, zero biases."""
    g = as_generator(rng if rng is not None else RngStream(0))
    hidden = tuple(int(h) for h in hidden)
    if not hidden:
        raise InvalidInputError("need at least one hidden layer")

    def trunk(n_in):
        Ws, bs, prev = [], [], n_in
        for h in hidden:
            Ws.append(g.standard_normal((h, prev)) * math.sqrt(2.0 / prev))
            bs.append(np.zeros(h))
            prev = h
        return Ws, bs

    def head(n_out):
        return g.standard_normal((n_out, hidden[-1])) * math.sqrt(1.0 / hidden[-1]), np.zeros(n_out)

    C_W, C_b = trunk(n_features)
    g_W, g_b = head(1)
    F_W, F_b = head(n_bands)
    R_W, R_b = trunk(n_features + 1)
    d_W, d_b = head(1)
    E_W, E_b = head(n_bands)
    params = dict(C_W=C_W, C_b=C_b, g_W=g_W, g_b=g_b, F_W=F_W, F_b=F_b,
                  R_W=R_W, R_b=R_b, d_W=d_W, d_b=d_b, E_W=E_W, E_b=E_b)
    return EvaluatorModel(params, stats if stats is not None else identity_stats(n_features, n_bands), lam, hidden)


def _relu_trunk(Ws, bs, X):
    acts, pre = [X], []
    for W, b in zip(Ws, bs):
        z = acts[-1] @ W.T + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    return acts, pre


def _forward_batch(m: EvaluatorModel, X, B):
    st, p = m.stats, m.params
    Xs = (X - st["x_mean"]) / st["x_std"]
    bs = (np.asarray(B, dtype=float).reshape(-1, 1) - st["b_mean"]) / st["b_std"]
    c_acts, c_pre = _relu_trunk(p["C_W"], p["C_b"], Xs)
    Xr = np.hstack([Xs, bs])
    r_acts, r_pre = _relu_trunk(p["R_W"], p["R_b"], Xr)
    hc, hr = c_acts[-1], r_acts[-1]
    g_base = st["g_mean"] + st["g_std"] * (hc @ p["g_W"].T + p["g_b"])
    g_d = st["g_std"] * (hr @ p["d_W"].T + p["d_b"])
    F_p = st["F_mean"] + st["F_std"] * (hc @ p["F_W"].T + p["F_b"])
    E_p = st["E_mean"] + st["E_std"] * (hr @ p["E_W"].T + p["E_b"])
    gamma_p = (g_base - g_d)[:, 0]
    cache = (c_acts, c_pre, r_acts, r_pre)
    return gamma_p, F_p, E_p, cache


def forward(m: EvaluatorModel, features, B):
    """(gamma_p dB, F_p, band_err_p) for one feature vector and one length."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 1 or x.size != m.n_features:
        raise InvalidInputError(f"feature length {x.size} does not match model input {m.n_features}")
    gamma_p, F_p, E_p, _ = _forward_batch(m, x[None, :], [B])
    return float(gamma_p[0]), F_p[0], E_p[0]


def loss_c(gamma_t, gamma_p):
    return (np.asarray(gamma_t, dtype=float) - np.asarray(gamma_p, dtype=float)) ** 2


def loss_p(sample: EvalSample, out) -> float:
    _, F_p, E_p = out
    F_p, E_p = np.asarray(F_p), np.asarray(E_p)
    if F_p.shape != sample.F_t.shape or E_p.shape != sample.band_err_t.shape:
        raise InvalidInputError("prediction and target dimensions differ")
    return float(np.sum((E_p - sample.band_err_t) ** 2) + np.sum((F_p - sample.F_t) ** 2))


def combine_losses(lam: float, lc: float, lp: float) -> float:
    return lam * lc + lp


def total_loss(m: EvaluatorModel, sample: EvalSample) -> float:
    out = forward(m, sample.features, sample.B)
    return combine_losses(m.lam, float(loss_c(sample.gamma_t, out[0])), loss_p(sample, out))


@dataclass
class Batch:
    X: np.ndarray
    B: np.ndarray
    gamma_t: np.ndarray
    F_t: np.ndarray
    E_t: np.ndarray

    @classmethod
    def of(cls, samples) -> "Batch":
        return cls(np.array([s.features for s in samples]), np.array([s.B for s in samples], dtype=float),
                   np.array([s.gamma_t for s in samples]), np.array([s.F_t for s in samples]),
                   np.array([s.band_err_t for s in samples]))

    def take(self, idx) -> "Batch":
        return Batch(self.X[idx], self.B[idx], self.gamma_t[idx], self.F_t[idx], self.E_t[idx])

    def __len__(self):
        return self.X.shape[0]


def batch_loss(m: EvaluatorModel, batch: Batch) -> float:
    gamma_p, F_p, E_p, _ = _forward_batch(m, batch.X, batch.B)
    per = (m.lam * (batch.gamma_t - gamma_p) ** 2 + np.sum((E_p - batch.E_t) ** 2, axis=1)
           + np.sum((F_p - batch.F_t) ** 2, axis=1))
    return float(per.mean())


def _trunk_backward(Ws, acts, pre, d_out):
    dWs, dbs = [None] * len(Ws), [None] * len(Ws)
    delta = d_out * (pre[-1] > 0)
    for i in range(len(Ws) - 1, -1, -1):
        dWs[i] = delta.T @ acts[i]
        dbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ Ws[i]) * (pre[i - 1] > 0)
    return dWs, dbs


def loss_and_grad(m: EvaluatorModel, batch: Batch):
    """Mean total loss over the batch and its gradient for every parameter."""
    st, p = m.stats, m.params
    gamma_p, F_p, E_p, (c_acts, c_pre, r_acts, r_pre) = _forward_batch(m, batch.X, batch.B)
    n = len(batch)
    resid = batch.gamma_t - gamma_p
    loss = float(np.mean(m.lam * resid**2 + np.sum((E_p - batch.E_t) ** 2, axis=1)
                         + np.sum((F_p - batch.F_t) ** 2, axis=1)))

    d_gamma = (-2.0 * m.lam * resid / n)[:, None]
    d_g_out = d_gamma * st["g_std"]           # d/d(raw base head)
    d_d_out = -d_gamma * st["g_std"]          # gamma_p = base - gamma_d
    d_F_out = 2.0 * (F_p - batch.F_t) / n * st["F_std"]
    d_E_out = 2.0 * (E_p - batch.E_t) / n * st["E_std"]
    hc, hr = c_acts[-1], r_acts[-1]

    grads = {"g_W": d_g_out.T @ hc, "g_b": d_g_out.sum(axis=0),
             "F_W": d_F_out.T @ hc, "F_b": d_F_out.sum(axis=0),
             "d_W": d_d_out.T @ hr, "d_b": d_d_out.sum(axis=0),
             "E_W": d_E_out.T @ hr, "E_b": d_E_out.sum(axis=0)}
    d_hc = d_g_out @ p["g_W"] + d_F_out @ p["F_W"]
    d_hr = d_d_out @ p["d_W"] + d_E_out @ p["E_W"]
    grads["C_W"], grads["C_b"] = _trunk_backward(p["C_W"], c_acts, c_pre, d_hc)
    grads["R_W"], grads["R_b"] = _trunk_backward(p["R_W"], r_acts, r_pre, d_hr)
    return loss, grads


def fit_stats(samples, lengths=None) -> dict:
    b = Batch.of(samples)

    def spread(a):
        sd = a.std(axis=0)
        return np.where(sd > 1e-12, sd, 1.0)

    B_all = np.asarray(lengths if lengths is not None else b.B, dtype=float)
    return {"x_mean": b.X.mean(axis=0), "x_std": spread(b.X),
            "b_mean": np.array([B_all.mean()]), "b_std": np.array([B_all.std() or 1.0]),
            "g_mean": np.array([b.gamma_t.mean()]), "g_std": np.array([b.gamma_t.std() or 1.0]),
            "F_mean": b.F_t.mean(axis=0), "F_std": spread(b.F_t),
            "E_mean": b.E_t.mean(axis=0), "E_std": spread(b.E_t)}


@dataclass
class TrainResult:
    model: EvaluatorModel
    trace: list = field(default_factory=list)
    initial_loss: float = float("nan")


def train(m: EvaluatorModel, dataset, epochs: int, step_size: float, rng, batch_size: int = 64,
          optimizer: str = "adam") -> TrainResult:
    """Mini-batch training on the total loss; trace holds each epoch's mean batch loss.

    ``optimizer`` is ``"adam"`` (default) or ``"sgd"``.
    """
    if len(dataset) == 0:
        raise InvalidInputError("empty training set")
    if optimizer not in ("adam", "sgd"):
        raise InvalidInputError(f"unknown optimizer {optimizer!r}")
    m = m.copy()
    data = dataset if isinstance(dataset, Batch) else Batch.of(dataset)
    g = as_generator(rng)
    initial = batch_loss(m, data)
    trace = []
    moments = {}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    def update(key, i, param, grad):
        if optimizer == "sgd":
            param -= step_size * grad
            return
        mo, ve = moments.setdefault((key, i), (np.zeros_like(param), np.zeros_like(param)))
        mo *= beta1
        mo += (1 - beta1) * grad
        ve *= beta2
        ve += (1 - beta2) * grad * grad
        mhat = mo / (1 - beta1**step)
        vhat = ve / (1 - beta2**step)
        param -= step_size * mhat / (np.sqrt(vhat) + eps)

    for _ in range(int(epochs)):
        order = g.permutation(len(data))
        losses = []
        for start in range(0, len(data), batch_size):
            idx = order[start:start + batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grad(m, data.take(idx))
            if not math.isfinite(loss):
                trace.append(loss)
                raise TrainingDivergedError("training loss became non-finite", trace)
            losses.append(loss * len(idx))
            step += 1
            for key, grad in grads.items():
                param = m.params[key]
                if isinstance(param, list):
                    for i, (pa, gr) in enumerate(zip(param, grad)):
                        update(key, i, pa, gr)
                else:
                    update(key, 0, param, grad)
        epoch_loss = float(np.sum(losses) / len(data))
        trace.append(epoch_loss)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError("training loss became non-finite", trace)
    return TrainResult(m, trace, initial)


def predict_gamma(m: EvaluatorModel, features, lengths) -> np.ndarray:
    lengths = list(lengths)
    X = np.repeat(np.asarray(features, dtype=float)[None, :], len(lengths), axis=0)
    return _forward_batch(m, X, lengths)[0]


def enforce_monotone(d_hat) -> np.ndarray:
    """Running minimum: predicted distortion never rises with codeword length."""
    return np.minimum.accumulate(np.asarray(d_hat, dtype=float))


def predict_distortion(m: EvaluatorModel, s: ImageSample, cw_coarse: CsiCodeword, sigma2: float,
                       lengths=LengthSet(), cfg: CodecConfig = CodecConfig(), n_streams: int = 2,
                       features=None) -> np.ndarray:
    """Predicted MSE for each length in ``lengths``, non-increasing in length."""
    if features is None:
        features = extract_features(s, cw_coarse, sigma2, lengths, cfg, m.n_bands, n_streams)
    return enforce_monotone(psnr_to_mse(predict_gamma(m, features, lengths)))


def csi_seed(stream: RngStream) -> int:
    return int(stream.generator().integers(0, 2**32))


def build_dataset(images, params: ChannelParams, lengths, sigma2_range, trials: int, rng,
                  cfg: CodecConfig = CodecConfig(), n_bands: int = N_BANDS, n_streams: int = 2,
                  power: float = 1.0, coarse_length: int = COARSE_LENGTH) -> list[EvalSample]:
    """Distillation tuples from the reference codec.

    For each image and trial: draw H, a length B from ``lengths`` and a
    noise variance log-uniformly in ``sigma2_range``, run the link, and
    record the achieved PSNR, teacher features and per-band errors.
    """
    if not images:
        raise InvalidInputError("no images")
    lengths = LengthSet(tuple(lengths)) if not isinstance(lengths, LengthSet) else lengths
    if coarse_length > lengths[0]:
        raise InvalidInputError("coarse codeword must not be longer than the shortest feedback length")
    master = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))
    lo, hi = (float(v) for v in sigma2_range)
    if not 0 < lo <= hi:
        raise InvalidInputError("sigma2 range must satisfy 0 < low <= high")
    samples = []
    for i, s in enumerate(images):
        for j in range(int(trials)):
            base = master.child(i, j)
            ch = sample_channel(params, base.child(0))
            g = base.child(1).generator()
            B = int(lengths[int(g.integers(len(lengths)))])
            sigma2 = float(math.exp(g.uniform(math.log(lo), math.log(hi))))
            seed = csi_seed(base.child(2))
            link = LinkConfig(power, sigma2, n_streams)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateChannelWarning)
                out = send_image(s, ch.H, decode_csi(encode_csi(ch.H, B, seed)), link, cfg, base.child(3))
            coarse = encode_csi(ch.H, coarse_length, seed)
            feats = extract_features(s, coarse, sigma2, lengths, cfg, n_bands, n_streams)
            samples.append(EvalSample(
                features=feats, h_coarse=feats[-1 - n_streams:-1].copy(),
                B=B, sigma2=sigma2, gamma_t=out.psnr_db,
                F_t=teacher_features(out.z, n_bands),
                band_err_t=band_errors(s, out.s_hat, n_bands)))
    return samples


def rmse_db(m: EvaluatorModel, samples) -> float:
    b = Batch.of(samples)
    gamma_p = _forward_batch(m, b.X, b.B)[0]
    return float(np.sqrt(np.mean((b.gamma_t - gamma_p) ** 2)))


# checkpoint: magic, u32 version, f64 lambda, u32 n_hidden, u32 hidden..., then
# named blocks (u32 name length, name, u32 ndim, u32 dims..., f64 data), little-endian


def _write_block(buf, name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode("ascii")
    buf.write(struct.pack("<I", len(raw)) + raw)
    buf.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def save_checkpoint(m: EvaluatorModel) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC + struct.pack("<Id", CHECKPOINT_VERSION, float(m.lam)))
    buf.write(struct.pack("<I", len(m.hidden)) + struct.pack(f"<{len(m.hidden)}I", *m.hidden))
    for name in PARAM_ORDER:
        v = m.params[name]
        for i, arr in enumerate(v if isinstance(v, list) else [v]):
            _write_block(buf, f"{name}.{i}", arr)
    for name in STAT_ORDER:
        _write_block(buf, name, m.stats[name])
    return buf.getvalue()


def load_checkpoint(blob: bytes) -> EvaluatorModel:
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("checkpoint truncated", offset=pos)
        out = bytes(view[pos:pos + n])
        pos += n
        return out

    if take(8) != CHECKPOINT_MAGIC:
        raise FormatError("not an evaluator checkpoint", offset=0)
    version, lam = struct.unpack("<Id", take(12))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=8)
    (n_hidden,) = struct.unpack("<I", take(4))
    hidden = struct.unpack(f"<{n_hidden}I", take(4 * n_hidden))
    blocks = {}
    while pos < len(view):
        (n_name,) = struct.unpack("<I", take(4))
        name = take(n_name).decode("ascii")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(take(8 * count), dtype="<f8").astype(float).reshape(shape)
    try:
        params = {name: [blocks[f"{name}.{i}"] for i in range(n_hidden)] if name in LIST_PARAMS
                  else blocks[f"{name}.0"] for name in PARAM_ORDER}
        stats = {name: blocks[name] for name in STAT_ORDER}
    except KeyError as e:
        raise FormatError(f"checkpoint lacks block {e.args[0]}", offset=pos) from None
    return EvaluatorModel(params, stats, lam, tuple(hidden))
