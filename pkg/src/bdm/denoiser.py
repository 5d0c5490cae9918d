"""Permutation-equivariant noise-prediction networks with explicit backprop.

Layout (per point, shared weights)::

    [y, t_emb, c_emb] -> enc1 (128) -> enc2 (128) --max over points--> g
    [enc2, g]         -> dec1 (128) -> dec2 (64) -> out (D)

The conditional variant embeds the observation vector (and owns a learned
null embedding for dropped conditions). The merged variant keeps both
encoders frozen and feeds the prior's encoder features into a copy of the
reconstruction decoder through zero-initialised affine projections.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .schedule import NoiseSchedule, forward_diffuse

TEMB = 32
CEMB = 32
WIDTH = 128
DEC_HIDDEN = 64
DATA_STD = 0.35  # per-coordinate std of clouds normalised to max radius 0.5
POS_INIT = 2.0

DECODER_KEYS = ("dec1.Wp", "dec1.Wg", "dec1.b", "dec2.W", "dec2.b", "out.W", "out.b")
PROJ_KEYS = ("inj1.W", "inj1.b", "inj2.W", "inj2.b", "injg.W", "injg.b")


class DenoiserError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class DenoiserParams:
    weights: dict
    D: int
    T: int
    cond_dim: int = 0

    @property
    def conditional(self) -> bool:
        return self.cond_dim > 0

    def copy(self) -> "DenoiserParams":
        return DenoiserParams({k: v.copy() for k, v in self.weights.items()},
                              self.D, self.T, self.cond_dim)

    def digest(self, keys=None) -> str:
        return _digest(self.weights, keys)

    def meta(self) -> dict:
        return {"D": self.D, "T": self.T, "cond_dim": self.cond_dim}


@dataclass
class MergedParams:
    recon: DenoiserParams
    prior: DenoiserParams
    decoder: dict
    proj: dict

    def trainable(self) -> dict:
        return {**self.decoder, **self.proj}

    def frozen_digest(self) -> str:
        enc = [k for k in self.recon.weights if k not in DECODER_KEYS]
        return self.recon.digest(enc) + self.prior.digest()


def _digest(weights: dict, keys=None) -> str:
    h = hashlib.sha256()
    for k in sorted(weights if keys is None else keys):
        h.update(k.encode())
        h.update(np.ascontiguousarray(weights[k], dtype="<f8").tobytes())
    return h.hexdigest()


def _sigmoid(a):
    # tanh form, in place: several times faster than scipy.special.expit
    s = np.multiply(a, 0.5)
    np.tanh(s, out=s)
    s *= 0.5
    s += 0.5
    return s


def silu(a):
    return a * _sigmoid(a)


def _silu_fwd(a):
    s = _sigmoid(a)
    return a * s, s


def _dsilu(a, s):
    # d/da [a * sigmoid(a)] = s * (1 + a * (1 - s)), from the cached sigmoid
    d = 1.0 - s
    d *= a
    d += 1.0
    d *= s
    return d


def time_embedding(t, T: int) -> np.ndarray:
    """Sinusoidal features of the timestep, rescaled to a 0..1000 range."""
    t = np.atleast_1d(np.asarray(t, dtype=float)) * (1000.0 / T)
    half = TEMB // 2
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def input_scale(sched: NoiseSchedule, data_std: float = DATA_STD) -> np.ndarray:
    """Per-timestep factor bringing y_t to roughly unit variance."""
    ab = sched.alpha_bar
    return 1.0 / np.sqrt(ab * data_std ** 2 + 1.0 - ab)


def init_params(D: int, T: int, rng: np.random.Generator, cond_dim: int = 0,
                dtype="float64", sched: NoiseSchedule | None = None,
                pos_scale: float = POS_INIT) -> DenoiserParams:
    def lin(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)

    w = {}
    enc_in = D + TEMB + (CEMB if cond_dim else 0)
    if cond_dim:
        w["cond.W"] = lin(cond_dim, CEMB)
        w["cond.b"] = np.zeros(CEMB)
        w["cond.null"] = 0.1 * rng.standard_normal(CEMB)
    w["enc1.Wy"] = pos_scale * rng.standard_normal((D, WIDTH))
    w["enc1.Wt"] = lin(TEMB, WIDTH) * math.sqrt(TEMB / enc_in)
    if cond_dim:
        w["enc1.Wc"] = lin(CEMB, WIDTH) * math.sqrt(CEMB / enc_in)
    w["enc1.b"] = np.zeros(WIDTH)
    w["enc2.W"] = lin(WIDTH, WIDTH)
    w["enc2.b"] = np.zeros(WIDTH)
    w["dec1.Wp"] = lin(WIDTH, WIDTH) / math.sqrt(2)
    w["dec1.Wg"] = lin(WIDTH, WIDTH) / math.sqrt(2)
    w["dec1.b"] = np.zeros(WIDTH)
    w["dec2.W"] = lin(WIDTH, DEC_HIDDEN)
    w["dec2.b"] = np.zeros(DEC_HIDDEN)
    w["out.W"] = lin(DEC_HIDDEN, D)
    w["out.b"] = np.zeros(D)
    if sched is not None:
        if sched.T != T:
            raise DenoiserError("schedule length does not match T")
        w["in_scale"] = input_scale(sched)
    w = {k: v.astype(dtype) for k, v in w.items()}
    return DenoiserParams(w, D, T, cond_dim)


def _dtype(w: dict):
    return w["enc2.W"].dtype


def _as_batch(y, dtype=float):
    y = np.asarray(y, dtype=dtype)
    return (y[None], True) if y.ndim == 2 else (y, False)


def _cond_array(cond, B, dtype=float):
    if cond is None:
        return None
    if hasattr(cond, "vector"):
        cond = cond.vector()
    c = np.asarray(cond, dtype=dtype)
    if c.ndim == 1:
        c = np.broadcast_to(c, (B, c.shape[0]))
    return c


def _t_array(t, B):
    t = np.asarray(t)
    return np.full(B, int(t)) if t.ndim == 0 else t


# -- forward pieces --------------------------------------------------------

def _encode(w, Y, t, T, cvec, drop):
    cache = {}
    temb = time_embedding(t, T).astype(Y.dtype)
    shift = temb @ w["enc1.Wt"]
    cache["temb"] = temb
    if "cond.W" in w:
        B = Y.shape[0]
        if drop is None:
            drop = np.zeros(B, dtype=bool)
        if cvec is None:
            # fully unconditional pass through a conditional model
            drop = np.ones(B, dtype=bool)
            cvec = np.zeros((B, w["cond.W"].shape[0]), dtype=Y.dtype)
        ac = cvec @ w["cond.W"] + w["cond.b"]
        cemb = np.where(drop[:, None], w["cond.null"][None, :], silu(ac))
        shift = shift + cemb @ w["enc1.Wc"]
        cache.update(cvec=cvec, ac=ac, cemb=cemb, drop=drop)
    if "in_scale" in w:
        Y = Y * w["in_scale"][t][:, None, None]
    a1 = Y @ w["enc1.Wy"] + (shift + w["enc1.b"])[:, None, :]
    h1, s1 = _silu_fwd(a1)
    a2 = h1 @ w["enc2.W"] + w["enc2.b"]
    h2, s2 = _silu_fwd(a2)
    g = h2.max(axis=1)
    cache.update(Y=Y, a1=a1, s1=s1, h1=h1, a2=a2, s2=s2, h2=h2, g=g)
    return h1, h2, g, cache


def _decode(w, h2, g, inject=None):
    if inject is not None:
        add_p, add_g, add_d1 = inject
        h2 = h2 + add_p
        g = g + add_g
    a3 = h2 @ w["dec1.Wp"] + (g @ w["dec1.Wg"])[:, None, :] + w["dec1.b"]
    if inject is not None:
        a3 = a3 + add_d1
    d1, s3 = _silu_fwd(a3)
    a4 = d1 @ w["dec2.W"] + w["dec2.b"]
    d2, s4 = _silu_fwd(a4)
    out = d2 @ w["out.W"] + w["out.b"]
    return out, {"h2in": h2, "gin": g, "a3": a3, "s3": s3, "d1": d1, "a4": a4, "s4": s4, "d2": d2}


def _inject(proj, h1p, h2p, gp):
    return (h2p @ proj["inj2.W"] + proj["inj2.b"],
            gp @ proj["injg.W"] + proj["injg.b"],
            h1p @ proj["inj1.W"] + proj["inj1.b"])


def _check_cond(params: DenoiserParams, cond):
    if params.conditional and cond is None:
        raise DenoiserError("conditional network requires a condition")
    if not params.conditional and cond is not None:
        raise DenoiserError("unconditional network given a condition")


def predict_noise(params: DenoiserParams, y_t, t, cond=None, *, null: bool = False) -> np.ndarray:
    """Noise estimate for one cloud (N, D) or a batch (B, N, D).

    ``null=True`` evaluates a conditional network on its learned null
    embedding (the unconditional branch used by classifier-free guidance).
    """
    if null:
        if not params.conditional:
            raise DenoiserError("null-condition evaluation needs a conditional network")
    else:
        _check_cond(params, cond)
    dt = _dtype(params.weights)
    Y, single = _as_batch(y_t, dt)
    B = Y.shape[0]
    tt = _t_array(t, B)
    _check_t_range(tt, params.T)
    if null:
        cvec, drop = None, np.ones(B, dtype=bool)
    else:
        cvec, drop = _cond_array(cond, B, dt), None
    _, h2, g, _ = _encode(params.weights, Y, tt, params.T, cvec, drop)
    out, _ = _decode(params.weights, h2, g)
    return out[0] if single else out


def predict_noise_merged(m: MergedParams, y_t, t, cond) -> np.ndarray:
    dt = _dtype(m.recon.weights)
    Y, single = _as_batch(y_t, dt)
    B = Y.shape[0]
    if cond is None:
        raise DenoiserError("merged network requires a condition")
    tt = _t_array(t, B)
    _check_t_range(tt, m.recon.T)
    _, h2, g, _ = _encode(m.recon.weights, Y, tt, m.recon.T, _cond_array(cond, B, dt), None)
    h1p, h2p, gp, _ = _encode(m.prior.weights, Y, tt, m.prior.T, None, None)
    out, _ = _decode(m.decoder, h2, g, _inject(m.proj, h1p, h2p, gp))
    return out[0] if single else out


def _check_t_range(tt, T):
    if tt.min() < 1 or tt.max() > T:
        raise DenoiserError(f"timestep outside [1, {T}]")


# -- backward ----------------------------------------------------------------

def _decoder_backward(w, dc, dout):
    g = {}
    B, N, _ = dout.shape
    flat = lambda x: x.reshape(B * N, -1)
    g["out.W"] = flat(dc["d2"]).T @ flat(dout)
    g["out.b"] = dout.sum(axis=(0, 1))
    da4 = (dout @ w["out.W"].T) * _dsilu(dc["a4"], dc["s4"])
    g["dec2.W"] = flat(dc["d1"]).T @ flat(da4)
    g["dec2.b"] = da4.sum(axis=(0, 1))
    da3 = (da4 @ w["dec2.W"].T) * _dsilu(dc["a3"], dc["s3"])
    s3 = da3.sum(axis=1)
    g["dec1.Wp"] = flat(dc["h2in"]).T @ flat(da3)
    g["dec1.Wg"] = dc["gin"].T @ s3
    g["dec1.b"] = s3.sum(axis=0)
    return g, da3, s3


def _encoder_backward(w, ec, dh2, dg):
    g = {}
    h2 = ec["h2"]
    B, N, C = h2.shape
    idx = h2.argmax(axis=1)
    bi, ci = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
    dh2 = dh2.copy()
    np.add.at(dh2, (bi, idx, ci), dg)
    da2 = dh2 * _dsilu(ec["a2"], ec["s2"])
    g["enc2.W"] = ec["h1"].reshape(B * N, -1).T @ da2.reshape(B * N, -1)
    g["enc2.b"] = da2.sum(axis=(0, 1))
    da1 = (da2 @ w["enc2.W"].T) * _dsilu(ec["a1"], ec["s1"])
    s1 = da1.sum(axis=1)
    g["enc1.Wy"] = ec["Y"].reshape(B * N, -1).T @ da1.reshape(B * N, -1)
    g["enc1.Wt"] = ec["temb"].T @ s1
    g["enc1.b"] = s1.sum(axis=0)
    if "cond.W" in w:
        g["enc1.Wc"] = ec["cemb"].T @ s1
        dcemb = s1 @ w["enc1.Wc"].T
        drop = ec["drop"]
        g["cond.null"] = dcemb[drop].sum(axis=0)
        dac = np.where(drop[:, None], 0.0, dcemb * _dsilu(ec["ac"], _sigmoid(ec["ac"])))
        g["cond.W"] = ec["cvec"].T @ dac
        g["cond.b"] = dac.sum(axis=0)
    return g


def noise_mse(pred, eps):
    """Mean squared error over all N*D entries, and its gradient in ``pred``."""
    r = pred - eps
    return float(np.mean(r * r, dtype=np.float64)), 2.0 * r / r.size


def loss_and_grads(params: DenoiserParams, y0, t, eps, sched: NoiseSchedule,
                   cvec=None, drop=None):
    """Deterministic DDPM loss for given timesteps/noise, with exact gradients."""
    w = params.weights
    dt = _dtype(w)
    Y0, _ = _as_batch(y0, dt)
    E, _ = _as_batch(eps, dt)
    B = Y0.shape[0]
    tt = _t_array(t, B)
    yt = forward_diffuse(Y0, tt, E, sched).astype(dt, copy=False)
    cv = _cond_array(cvec, B, dt) if params.conditional else None
    if params.conditional and cv is None:
        raise DenoiserError("conditional network requires a condition")
    _, h2, gmax, ec = _encode(w, yt, tt, params.T, cv, drop)
    out, dc = _decode(w, h2, gmax)
    loss, dout = noise_mse(out, E)
    grads, da3, s3 = _decoder_backward(w, dc, dout)
    dh2 = da3 @ w["dec1.Wp"].T
    dg = s3 @ w["dec1.Wg"].T
    grads.update(_encoder_backward(w, ec, dh2, dg))
    return loss, grads


def merged_loss_and_grads(m: MergedParams, y0, t, eps, sched: NoiseSchedule, cvec):
    """Loss of the merged network; gradients only for decoder copy + projections."""
    dt = _dtype(m.recon.weights)
    Y0, _ = _as_batch(y0, dt)
    E, _ = _as_batch(eps, dt)
    B = Y0.shape[0]
    tt = _t_array(t, B)
    yt = forward_diffuse(Y0, tt, E, sched).astype(dt, copy=False)
    _, h2, g, _ = _encode(m.recon.weights, yt, tt, m.recon.T, _cond_array(cvec, B, dt), None)
    h1p, h2p, gp, _ = _encode(m.prior.weights, yt, tt, m.prior.T, None, None)
    out, dc = _decode(m.decoder, h2, g, _inject(m.proj, h1p, h2p, gp))
    loss, dout = noise_mse(out, E)
    grads, da3, s3 = _decoder_backward(m.decoder, dc, dout)
    dh2in = da3 @ m.decoder["dec1.Wp"].T
    dgin = s3 @ m.decoder["dec1.Wg"].T
    fl = lambda x: x.reshape(-1, x.shape[-1])
    grads["inj2.W"] = fl(h2p).T @ fl(dh2in)
    grads["inj2.b"] = dh2in.sum(axis=(0, 1))
    grads["injg.W"] = gp.T @ dgin
    grads["injg.b"] = dgin.sum(axis=0)
    grads["inj1.W"] = fl(h1p).T @ fl(da3)
    grads["inj1.b"] = s3.sum(axis=0)
    return loss, grads


def ddpm_loss(params: DenoiserParams, y0, cond, rng: np.random.Generator, sched: NoiseSchedule,
              drop_prob: float = 0.0):
    """Sample timesteps and noise, then return (loss, grads)."""
    Y0, _ = _as_batch(y0)
    B = Y0.shape[0]
    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal(Y0.shape)
    drop = None
    if params.conditional:
        drop = rng.random(B) < drop_prob
    return loss_and_grads(params, Y0, t, eps, sched, cond, drop)


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 5000
    batch: int = 16
    lr: float = 1e-3
    lr_start: float = 1e-5
    warmup_frac: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cond_dropout: float = 0.1
    ema_decay: float = 0.99
    dtype: str = "float32"
    pos_init: float = POS_INIT

    def lr_at(self, step: int) -> float:
        """Linear warm-up from ``lr_start`` to ``lr`` then linear decay to 0."""
        warm = max(1, int(round(self.warmup_frac * self.steps)))
        if step < warm:
            return self.lr_start + (self.lr - self.lr_start) * step / warm
        return self.lr * max(0.0, (self.steps - step) / max(1, self.steps - warm))


@dataclass
class TrainResult:
    params: object
    losses: list = field(default_factory=list)
    ema: list = field(default_factory=list)


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.n = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        c = self.cfg
        self.n += 1
        bc1 = 1 - c.beta1 ** self.n
        bc2 = 1 - c.beta2 ** self.n
        for k in sorted(grads):
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            if lr:
                params[k] -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.adam_eps)


def _run(steps_fn, params: dict, cfg: TrainConfig, log=None) -> TrainResult:
    opt = Adam(params, cfg)
    res = TrainResult(params=None)
    ema = None
    for step in range(cfg.steps):
        loss, grads = steps_fn()
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")
        opt.step(params, grads, cfg.lr_at(step))
        ema = loss if ema is None else cfg.ema_decay * ema + (1 - cfg.ema_decay) * loss
        res.losses.append(loss)
        res.ema.append(ema)
        if log is not None and (step % 500 == 0 or step == cfg.steps - 1):
            log(f"step {step:5d} loss {loss:.4f} ema {ema:.4f}")
    return res


def _stack(clouds, idx):
    return np.stack([clouds[i] for i in idx])


def train_prior(S_l, cfg: TrainConfig, rng: np.random.Generator, sched: NoiseSchedule,
                log=None) -> TrainResult:
    if not len(S_l):
        raise DenoiserError("empty training set")
    D = S_l[0].shape[1]
    params = init_params(D, sched.T, rng, dtype=cfg.dtype, sched=sched, pos_scale=cfg.pos_init)
    data = np.stack(S_l)

    def step():
        idx = rng.integers(0, len(data), size=cfg.batch)
        return ddpm_loss(params, data[idx], None, rng, sched)

    res = _run(step, params.weights, cfg, log)
    res.params = params
    return res


def train_reconstruction(S_s, cfg: TrainConfig, rng: np.random.Generator, sched: NoiseSchedule,
                         log=None) -> TrainResult:
    if not len(S_s):
        raise DenoiserError("empty training set")
    conds = np.stack([c.vector() if hasattr(c, "vector") else np.asarray(c) for c, _ in S_s])
    data = np.stack([y for _, y in S_s])
    params = init_params(data.shape[2], sched.T, rng, cond_dim=conds.shape[1], dtype=cfg.dtype,
                         sched=sched, pos_scale=cfg.pos_init)

    def step():
        idx = rng.integers(0, len(data), size=cfg.batch)
        return ddpm_loss(params, data[idx], conds[idx], rng, sched, cfg.cond_dropout)

    res = _run(step, params.weights, cfg, log)
    res.params = params
    return res


def init_merged(prior: DenoiserParams, recon: DenoiserParams) -> MergedParams:
    if prior.conditional or not recon.conditional:
        raise DenoiserError("merging needs an unconditional prior and a conditional reconstruction model")
    if prior.T != recon.T or prior.D != recon.D:
        raise DenoiserError("prior and reconstruction models disagree on T or D")
    if _dtype(prior.weights) != _dtype(recon.weights):
        raise DenoiserError("prior and reconstruction models use different dtypes")
    dt = _dtype(recon.weights)
    dec = {k: recon.weights[k].copy() for k in DECODER_KEYS}
    proj = {}
    for name in ("inj1", "inj2", "injg"):
        proj[f"{name}.W"] = np.zeros((WIDTH, WIDTH), dtype=dt)
        proj[f"{name}.b"] = np.zeros(WIDTH, dtype=dt)
    return MergedParams(recon, prior, dec, proj)


def train_merged(prior: DenoiserParams, recon: DenoiserParams, S_s, cfg: TrainConfig,
                 rng: np.random.Generator, sched: NoiseSchedule, log=None) -> TrainResult:
    m = init_merged(prior, recon)
    conds = np.stack([c.vector() if hasattr(c, "vector") else np.asarray(c) for c, _ in S_s])
    data = np.stack([y for _, y in S_s])
    trainable = m.trainable()

    def step():
        idx = rng.integers(0, len(data), size=cfg.batch)
        y0 = data[idx]
        t = rng.integers(1, sched.T + 1, size=len(idx))
        eps = rng.standard_normal(y0.shape)
        return merged_loss_and_grads(m, y0, t, eps, sched, conds[idx])

    res = _run(step, trainable, cfg, log)
    # trainable holds the same array objects as m.decoder / m.proj
    res.params = m
    return res


# -- serialisation -----------------------------------------------------------

MAGIC = b"BDMP"


def save_arrays(path, arrays: dict, meta: dict) -> str:
    """Flat container: magic, u64 header length, JSON header, little-endian f8 payload.

    Weights kept in float32 are widened losslessly on disk; the header records
    the original dtype so loading restores it bit-exactly.
    """
    layers, chunks, offset = [], [], 0
    for k in sorted(arrays):
        src = np.asarray(arrays[k])
        a = np.ascontiguousarray(src, dtype="<f8")
        layers.append({"name": k, "shape": list(a.shape), "offset": offset, "dtype": src.dtype.name})
        chunks.append(a.tobytes())
        offset += a.size
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).hexdigest()
    header = json.dumps({"meta": meta, "layers": layers, "sha256": digest}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)
    return digest


def load_arrays(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise DenoiserError(f"{path}: not a parameter file")
        (n,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(n))
        payload = f.read()
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise DenoiserError(f"{path}: content hash mismatch")
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = {}
    for layer in header["layers"]:
        size = int(np.prod(layer["shape"])) if layer["shape"] else 1
        chunk = flat[layer["offset"]:layer["offset"] + size].reshape(layer["shape"])
        arrays[layer["name"]] = chunk.astype(layer.get("dtype", "float64"))
    return arrays, header["meta"]


def read_meta(path) -> dict:
    """Header metadata only, without reading the payload."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise DenoiserError(f"{path}: not a parameter file")
        (n,) = struct.unpack("<Q", f.read(8))
        return json.loads(f.read(n))["meta"]


def save_params(path, params: DenoiserParams, extra: dict | None = None) -> str:
    return save_arrays(path, params.weights, {"kind": "denoiser", **params.meta(), **(extra or {})})


def load_params(path) -> DenoiserParams:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "denoiser":
        raise DenoiserError(f"{path}: expected denoiser params, found {meta.get('kind')}")
    return DenoiserParams(arrays, meta["D"], meta["T"], meta["cond_dim"])


def save_merged(path, m: MergedParams, extra: dict | None = None) -> str:
    arrays = {f"merged/{k}": v for k, v in m.trainable().items()}
    arrays.update({f"recon/{k}": v for k, v in m.recon.weights.items()})
    arrays.update({f"prior/{k}": v for k, v in m.prior.weights.items()})
    meta = {"kind": "merged", "recon": m.recon.meta(), "prior": m.prior.meta(), **(extra or {})}
    return save_arrays(path, arrays, meta)


def load_merged(path) -> MergedParams:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "merged":
        raise DenoiserError(f"{path}: expected merged params, found {meta.get('kind')}")

    def part(prefix):
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    rm, pm = meta["recon"], meta["prior"]
    recon = DenoiserParams(part("recon/"), rm["D"], rm["T"], rm["cond_dim"])
    prior = DenoiserParams(part("prior/"), pm["D"], pm["T"], pm["cond_dim"])
    tr = part("merged/")
    return MergedParams(recon, prior, {k: tr[k] for k in DECODER_KEYS}, {k: tr[k] for k in PROJ_KEYS})
