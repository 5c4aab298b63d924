"""Maskable encoder-only transformer with hand-written reverse-mode gradients.

Every head of every layer can be switched off by ``MaskPair.head`` and every
FFN intermediate unit by ``MaskPair.neuron``. The neuron mask multiplies the
U-dimensional activations ``gelu(W_0 x + b_0)``, which is the same as zeroing
the corresponding columns of ``W_1`` (and the entries of ``b_0``).

All arithmetic is float64. Parameters live in a flat ``dict[str, ndarray]``
so gradients, optimizer moments and checkpoints share one layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

LN_EPS = 1e-5
CHECKPOINT_FORMAT = "subnet-nas-checkpoint/1"


class ShapeError(ValueError):
    """A tensor does not have the shape implied by ``ModelDims``."""

    def __init__(self, name: str, expected, got):
        super().__init__(f"tensor {name!r}: expected shape {tuple(expected)}, got {tuple(got)}")
        self.name = name


class NumericalError(FloatingPointError):
    """Non-finite values showed up in a forward or backward pass."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ModelDims:
    n_layers: int = 4
    n_heads: int = 4
    n_units: int = 64
    d_model: int = 32
    d_head: int = 8
    vocab_size: int = 32
    max_len: int = 16
    n_classes: int = 2

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.n_heads * self.d_head != self.d_model:
            raise ValueError(
                f"n_heads * d_head must equal d_model ({self.n_heads}*{self.d_head} != {self.d_model})"
            )

    @classmethod
    def from_dict(cls, d: dict) -> ModelDims:
        return cls(**{k: int(v) for k, v in d.items()})


@dataclass(frozen=True)
class MaskPair:
    head: np.ndarray    # (L, H)
    neuron: np.ndarray  # (L, U)

    @classmethod
    def ones(cls, dims: ModelDims) -> MaskPair:
        return cls(np.ones((dims.n_layers, dims.n_heads)), np.ones((dims.n_layers, dims.n_units)))

    @classmethod
    def zeros(cls, dims: ModelDims) -> MaskPair:
        return cls(np.zeros((dims.n_layers, dims.n_heads)), np.zeros((dims.n_layers, dims.n_units)))

    def validate(self, dims: ModelDims) -> None:
        for name, m, shape in (
            ("head_mask", self.head, (dims.n_layers, dims.n_heads)),
            ("neuron_mask", self.neuron, (dims.n_layers, dims.n_units)),
        ):
            if m.shape != shape:
                raise ShapeError(name, shape, m.shape)
            if not np.all((m == 0) | (m == 1)):
                raise ValueError(f"{name} must be binary (entries 0 or 1)")

    def __eq__(self, other):
        if not isinstance(other, MaskPair):
            return NotImplemented
        return np.array_equal(self.head, other.head) and np.array_equal(self.neuron, other.neuron)

    __hash__ = None


@dataclass(frozen=True)
class Batch:
    tokens: np.ndarray  # (B, n) int
    labels: np.ndarray  # (B,) int

    def validate(self, dims: ModelDims) -> None:
        if self.tokens.ndim != 2:
            raise ShapeError("tokens", ("B", "n"), self.tokens.shape)
        if self.labels.shape != (self.tokens.shape[0],):
            raise ShapeError("labels", (self.tokens.shape[0],), self.labels.shape)
        if self.tokens.shape[1] > dims.max_len:
            raise ShapeError("tokens", ("B", f"<={dims.max_len}"), self.tokens.shape)
        if self.tokens.min(initial=0) < 0 or self.tokens.max(initial=0) >= dims.vocab_size:
            raise ValueError(f"token ids must lie in [0, {dims.vocab_size})")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= dims.n_classes:
            raise ValueError(f"labels must lie in [0, {dims.n_classes})")

    def __len__(self):
        return self.tokens.shape[0]


# --------------------------------------------------------------------------
# parameters


def param_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    d, H, dh, U = dims.d_model, dims.n_heads, dims.d_head, dims.n_units
    shapes = {
        "tok_emb": (dims.vocab_size, d),
        "pos_emb": (dims.max_len, d),
    }
    for l in range(dims.n_layers):
        shapes.update({
            f"l{l}.wq": (H, d, dh),
            f"l{l}.wk": (H, d, dh),
            f"l{l}.wv": (H, d, dh),
            f"l{l}.wo": (H, dh, d),
            f"l{l}.ln1_g": (d,),
            f"l{l}.ln1_b": (d,),
            f"l{l}.w0": (U, d),
            f"l{l}.b0": (U,),
            f"l{l}.w1": (d, U),
            f"l{l}.ln2_g": (d,),
            f"l{l}.ln2_b": (d,),
        })
    shapes["cls_w"] = (d, dims.n_classes)
    shapes["cls_b"] = (dims.n_classes,)
    return shapes


class SuperNetwork:
    """Weights of the full network; every sub-network is a mask over them."""

    def __init__(self, dims: ModelDims, params: dict[str, np.ndarray]):
        self.dims = dims
        self.params = params
        self.check()

    @classmethod
    def init(cls, dims: ModelDims, rng: np.random.Generator | int) -> SuperNetwork:
        rng = np.random.default_rng(rng)
        fan_in = {
            "tok_emb": 1, "pos_emb": 1,
            "wq": dims.d_model, "wk": dims.d_model, "wv": dims.d_model, "wo": dims.d_model,
            "w0": dims.d_model, "w1": dims.n_units, "cls_w": dims.d_model,
        }
        params = {}
        for name, shape in param_shapes(dims).items():
            short = name.split(".")[-1]
            if short.endswith("_g"):
                params[name] = np.ones(shape)
            elif short in fan_in:
                params[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in[short]), size=shape)
            else:
                params[name] = np.zeros(shape)
        return cls(dims, params)

    def check(self) -> None:
        shapes = param_shapes(self.dims)
        missing = set(shapes) - set(self.params)
        if missing:
            raise ShapeError(sorted(missing)[0], shapes[sorted(missing)[0]], ())
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ShapeError(name, shape, self.params[name].shape)

    def copy(self) -> SuperNetwork:
        return SuperNetwork(self.dims, {k: v.copy() for k, v in self.params.items()})

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())

    # checkpoint -----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "dims": asdict(self.dims),
            "tensors": {
                k: {"shape": list(v.shape), "data": v.ravel(order="C").tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> SuperNetwork:
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
        dims = ModelDims.from_dict(doc["dims"])
        params = {
            k: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
            for k, t in doc["tensors"].items()
        }
        return cls(dims, params)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> SuperNetwork:
        return cls.from_json(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# building blocks

_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(x):
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _layer_norm_back(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


# --------------------------------------------------------------------------
# forward / backward


def _split_heads(y, H):
    B, n, _ = y.shape
    return y.reshape(B, n, H, -1).transpose(0, 2, 1, 3)


def _merge_heads(y):
    B, H, n, e = y.shape
    return y.transpose(0, 2, 1, 3).reshape(B, n, H * e)


def _cat_in(w):
    """(H, d, dh) per-head projections -> (d, H*dh)."""
    H, d, dh = w.shape
    return w.transpose(1, 0, 2).reshape(d, H * dh)


def _forward(net: SuperNetwork, mask: MaskPair, tokens: np.ndarray, keep_cache: bool):
    p, dims = net.params, net.dims
    H = dims.n_heads
    n = tokens.shape[1]
    x = p["tok_emb"][tokens] + p["pos_emb"][:n]
    scale = 1.0 / math.sqrt(dims.d_head)
    caches = []
    for l in range(dims.n_layers):
        hm = mask.head[l][None, :, None, None]
        nm = mask.neuron[l]
        q = _split_heads(x @ _cat_in(p[f"l{l}.wq"]), H)
        k = _split_heads(x @ _cat_in(p[f"l{l}.wk"]), H)
        v = _split_heads(x @ _cat_in(p[f"l{l}.wv"]), H)
        att = _softmax(q @ k.transpose(0, 1, 3, 2) * scale)
        ctx = _merge_heads((att @ v) * hm)
        mha = ctx @ p[f"l{l}.wo"].reshape(-1, dims.d_model)
        x1, ln1 = _layer_norm(x + mha, p[f"l{l}.ln1_g"], p[f"l{l}.ln1_b"])
        pre = x1 @ p[f"l{l}.w0"].T + p[f"l{l}.b0"]
        act, t = _gelu(pre)
        hid = act * nm
        ffn = hid @ p[f"l{l}.w1"].T
        x2, ln2 = _layer_norm(x1 + ffn, p[f"l{l}.ln2_g"], p[f"l{l}.ln2_b"])
        if keep_cache:
            caches.append((x, q, k, v, att, ctx, x1, ln1, pre, t, hid, ln2))
        x = x2
    pooled = x.mean(1)
    logits = pooled @ p["cls_w"] + p["cls_b"]
    return logits, (caches, pooled, x.shape)


def forward_masked(net: SuperNetwork, mask: MaskPair, batch: Batch | np.ndarray) -> np.ndarray:
    """Class logits of the sub-network selected by ``mask``; shape (B, C)."""
    mask.validate(net.dims)
    tokens = batch.tokens if isinstance(batch, Batch) else np.asarray(batch)
    if isinstance(batch, Batch):
        batch.validate(net.dims)
    logits, _ = _forward(net, mask, tokens, keep_cache=False)
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logits in forward pass")
    return logits


def _backward(net, mask, tokens, dlogits, cache):
    p, dims = net.params, net.dims
    H, d, dh = dims.n_heads, dims.d_model, dims.d_head
    caches, pooled, xshape = cache
    g = {}
    g["cls_w"] = pooled.T @ dlogits
    g["cls_b"] = dlogits.sum(0)
    n = xshape[1]
    dx = np.broadcast_to((dlogits @ p["cls_w"].T)[:, None, :] / n, xshape).copy()
    scale = 1.0 / math.sqrt(dh)

    def flat(a):
        return a.reshape(-1, a.shape[-1])

    for l in reversed(range(dims.n_layers)):
        x, q, k, v, att, ctx, x1, ln1, pre, t, hid, ln2 = caches[l]
        hm = mask.head[l][None, :, None, None]
        nm = mask.neuron[l]
        # FFN sublayer
        dffn, g[f"l{l}.ln2_g"], g[f"l{l}.ln2_b"] = _layer_norm_back(dx, ln2)
        g[f"l{l}.w1"] = flat(dffn).T @ flat(hid)
        dpre = (dffn @ p[f"l{l}.w1"]) * nm * _gelu_grad(pre, t)
        g[f"l{l}.w0"] = flat(dpre).T @ flat(x1)
        g[f"l{l}.b0"] = dpre.sum((0, 1))
        dx1 = dffn + dpre @ p[f"l{l}.w0"]
        # MHA sublayer
        dmha, g[f"l{l}.ln1_g"], g[f"l{l}.ln1_b"] = _layer_norm_back(dx1, ln1)
        g[f"l{l}.wo"] = (flat(ctx).T @ flat(dmha)).reshape(H, dh, d)
        dctx = _split_heads(dmha @ p[f"l{l}.wo"].reshape(H * dh, d).T, H) * hm
        datt = dctx @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dctx
        dscores = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dq = _merge_heads(dscores @ k)
        dk = _merge_heads(dscores.transpose(0, 1, 3, 2) @ q)
        dv = _merge_heads(dv)
        xf = flat(x).T
        dx = dmha
        for name, dy in (("wq", dq), ("wk", dk), ("wv", dv)):
            gw = xf @ flat(dy)
            g[f"l{l}.{name}"] = gw.reshape(d, H, dh).transpose(1, 0, 2)
            dx = dx + dy @ _cat_in(p[f"l{l}.{name}"]).T
    g["pos_emb"] = np.zeros_like(p["pos_emb"])
    g["pos_emb"][:n] = dx.sum(0)
    g["tok_emb"] = np.zeros_like(p["tok_emb"])
    np.add.at(g["tok_emb"], tokens, dx)
    return g


def kd_terms(student_logits, teacher_logits, temperature):
    """KL(softmax(teacher/T) || softmax(student/T)) per example and its logit gradient."""
    log_p = _log_softmax(teacher_logits / temperature)
    log_q = _log_softmax(student_logits / temperature)
    p = np.exp(log_p)
    kl = (p * (log_p - log_q)).sum(-1)
    dstudent = (np.exp(log_q) - p) / temperature
    return kl, dstudent


def loss_and_grads(
    net: SuperNetwork,
    mask: MaskPair,
    batch: Batch,
    teacher_logits: np.ndarray | None = None,
    temperature: float = 10.0,
):
    """Mean cross-entropy, plus the distillation KL when ``teacher_logits`` is given.

    Returns ``(loss, grads, logits)``; ``grads`` has the same keys and shapes
    as ``net.params``.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    mask.validate(net.dims)
    batch.validate(net.dims)
    logits, cache = _forward(net, mask, batch.tokens, keep_cache=True)
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logits in forward pass")
    B = len(batch)
    logp = _log_softmax(logits)
    loss = -logp[np.arange(B), batch.labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(B), batch.labels] -= 1.0
    if teacher_logits is not None:
        teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
        if teacher_logits.shape != logits.shape:
            raise ShapeError("teacher_logits", logits.shape, teacher_logits.shape)
        kl, dkl = kd_terms(logits, teacher_logits, temperature)
        loss = loss + kl.mean()
        dlogits = dlogits + dkl
    dlogits /= B
    grads = _backward(net, mask, batch.tokens, dlogits, cache)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    return float(loss), grads, logits


# --------------------------------------------------------------------------
# physically pruned network


@dataclass
class PrunedLayer:
    wq: np.ndarray  # (h, d, dh) for the h kept heads
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w0: np.ndarray  # (u, d) for the u kept units
    b0: np.ndarray
    w1: np.ndarray  # (d, u)
    ln2_g: np.ndarray
    ln2_b: np.ndarray


@dataclass
class PrunedNetwork:
    dims: ModelDims
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    layers: list[PrunedLayer]
    cls_w: np.ndarray
    cls_b: np.ndarray

    def n_params(self) -> int:
        total = self.tok_emb.size + self.pos_emb.size + self.cls_w.size + self.cls_b.size
        for layer in self.layers:
            total += sum(getattr(layer, f).size for f in PrunedLayer.__dataclass_fields__)
        return int(total)

    def forward(self, tokens: np.ndarray) -> np.ndarray:
        n = tokens.shape[1]
        x = self.tok_emb[tokens] + self.pos_emb[:n]
        scale = 1.0 / math.sqrt(self.dims.d_head)
        for layer in self.layers:
            mha = np.zeros_like(x)
            for i in range(layer.wq.shape[0]):
                q, k, v = x @ layer.wq[i], x @ layer.wk[i], x @ layer.wv[i]
                att = _softmax(q @ k.transpose(0, 2, 1) * scale)
                mha += (att @ v) @ layer.wo[i]
            x1, _ = _layer_norm(x + mha, layer.ln1_g, layer.ln1_b)
            act, _ = _gelu(x1 @ layer.w0.T + layer.b0)
            x, _ = _layer_norm(x1 + act @ layer.w1.T, layer.ln2_g, layer.ln2_b)
        return x.mean(1) @ self.cls_w + self.cls_b


def prune(net: SuperNetwork, mask: MaskPair) -> PrunedNetwork:
    """Copy out the sub-network with masked heads and units physically deleted."""
    mask.validate(net.dims)
    p = net.params
    layers = []
    for l in range(net.dims.n_layers):
        hk = np.flatnonzero(mask.head[l])
        uk = np.flatnonzero(mask.neuron[l])
        layers.append(PrunedLayer(
            wq=p[f"l{l}.wq"][hk].copy(), wk=p[f"l{l}.wk"][hk].copy(),
            wv=p[f"l{l}.wv"][hk].copy(), wo=p[f"l{l}.wo"][hk].copy(),
            ln1_g=p[f"l{l}.ln1_g"].copy(), ln1_b=p[f"l{l}.ln1_b"].copy(),
            w0=p[f"l{l}.w0"][uk].copy(), b0=p[f"l{l}.b0"][uk].copy(),
            w1=p[f"l{l}.w1"][:, uk].copy(),
            ln2_g=p[f"l{l}.ln2_g"].copy(), ln2_b=p[f"l{l}.ln2_b"].copy(),
        ))
    return PrunedNetwork(
        net.dims, p["tok_emb"].copy(), p["pos_emb"].copy(), layers, p["cls_w"].copy(), p["cls_b"].copy()
    )


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict | None = None
    v: dict | None = None


def adam_step(net: SuperNetwork, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """In-place Adam update that skips entries whose gradient is exactly zero.

    Skipped entries keep their parameter value and both moment estimates, so
    weights that are masked out in every sub-network of a step never move.
    """
    if state.m is None:
        state.m = {k: np.zeros_like(v) for k, v in net.params.items()}
        state.v = {k: np.zeros_like(v) for k, v in net.params.items()}
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name}", step=state.step)
        active = g != 0
        if not active.any():
            continue
        m, v, w = state.m[name], state.v[name], net.params[name]
        m[active] = state.beta1 * m[active] + (1 - state.beta1) * g[active]
        v[active] = state.beta2 * v[active] + (1 - state.beta2) * g[active] ** 2
        w[active] -= state.lr * (m[active] / bc1) / (np.sqrt(v[active] / bc2) + state.eps)


def add_grads(acc: dict | None, grads: dict) -> dict:
    if acc is None:
        return {k: v.copy() for k, v in grads.items()}
    for k, v in grads.items():
        acc[k] += v
    return acc
