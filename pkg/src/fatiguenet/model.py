"""IADAN: Inception-attention feature extractor with fatigue and domain heads.

Layer stack for a (n, 6, 64, 64) input::

    dilated_conv1  K=7 D=2  6->32   + BN + ReLU + 2x2 pool   -> (n, 32, 32, 32)
    dilated_conv2  K=5 D=2  32->64  + BN + ReLU + 2x2 pool   -> (n, 64, 16, 16)
    block1..3      x + inception(attention(x))               -> (n, 64, 16, 16)
    global max pool                                          -> (n, 64)
    fc             64->128 + ReLU                            -> (n, 128) embedding
    fatigue_head   128->64 ReLU dropout ->3
    domain_head    GRL -> 128->64 ReLU dropout ->n_domains

The network is size-agnostic below the first layer, so 32x32 images work
unchanged (the pooled maps are then 16x16 and 8x8).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidSpecError, ShapeError
from .nn import ops
from .nn.layers import (
    BatchNorm2d, ChannelAttention, Conv2d, ConvBNReLU, Dropout, Linear, MaxPool2d, Module,
    Sequential, SpatialAttention,
)

VARIANTS = ("iadan", "idan", "ian", "adan")
N_CLASSES = 3
EMBED_DIM = 128


@dataclass(frozen=True)
class ScheduleParams:
    gamma: float = 5.0
    k: float = 0.2

    def __post_init__(self):
        if self.gamma <= 0 or self.k <= 0:
            raise InvalidSpecError("schedule gamma and k must be > 0")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.8
    tau: float = 0.05

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidSpecError("loss weights must be >= 0")
        if self.tau <= 0:
            raise InvalidSpecError("temperature must be > 0")


def lambda_schedule(p: float, sp: ScheduleParams = ScheduleParams()) -> float:
    """Adversarial strength ``k * (2 / (1 + exp(-gamma p)) - 1)`` at progress ``p``."""
    if not 0.0 <= p <= 1.0:
        raise InvalidSpecError(f"training progress must lie in [0, 1], got {p}")
    return sp.k * (2.0 / (1.0 + math.exp(-sp.gamma * p)) - 1.0)


@dataclass
class ModelOutput:
    embedding: np.ndarray
    embedding_normalized: np.ndarray
    fatigue_logits: np.ndarray
    domain_logits: np.ndarray | None


@dataclass
class LossComponents:
    total: float
    fatigue: float
    supcon: float
    domain: float
    grads: dict = field(default_factory=dict, repr=False)


def total_loss(fatigue_logits, domain_logits, embedding, fatigue_labels, domain_labels,
               w: LossWeights = LossWeights()):
    """Joint objective ``L_fatigue + alpha * L_SC + beta * L_domain``.

    Returns a :class:`LossComponents` whose ``grads`` maps ``"fatigue"``,
    ``"domain"`` and ``"embedding"`` to the gradients w.r.t. the fatigue
    logits, domain logits and raw embedding. Terms with zero weight are
    skipped (reported as 0).
    """
    l_f, g_f = ops.softmax_cross_entropy(fatigue_logits, fatigue_labels)
    l_sc, g_emb = 0.0, None
    if w.alpha > 0:
        l_sc, g_emb = ops.supcon_loss(embedding, fatigue_labels, w.tau)
        g_emb = w.alpha * g_emb
    l_d, g_d = 0.0, None
    if w.beta > 0 and domain_logits is not None:
        l_d, g_d = ops.softmax_cross_entropy(domain_logits, domain_labels)
        g_d = w.beta * g_d
    total = l_f + w.alpha * l_sc + w.beta * l_d
    return LossComponents(total, l_f, l_sc, l_d,
                          {"fatigue": g_f, "domain": g_d, "embedding": g_emb})


class AttentionBlock(Module):
    def __init__(self, c, rng, reduction=8, kernel=7, dtype=np.float32):
        super().__init__()
        self.cab = ChannelAttention(c, rng, reduction, dtype)
        self.sab = SpatialAttention(rng, kernel, dtype)

    def forward(self, x):
        return self.sab.forward(self.cab.forward(x))

    def backward(self, dout):
        return self.cab.backward(self.sab.backward(dout))


class InceptionBlock(Module):
    """Four parallel branches concatenated on channels (8 + 16 + 32 + 8)."""

    def __init__(self, c, rng, dtype=np.float32, widths=(8, 16, 32, 8), reduce=(16, 16)):
        super().__init__()
        self.c = c
        b1, b2, b3, b4 = widths
        self.branch1 = ConvBNReLU(c, b1, 1, rng, dtype=dtype)
        self.branch2 = Sequential(ConvBNReLU(c, reduce[0], 1, rng, dtype=dtype),
                                  ConvBNReLU(reduce[0], b2, 3, rng, dtype=dtype))
        self.branch3 = Sequential(ConvBNReLU(c, reduce[1], 1, rng, dtype=dtype),
                                  ConvBNReLU(reduce[1], b3, 5, rng, dtype=dtype))
        self.branch4 = Sequential(MaxPool2d(3, 1, 1), ConvBNReLU(c, b4, 1, rng, dtype=dtype))
        self.widths = widths

    def forward(self, x):
        if x.shape[1] != self.c:
            raise ShapeError(f"inception block expects {self.c} channels, got {x.shape[1]}")
        outs = [self.branch1.forward(x), self.branch2.forward(x),
                self.branch3.forward(x), self.branch4.forward(x)]
        self.branch_shapes = [o.shape for o in outs]
        return np.concatenate(outs, axis=1)

    def backward(self, dout):
        edges = np.cumsum((0,) + self.widths)
        branches = (self.branch1, self.branch2, self.branch3, self.branch4)
        dx = None
        for br, lo, hi in zip(branches, edges[:-1], edges[1:]):
            g = br.backward(np.ascontiguousarray(dout[:, lo:hi]))
            dx = g if dx is None else dx + g
        return dx


class ResidualUnit(Module):
    """``x + body(x)`` where body is attention then inception (either may be swapped)."""

    def __init__(self, c, rng, variant="iadan", dtype=np.float32):
        super().__init__()
        if variant != "idan":
            self.attention = AttentionBlock(c, rng, dtype=dtype)
        if variant == "adan":
            self.inception = ConvBNReLU(c, c, 3, rng, dtype=dtype)
        else:
            self.inception = InceptionBlock(c, rng, dtype=dtype)
        self.has_attention = variant != "idan"

    def forward(self, x):
        h = self.attention.forward(x) if self.has_attention else x
        return x + self.inception.forward(h)

    def backward(self, dout):
        dh = self.inception.backward(dout)
        if self.has_attention:
            dh = self.attention.backward(dh)
        return dout + dh


class Head(Module):
    def __init__(self, f_in, hidden, f_out, rng, p=0.5, dtype=np.float32):
        super().__init__()
        self.linear1 = Linear(f_in, hidden, rng, dtype)
        self.dropout = Dropout(p)
        self.linear2 = Linear(hidden, f_out, rng, dtype)

    def forward(self, x):
        h, self._mask = ops.relu_forward(self.linear1.forward(x))
        return self.linear2.forward(self.dropout.forward(h))

    def backward(self, dout):
        dh = self.dropout.backward(self.linear2.backward(dout))
        return self.linear1.backward(ops.relu_backward(dh, self._mask))


class IADAN(Module):
    """The full network.

    Parameters
    ----------
    n_domains : int
        Width of the domain classifier (number of training subjects).
    variant : {"iadan", "idan", "ian", "adan"}
        Structural ablation: ``idan`` drops attention, ``ian`` drops the
        domain head, ``adan`` replaces each Inception block by one 3x3 conv.
    """

    def __init__(self, n_domains=9, variant="iadan", in_channels=6, seed=0,
                 dtype=np.float32, dropout=0.5):
        super().__init__()
        if variant not in VARIANTS:
            raise InvalidConfigError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
        self.n_domains, self.variant, self.in_channels = n_domains, variant, in_channels
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.dilated_conv1 = Conv2d(in_channels, 32, 7, rng, dilation=2, pad=6, dtype=dtype)
        self.bn1 = BatchNorm2d(32, dtype)
        self.pool1 = MaxPool2d(2, 2)
        self.dilated_conv2 = Conv2d(32, 64, 5, rng, dilation=2, pad=4, dtype=dtype)
        self.bn2 = BatchNorm2d(64, dtype)
        self.pool2 = MaxPool2d(2, 2)
        self.block1 = ResidualUnit(64, rng, variant, dtype)
        self.block2 = ResidualUnit(64, rng, variant, dtype)
        self.block3 = ResidualUnit(64, rng, variant, dtype)
        self.fc = Linear(64, EMBED_DIM, rng, dtype)
        self.fatigue_head = Head(EMBED_DIM, 64, N_CLASSES, rng, dropout, dtype)
        self.has_domain_head = variant != "ian"
        if self.has_domain_head:
            self.domain_head = Head(EMBED_DIM, 64, n_domains, rng, dropout, dtype)
        self.set_rng(np.random.default_rng(seed + 1))
        self.shapes = {}

    def set_rng(self, rng):
        """Route every dropout layer through one generator."""
        for m in self.modules():
            if isinstance(m, Dropout):
                m.rng = rng

    def config(self):
        return {"n_domains": self.n_domains, "variant": self.variant,
                "in_channels": self.in_channels}

    # -- forward / backward --------------------------------------------------

    def features(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels or x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(f"expected (n, {self.in_channels}, H, W) with H, W divisible by 4, "
                             f"got {x.shape}")
        x = np.ascontiguousarray(x, dtype=self.dtype)
        s = self.shapes
        s["input"] = x.shape
        h = self.dilated_conv1.forward(x)
        s["dilated_conv1.preact"] = h.shape
        h, self._m1 = ops.relu_forward(self.bn1.forward(h))
        h = self.pool1.forward(h)
        s["dilated_conv1"] = h.shape
        h = self.dilated_conv2.forward(h)
        h, self._m2 = ops.relu_forward(self.bn2.forward(h))
        h = self.pool2.forward(h)
        s["dilated_conv2"] = h.shape
        for name in ("block1", "block2", "block3"):
            unit = getattr(self, name)
            h = unit.forward(h)
            s[name] = h.shape
            if isinstance(unit.inception, InceptionBlock):
                for i, bs in enumerate(unit.inception.branch_shapes, 1):
                    s[f"{name}.branch{i}"] = bs
        g, self._gcache = ops.global_maxpool_forward(h)
        s["global_maxpool"] = g.shape
        e, self._mfc = ops.relu_forward(self.fc.forward(g))
        s["fc"] = e.shape
        return e

    def features_backward(self, de, input_grad=False):
        dg = self.fc.backward(ops.relu_backward(de, self._mfc))
        dh = ops.global_maxpool_backward(dg, self._gcache)
        for name in ("block3", "block2", "block1"):
            dh = getattr(self, name).backward(dh)
        dh = self.pool2.backward(dh)
        dh = self.dilated_conv2.backward(self.bn2.backward(ops.relu_backward(dh, self._m2)))
        dh = self.pool1.backward(dh)
        self.dilated_conv1.need_input_grad = input_grad
        return self.dilated_conv1.backward(self.bn1.backward(ops.relu_backward(dh, self._m1)))

    def forward(self, x, lam=0.0, train=False):
        self.set_mode(train)
        e = self.features(x)
        norm = np.sqrt((e * e).sum(axis=1, keepdims=True))
        e_norm = e / np.maximum(norm, 1e-12)
        fl = self.fatigue_head.forward(e)
        self.shapes["fatigue_head.linear1"] = (e.shape[0], 64)
        self.shapes["fatigue_head"] = fl.shape
        dl = None
        if self.has_domain_head:
            r, self._lam = ops.grl_forward(e, lam)
            dl = self.domain_head.forward(r)
            self.shapes["domain_head.linear1"] = (e.shape[0], 64)
            self.shapes["domain_head"] = dl.shape
        return ModelOutput(e, e_norm, fl, dl)

    def backward(self, d_embedding=None, d_fatigue=None, d_domain=None, input_grad=False):
        """Accumulate parameter gradients.

        Returns the gradient w.r.t. the input when ``input_grad`` is set (it is
        skipped otherwise, which saves the most expensive col2im), else None.
        """
        de = np.zeros(self.shapes["fc"], dtype=self.dtype)
        if d_embedding is not None:
            de = de + d_embedding
        if d_fatigue is not None:
            de = de + self.fatigue_head.backward(d_fatigue)
        if d_domain is not None and self.has_domain_head:
            de = de + ops.grl_backward(self.domain_head.backward(d_domain), self._lam)
        return self.features_backward(de, input_grad)

    # -- parameter access ----------------------------------------------------

    def state(self):
        """All parameters and buffers keyed by hierarchical name."""
        out = {name: p for name, p, _ in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state(self, state):
        own = self.state()
        missing = set(own) - set(state)
        if missing:
            raise InvalidConfigError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ShapeError(f"{name}: checkpoint shape {src.shape} != model {arr.shape}")
            arr[...] = src


def save_checkpoint(model: IADAN, path_prefix, extra=None):
    """Write ``<prefix>.bin`` (little-endian float32 blobs) and ``<prefix>.json``.

    The manifest lists ``{name, shape, offset}`` per tensor, offsets in bytes.
    """
    entries, blobs, offset = [], [], 0
    for name, arr in model.state().items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    path_prefix = str(path_prefix)
    with open(path_prefix + ".bin", "wb") as fh:
        fh.write(b"".join(blobs))
    manifest = {"model": model.config(), "dtype": "<f4", "tensors": entries}
    if extra:
        manifest["extra"] = extra
    with open(path_prefix + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path_prefix + ".bin", path_prefix + ".json"


def load_checkpoint(path_prefix, dtype=np.float32):
    path_prefix = str(path_prefix)
    with open(path_prefix + ".json") as fh:
        manifest = json.load(fh)
    raw = open(path_prefix + ".bin", "rb").read()
    state = {}
    for t in manifest["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        state[t["name"]] = np.frombuffer(raw, dtype="<f4", count=count,
                                         offset=t["offset"]).reshape(t["shape"])
    model = IADAN(dtype=dtype, **manifest["model"])
    model.load_state(state)
    return model, manifest
