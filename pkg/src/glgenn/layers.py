"""Equivariant layers over channel batches of multivectors.

Every layer works on arrays of shape ``[B, L, 2**n]`` (or traced values of that
shape) and takes its parameters from an explicit dict, so the same code path
serves inference and training. Layers are parametrized over a partition of the
blades into classes: quaternion types (4 classes) give the GLGENN layers, grades
(``n + 1`` classes) give the grade-wise baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .algebra import Signature
from .subspaces import grade_indicator, involution_signs, qt_indicator

NORM_FLOOR = 1e-6
STE_CLIP = 3.0


@dataclass(frozen=True)
class ChannelBatch:
    sig: Signature
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != self.sig.dim:
            raise ValueError(f"need shape [B, L, {self.sig.dim}], got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("channel batch contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


def partition_indicator(sig: Signature, family: str) -> np.ndarray:
    if family == "qt":
        return qt_indicator(sig)
    if family == "grade":
        return grade_indicator(sig)
    raise ValueError(f"unknown layer family {family!r}")


def _check_input(x, sig: Signature, channels: int) -> None:
    v = ad.value(x)
    if v.ndim != 3 or v.shape[1:] != (channels, sig.dim):
        raise ValueError(f"expected input [B, {channels}, {sig.dim}], got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input")


class Layer:
    """Base class; subclasses define ``shapes``, ``init`` and ``__call__``."""

    kind = "layer"
    in_channels: int
    out_channels: int

    def shapes(self) -> dict[str, tuple]:
        raise NotImplementedError

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes().values()))

    def descriptor(self) -> dict:
        raise NotImplementedError


class ConjugationLayer(Layer):
    """Per channel ``sum_k sign(raw[c, k]) <x>_k`` over grades ``k``."""

    kind = "conjugation"

    def __init__(self, sig: Signature, channels: int, mode: str = "direct"):
        if mode not in ("direct", "sigmoid"):
            raise ValueError(f"unknown sign mode {mode!r}")
        self.sig, self.mode = sig, mode
        self.in_channels = self.out_channels = channels
        self._grades = grade_indicator(sig)

    def shapes(self):
        return {"raw": (self.in_channels, self.sig.n + 1)}

    def init(self, rng):
        return {"raw": rng.uniform(0.5, 1.5, size=self.shapes()["raw"])}

    def signs(self, raw):
        if self.mode == "sigmoid":
            raw = ad.add(ad.scale(ad.sigmoid(raw), 2.0), -1.0)
        return ad.sign_ste(raw, STE_CLIP)

    def __call__(self, x, params):
        _check_input(x, self.sig, self.in_channels)
        per_blade = ad.einsum("ck,ki->ci", self.signs(params["raw"]), self._grades)
        return ad.mul(x, per_blade)

    def descriptor(self):
        return {"type": "conjugation", "channels": self.in_channels, "n": self.sig.n}


class PartitionLinear(Layer):
    """Class-wise channel mixing: ``<y_o>_k = sum_i phi[o, i, k] <x_i>_k``."""

    kind = "linear"

    def __init__(self, sig: Signature, in_channels: int, out_channels: int, family: str = "qt"):
        self.sig, self.family = sig, family
        self.in_channels, self.out_channels = in_channels, out_channels
        self._ind = partition_indicator(sig, family)

    @property
    def classes(self) -> int:
        return self._ind.shape[0]

    def shapes(self):
        return {"phi": (self.out_channels, self.in_channels, self.classes)}

    def init(self, rng):
        std = 1.0 / np.sqrt(self.classes * self.in_channels)
        return {"phi": rng.normal(scale=std, size=self.shapes()["phi"])}

    def __call__(self, x, params):
        _check_input(x, self.sig, self.in_channels)
        weights = ad.einsum("oik,kd->oid", params["phi"], self._ind)
        return ad.einsum("oid,bid->bod", weights, x)

    def descriptor(self):
        return {
            "type": f"{self.family}_linear",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "n": self.sig.n,
        }


class PartitionNorm(Layer):
    """Divide each class part by ``sigmoid(phi) * (q - 1) + 1`` with ``q = <rev(part) part>_0``."""

    kind = "norm"

    def __init__(self, sig: Signature, channels: int, family: str = "qt"):
        self.sig, self.family = sig, family
        self.in_channels = self.out_channels = channels
        self._ind = partition_indicator(sig, family)
        diag = sig.sign_table[np.arange(sig.dim), np.arange(sig.dim)]
        # <rev(a) a>_0 = sum_i rev_i * (e_i e_i) * a_i^2, split by class
        self._quad = self._ind * (involution_signs(sig, "reversion") * diag)[None, :]

    @property
    def classes(self) -> int:
        return self._ind.shape[0]

    def shapes(self):
        return {"phi": (self.in_channels, self.classes)}

    def init(self, rng):
        return {"phi": np.zeros(self.shapes()["phi"])}

    def class_norms(self, x):
        return ad.einsum("bcd,kd->bck", ad.square(x), self._quad)

    def __call__(self, x, params):
        _check_input(x, self.sig, self.in_channels)
        q = self.class_norms(x)
        divisor = ad.add(ad.mul(ad.sigmoid(params["phi"]), ad.add(q, -1.0)), 1.0)
        inv = ad.reciprocal(divisor, NORM_FLOOR)
        return ad.mul(x, ad.einsum("bck,kd->bcd", inv, self._ind))

    def descriptor(self):
        return {"type": f"{self.family}_norm", "channels": self.in_channels, "n": self.sig.n}


class PartitionProduct(Layer):
    """Weighted class-wise geometric product of each channel with a linearly mixed copy.

    ``z_c`` has class-``k`` part ``sum_{i,j} phi[c,i,j,k] <<x_c>_i <y_c>_j>_k``
    where ``y = mix(x)`` is a square :class:`PartitionLinear` map.
    """

    kind = "product"

    def __init__(self, sig: Signature, channels: int, family: str = "qt"):
        if sig.sign_table is None:
            raise ValueError(f"product layers need n <= 8, got {sig}")
        self.sig, self.family = sig, family
        self.in_channels = self.out_channels = channels
        self.mix = PartitionLinear(sig, channels, channels, family)
        ind = partition_indicator(sig, family)
        k = ind.shape[0]
        cls = np.argmax(ind, axis=0)
        d = np.arange(sig.dim)
        # flat index of (class(a), class(b), class(a^b)) into phi[c].reshape(-1)
        self._slot = (cls[:, None] * k + cls[None, :]) * k + cls[d[:, None] ^ d[None, :]]
        self._signs = sig.sign_table

    @property
    def classes(self) -> int:
        return self.mix.classes

    def shapes(self):
        k = self.classes
        return {"mix": self.mix.shapes()["phi"], "phi": (self.in_channels, k, k, k)}

    def init(self, rng):
        mix = self.mix.init(rng)["phi"]
        k = self.classes
        return {"mix": mix, "phi": rng.normal(scale=1.0 / k, size=self.shapes()["phi"])}

    def table(self, phi):
        flat = ad.reshape(phi, (ad.value(phi).shape[0], -1))
        return ad.mul(ad.gather(flat, self._slot), self._signs)

    def __call__(self, x, params):
        _check_input(x, self.sig, self.in_channels)
        y = self.mix(x, {"phi": params["mix"]})
        return ad.gp(x, y, self.table(params["phi"]))

    def descriptor(self):
        return {"type": f"{self.family}_product", "channels": self.in_channels, "n": self.sig.n}


class ScalarGate(Layer):
    """MLP on the grade-0 coefficients across channels with an identity skip.

    ``s -> s + W2 act(W1 s + b1) + b2``; every other coefficient passes through.
    """

    kind = "scalar_gate"

    def __init__(self, sig: Signature, channels: int, hidden: int, activation: str = "silu"):
        if activation not in ("silu", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.sig, self.hidden, self.activation = sig, hidden, activation
        self.in_channels = self.out_channels = channels
        self._e0 = np.zeros(sig.dim)
        self._e0[0] = 1.0

    def shapes(self):
        c, h = self.in_channels, self.hidden
        return {"w1": (h, c), "b1": (h,), "w2": (c, h), "b2": (c,)}

    def init(self, rng):
        c, h = self.in_channels, self.hidden
        return {
            "w1": rng.normal(scale=1.0 / np.sqrt(c), size=(h, c)),
            "b1": np.zeros(h),
            "w2": rng.normal(scale=1.0 / np.sqrt(h), size=(c, h)),
            "b2": np.zeros(c),
        }

    def __call__(self, x, params):
        _check_input(x, self.sig, self.in_channels)
        s = ad.einsum("bcd,d->bc", x, self._e0)
        pre = ad.add(ad.einsum("hc,bc->bh", params["w1"], s), params["b1"])
        act = ad.silu(pre) if self.activation == "silu" else ad.relu(pre)
        delta = ad.add(ad.einsum("ch,bh->bc", params["w2"], act), params["b2"])
        new_s = ad.add(s, delta)
        return ad.add(ad.project(x, 1.0 - self._e0), ad.einsum("bc,d->bcd", new_s, self._e0))

    def descriptor(self):
        return {"type": "scalar_gate", "channels": self.in_channels, "hidden": self.hidden}


class BrokenLayer(Layer):
    """Negative control: adds a learned bias to the grade-1 coefficients, which breaks equivariance."""

    kind = "broken"

    def __init__(self, sig: Signature, channels: int):
        self.sig = sig
        self.in_channels = self.out_channels = channels
        self._g1 = grade_indicator(sig)[1]

    def shapes(self):
        return {"bias": (self.in_channels, self.sig.dim)}

    def init(self, rng):
        return {"bias": rng.normal(size=self.shapes()["bias"]) * self._g1}

    def __call__(self, x, params):
        _check_input(x, self.sig, self.in_channels)
        return ad.add(x, ad.project(params["bias"], self._g1))

    def descriptor(self):
        return {"type": "broken", "channels": self.in_channels}


def param_count(descriptor: dict) -> int:
    """Closed-form parameter count of a layer descriptor."""
    kind = descriptor.get("type")
    n = descriptor.get("n")
    if kind == "conjugation":
        return descriptor["channels"] * (n + 1)
    if kind in ("qt_linear", "grade_linear"):
        k = 4 if kind == "qt_linear" else n + 1
        return k * descriptor["in_channels"] * descriptor["out_channels"]
    if kind in ("qt_product", "grade_product"):
        k = 4 if kind == "qt_product" else n + 1
        l = descriptor["channels"]
        return k * l * l + k**3 * l
    if kind in ("qt_norm", "grade_norm"):
        k = 4 if kind == "qt_norm" else n + 1
        return k * descriptor["channels"]
    if kind == "scalar_gate":
        c, h = descriptor["channels"], descriptor["hidden"]
        return 2 * c * h + h + c
    if kind == "broken":
        raise ValueError("the broken control layer has no closed-form count")
    raise ValueError(f"unknown layer type {kind!r}")


class Sequential:
    """A stack of layers with namespaced parameters ``"<index>.<name>"``."""

    def __init__(self, layers: list[Layer], readout: bool = False):
        if not layers:
            raise ValueError("empty layer stack")
        for a, b in zip(layers, layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError(f"channel mismatch between {a.kind} and {b.kind}")
        self.layers = list(layers)
        self.sig = layers[0].sig
        self.readout = readout
        for layer in self.layers:
            if isinstance(layer, BrokenLayer):
                continue
            expected = param_count(layer.descriptor())
            if expected != layer.param_count():
                raise AssertionError(f"{layer.kind}: {layer.param_count()} params, formula gives {expected}")

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    def init(self, seed) -> dict[str, np.ndarray]:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        params = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.init(rng).items():
                params[f"{i}.{name}"] = arr
        return params

    def layer_params(self, params: dict, i: int) -> dict:
        prefix = f"{i}."
        return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}

    def forward_all(self, x, params) -> list:
        """Outputs after every layer (the last entry is the stack output)."""
        outs = []
        for i, layer in enumerate(self.layers):
            x = layer(x, self.layer_params(params, i))
            outs.append(x)
        return outs

    def __call__(self, x, params):
        out = self.forward_all(x, params)[-1]
        if self.readout:
            e0 = np.zeros(self.sig.dim)
            e0[0] = 1.0
            return ad.einsum("bcd,d->b", out, e0 / ad.value(out).shape[1])
        return out

    def param_counts(self) -> list[int]:
        return [layer.param_count() for layer in self.layers]

    def param_count(self) -> int:
        return sum(self.param_counts())

    def descriptor(self) -> list[dict]:
        return [layer.descriptor() for layer in self.layers]


def build_stack(
    sig: Signature,
    in_channels: int,
    hidden: int,
    depth: int,
    out_channels: int = 1,
    family: str = "qt",
    gate_hidden: int = 0,
    readout: bool = True,
) -> Sequential:
    """``[linear -> norm -> product] x depth``, optional scalar gate, then a linear map to ``out_channels``."""
    if depth < 1 or hidden < 1 or in_channels < 1 or out_channels < 1:
        raise ValueError("depth and channel counts must be positive")
    layers: list[Layer] = []
    width = in_channels
    for _ in range(depth):
        layers.append(PartitionLinear(sig, width, hidden, family))
        layers.append(PartitionNorm(sig, hidden, family))
        layers.append(PartitionProduct(sig, hidden, family))
        width = hidden
    if gate_hidden:
        layers.append(ScalarGate(sig, hidden, gate_hidden))
    layers.append(PartitionLinear(sig, hidden, out_channels, family))
    return Sequential(layers, readout=readout)
