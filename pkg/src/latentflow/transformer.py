"""Hardmax-gated transformer networks and the rescaled velocity wrapper.

A network maps ``x in R^d`` to ``R^d'`` as

    readout o (FF_N o SA_N) o ... o (FF_1 o SA_1) o embed o patchify

where the attention layer gates each head by ``S * hardmax(S)`` with
``S = (W_K Z)^T (W_Q Z)`` instead of a softmax, and the readout only looks at
the first token. All layers carry skip connections.

Multi-head weights are stored stacked along a leading head axis:
``W_Q, W_K: (h, d_k, d_model)``, ``W_V: (h, d_v, d_model)``,
``W_O: (h, d_model, d_v)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as tn
from .tensor import ContractError, ShapeError, Tensor


@dataclass(frozen=True)
class TransformerSpec:
    d_in: int
    d_out: int
    d_patch: int
    tokens: int = 1
    n_layers: int = 1
    heads: int = 1
    d_k: int = 2
    d_v: int = 4
    d_ff: int = 16
    bound: float | None = None
    gamma: float | None = None
    sparsity: int | None = None

    def __post_init__(self):
        for name in ("d_in", "d_out", "d_patch", "tokens", "heads", "d_k", "d_v", "d_ff"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.n_layers < 0:
            raise ContractError("n_layers must be >= 0")
        if self.d_in != self.d_patch * self.tokens:
            raise ContractError(
                f"d_in={self.d_in} must equal d_patch*tokens={self.d_patch * self.tokens}"
            )
        if self.bound is not None and not self.bound > 0:
            raise ContractError("bound must be positive")

    @property
    def d_model(self) -> int:
        return self.heads * self.d_v

    def to_dict(self) -> dict:
        return asdict(self)


def default_layout(n_inputs: int, single_token_max: int = 9) -> tuple[int, int]:
    """(d_patch, tokens) covering ``n_inputs`` coordinates, zero padded if needed."""
    if n_inputs <= single_token_max:
        return n_inputs, 1
    return math.ceil(n_inputs / 2), 2


def param_shapes(spec: TransformerSpec) -> dict[str, tuple[int, ...]]:
    dm, h = spec.d_model, spec.heads
    shapes: dict[str, tuple[int, ...]] = {
        "A_in": (dm, spec.d_patch + spec.tokens),
        "b_in": (dm,),
    }
    for r in range(spec.n_layers):
        shapes[f"L{r}.W_Q"] = (h, spec.d_k, dm)
        shapes[f"L{r}.W_K"] = (h, spec.d_k, dm)
        shapes[f"L{r}.W_V"] = (h, spec.d_v, dm)
        shapes[f"L{r}.W_O"] = (h, dm, spec.d_v)
        shapes[f"L{r}.W1"] = (spec.d_ff, dm)
        shapes[f"L{r}.b1"] = (spec.d_ff,)
        shapes[f"L{r}.W2"] = (dm, spec.d_ff)
        shapes[f"L{r}.b2"] = (dm,)
    shapes["A_out"] = (spec.d_out, dm)
    shapes["b_out"] = (spec.d_out,)
    return shapes


# -- layers --------------------------------------------------------------


def patchify(x, d_patch: int, tokens: int) -> Tensor:
    """(..., d) -> (..., d_patch, tokens); token j is the j-th contiguous block."""
    x = tn.as_tensor(x)
    if x.shape[-1] != d_patch * tokens:
        raise ShapeError(f"input dim {x.shape[-1]} != d_patch*tokens = {d_patch * tokens}")
    blocks = tn.reshape(x, x.shape[:-1] + (tokens, d_patch))
    return tn.swap_last(blocks)


def flatten_tokens(X) -> Tensor:
    X = tn.as_tensor(X)
    return tn.reshape(tn.swap_last(X), X.shape[:-2] + (X.shape[-2] * X.shape[-1],))


def embed_input(X, A_in, b_in) -> Tensor:
    """``A_in [X; I_l] + b_in 1^T`` for X of shape (..., d_patch, l)."""
    X, A_in, b_in = tn.as_tensor(X), tn.as_tensor(A_in), tn.as_tensor(b_in)
    d_patch, l = X.shape[-2], X.shape[-1]
    if A_in.shape[-1] != d_patch + l:
        raise ShapeError(f"A_in has {A_in.shape[-1]} columns, expected {d_patch + l}")
    content = tn.matmul(A_in[:, :d_patch], X)
    position = A_in[:, d_patch:]
    return content + position + tn.reshape(b_in, (b_in.shape[0], 1))


def attention_layer(Z, W_Q, W_K, W_V, W_O) -> Tensor:
    """Skip connection plus hardmax-gated heads.

    ``Z`` is (..., d_model, l). 2-D weights are treated as a single head.
    """
    Z = tn.as_tensor(Z)
    W_Q, W_K, W_V, W_O = (tn.as_tensor(w) for w in (W_Q, W_K, W_V, W_O))
    if W_Q.ndim == 2:
        W_Q, W_K, W_V, W_O = (tn.reshape(w, (1,) + w.shape) for w in (W_Q, W_K, W_V, W_O))
    Zh = tn.reshape(Z, Z.shape[:-2] + (1,) + Z.shape[-2:])
    Q = tn.matmul(W_Q, Zh)
    K = tn.matmul(W_K, Zh)
    V = tn.matmul(W_V, Zh)
    S = tn.matmul(tn.swap_last(K), Q)
    gated = S * tn.hardmax_cols(S)
    heads = tn.matmul(W_O, tn.matmul(V, gated))
    return Z + tn.tensor_sum(heads, axis=-3)


def feedforward_layer(Y, W1, b1, W2, b2) -> Tensor:
    """``Y + W2 relu(W1 Y + b1 1^T) + b2 1^T``, token-wise."""
    Y, W1, b1, W2, b2 = (tn.as_tensor(a) for a in (Y, W1, b1, W2, b2))
    hidden = tn.relu(tn.matmul(W1, Y) + tn.reshape(b1, (b1.shape[0], 1)))
    return Y + tn.matmul(W2, hidden) + tn.reshape(b2, (b2.shape[0], 1))


def readout(Z, A_out, b_out) -> Tensor:
    """``A_out z_1 + b_out`` on the first token of Z (..., d_model, l)."""
    Z = tn.as_tensor(Z)
    z1 = Z[..., 0]
    return tn.matmul(z1, tn.swap_last(tn.as_tensor(A_out))) + b_out


def forward_tensors(spec: TransformerSpec, params: Mapping[str, Tensor], x) -> Tensor:
    """Full forward pass on a batch ``x`` of shape (B, d_in)."""
    x = tn.as_tensor(x)
    X = patchify(x, spec.d_patch, spec.tokens)
    Z = embed_input(X, params["A_in"], params["b_in"])
    for r in range(spec.n_layers):
        Z = attention_layer(
            Z, params[f"L{r}.W_Q"], params[f"L{r}.W_K"], params[f"L{r}.W_V"], params[f"L{r}.W_O"]
        )
        Z = feedforward_layer(
            Z, params[f"L{r}.W1"], params[f"L{r}.b1"], params[f"L{r}.W2"], params[f"L{r}.b2"]
        )
    out = readout(Z, params["A_out"], params["b_out"])
    if spec.bound is not None:
        out = tn.clamp_norm(out, spec.bound)
    return out


# -- network -------------------------------------------------------------


@dataclass
class TransformerNet:
    spec: TransformerSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.spec)
        if not self.params:
            self.params = {k: np.zeros(s) for k, s in shapes.items()}
        missing = set(shapes) - set(self.params)
        if missing:
            raise ContractError(f"missing parameters: {sorted(missing)}")
        for k, s in shapes.items():
            arr = np.asarray(self.params[k], dtype=np.float64)
            if arr.shape != s:
                raise ShapeError(f"{k}: expected shape {s}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{k} has non-finite entries")
            self.params[k] = arr

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None] if single else x
        out = forward_tensors(self.spec, {k: Tensor(v) for k, v in self.params.items()}, xb).data
        return out[0] if single else out

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def copy(self) -> "TransformerNet":
        return TransformerNet(self.spec, {k: v.copy() for k, v in self.params.items()})

    def nonzero_count(self) -> int:
        """Number of nonzero weights, the sparsity count J."""
        return int(sum(np.count_nonzero(v) for v in self.params.values()))

    def to_dict(self) -> dict:
        return {
            "kind": "transformer",
            "spec": self.spec.to_dict(),
            "params": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TransformerNet":
        spec = TransformerSpec(**doc["spec"])
        params = {
            k: np.array(p["data"], dtype=np.float64).reshape(p["shape"])
            for k, p in doc["params"].items()
        }
        return cls(spec, params)


def init_transformer(spec: TransformerSpec, rng: np.random.Generator) -> TransformerNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and its bias."""
    shapes = param_shapes(spec)
    fan_in = {
        "A_in": spec.d_patch + spec.tokens,
        "b_in": spec.d_patch + spec.tokens,
        "A_out": spec.d_model,
        "b_out": spec.d_model,
    }
    params = {}
    for name, shape in shapes.items():
        key = name.split(".")[-1]
        if key in fan_in:
            n = fan_in[key]
        elif key == "b1":
            n = spec.d_model
        elif key == "b2":
            n = spec.d_ff
        else:
            n = shape[-1]
        bound = 1.0 / math.sqrt(n)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return TransformerNet(spec, params)


def weight_matrices(net: TransformerNet):
    """Yield (name, head index or None, matrix view) for every weight matrix."""
    for name, arr in net.params.items():
        if arr.ndim == 3:
            for s in range(arr.shape[0]):
                yield name, s, arr[s]
        elif arr.ndim == 2:
            yield name, None, arr


def operator_norm(mat: np.ndarray, iters: int = 10) -> float:
    """Largest singular value by power iteration from a fixed start vector."""
    if not np.any(mat):
        return 0.0
    v = np.ones(mat.shape[1]) / math.sqrt(mat.shape[1])
    sigma = 0.0
    for _ in range(iters):
        u = mat @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # start vector in the kernel; fall back to a deterministic alternate
            v = np.arange(1, mat.shape[1] + 1, dtype=np.float64)
            v /= np.linalg.norm(v)
            continue
        u /= nu
        v = mat.T @ u
        sigma = np.linalg.norm(v)
        if sigma == 0.0:
            return 0.0
        v /= sigma
    return float(sigma)


def clip_operator_norms(net: TransformerNet, threshold: float, iters: int = 10) -> int:
    """Rescale in place every weight matrix whose estimated operator norm exceeds ``threshold``.

    Returns the number of matrices rescaled.
    """
    clipped = 0
    for name, head, mat in weight_matrices(net):
        sigma = operator_norm(mat, iters)
        if sigma > threshold:
            scaled = mat * (threshold / sigma)
            if head is None:
                net.params[name] = scaled
            else:
                net.params[name][head] = scaled
            clipped += 1
    return clipped


# -- velocity wrapper ----------------------------------------------------


class RescaledVelocityNet:
    """``v(x, t) = inner((Proj_[-R,R]^d(x) + R) / 2R, t / T)``.

    The time coordinate is appended after the spatial ones; the combined
    vector is zero padded up to the inner network's input size.
    """

    def __init__(self, inner: TransformerNet, dim: int, radius: float, horizon: float):
        if inner.spec.d_in < dim + 1:
            raise ContractError(f"inner input dim {inner.spec.d_in} < latent dim + 1 = {dim + 1}")
        if inner.spec.d_out != dim:
            raise ContractError(f"inner output dim {inner.spec.d_out} != latent dim {dim}")
        if not 0.0 < horizon < 1.0:
            raise ContractError("horizon must lie in (0, 1)")
        if radius <= 0:
            raise ContractError("radius must be positive")
        self.inner = inner
        self.dim = dim
        self.radius = float(radius)
        self.horizon = float(horizon)

    @property
    def gamma_x(self) -> float | None:
        g = self.inner.spec.gamma
        return None if g is None else g / (2 * self.radius)

    @property
    def gamma_t(self) -> float | None:
        g = self.inner.spec.gamma
        return None if g is None else g / self.horizon

    def inner_inputs(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape[:-1])
        if np.any(t < 0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise ContractError(f"time outside [0, {self.horizon}]")
        R = self.radius
        xs = (np.clip(x, -R, R) + R) / (2 * R)
        pad = self.inner.spec.d_in - self.dim - 1
        parts = [xs, (t / self.horizon)[..., None]]
        if pad:
            parts.append(np.zeros(x.shape[:-1] + (pad,)))
        return np.concatenate(parts, axis=-1)

    def forward_tensors(self, params: Mapping[str, Tensor], x, t) -> Tensor:
        return forward_tensors(self.inner.spec, params, Tensor(self.inner_inputs(x, t)))

    def __call__(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None] if single else x
        out = self.inner(self.inner_inputs(xb, t))
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "kind": "velocity",
            "dim": self.dim,
            "radius": self.radius,
            "horizon": self.horizon,
            "inner": self.inner.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RescaledVelocityNet":
        return cls(TransformerNet.from_dict(doc["inner"]), doc["dim"], doc["radius"], doc["horizon"])


def velocity_spec(
    dim: int,
    n_layers: int = 2,
    heads: int = 2,
    d_k: int = 4,
    d_v: int = 8,
    d_ff: int = 64,
    bound: float | None = None,
    gamma: float | None = None,
) -> TransformerSpec:
    """Inner spec for a latent velocity field in ``dim`` dimensions (input dim+1)."""
    d_patch, tokens = default_layout(dim + 1)
    return TransformerSpec(
        d_in=d_patch * tokens,
        d_out=dim,
        d_patch=d_patch,
        tokens=tokens,
        n_layers=n_layers,
        heads=heads,
        d_k=d_k,
        d_v=d_v,
        d_ff=d_ff,
        bound=bound,
        gamma=gamma,
    )


def velocity_forward(v: RescaledVelocityNet, x, t) -> np.ndarray:
    return v(x, t)


def forward(net: TransformerNet, x) -> np.ndarray:
    return net(x)


def save_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj.to_dict(), fh)


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    kind = doc.get("kind")
    if kind == "transformer":
        return TransformerNet.from_dict(doc)
    if kind == "velocity":
        return RescaledVelocityNet.from_dict(doc)
    raise ContractError(f"unknown checkpoint kind {kind!r}")
