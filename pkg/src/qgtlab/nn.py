"""A small dense-network engine in NumPy.

Only the layer menu the decoder needs is supported: affine maps, leaky ReLU,
batch normalization and (inverted) dropout.  Every hidden block is laid out
as ``dense -> leaky_relu -> batchnorm -> dropout``; the output layer is a
bare dense map.  All arithmetic is float64.

Besides the usual forward/backward pair, the engine exposes the exact
input-output Jacobian of the eval-mode network, which is piecewise linear.
"""

import json

import numpy as np

from ._validation import as_rng, check_count, check_real
from .exceptions import InvalidArgumentError, InvalidStateError, TrainingDivergedError

NEGATIVE_SLOPE = 0.01
DROPOUT_P = 0.1
BN_MOMENTUM = 0.1
BN_EPS = 1e-5

# Hidden-layer widths per complexity level; level 1 is a plain linear map.
COMPLEXITY_LEVELS = {
    1: (),
    2: (128,),
    3: (256,),
    4: (256, 256),
    5: (500, 500),
    6: (256, 512, 256),
    7: (128, 256, 512, 256, 128),
}


class Dense:
    kind = "dense"

    def __init__(self, weight, bias):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.out_dim, self.in_dim = self.weight.shape
        if self.bias.shape != (self.out_dim,):
            raise InvalidArgumentError("bias length must equal the weight's row count")

    @classmethod
    def init(cls, in_dim, out_dim, rng):
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, size=(out_dim, in_dim)), np.zeros(out_dim))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train, rng):
        return x @ self.weight.T + self.bias, x

    def backward(self, grad, x):
        return grad @ self.weight, {"weight": grad.T @ x, "bias": grad.sum(axis=0)}

    def jvp(self, tangent, x):
        # tangent: (batch, in_dim, k)
        return np.matmul(self.weight, tangent)

    def hyper(self):
        return {}


class LeakyReLU:
    kind = "leaky_relu"

    def __init__(self, dim, slope=NEGATIVE_SLOPE):
        self.in_dim = self.out_dim = dim
        self.slope = float(slope)

    def params(self):
        return {}

    def _scale(self, x):
        return np.where(x > 0, 1.0, self.slope)

    def forward(self, x, train, rng):
        return np.where(x > 0, x, self.slope * x), x

    def backward(self, grad, x):
        return np.where(x > 0, grad, self.slope * grad), {}

    def jvp(self, tangent, x):
        return tangent * self._scale(x)[:, :, None]

    def hyper(self):
        return {"slope": self.slope}


class BatchNorm:
    kind = "batchnorm"

    def __init__(self, dim, gain=None, shift=None, running_mean=None, running_var=None,
                 momentum=BN_MOMENTUM, eps=BN_EPS):
        self.in_dim = self.out_dim = dim
        self.gain = np.ones(dim) if gain is None else np.asarray(gain, dtype=np.float64)
        self.shift = np.zeros(dim) if shift is None else np.asarray(shift, dtype=np.float64)
        self.running_mean = (np.zeros(dim) if running_mean is None
                             else np.asarray(running_mean, dtype=np.float64))
        self.running_var = (np.ones(dim) if running_var is None
                            else np.asarray(running_var, dtype=np.float64))
        self.momentum = float(momentum)
        self.eps = float(eps)

    def params(self):
        return {"gain": self.gain, "shift": self.shift}

    def eval_scale(self):
        return self.gain / np.sqrt(self.running_var + self.eps)

    def forward(self, x, train, rng):
        if not train:
            scale = self.eval_scale()
            return (x - self.running_mean) * scale + self.shift, ("eval", x)
        n = x.shape[0]
        mean = x.mean(axis=0)
        centered = x - mean
        var = np.mean(centered * centered, axis=0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = centered * inv_std
        # running variance tracks the unbiased estimate
        self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
        self.running_var = ((1 - self.momentum) * self.running_var
                            + self.momentum * var * n / (n - 1))
        return xhat * self.gain + self.shift, ("train", xhat, inv_std)

    def backward(self, grad, cache):
        if cache[0] == "eval":
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (cache[1] - self.running_mean) * inv_std
            return grad * self.eval_scale(), {"gain": np.sum(grad * xhat, axis=0),
                                              "shift": grad.sum(axis=0)}
        _, xhat, inv_std = cache
        n = grad.shape[0]
        dgain = np.sum(grad * xhat, axis=0)
        dshift = grad.sum(axis=0)
        dxhat = grad * self.gain
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        return dx, {"gain": dgain, "shift": dshift}

    def jvp(self, tangent, x):
        return tangent * self.eval_scale()[None, :, None]

    def hyper(self):
        return {"momentum": self.momentum, "eps": self.eps,
                "running_mean": self.running_mean, "running_var": self.running_var}


class Dropout:
    kind = "dropout"

    def __init__(self, dim, p=DROPOUT_P):
        p = float(p)
        if not 0.0 <= p < 1.0:
            raise InvalidArgumentError(f"dropout probability must lie in [0, 1), got {p}")
        self.in_dim = self.out_dim = dim
        self.p = p

    def params(self):
        return {}

    def forward(self, x, train, rng):
        if not train or self.p == 0.0:
            return x, None
        mask = rng.random(x.shape, dtype=np.float32) >= self.p
        mask = mask * (1.0 / (1.0 - self.p))
        return x * mask, mask

    def backward(self, grad, mask):
        return (grad if mask is None else grad * mask), {}

    def jvp(self, tangent, x):
        return tangent

    def hyper(self):
        return {"p": self.p}


class ForwardCache:
    """Per-layer intermediates recorded by :meth:`MlpModel.forward`."""

    def __init__(self, model, version, train, entries, batch_size):
        self.model_id = id(model)
        self.version = version
        self.train = train
        self.entries = entries
        self.batch_size = batch_size


class GradientSet(dict):
    """Gradients keyed like :meth:`MlpModel.named_parameters` (``"3.weight"``).

    ``input_grad`` holds the gradient with respect to the network input.
    """

    input_grad = None


class MlpModel:
    """Feed-forward decoder ``R^M -> R^N``."""

    def __init__(self, layers, input_dim, output_dim, hidden=(), complexity_level=None):
        self.layers = list(layers)
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.hidden = tuple(hidden)
        self.complexity_level = complexity_level
        self.mode = "eval"
        self._version = 0
        dim = input_dim
        for layer in self.layers:
            if layer.in_dim != dim:
                raise InvalidArgumentError(
                    f"{layer.kind} layer expects width {layer.in_dim}, previous layer gives {dim}")
            dim = layer.out_dim
        if dim != output_dim:
            raise InvalidArgumentError("final layer width differs from output_dim")
        if not self.layers or self.layers[-1].kind != "dense":
            raise InvalidArgumentError("the output layer must be dense")
        self._pack_parameters()

    def _pack_parameters(self):
        # every trainable array becomes a view into one contiguous vector
        named = self.named_parameters()
        self.flat_params = np.concatenate([arr.ravel() for _, arr in named]) if named \
            else np.zeros(0)
        offset = 0
        for layer in self.layers:
            for name, arr in layer.params().items():
                view = self.flat_params[offset:offset + arr.size].reshape(arr.shape)
                setattr(layer, name, view)
                offset += arr.size

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def named_parameters(self):
        return [(f"{i}.{name}", arr)
                for i, layer in enumerate(self.layers)
                for name, arr in layer.params().items()]

    def parameters(self):
        return [arr for _, arr in self.named_parameters()]

    def n_parameters(self):
        return sum(arr.size for arr in self.parameters())

    def mark_updated(self):
        self._version += 1

    def forward(self, batch, mode=None, rng=None):
        """Run the network on a ``(B, input_dim)`` batch.

        Train mode normalizes with batch statistics, updates the running
        statistics and samples dropout masks from ``rng``; eval mode is a
        deterministic affine/piecewise-linear map.
        """
        mode = self.mode if mode is None else mode
        if mode not in ("train", "eval"):
            raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise InvalidArgumentError(
                f"batch must have shape (B, {self.input_dim}), got {x.shape}")
        train = mode == "train"
        if train:
            if x.shape[0] < 2:
                raise InvalidArgumentError("train-mode forward needs a batch of at least 2")
            rng = as_rng(0 if rng is None else rng)
        entries = []
        for layer in self.layers:
            x, cache = layer.forward(x, train, rng)
            entries.append(cache)
        return x, ForwardCache(self, self._version, train, entries, len(batch))

    def backward(self, cache, output_grad):
        """Reverse-mode gradients of a scalar loss given ``dloss/doutput``."""
        if (not isinstance(cache, ForwardCache) or cache.model_id != id(self)
                or cache.version != self._version):
            raise InvalidStateError("forward cache is stale or belongs to another model")
        grad = np.asarray(output_grad, dtype=np.float64)
        if grad.shape != (cache.batch_size, self.output_dim):
            raise InvalidArgumentError(
                f"output_grad must have shape ({cache.batch_size}, {self.output_dim})")
        per_layer = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grad, per_layer[i] = self.layers[i].backward(grad, cache.entries[i])
        grads = GradientSet(
            (f"{i}.{name}", g) for i, pg in enumerate(per_layer) for name, g in pg.items())
        grads.input_grad = grad
        return grads

    def predict(self, batch, chunk=8192):
        """Eval-mode outputs, computed in chunks; the model's mode is untouched."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise InvalidArgumentError(
                f"batch must have shape (B, {self.input_dim}), got {batch.shape}")
        out = np.empty((len(batch), self.output_dim))
        for start in range(0, len(batch), chunk):
            out[start:start + chunk] = self.forward(batch[start:start + chunk], mode="eval")[0]
        return out

    def jacobian(self, y):
        """Exact ``d output / d input`` of the eval-mode network at ``y``.

        Returns ``(N, M)`` for a single input or ``(B, N, M)`` for a batch.
        """
        if self.mode != "eval":
            raise InvalidStateError("jacobian requires the model in eval mode")
        y = np.asarray(y, dtype=np.float64)
        single = y.ndim == 1
        ys = y[None, :] if single else y
        if ys.ndim != 2 or ys.shape[1] != self.input_dim:
            raise InvalidArgumentError(f"input must have width {self.input_dim}")
        out = np.empty((len(ys), self.output_dim, self.input_dim))
        chunk = max(1, 2_000_000 // (self.input_dim * max(l.out_dim for l in self.layers)))
        for start in range(0, len(ys), chunk):
            x = ys[start:start + chunk]
            tangent = np.broadcast_to(np.eye(self.input_dim), (len(x),) + (self.input_dim,) * 2)
            for layer in self.layers:
                tangent = layer.jvp(tangent, x)
                x = layer.forward(x, False, None)[0]
            out[start:start + chunk] = tangent
        return out[0] if single else out

    # -- checkpoints ---------------------------------------------------------

    def to_dict(self):
        layers = []
        for layer in self.layers:
            entry = {"kind": layer.kind, "in_dim": layer.in_dim, "out_dim": layer.out_dim}
            for name, value in {**layer.params(), **layer.hyper()}.items():
                entry[name] = value.ravel().tolist() if isinstance(value, np.ndarray) else value
            layers.append(entry)
        return {
            "format": "qgtlab-mlp",
            "version": 1,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": list(self.hidden),
            "complexity_level": self.complexity_level,
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "qgtlab-mlp":
            raise InvalidArgumentError("not a qgtlab model checkpoint")
        layers = []
        for entry in doc["layers"]:
            kind, d_in, d_out = entry["kind"], entry["in_dim"], entry["out_dim"]
            if kind == "dense":
                layers.append(Dense(np.reshape(entry["weight"], (d_out, d_in)), entry["bias"]))
            elif kind == "leaky_relu":
                layers.append(LeakyReLU(d_in, entry["slope"]))
            elif kind == "batchnorm":
                layers.append(BatchNorm(d_in, entry["gain"], entry["shift"], entry["running_mean"],
                                        entry["running_var"], entry["momentum"], entry["eps"]))
            elif kind == "dropout":
                layers.append(Dropout(d_in, entry["p"]))
            else:
                raise InvalidArgumentError(f"unknown layer kind {kind!r}")
        return cls(layers, doc["input_dim"], doc["output_dim"], doc.get("hidden", ()),
                   doc.get("complexity_level"))

    def copy_state(self):
        """Snapshot of every array the model holds (parameters and BN statistics)."""
        return [{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in vars(l).items()}
                for l in self.layers]

    def load_state(self, state):
        for layer, snapshot in zip(self.layers, state):
            trainable = layer.params()
            for k, v in snapshot.items():
                if k in trainable:
                    trainable[k][...] = v
                else:
                    setattr(layer, k, v.copy() if isinstance(v, np.ndarray) else v)
        self.mark_updated()


def build_model(input_dim, output_dim, hidden=(), seed=0, *, slope=NEGATIVE_SLOPE,
                dropout=DROPOUT_P, complexity_level=None):
    """Assemble a decoder with Glorot-uniform weights and zero biases."""
    check_count(input_dim, "input_dim")
    check_count(output_dim, "output_dim")
    hidden = tuple(check_count(h, "hidden width") for h in hidden)
    rng = as_rng(seed)
    layers = []
    width = input_dim
    for h in hidden:
        layers += [Dense.init(width, h, rng), LeakyReLU(h, slope), BatchNorm(h), Dropout(h, dropout)]
        width = h
    layers.append(Dense.init(width, output_dim, rng))
    return MlpModel(layers, input_dim, output_dim, hidden, complexity_level)


def build_level(level, input_dim, output_dim, seed=0):
    """Decoder for one of the seven preset complexity levels."""
    if level not in COMPLEXITY_LEVELS:
        raise InvalidArgumentError(f"complexity level must be 1-7, got {level!r}")
    return build_model(input_dim, output_dim, COMPLEXITY_LEVELS[level], seed,
                       complexity_level=level)


class AdamState:
    """First/second moment accumulators for each parameter array."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = check_real(lr, "lr", low=0)
        self.beta1 = check_real(beta1, "beta1", 0, 1)
        self.beta2 = check_real(beta2, "beta2", 0, 1)
        self.eps = check_real(eps, "eps", low=0)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0


def adam_step(params, grads, state):
    """In-place Adam update with bias correction.

    ``grads`` is a sequence aligned with ``params`` (or a :class:`GradientSet`
    whose values are in parameter order).
    """
    grads = list(grads.values()) if isinstance(grads, dict) else list(grads)
    params = list(params)
    if len(grads) != len(params) or len(state.m) != len(params):
        raise InvalidArgumentError("params, grads and optimizer state disagree in length")
    for g, p in zip(grads, params):
        if np.shape(g) != p.shape:
            raise InvalidArgumentError(f"gradient shape {np.shape(g)} != parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient encountered")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        step = np.divide(m, denom, out=denom)
        step *= state.lr / c1
        p -= step
    return params, state


def save_checkpoint(path, model, **extra):
    """Write the model plus arbitrary JSON-compatible metadata (threshold, configs)."""
    doc = model.to_dict()
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, metadata)``."""
    with open(path) as fh:
        doc = json.load(fh)
    model = MlpModel.from_dict(doc)
    extra = {k: v for k, v in doc.items() if k not in model.to_dict()}
    return model, extra
