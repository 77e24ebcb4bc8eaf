"""Minimal dense-network engine: layers, heads, forward/backward.

Everything is float64 numpy. A network is an encoder (a stack of fully
connected layers) plus two heads sharing it:

* projection head: Linear -> ReLU -> Linear, used for representation
  learning (its output is the embedding fed to the contrastive losses),
* classifier head: Linear -> [BatchNorm] -> ReLU -> Linear -> softmax.

``forward`` returns the head output together with an opaque cache;
``backward`` consumes the cache and an upstream gradient and returns
parameter gradients plus the gradient with respect to the input batch.
For the classifier head the upstream gradient is taken with respect to
the logits (the pre-softmax output), which is what every classification
loss in this package produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, InvalidArgument, NumericFailure

ACTIVATIONS = ("relu", "tanh", "linear")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for stability.

    ``logits`` must be a 2-D (batch x classes) array of finite values.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise InvalidArgument(f"softmax expects a 2-D batch, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InvalidArgument("softmax input contains non-finite values")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    encoder_layers is a sequence of (width, activation) pairs; activations
    are one of relu / tanh / linear. The classifier head has one hidden
    layer followed by batch normalization (optional) and a ReLU.
    """

    input_dim: int
    encoder_layers: tuple = ((128, "relu"), (64, "relu"))
    projection_hidden: int = 64
    projection_out: int = 32
    classifier_hidden: int = 64
    class_count: int = 4
    use_batchnorm_in_classifier: bool = True

    def __post_init__(self):
        if self.class_count < 2:
            raise InvalidArgument("class_count must be >= 2")
        widths = [self.input_dim, self.projection_hidden, self.projection_out,
                  self.classifier_hidden]
        widths += [w for w, _ in self.encoder_layers]
        if any(int(w) < 1 for w in widths):
            raise InvalidArgument("all layer widths must be >= 1")
        for _, act in self.encoder_layers:
            if act not in ACTIVATIONS:
                raise InvalidArgument(f"unknown activation {act!r}")

    @property
    def encoder_out(self) -> int:
        return self.encoder_layers[-1][0] if self.encoder_layers else self.input_dim


def _he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict:
    """Fresh parameter dict. Weights fan-in He-uniform, biases zero.

    Keys are prefixed 'enc.', 'proj.' and 'clf.'; batchnorm running
    statistics live under 'clf.bn.running_*' and are not trainable.
    """
    params: dict[str, np.ndarray] = {}
    d = spec.input_dim
    for i, (width, _) in enumerate(spec.encoder_layers):
        params[f"enc.{i}.W"] = _he_uniform(rng, d, width)
        params[f"enc.{i}.b"] = np.zeros(width)
        d = width
    params["proj.0.W"] = _he_uniform(rng, d, spec.projection_hidden)
    params["proj.0.b"] = np.zeros(spec.projection_hidden)
    params["proj.1.W"] = _he_uniform(rng, spec.projection_hidden, spec.projection_out)
    params["proj.1.b"] = np.zeros(spec.projection_out)
    params["clf.0.W"] = _he_uniform(rng, d, spec.classifier_hidden)
    params["clf.0.b"] = np.zeros(spec.classifier_hidden)
    if spec.use_batchnorm_in_classifier:
        params["clf.bn.gamma"] = np.ones(spec.classifier_hidden)
        params["clf.bn.beta"] = np.zeros(spec.classifier_hidden)
        params["clf.bn.running_mean"] = np.zeros(spec.classifier_hidden)
        params["clf.bn.running_var"] = np.ones(spec.classifier_hidden)
    params["clf.1.W"] = _he_uniform(rng, spec.classifier_hidden, spec.class_count)
    params["clf.1.b"] = np.zeros(spec.class_count)
    return params


def is_trainable(key: str) -> bool:
    return not key.endswith((".running_mean", ".running_var"))


@dataclass
class _Cache:
    head: str
    mode: str
    steps: list = field(default_factory=list)


class Network:
    """Encoder plus projection / classifier heads over a params dict."""

    def __init__(self, spec: NetworkSpec, params: dict | None = None,
                 rng: np.random.Generator | None = None):
        self.spec = spec
        if params is None:
            if rng is None:
                rng = np.random.default_rng(0)
            params = init_params(spec, rng)
        self.params = params

    def clone(self) -> "Network":
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()})

    def trainable_keys(self, head: str | None = None) -> list[str]:
        """Ordered trainable parameter keys, optionally restricted to one head."""
        keys = [k for k in self.params if is_trainable(k)]
        if head is not None:
            keys = [k for k in keys if k.startswith(head + ".")]
        return keys

    def load_encoder(self, source: dict) -> None:
        """Copy encoder ('enc.') parameters in from another params dict."""
        for k, v in source.items():
            if k.startswith("enc."):
                self.params[k] = v.copy()

    def reinit_head(self, prefix: str, rng: np.random.Generator) -> None:
        """Draw fresh weights for one head, leaving the rest untouched."""
        fresh = init_params(self.spec, rng)
        for k in list(self.params):
            if k.startswith(prefix + "."):
                self.params[k] = fresh[k]

    # -- forward -----------------------------------------------------------

    def _flatten(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise InvalidArgument(
                f"batch shape {x.shape} does not match input_dim {self.spec.input_dim}")
        return x

    def _linear_fwd(self, cache: _Cache, name: str, x: np.ndarray) -> np.ndarray:
        W, b = self.params[name + ".W"], self.params[name + ".b"]
        cache.steps.append(("linear", name, x))
        return x @ W + b

    def _act_fwd(self, cache: _Cache, kind: str, x: np.ndarray) -> np.ndarray:
        if kind == "relu":
            cache.steps.append(("relu", None, x))
            return np.maximum(x, 0.0)
        if kind == "tanh":
            out = np.tanh(x)
            cache.steps.append(("tanh", None, out))
            return out
        cache.steps.append(("identity", None, None))
        return x

    def _bn_fwd(self, cache: _Cache, x: np.ndarray, mode: str) -> np.ndarray:
        gamma = self.params["clf.bn.gamma"]
        beta = self.params["clf.bn.beta"]
        if mode == "train":
            if x.shape[0] < 2:
                raise InvalidArgument("batchnorm needs batch size >= 2 in train mode")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.params["clf.bn.running_mean"] = (
                BN_MOMENTUM * self.params["clf.bn.running_mean"] + (1 - BN_MOMENTUM) * mean)
            self.params["clf.bn.running_var"] = (
                BN_MOMENTUM * self.params["clf.bn.running_var"] + (1 - BN_MOMENTUM) * var)
        else:
            mean = self.params["clf.bn.running_mean"]
            var = self.params["clf.bn.running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        x_hat = (x - mean) * inv_std
        cache.steps.append(("bn", mode, (x, x_hat, mean, inv_std)))
        return gamma * x_hat + beta

    def _check_finite(self, x: np.ndarray, layer_idx: int) -> None:
        if not np.all(np.isfinite(x)):
            raise NumericFailure(f"non-finite activation after layer {layer_idx}")

    def forward(self, batch: np.ndarray, head: str = "classifier",
                mode: str = "train"):
        """Run the encoder and the requested head.

        head: 'encoder' returns features, 'projection' returns raw
        embeddings, 'classifier' returns class probabilities (logits are
        kept in the cache). mode 'eval' uses running batchnorm statistics
        and leaves no state behind.
        """
        if head not in ("encoder", "projection", "classifier"):
            raise InvalidArgument(f"unknown head {head!r}")
        if mode not in ("train", "eval"):
            raise InvalidArgument(f"unknown mode {mode!r}")
        x = self._flatten(batch)
        cache = _Cache(head=head, mode=mode)
        layer = 0
        for i, (_, act) in enumerate(self.spec.encoder_layers):
            x = self._linear_fwd(cache, f"enc.{i}", x)
            x = self._act_fwd(cache, act, x)
            layer += 1
            self._check_finite(x, layer)
        if head == "encoder":
            return x, cache
        if head == "projection":
            x = self._linear_fwd(cache, "proj.0", x)
            x = self._act_fwd(cache, "relu", x)
            x = self._linear_fwd(cache, "proj.1", x)
            self._check_finite(x, layer + 2)
            return x, cache
        x = self._linear_fwd(cache, "clf.0", x)
        if self.spec.use_batchnorm_in_classifier:
            x = self._bn_fwd(cache, x, mode)
        x = self._act_fwd(cache, "relu", x)
        logits = self._linear_fwd(cache, "clf.1", x)
        self._check_finite(logits, layer + 2)
        return softmax(logits), cache

    # -- backward ----------------------------------------------------------

    def _bn_bwd(self, mode: str, saved, g: np.ndarray, grads: dict) -> np.ndarray:
        x, x_hat, mean, inv_std = saved
        gamma = self.params["clf.bn.gamma"]
        grads["clf.bn.gamma"] = (g * x_hat).sum(axis=0)
        grads["clf.bn.beta"] = g.sum(axis=0)
        dxhat = g * gamma
        if mode == "eval":
            # running stats are constants in eval mode
            return dxhat * inv_std
        n = x.shape[0]
        xc = x - mean
        dvar = (dxhat * xc).sum(axis=0) * (-0.5) * inv_std**3
        dmean = -(dxhat.sum(axis=0)) * inv_std + dvar * (-2.0) * xc.mean(axis=0)
        return dxhat * inv_std + dvar * 2.0 * xc / n + dmean / n

    def backward(self, cache: _Cache, upstream: np.ndarray):
        """Backpropagate an upstream gradient through a cached forward pass.

        For the classifier head the upstream gradient is with respect to
        the logits. Returns (grads, input_grad); grads holds one array per
        trainable parameter touched by the pass, same shapes as params.
        """
        if not isinstance(cache, _Cache) or not cache.steps:
            raise ContractViolation("backward needs the cache from a forward pass")
        grads: dict[str, np.ndarray] = {}
        g = np.asarray(upstream, dtype=np.float64)
        for kind, name, saved in reversed(cache.steps):
            if kind == "linear":
                grads[name + ".W"] = saved.T @ g
                grads[name + ".b"] = g.sum(axis=0)
                g = g @ self.params[name + ".W"].T
            elif kind == "relu":
                g = g * (saved > 0)
            elif kind == "tanh":
                g = g * (1.0 - saved**2)
            elif kind == "bn":
                g = self._bn_bwd(name, saved, g, grads)
            # identity: nothing to do
        return grads, g


def flatten_params(params: dict, keys: list[str]) -> np.ndarray:
    """Concatenate the named parameter arrays into one flat vector."""
    return np.concatenate([params[k].ravel() for k in keys])


def unflatten_params(theta: np.ndarray, params: dict, keys: list[str]) -> None:
    """Write a flat vector back into the named parameter arrays, in place."""
    off = 0
    for k in keys:
        n = params[k].size
        params[k] = theta[off:off + n].reshape(params[k].shape).copy()
        off += n
    if off != theta.size:
        raise InvalidArgument("flat vector length does not match the named parameters")
