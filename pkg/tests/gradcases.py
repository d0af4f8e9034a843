"""Random small-shape gradient-check cases shared by unit and acceptance tests.

Each case builder takes a seed and returns ``(f, x)`` where ``f`` maps the
tensor ``x`` to a scalar. Outputs are contracted with a fixed random weight
so no gradient is identically zero by symmetry (plain ``sum`` of a softmax
has an exactly-zero gradient, which only measures FD noise).
"""

import numpy as np

from cct import numerics as nx
from cct.model import CctConfig, forward, init_params

# Four-point central stencil: truncation O(h^4) ~ 1e-12, noise ~ 1e-13.
FD_STEP = 1e-3
FD_ORDER = 4


def _unary(op, shape, low=-2.0, high=2.0):
    def build(seed):
        rng = np.random.default_rng(seed)
        x = nx.Tensor(rng.uniform(low, high, shape))
        w = rng.normal(size=np.shape(op(x).data))
        return (lambda t: nx.sum(nx.mul(op(t), nx.Tensor(w)))), x
    return build


def _dropout_case(seed):
    rng = np.random.default_rng(seed)
    x = nx.Tensor(rng.normal(size=(6, 8)))
    w = nx.Tensor(rng.normal(size=(6, 8)))
    # a fresh stream per call reproduces the same mask, so f is deterministic
    return (lambda t: nx.sum(nx.mul(nx.dropout(t, 0.3, nx.RngStream(seed), True), w))), x


def _cross_entropy_case(seed):
    rng = np.random.default_rng(seed)
    x = nx.Tensor(rng.normal(size=(5, 3)))
    labels = rng.integers(0, 3, 5)
    return (lambda t: nx.cross_entropy(t, labels)), x


def _layer_norm_param(which):
    def build(seed):
        rng = np.random.default_rng(seed)
        x = nx.Tensor(rng.normal(size=(4, 6)))
        gamma = nx.Tensor(rng.normal(size=6))
        beta = nx.Tensor(rng.normal(size=6))
        w = nx.Tensor(rng.normal(size=(4, 6)))
        slots = {"x": x, "gamma": gamma, "beta": beta}
        target = slots[which]

        def f(t):
            args = dict(slots, **{which: t})
            return nx.sum(nx.mul(nx.layer_norm(args["x"], args["gamma"], args["beta"]), w))
        return f, target
    return build


def _conv_case(which, stride):
    def build(seed):
        rng = np.random.default_rng(seed)
        slots = {
            "x": nx.Tensor(rng.normal(size=(1, 2, 5, 5))),
            "kernel": nx.Tensor(rng.normal(size=(2, 2, 3, 3))),
            "bias": nx.Tensor(rng.normal(size=2)),
        }
        probe = nx.conv2d(slots["x"], slots["kernel"], slots["bias"], stride, 1)
        w = nx.Tensor(rng.normal(size=probe.shape))

        def f(t):
            args = dict(slots, **{which: t})
            return nx.sum(nx.mul(nx.conv2d(args["x"], args["kernel"], args["bias"], stride, 1), w))
        return f, slots[which]
    return build


def _linear_case(which):
    def build(seed):
        rng = np.random.default_rng(seed)
        slots = {"x": nx.Tensor(rng.normal(size=(2, 3, 4))),
                 "weight": nx.Tensor(rng.normal(size=(4, 5))),
                 "bias": nx.Tensor(rng.normal(size=5))}
        w = nx.Tensor(rng.normal(size=(2, 3, 5)))

        def f(t):
            args = dict(slots, **{which: t})
            return nx.sum(nx.mul(nx.linear(args["x"], args["weight"], args["bias"]), w))
        return f, slots[which]
    return build


def _binary(op, which, a_shape, b_shape, b_low=-2.0, b_high=2.0):
    def build(seed):
        rng = np.random.default_rng(seed)
        slots = {"a": nx.Tensor(rng.uniform(-2, 2, a_shape)),
                 "b": nx.Tensor(rng.uniform(b_low, b_high, b_shape))}
        w = nx.Tensor(rng.normal(size=op(slots["a"], slots["b"]).shape))

        def f(t):
            args = dict(slots, **{which: t})
            return nx.sum(nx.mul(op(args["a"], args["b"]), w))
        return f, slots[which]
    return build


OP_CASES = {
    "matmul[a]": _binary(nx.matmul, "a", (3, 4), (4, 5)),
    "matmul[b]": _binary(nx.matmul, "b", (3, 4), (4, 5)),
    "matmul[batched-a]": _binary(nx.matmul, "a", (2, 3, 4), (4, 2)),
    "matmul[batched-b]": _binary(nx.matmul, "b", (2, 3, 4), (4, 2)),
    "linear[x]": _linear_case("x"),
    "linear[weight]": _linear_case("weight"),
    "linear[bias]": _linear_case("bias"),
    "add[broadcast-b]": _binary(nx.add, "b", (3, 4), (4,)),
    "sub[a]": _binary(nx.sub, "a", (3, 4), (3, 4)),
    "sub[b]": _binary(nx.sub, "b", (3, 4), (1, 4)),
    "mul[a]": _binary(nx.mul, "a", (3, 4), (3, 1)),
    "mul[b]": _binary(nx.mul, "b", (3, 4), (3, 1)),
    "div[a]": _binary(nx.div, "a", (3, 4), (3, 4), 0.5, 2.0),
    "div[b]": _binary(nx.div, "b", (3, 4), (3, 4), 0.5, 2.0),
    "power": _unary(lambda t: nx.power(t, 3.0), (3, 5), 0.25, 2.0),
    "exp": _unary(nx.exp, (3, 5)),
    "log": _unary(nx.log, (3, 5), 0.5, 3.0),
    "sum[axis]": _unary(lambda t: nx.sum(t, axis=1), (3, 4, 2)),
    "mean[keepdims]": _unary(lambda t: nx.mean(t, axis=0, keepdims=True), (3, 4)),
    "reshape": _unary(lambda t: nx.reshape(t, (6, 2)), (3, 4)),
    "transpose": _unary(lambda t: nx.transpose(t, (2, 0, 1)), (2, 3, 4)),
    "getitem": _unary(lambda t: nx.getitem(t, (slice(None), 1)), (3, 4, 2)),
    "concat": _unary(lambda t: nx.concat([t, nx.mul(t, 2.0)], axis=1), (3, 4)),
    "broadcast_to": _unary(lambda t: nx.broadcast_to(t, (3, 2, 4)), (2, 1)),
    "relu": _unary(nx.relu, (4, 8)),
    "gelu[erf]": _unary(nx.gelu, (4, 8), -4, 4),
    "gelu[tanh]": _unary(lambda t: nx.gelu(t, approximate=True), (4, 8), -4, 4),
    "softmax[last]": _unary(lambda t: nx.softmax(t, -1), (4, 6)),
    "softmax[axis0]": _unary(lambda t: nx.softmax(t, 0), (4, 6)),
    "layer_norm[x]": _layer_norm_param("x"),
    "layer_norm[gamma]": _layer_norm_param("gamma"),
    "layer_norm[beta]": _layer_norm_param("beta"),
    "dropout[train]": _dropout_case,
    "cross_entropy": _cross_entropy_case,
    "conv2d[x]": _conv_case("x", 1),
    "conv2d[kernel]": _conv_case("kernel", 1),
    "conv2d[bias]": _conv_case("bias", 1),
    "conv2d[x,stride2]": _conv_case("x", 2),
    "conv2d[kernel,stride2]": _conv_case("kernel", 2),
    "maxpool2d": _unary(lambda t: nx.maxpool2d(t, 3, 2, 1), (1, 1, 7, 7)),
    "maxpool2d[no-pad]": _unary(lambda t: nx.maxpool2d(t, 2, 2, 0), (1, 2, 4, 6)),
}


TINY_CCT = CctConfig(
    image_size=(12, 12), in_channels=1, tokenizer_stages=1,
    conv_kernel=3, conv_stride=1, conv_padding=1,
    pool_kernel=3, pool_stride=2, pool_padding=1,
    embed_dim=8, num_heads=2, encoder_depth=1, mlp_ratio=2,
    dropout_rate=0.0, attention_dropout_rate=0.0,
)

# key rows of the fused qkv bias: the softmax over keys is invariant to
# adding q.b_k to every score of a query, so this gradient is exactly zero
KEY_BIAS = ("encoder.block0.qkv.bias", slice(8, 16))


def tiny_cct_problem(seed, config=TINY_CCT, scale=0.5):
    """Random parameter point, 2-image batch and loss closure for the tiny CCT.

    Parameters are redrawn at ``scale`` instead of the 0.02 init so every
    gradient element sits well above finite-difference noise.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, nx.RngStream(seed))
    for t in params.values():
        t.data = rng.normal(0.0, scale, t.shape)
    images = rng.random((2, config.in_channels, *config.image_size))
    labels = np.array([0, 1])

    def loss():
        return nx.cross_entropy(forward(images, params, config, check=False), labels)
    return params, loss
