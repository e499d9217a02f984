"""Minimal reverse-mode autodiff over numpy arrays, complex aware.

The tape differentiates real-valued losses of mixed real/complex arrays.
For a complex variable v the stored gradient is the packed cotangent

    grad(v) = dL/dRe(v) + 1j * dL/dIm(v)

which is exactly reverse mode over the split real/imaginary parameterization
(and equals 2 * dL/dconj(v) in Wirtinger terms).  For real variables the
gradient is plain float64.  Rules for non-holomorphic operations (modulus,
modReLU, ...) follow from

    g_in = g_out * conj(dout/din) + conj(g_out) * (dout/dconj(in)).

Only the operations required by the detection model are provided; each one
is validated against central finite differences in the test suite.
"""

import numpy as np

# Guard against division by zero in modulus-based rules.  Gradients within
# ~1e-12 of a modulus kink are clamped rather than exact.
_MOD_EPS = 1e-12

_grad_enabled = True


class no_grad:
    """Context manager that builds graph-free Vars (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _is_complex(a):
    return np.iscomplexobj(a)


class Var:
    """One tape node: a value, optionally parents and a vector-Jacobian rule."""

    __slots__ = ("value", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad=False, parents=(), vjp=None):
        self.value = np.asarray(value)
        self.requires_grad = requires_grad and _grad_enabled
        self.grad = None
        self._parents = parents if self.requires_grad else ()
        self._vjp = vjp if self.requires_grad else None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this real scalar into the graph's leaves."""
        if self.value.size != 1 or _is_complex(self.value):
            raise ValueError("backward() requires a real scalar loss")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                g = _match(g, parent.value)
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad += g


def _match(g, ref):
    """Cast a gradient contribution to the dtype/shape of its variable."""
    g = _unbroadcast(np.asarray(g), ref.shape)
    if _is_complex(ref):
        return g.astype(np.complex128, copy=False)
    if _is_complex(g):
        return np.ascontiguousarray(g.real)
    return g.astype(np.float64, copy=False)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def lift(x):
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _node(value, parents, vjp):
    rg = any(p.requires_grad for p in parents)
    return Var(value, requires_grad=rg, parents=tuple(parents), vjp=vjp)


# -- arithmetic -------------------------------------------------------------

def add(a, b):
    a, b = lift(a), lift(b)
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = lift(a), lift(b)
    return _node(a.value - b.value, (a, b), lambda g: (g, -g))


def neg(a):
    a = lift(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    """Elementwise product; real/complex operands in any combination."""
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * np.conj(bv), g * np.conj(av)))


def scale(a, c):
    """Multiply by a constant scalar (no gradient for the constant)."""
    a = lift(a)
    return _node(a.value * c, (a,), lambda g: (g * np.conj(c),))


def recip(a):
    """1/a for real a."""
    a = lift(a)
    inv = 1.0 / a.value
    return _node(inv, (a,), lambda g: (-g * inv * inv,))


def div(a, b):
    """a / b with real denominator."""
    return mul(a, recip(b))


def real_part(z):
    z = lift(z)
    return _node(np.ascontiguousarray(z.value.real), (z,), lambda g: (g,))


def abs2(z):
    """|z|^2 as a real array."""
    z = lift(z)
    zv = z.value
    val = np.ascontiguousarray((zv * np.conj(zv)).real)
    return _node(val, (z,), lambda g: (2.0 * g * zv,))


def cabs(z):
    """|z| as a real array (gradient clamped within _MOD_EPS of zero)."""
    z = lift(z)
    zv = z.value
    mag = np.abs(zv)
    safe = np.maximum(mag, _MOD_EPS)
    return _node(mag, (z,), lambda g: (g * zv / safe,))


def sqrt(x):
    x = lift(x)
    r = np.sqrt(x.value)
    return _node(r, (x,), lambda g: (g / (2.0 * np.maximum(r, _MOD_EPS)),))


def log(x):
    x = lift(x)
    return _node(np.log(x.value), (x,), lambda g: (g / x.value,))


def softplus(x):
    """log(1 + e^x), numerically stable."""
    x = lift(x)
    val = np.logaddexp(0.0, x.value)
    sig = 1.0 / (1.0 + np.exp(-x.value))
    return _node(val, (x,), lambda g: (g * sig,))


def sum_(x, axis=None, keepdims=False):
    x = lift(x)
    val = x.value.sum(axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, shape),)

    return _node(val, (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = lift(x)
    n = x.value.size if axis is None else x.value.shape[axis]
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    x = lift(x)
    old = x.value.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


# -- layers -----------------------------------------------------------------

def dense(x, w, b=None):
    """y = x @ w.T (+ b) for x (B, n), w (o, n) complex."""
    x, w = lift(x), lift(w)
    xv, wv = x.value, w.value
    val = xv @ wv.T
    if b is None:
        return _node(val, (x, w),
                     lambda g: (g @ np.conj(wv), g.T @ np.conj(xv)))
    b = lift(b)
    return _node(val + b.value, (x, w, b),
                 lambda g: (g @ np.conj(wv), g.T @ np.conj(xv), g.sum(axis=0)))


def conv1d(x, w, b=None, kernels=None):
    """Complex same-padding conv: x (B,Ci,L), w (Co,Ci,K) -> (B,Co,L)."""
    from .. import _kernels as default_kernels
    k = kernels or default_kernels
    x, w = lift(x), lift(w)
    xv, wv = x.value, w.value
    K = wv.shape[2]
    val = k.conv1d(xv, wv)

    # Input gradient is a convolution with the flipped conjugate kernel.
    def vjp(g):
        wt = np.conj(wv[:, :, ::-1]).transpose(1, 0, 2)
        gx = k.conv1d(np.ascontiguousarray(g), np.ascontiguousarray(wt))
        gw = k.conv1d_grad_w(xv, g, K)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    if b is None:
        return _node(val, (x, w), vjp)
    b = lift(b)
    return _node(val + b.value[None, :, None], (x, w, b), vjp)


def upsample_repeat(x, factor):
    """Repeat each slow-time sample ``factor`` times (B,C,L) -> (B,C,L*factor)."""
    x = lift(x)
    xv = x.value
    val = np.repeat(xv, factor, axis=-1)

    def vjp(g):
        return (g.reshape(*xv.shape, factor).sum(axis=-1),)

    return _node(val, (x,), vjp)


def maxpool_mod(x, factor):
    """Max-pooling on the modulus with complex gather, (B,C,L) -> (B,C,L//f)."""
    x = lift(x)
    xv = x.value
    B, C, L = xv.shape
    if L % factor:
        raise ValueError(f"pool factor {factor} does not divide length {L}")
    xr = xv.reshape(B, C, L // factor, factor)
    idx = np.abs(xr).argmax(axis=-1)
    val = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gr = np.zeros_like(xr)
        np.put_along_axis(gr, idx[..., None], g[..., None], axis=-1)
        return (gr.reshape(B, C, L),)

    return _node(val, (x,), vjp)


def modrelu(x, bias):
    """modReLU: ReLU(|z| + b) * z/|z| per channel; f(0) = 0, phase preserved."""
    x, bias = lift(x), lift(bias)
    xv = x.value
    bv = bias.value[None, :, None]
    mag = np.abs(xv)
    safe = np.maximum(mag, _MOD_EPS)
    active = (mag + bv) > 0
    val = np.where(active, (1.0 + bv / safe) * xv, 0.0)

    def vjp(g):
        dwdz = 1.0 + bv / (2.0 * safe)
        dwdzb = -bv * xv * xv / (2.0 * safe ** 3)
        gz = np.where(active, g * np.conj(dwdz) + np.conj(g) * dwdzb, 0.0)
        gb = np.where(active, (np.conj(g) * xv / safe).real, 0.0).sum(axis=(0, 2))
        return gz, gb

    return _node(val, (x, bias), vjp)


def crelu(x):
    """CReLU: ReLU on real and imaginary parts independently; f(0) = 0."""
    x = lift(x)
    xv = x.value
    mr = xv.real > 0
    mi = xv.imag > 0
    val = xv.real * mr + 1j * (xv.imag * mi)

    def vjp(g):
        return (g.real * mr + 1j * (g.imag * mi),)

    return _node(val, (x,), vjp)


def channel_norm(x, gain, eps=1e-6):
    """Per-sample, per-channel complex mean removal and RMS-modulus scaling.

    y = gain_c * (x - mean_L(x)) / sqrt(mean_L |x - mean|^2 + eps)
    """
    x = lift(x)
    mu = mean(x, axis=2, keepdims=True)
    xc = sub(x, mu)
    power = mean(abs2(xc), axis=2, keepdims=True)
    rms = sqrt(add(power, Var(np.asarray(eps))))
    gain3 = reshape(lift(gain), (1, -1, 1))
    return mul(div(xc, rms), gain3)
