"""Analytic partial derivatives of the canonical algebra.

The parameters of a canonical form are packed as a flat vector
[mean, sens_1 .. sens_m, noise]; a Jacobian block J then has
J[r, c] = d out_param_r / d in_param_c, and upstream gradients pull back
as J.T @ delta. These are the backward kernels that the network layers
apply site by site (in vectorized, plane-at-a-time fashion).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import (
    NOISE_EPS,
    THETA_EPS,
    CanonicalForm,
    max2,
    std_normal_pdf,
    variance,
    weighted_sum,
)


def pack(d: CanonicalForm) -> np.ndarray:
    return np.concatenate(([d.mean], d.sens, [d.noise]))


def unpack(v: np.ndarray) -> CanonicalForm:
    return CanonicalForm(v[0], v[1:-1], v[-1])


@dataclass
class MaxGradients:
    """Full Jacobian of a two-input max, one (m+2)x(m+2) block per input."""

    wrt_a: np.ndarray
    wrt_b: np.ndarray
    degenerate: bool = False


def sum_backward(ds, ws, out: CanonicalForm, upstream: np.ndarray):
    """Pull an upstream gradient back through a weighted sum.

    upstream is the packed gradient of the loss with respect to the output
    parameters. Returns (per-input packed gradients, per-weight gradients).
    The noise partial is the exact derivative of the quadrature rule,
    w^2 * a_r / out_noise, defined as 0 when the output noise vanishes.
    """
    m = out.m
    grads_in = []
    grads_w = []
    d_mean, d_sens, d_noise = upstream[0], upstream[1:-1], upstream[-1]
    for d, w in zip(ds, ws):
        g = np.zeros(m + 2)
        g[0] = d_mean * w
        g[1:-1] = d_sens * w
        if out.noise > 0.0:
            g[-1] = d_noise * w * w * d.noise / out.noise
        grads_in.append(g)
        gw = d_mean * d.mean + float(np.dot(d_sens, d.sens))
        if out.noise > 0.0:
            gw += d_noise * w * d.noise ** 2 / out.noise
        grads_w.append(gw)
    return grads_in, grads_w


def _max2_block(a: CanonicalForm, b: CanonicalForm, t: float, theta: float,
                beta: float, out: CanonicalForm) -> np.ndarray:
    """Jacobian of the max output parameters with respect to input a.

    t, theta, beta are the cached forward quantities oriented so that
    beta = (a.mean - b.mean) / theta and t = Phi(beta). The b block is
    obtained by calling with the arguments swapped and (t, beta) negated,
    which makes the swap symmetry exact by construction.
    """
    m = a.m
    phi = float(std_normal_pdf(beta))
    va, vb = variance(a), variance(b)
    ds = a.sens - b.sens
    G = float(np.dot(out.sens, ds))
    nr = out.noise

    J = np.zeros((m + 2, m + 2))
    # output mean row
    J[0, 0] = t
    J[0, 1:-1] = ds * phi / theta
    J[0, -1] = a.noise * phi / theta
    # output sensitivity rows
    dmean = a.mean - b.mean
    J[1:-1, 0] = ds * phi / theta
    J[1:-1, 1:-1] = -np.outer(ds, ds) * beta * phi / theta ** 2
    J[1:-1, 1:-1] += t * np.eye(m)
    J[1:-1, -1] = -ds * beta * a.noise * phi / theta ** 2
    # output noise row
    U = (a.mean + b.mean - 2.0 * out.mean) * phi / theta
    T3 = dmean * (vb - va + 2.0 * G) * phi / theta ** 3
    J[-1, 0] = (2.0 * (a.mean - out.mean) * t + theta * phi
                + (va - vb - 2.0 * G) * phi / theta) / (2.0 * nr)
    J[-1, 1:-1] = ds * (2.0 * (1.0 - t) + U + T3) / (2.0 * nr)
    J[-1, -1] = a.noise * (2.0 * t + U + T3) / (2.0 * nr)
    return J


def _passthrough(a: CanonicalForm, b: CanonicalForm) -> MaxGradients:
    m = a.m
    eye, zero = np.eye(m + 2), np.zeros((m + 2, m + 2))
    if a.mean >= b.mean:
        return MaxGradients(eye, zero, degenerate=True)
    return MaxGradients(zero, eye, degenerate=True)


def max2_backward(a: CanonicalForm, b: CanonicalForm, out: CanonicalForm,
                  t: float, theta: float, beta) -> MaxGradients:
    """Jacobian blocks of max2(a, b) with respect to both inputs.

    Degenerate sites (vanishing spread or vanishing output noise) use the
    hard-max subgradient: identity toward the dominating input.
    """
    if beta is None or theta < THETA_EPS or out.noise < NOISE_EPS:
        return _passthrough(a, b)
    return MaxGradients(
        wrt_a=_max2_block(a, b, t, theta, beta, out),
        wrt_b=_max2_block(b, a, 1.0 - t, theta, -beta, out),
    )


def relu_backward(d: CanonicalForm, out: CanonicalForm, t: float,
                  theta: float, beta) -> np.ndarray:
    """Jacobian of max2(d, 0) with respect to d; the constant side is dropped."""
    zero = CanonicalForm(0.0, np.zeros(d.m), 0.0)
    return max2_backward(d, zero, out, t, theta, beta).wrt_a


# ---------------------------------------------------------------------------
# finite-difference verification harness


@dataclass
class GradCheckReport:
    """Per-partial comparison of analytic vs central-difference values."""

    op: str
    labels: list
    analytic: np.ndarray
    numeric: np.ndarray
    degenerate: bool = False

    @property
    def rel_errors(self) -> np.ndarray:
        denom = np.maximum(np.maximum(np.abs(self.analytic),
                                      np.abs(self.numeric)), 1e-8)
        return np.abs(self.analytic - self.numeric) / denom

    @property
    def max_rel_error(self) -> float:
        if self.degenerate or len(self.labels) == 0:
            return 0.0
        return float(self.rel_errors.max())


def central_diff(f, x: np.ndarray, h: float = 1e-5, n_cols=None) -> np.ndarray:
    """Central finite differences of a scalar function over a flat array.

    n_cols limits differencing to the first n_cols entries (the rest are
    held fixed, e.g. the constant reference of a ReLU).
    """
    x = np.asarray(x, dtype=np.float64)
    if n_cols is None:
        n_cols = x.size
    g = np.zeros(n_cols)
    for i in range(n_cols):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def _forward_theta(a: CanonicalForm, b: CanonicalForm):
    from .canonical import _theta_beta

    return _theta_beta(a, b)


def finite_diff_check(op: str, inputs, h: float = 1e-5) -> GradCheckReport:
    """Check every analytic partial of an op against central differences.

    op is one of "sum", "max2", "relu". For "sum", inputs is (forms,
    weights); the weight partials are included. Max-type cases with a
    degenerate spread are flagged and excluded rather than differenced.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"finite-difference step {h} outside [1e-7, 1e-3]")
    if op == "sum":
        return _check_sum(inputs[0], inputs[1], h)
    if op == "max2":
        return _check_max2(inputs[0], inputs[1], h)
    if op == "relu":
        d = inputs[0]
        return _check_max2(d, CanonicalForm(0.0, np.zeros(d.m), 0.0), h,
                           op="relu", skip_b=True)
    raise ValueError(f"unknown op tag {op!r}")


def _param_labels(tag: str, m: int):
    return [f"{tag}.mean"] + [f"{tag}.sens[{k}]" for k in range(m)] + [f"{tag}.noise"]


def _check_sum(ds, ws, h) -> GradCheckReport:
    m = ds[0].m
    p = len(ds)
    out = weighted_sum(ds, ws)

    def forward(flat):
        forms = [unpack(flat[i * (m + 2):(i + 1) * (m + 2)]) for i in range(p)]
        w = flat[p * (m + 2):]
        return pack(weighted_sum(forms, list(w)))

    x0 = np.concatenate([pack(d) for d in ds] + [np.asarray(ws, dtype=float)])
    labels, analytic, numeric = [], [], []
    for r in range(m + 2):
        basis = np.zeros(m + 2)
        basis[r] = 1.0
        gin, gw = sum_backward(ds, ws, out, basis)
        row = np.concatenate(gin + [np.asarray(gw)])
        fd = central_diff(lambda v: forward(v)[r], x0, h)
        for i in range(p):
            for c, lab in enumerate(_param_labels(f"in{i}", m)):
                labels.append(f"out[{r}]/{lab}")
        labels.extend(f"out[{r}]/w[{i}]" for i in range(p))
        analytic.append(row)
        numeric.append(fd)
    return GradCheckReport("sum", labels, np.concatenate(analytic),
                           np.concatenate(numeric))


def _check_max2(a, b, h, op="max2", skip_b=False) -> GradCheckReport:
    m = a.m
    out, t = max2(a, b)
    theta, beta = _forward_theta(a, b)
    if beta is None or theta < max(THETA_EPS, 10.0 * h) \
            or out.noise < max(NOISE_EPS, 10.0 * h):
        return GradCheckReport(op, [], np.zeros(0), np.zeros(0), degenerate=True)
    jac = max2_backward(a, b, out, t, theta, beta)

    def forward(flat):
        fa = unpack(flat[:m + 2])
        fb = unpack(flat[m + 2:])
        res, _ = max2(fa, fb)
        return pack(res)

    x0 = np.concatenate([pack(a), pack(b)])
    labels, analytic, numeric = [], [], []
    n_in = m + 2 if skip_b else 2 * (m + 2)
    for r in range(m + 2):
        row = jac.wrt_a[r] if skip_b else np.concatenate([jac.wrt_a[r],
                                                          jac.wrt_b[r]])
        fd = central_diff(lambda v: forward(v)[r], x0, h, n_cols=n_in)
        in_labels = _param_labels("a", m)
        if not skip_b:
            in_labels += _param_labels("b", m)
        labels.extend(f"out[{r}]/{lab}" for lab in in_labels)
        analytic.append(row)
        numeric.append(fd)
    return GradCheckReport(op, labels, np.concatenate(analytic),
                           np.concatenate(numeric))
