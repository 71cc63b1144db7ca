"""Closed-form gradients of a one-layer task network driven by a linear switcher.

The toy setting: scalar input ``x``, one-hot label ``y`` over K classes, task
weights ``wT`` and switcher weights ``wS`` (both K-vectors).  The switcher
emits a single scale ``s = sum_k wS_k * wT_k``; the logits are
``z_i = wT_i * x * s``.  Because ``s`` depends on ``wT``, the task-weight
gradient picks up a second term that couples every class error into every
weight, which is what :func:`coupling_report` quantifies.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .tensor import Tape, Tensor, backward, matmul, reshape, softmax, softmax_xent

FD_STEP = 1e-6
FD_TOL = 1e-8
ENGINE_TOL = 1e-10


@dataclass(frozen=True)
class ToyModel:
    x: float
    y: np.ndarray  # one-hot, length K
    wT: np.ndarray
    wS: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1 or y.size < 2:
            raise ValueError("need K >= 2 classes")
        if np.count_nonzero(y) != 1 or y.sum() != 1.0:
            raise ValueError("y must be one-hot")
        wT = np.asarray(self.wT, dtype=np.float64)
        wS = np.asarray(self.wS, dtype=np.float64)
        if wT.shape != y.shape or wS.shape != y.shape:
            raise ValueError("wT, wS and y must all have length K")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "wT", wT)
        object.__setattr__(self, "wS", wS)
        object.__setattr__(self, "x", float(self.x))

    @property
    def K(self) -> int:
        return self.y.size

    @property
    def label(self) -> int:
        return int(np.argmax(self.y))

    @classmethod
    def random(cls, rng: np.random.Generator, K: int) -> "ToyModel":
        scale = 1.0 / np.sqrt(K)
        return cls(
            x=rng.uniform(-1.0, 1.0),
            y=np.eye(K)[rng.integers(K)],
            wT=rng.normal(0.0, 1.0, K),
            wS=rng.normal(0.0, scale, K),
        )


def _xent(z: np.ndarray, y: np.ndarray) -> float:
    zmax = z.max()
    return float(zmax + np.log(np.exp(z - zmax).sum()) - z @ y)


def toy_forward(m: ToyModel) -> tuple[float, np.ndarray, float]:
    """``(s, h, loss)`` for the switcher-scaled toy network."""
    s = float(m.wS @ m.wT)
    z = m.wT * m.x * s
    return s, softmax(z[None])[0], _xent(z, m.y)


def baseline_forward(m: ToyModel) -> tuple[np.ndarray, float]:
    """``(h, loss)`` without the switcher: logits ``wT * x``."""
    z = m.wT * m.x
    return softmax(z[None])[0], _xent(z, m.y)


def _class_error_sum(m: ToyModel, h: np.ndarray) -> float:
    # sum_i (h_i - y_i) * x * wT_i, shared by both closed forms
    return float(((h - m.y) * m.x) @ m.wT)


def analytic_grad_wS(m: ToyModel) -> np.ndarray:
    """dLoss/dwS_k = wT_k * sum_i (h_i - y_i) x wT_i."""
    _, h, _ = toy_forward(m)
    return m.wT * _class_error_sum(m, h)


def grad_wT_terms(m: ToyModel) -> tuple[np.ndarray, np.ndarray]:
    """The own-class term ``(h_k - y_k) x s`` and the coupling term ``wS_k * sum_i ...``."""
    s, h, _ = toy_forward(m)
    own = (h - m.y) * m.x * s
    coupling = m.wS * _class_error_sum(m, h)
    return own, coupling


def analytic_grad_wT(m: ToyModel) -> np.ndarray:
    """dLoss/dwT_k = (h_k - y_k) x s + wS_k * sum_i (h_i - y_i) x wT_i."""
    own, coupling = grad_wT_terms(m)
    return own + coupling


def baseline_grad_wT(m: ToyModel) -> np.ndarray:
    """dLoss/dwT_k = (h_k - y_k) x for the unscaled network."""
    h, _ = baseline_forward(m)
    return (h - m.y) * m.x


def coupling_report(m: ToyModel) -> dict:
    own, coupling = grad_wT_terms(m)
    mag = np.abs(own) + np.abs(coupling)
    share = np.divide(np.abs(coupling), mag, out=np.zeros_like(mag), where=mag > 0)
    return {
        "K": m.K,
        "label": m.label,
        "own": own.tolist(),
        "coupling": coupling.tolist(),
        "total": (own + coupling).tolist(),
        "coupling_share": share.tolist(),
        "mean_coupling_share": float(share.mean()),
    }


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def engine_grads(m: ToyModel) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and (dwS, dwT) from the same graph built with the differentiation engine."""
    K = m.K
    wT = Tensor(m.wT.copy(), requires_grad=True)
    wS = Tensor(m.wS.copy(), requires_grad=True)
    with Tape():
        s = matmul(reshape(wS, (1, K)), reshape(wT, (K, 1)))
        xs = matmul(Tensor([[m.x]]), s)
        z = matmul(xs, reshape(wT, (1, K)))
        loss = softmax_xent(z, np.array([m.label]))
    backward(loss)
    return loss.item(), wS.grad.copy(), wT.grad.copy()


def fd_grad(m: ToyModel, which: str, step: float = FD_STEP, loss_fn=None) -> np.ndarray:
    """Central differences of the toy loss along each entry of ``wS`` or ``wT``."""
    loss_fn = loss_fn or (lambda mm: toy_forward(mm)[2])
    base = getattr(m, which)
    out = np.empty(m.K)
    for k in range(m.K):
        up, dn = base.copy(), base.copy()
        up[k] += step
        dn[k] -= step
        out[k] = (loss_fn(replace(m, **{which: up})) - loss_fn(replace(m, **{which: dn}))) / (2 * step)
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max abs difference over the larger magnitude, floored at the unit loss scale."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1.0)
    return float(np.abs(a - b).max(initial=0.0) / scale)


@dataclass
class SuiteResult:
    instances: int
    max_fd_err_wS: float
    max_fd_err_wT: float
    max_engine_err_wS: float
    max_engine_err_wT: float
    max_engine_err_loss: float
    max_softmax_sum_err: float
    zero_coupling: int
    failures: int
    seconds: float

    @property
    def ok(self) -> bool:
        return self.failures == 0

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def run_suite(n: int = 1000, seed: int = 0, k_min: int = 2, k_max: int = 10,
              fd_tol: float = FD_TOL, engine_tol: float = ENGINE_TOL) -> SuiteResult:
    """Check both closed forms against finite differences and the engine on ``n`` random instances."""
    rng = np.random.default_rng(seed)
    worst = dict(fd_wS=0.0, fd_wT=0.0, en_wS=0.0, en_wT=0.0, en_loss=0.0, hsum=0.0)
    failures = zero_coupling = 0
    start = time.perf_counter()
    for _ in range(n):
        m = ToyModel.random(rng, int(rng.integers(k_min, k_max + 1)))
        gS, gT = analytic_grad_wS(m), analytic_grad_wT(m)
        _, h, loss = toy_forward(m)
        e_loss, e_wS, e_wT = engine_grads(m)
        errs = dict(
            fd_wS=rel_err(gS, fd_grad(m, "wS")),
            fd_wT=rel_err(gT, fd_grad(m, "wT")),
            en_wS=rel_err(gS, e_wS),
            en_wT=rel_err(gT, e_wT),
            en_loss=abs(loss - e_loss) / max(abs(e_loss), 1.0),
            hsum=float(abs(h.sum() - 1.0)),
        )
        for key, v in errs.items():
            worst[key] = max(worst[key], v)
        bad = (errs["fd_wS"] > fd_tol or errs["fd_wT"] > fd_tol or errs["en_wS"] > engine_tol
               or errs["en_wT"] > engine_tol or errs["en_loss"] > engine_tol or errs["hsum"] > 1e-12)
        failures += int(bad)
        zero_coupling += int(not np.any(grad_wT_terms(m)[1]))
    return SuiteResult(
        n, worst["fd_wS"], worst["fd_wT"], worst["en_wS"], worst["en_wT"], worst["en_loss"],
        worst["hsum"], zero_coupling, failures, time.perf_counter() - start,
    )
