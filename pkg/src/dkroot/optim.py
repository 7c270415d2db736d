"""Parameter storage, seeding, gradients, Adam and finite-difference checks."""

from __future__ import annotations

import hashlib
import io
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import NumericError, Tensor


class ParamStore:
    """Named trainable tensors in insertion order."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def size(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self._params.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_arrays(self, arrays: dict):
        for n, t in self._params.items():
            a = np.asarray(arrays[n], dtype=np.float64)
            if a.shape != t.data.shape:
                raise ValueError(f"parameter {n}: shape {a.shape} != {t.data.shape}")
            t.data = a.copy()

    def update(self, other: "ParamStore", prefix=""):
        for n, t in other.items():
            self._params[prefix + n] = t
        return self


# seeding -------------------------------------------------------------------------


class Rng:
    """Seeded stream that can be split by label.

    A child is keyed by the length-prefixed bytes of every label on its path,
    so distinct paths can never share a key.
    """

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed) & (2**64 - 1)
        self.path = tuple(path)
        key = []
        for label in self.path:
            b = str(label).encode()
            key.append(len(b))
            key.extend(b)
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def split(self, label) -> "Rng":
        return Rng(self.seed, self.path + (label,))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"

    # convenience passthroughs
    def normal(self, *a, **k):
        return self.generator.normal(*a, **k)

    def standard_normal(self, *a, **k):
        return self.generator.standard_normal(*a, **k)

    def integers(self, *a, **k):
        return self.generator.integers(*a, **k)

    def uniform(self, *a, **k):
        return self.generator.uniform(*a, **k)

    def permutation(self, *a, **k):
        return self.generator.permutation(*a, **k)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, Rng):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# gradients -----------------------------------------------------------------------


def grad(loss_fn, params: ParamStore, *inputs) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradient of the scalar ``loss_fn(*inputs)`` for every parameter."""
    params.zero_grad()
    loss = loss_fn(*inputs)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("loss_fn must return a scalar Tensor")
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss")
    loss.backward()
    g = params.grads()
    for n, v in g.items():
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite gradient for {n}")
    return g


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)  # name -> max relative error
    tolerance: float = 1e-3

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self):
        lines = [f"{n}: {e:.3e}" for n, e in self.errors.items()]
        return "\n".join(lines + [f"max={self.max_error:.3e} tol={self.tolerance:g} {'PASS' if self.passed else 'FAIL'}"])


def finite_diff_check(loss_fn, params: ParamStore, step=1e-4, tolerance=1e-3, max_entries=None, seed=0,
                      inputs=()) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    The relative error of a parameter is max|analytic - numeric| divided by
    the larger of the two gradients' max magnitudes (floored at 1e-12).
    ``max_entries`` limits how many entries per parameter are probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = grad(loss_fn, params, *inputs)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        a = analytic[name].reshape(-1)[idx]
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn(*inputs).data)
            flat[i] = orig - step
            down = float(loss_fn(*inputs).data)
            flat[i] = orig
            num[j] = (up - down) / (2 * step)
        scale = max(np.abs(a).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-12)
        report.errors[name] = float(np.abs(a - num).max(initial=0.0) / scale)
    return report


# optimizer -----------------------------------------------------------------------


def adam_step(params: dict, grads: dict, state: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update. Returns (new_params, new_state); inputs are untouched."""
    b1, b2 = betas
    t = state.get("t", 0) + 1
    m_old, v_old = state.get("m", {}), state.get("v", {})
    new_p, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        m = b1 * m_old.get(name, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * v_old.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        new_p[name] = p - lr * mhat / (np.sqrt(vhat) + eps)
        m_new[name], v_new[name] = m, v
    return new_p, {"t": t, "m": m_new, "v": v_new}


class Adam:
    def __init__(self, params: ParamStore, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, names=None):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.names = list(names) if names is not None else params.names()
        self.state: dict = {}

    def step(self, grads: dict | None = None):
        grads = grads if grads is not None else self.params.grads()
        cur = {n: self.params[n].data for n in self.names}
        new, self.state = adam_step(cur, {n: grads[n] for n in self.names}, self.state, self.lr, self.betas, self.eps)
        for n in self.names:
            self.params[n].data = new[n]


# checkpoints ---------------------------------------------------------------------


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def save_checkpoint(path, params: ParamStore | dict, meta: dict, fp: str):
    arrays = params.arrays() if isinstance(params, ParamStore) else {k: np.asarray(v) for k, v in params.items()}
    header = {"fingerprint": fp, "meta": meta, "params": [[n, list(a.shape)] for n, a in arrays.items()]}
    buf = io.BytesIO()
    np.savez(buf, __header__=np.frombuffer(json.dumps(header, default=str).encode(), dtype=np.uint8),
             **{f"p{i}": a for i, a in enumerate(arrays.values())})
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expected_fingerprint: str | None = None):
    """Returns (arrays, meta). Rejects a fingerprint mismatch when one is expected."""
    with np.load(path) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        arrays = OrderedDict()
        for i, (n, shape) in enumerate(header["params"]):
            a = z[f"p{i}"]
            if list(a.shape) != shape:
                raise ValueError(f"checkpoint {path}: parameter {n} shape mismatch")
            arrays[n] = a
    if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
        raise ValueError(
            f"checkpoint {path}: fingerprint {header['fingerprint']} does not match expected {expected_fingerprint}"
        )
    return arrays, header["meta"]
