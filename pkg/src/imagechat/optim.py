"""Adam optimizer and finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError


class Adam:
    """Adam with bias correction, one moment pair per parameter."""

    def __init__(self, store, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in store.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in store.items()}

    def step(self):
        """Apply one update from the gradients currently on the store."""
        grads = self.store.gradients()
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient in adam_step")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, param in self.store.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            param.data = param.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.store.bump_version()


def grad_check(model_fn, store, eps=1e-3, max_coords_per_param=8, rng=None,
               zero_tol=None):
    """Max relative error between analytic and central-difference grads.

    model_fn(store) must return a scalar loss Tensor and be deterministic
    given the parameters. For each parameter the coordinates with the
    largest analytic gradients are checked (those carry the signal a
    finite-difference oracle can resolve); `rng` adds a few random extras
    per parameter. The numeric side is evaluated with the parameters
    upcast to extended precision so the oracle measures the analytic
    gradient, not its own rounding noise.

    Coordinates where both sides are below `zero_tol` count as exact
    matches: below the active dtype's rounding noise a relative
    comparison is meaningless, and a genuinely missing gradient still
    shows up because the numeric side would be large. The default is
    1e-4 for 32-bit parameters and 1e-8 for 64-bit.
    """
    rng = rng or np.random.default_rng(0)
    if zero_tol is None:
        zero_tol = 1e-4 if store.dtype == np.float32 else 1e-8
    store.zero_grad()
    loss = model_fn(store)
    if not np.isfinite(loss.data):
        raise NonFiniteError("grad_check: non-finite loss")
    loss.backward()
    analytic = store.gradients()
    store.zero_grad()

    originals = {n: t.data for n, t in store.items()}
    for _, t in store.items():
        t.data = t.data.astype(np.longdouble)
    try:
        worst = 0.0
        for name, param in store.items():
            flat = param.data.reshape(-1)
            a_flat = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
            n = flat.size
            if n <= max_coords_per_param:
                coords = np.arange(n)
            else:
                top = np.argsort(-np.abs(a_flat))[:max_coords_per_param // 2]
                extra = rng.choice(n, size=max_coords_per_param
                                   - top.size, replace=False)
                coords = np.unique(np.concatenate([top, extra]))
            for c in coords:
                orig = flat[c]
                h = eps * max(1.0, abs(float(orig)))
                flat[c] = orig + h
                store.bump_version()
                up = float(model_fn(store).data)
                flat[c] = orig - h
                store.bump_version()
                down = float(model_fn(store).data)
                flat[c] = orig
                store.bump_version()
                numeric = (up - down) / (2 * h)
                a = float(a_flat[c])
                if max(abs(a), abs(numeric)) < zero_tol:
                    continue
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    finally:
        for n, t in store.items():
            t.data = originals[n]
        store.bump_version()
    return worst
