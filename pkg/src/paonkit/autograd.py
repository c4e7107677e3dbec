"""Minimal reverse-mode autodiff over the tensor kernels.

A ``Tape`` is a context manager; while one is active, every op from
``paonkit.ops`` appends a record holding its inputs and backward rule.
Records are appended in execution order, which is already a topological
order, so ``backward`` just walks them in reverse. With no active tape
the ops run forward-only (inference mode).
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

_TAPE_STACK = []
_NEXT_ID = itertools.count()


class Variable:
    """A tensor value plus the gradient accumulated for it.

    ``grad`` stays None until a backward pass deposits into it; repeated
    backward passes accumulate, so callers zero grads between steps.
    """

    __slots__ = ("value", "grad", "requires_grad", "nid", "name", "_op_output")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.nid = next(_NEXT_ID)
        self.name = name
        self._op_output = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self):
        self.grad = None

    def needs_grad(self):
        """True if a gradient must be propagated to this node."""
        return self.requires_grad or self._op_output

    def __repr__(self):
        tag = self.name or f"var{self.nid}"
        return f"Variable({tag}, shape={self.value.shape}, dtype={self.value.dtype})"


@dataclass
class OpRecord:
    out: Variable
    inputs: tuple
    backward_fn: object


class Tape:
    """Execution-ordered op records for one forward pass."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out, inputs, backward_fn):
    """Register an op on the active tape, if any."""
    tape = active_tape()
    if tape is not None:
        out._op_output = True
        tape.records.append(OpRecord(out, inputs, backward_fn))


def backward(tape, loss):
    """Populate dLoss/dLeaf on every requires_grad Variable in the tape.

    The backward rule of each record receives the output gradient and
    returns one gradient (or None) per input. Calling backward again
    without zeroing adds another full gradient on top.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    if not any(rec.out is loss for rec in tape.records):
        raise ValueError("loss was not produced on this tape (detached graph)")
    grads = {loss.nid: np.ones_like(loss.value)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.out.nid, None)
        if g is None:
            continue
        input_grads = rec.backward_fn(g)
        for var, ig in zip(rec.inputs, input_grads):
            if ig is None or not var.needs_grad():
                continue
            if var.requires_grad:
                if var.grad is None:
                    var.grad = np.zeros_like(var.value)
                var.grad += ig
            if var._op_output:
                if var.nid in grads:
                    # Backward rules may hand the same array to several
                    # inputs, so joins allocate instead of mutating.
                    grads[var.nid] = grads[var.nid] + ig
                else:
                    grads[var.nid] = ig


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst_param: int = -1
    worst_index: int = -1
    note: str = ""


def grad_check(f, params, tol_rel=1e-4, n_coords=200, seed=0):
    """Compare analytic gradients of f against central differences.

    ``f`` is a zero-argument pure function returning a scalar Variable
    built from ``paonkit.ops``; ``params`` are the leaves to test. All
    values must be float64. Large parameters are subsampled to roughly
    ``n_coords`` coordinates in total, deterministically per seed. The
    step is h = 1e-6 * max(1, |theta|) and the relative error is
    |a - n| / max(1e-8, |a| + |n|).
    """
    for i, p in enumerate(params):
        if p.value.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters, param {i} is {p.value.dtype}")
        if not p.requires_grad:
            raise ValueError(f"param {i} does not require grad")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    total = sum(p.value.size for p in params)
    picks = []
    for p in params:
        share = max(1, round(n_coords * p.value.size / max(1, total)))
        if p.value.size <= share:
            picks.append(np.arange(p.value.size))
        else:
            picks.append(rng.choice(p.value.size, size=share, replace=False))

    max_rel = 0.0
    worst = (-1, -1)
    n_checked = 0
    for i, (p, idxs) in enumerate(zip(params, picks)):
        flat = p.value.reshape(-1)
        aflat = analytic[i].reshape(-1)
        for j in idxs:
            j = int(j)
            orig = flat[j]
            h = 1e-6 * max(1.0, abs(orig))
            flat[j] = orig + h
            fp = float(f().value)
            flat[j] = orig - h
            fm = float(f().value)
            flat[j] = orig
            numeric = (fp - fm) / (2 * h)
            a = float(aflat[j])
            if not (np.isfinite(a) and np.isfinite(numeric)):
                return GradCheckReport(
                    max_rel_err=float("inf"), passed=False, n_checked=n_checked,
                    worst_param=i, worst_index=j,
                    note=f"non-finite gradient at param {i} index {j}: analytic={a}, numeric={numeric}",
                )
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            n_checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (i, j)
    return GradCheckReport(
        max_rel_err=max_rel, passed=max_rel <= tol_rel, n_checked=n_checked,
        worst_param=worst[0], worst_index=worst[1],
    )
