import math

import numpy as np
import pytest
import torch

ACCEPTANCE_LINES = []


def central_difference(fn, tensors, step=1e-5, max_coords=24, seed=0):
    """Numerical gradient of the scalar ``fn()`` at a sample of coordinates.

    ``tensors`` are perturbed in place (float64). Returns a list of
    ``(index_array, numeric_grad)`` pairs, one per tensor.
    """
    rng = np.random.default_rng(seed)
    out = []
    for t in tensors:
        n = t.numel()
        idx = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        flat = t.data.view(-1)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i].item()
            flat[i] = orig + step
            hi = float(fn())
            flat[i] = orig - step
            lo = float(fn())
            flat[i] = orig
            num[j] = (hi - lo) / (2 * step)
        out.append((idx, num))
    return out


def gradient_rel_error(fn, tensors, step=1e-5, max_coords=24, seed=0):
    """Worst relative error (norm-wise, per tensor) of autograd vs central differences."""
    for t in tensors:
        t.grad = None
    with torch.enable_grad():
        fn().backward()
    analytic = [t.grad.detach().view(-1).numpy().copy() for t in tensors]
    with torch.no_grad():
        numeric = central_difference(fn, tensors, step, max_coords, seed)
    worst = 0.0
    for a, (idx, num) in zip(analytic, numeric):
        a = a[idx]
        scale = max(np.linalg.norm(num), np.linalg.norm(a), 1e-12)
        worst = max(worst, float(np.linalg.norm(a - num) / scale))
    return worst


@pytest.fixture
def double():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def record_acceptance(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def db(x):
    return 10 * math.log10(x)
