import numpy as np
import pytest

from taskbalance.datasets import TaskData

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, name, passed, detail=""):
    status = "PASS" if passed is True else ("SKIP" if passed is None else "FAIL")
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {name}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_task(rng, n, d, kind="square", n_classes=3):
    X = rng.standard_normal((n, d))
    if kind == "square":
        y = rng.standard_normal(n)
    else:
        y = rng.integers(0, n_classes, size=n)
    return TaskData(X, y)


def central_difference(f, params: dict, step=1e-5) -> dict:
    """Numerical gradient of scalar ``f(params)`` by central differences."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = f(params)
            arr[idx] = orig - step
            down = f(params)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def relative_error(a, b, floor=1e-6):
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``.

    The floor keeps coordinates whose true gradient is ~0 from dividing
    finite-difference rounding noise (~1e-10) by zero.
    """
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


KINK_MARGIN = 1e-3


def random_gradient_case(rng, model_kind, loss_kind):
    """Draw a small (model, batch) pair for gradient checking.

    MLP draws with a pre-activation within ``KINK_MARGIN`` of zero are
    redrawn: a finite-difference step there straddles the ReLU kink and
    the numerical derivative is meaningless.
    """
    from taskbalance.models import CROSS_ENTROPY, LINEAR, init_linear, init_mlp

    while True:
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 6))
        m = int(rng.integers(1, 4))
        out = 1 if loss_kind == "square" else int(rng.integers(2, 5))
        seed = int(rng.integers(0, 2**31))
        if model_kind == LINEAR:
            model = init_linear(d, m, out, seed, bias=bool(rng.integers(0, 2)))
        else:
            model = init_mlp(d, m, out, int(rng.integers(1, 7)), seed)
        for p in model.params().values():
            p += 0.3 * rng.standard_normal(p.shape)
        task = random_task(rng, n, d, "square" if loss_kind != CROSS_ENTROPY else "class", out)
        i = int(rng.integers(0, m))
        if model.shared is not None:
            Z = task.features @ model.shared["W"] + model.shared["b"]
            if np.min(np.abs(Z)) < KINK_MARGIN:
                continue
        return model, i, task


def gradient_max_relative_error(model, i, task, kind):
    from taskbalance.models import task_gradient, task_loss

    _, pair = task_gradient(model, i, task, kind)
    analytic = pair.as_params()
    params = {k: v for k, v in model.params().items() if k in analytic}
    numeric = central_difference(lambda _p: task_loss(model, i, task, kind), params)
    return max(float(np.max(relative_error(analytic[k], numeric[k]))) for k in analytic)


def simplex_grid_min(G, step):
    """Exhaustive minimum of ||alpha @ G||^2 over a simplex lattice (m in {1, 2, 3})."""
    G = np.asarray(G, dtype=float)
    m = G.shape[0]
    K = G @ G.T
    k = int(round(1.0 / step))
    a = np.arange(k + 1) / k
    if m == 1:
        return float(K[0, 0])
    if m == 2:
        A = np.stack([a, 1 - a], axis=1)
    elif m == 3:
        i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
        keep = i + j <= k
        A = np.stack([i[keep] / k, j[keep] / k, (k - i[keep] - j[keep]) / k], axis=1)
    else:
        raise ValueError("grid oracle supports m <= 3")
    return float(np.min(np.einsum("ni,ij,nj->n", A, K, A)))


def closed_form_two_task(g1, g2):
    """Min-norm point of segment [g1, g2] by projection, written independently."""
    g1, g2 = np.asarray(g1, float), np.asarray(g2, float)
    d = g1 - g2
    dd = float(d @ d)
    gamma = 0.5 if dd == 0 else float(np.clip(np.dot(g2 - g1, g2) / dd, 0.0, 1.0))
    return gamma, gamma * g1 + (1 - gamma) * g2
