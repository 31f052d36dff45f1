import numpy as np
import pytest

from cascade_rec.dataset import Context, synthesize
from cascade_rec.models import Ranker, Retriever


def flat_params(model):
    names = sorted(model.params)
    return names, np.concatenate([np.ravel(model.params[n]) for n in names])


def set_flat(model, names, vec):
    offset = 0
    for n in names:
        shape = np.shape(model.params[n])
        size = int(np.prod(shape))
        model.params[n] = vec[offset:offset + size].reshape(shape).copy()
        offset += size


def numeric_grad(model, fn, h=1e-5):
    """Central differences of ``fn(model)`` over every parameter entry."""
    names, base = flat_params(model)
    out = np.zeros_like(base)
    for j in range(len(base)):
        v = base.copy()
        v[j] += h
        set_flat(model, names, v)
        up = fn(model)
        v[j] -= 2 * h
        set_flat(model, names, v)
        down = fn(model)
        out[j] = (up - down) / (2 * h)
    set_flat(model, names, base)
    return out


def analytic_flat(model, grad):
    dense = grad.to_dense(model.params)
    return np.concatenate([np.ravel(dense[n]) for n in sorted(model.params)])


def rel_err(a, b, floor=1e-6):
    """Relative error with an absolute floor so vanishing gradients compare sanely."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


def random_model(kind, rng, num_items=8, dim=4, scale=1.0, activation="logistic"):
    seed = int(rng.integers(1 << 30))
    model = Retriever(num_items, dim, seed) if kind == "retriever" else Ranker(
        num_items, dim, seed, activation=activation)
    for name, p in model.params.items():
        model.params[name] = rng.normal(scale=scale, size=np.shape(p))
    return model


def random_context(rng, num_items, max_len=5):
    return Context(0, tuple(int(i) for i in rng.integers(0, num_items, size=rng.integers(1, max_len + 1))))


@pytest.fixture(scope="session")
def small_ds():
    return synthesize(num_users=150, num_items=60, min_len=6, max_len=10, seed=11)


# one line per acceptance criterion, echoed after the test run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
