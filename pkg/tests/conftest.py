import numpy as np
import pytest


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    """Max elementwise relative error, guarded near zero."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_path(events, lags, controls=(), label=False, path_id="p"):
    """Path whose end time is its first lag, so times = end - lag."""
    end = float(lags[0]) if len(lags) else 0.0
    from touchcredit.data import TouchpointPath

    return TouchpointPath(tuple(events), tuple(lags), tuple(end - l for l in lags), tuple(controls), label,
                          path_id, end)


def model_grad_errors(model, paths):
    """Max relative error, per parameter, between backprop and central differences of the mean BCE.

    Components below 1e-6 are compared on an absolute scale, where central
    differences of a float64 loss carry noise of order 1e-11.
    """
    from touchcredit import autograd as ag
    from touchcredit.model import Batch
    from touchcredit.training import bce_loss

    batch = Batch.from_paths(paths)

    def loss_value():
        P = model.leaves(requires_grad=False)
        return bce_loss(model.batch_probabilities(batch, P), batch.labels).item()

    P = model.leaves()
    ag.backward(bce_loss(model.batch_probabilities(batch, P), batch.labels))
    errs = {}
    for name, leaf in P.items():
        num = numeric_grad(loss_value, model.params[name])
        errs[name] = rel_err(leaf.grad, num, floor=1e-6)
    return errs


ACCEPTANCE: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
