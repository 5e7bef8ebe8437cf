import numpy as np
import pytest

from dlsa import network
from dlsa.trainer import TrainConfig, objective_and_grads


def random_params(seed, sizes, *, use_batchnorm=True, activation="relu", latent_layer=None):
    """Small network with non-trivial batch-norm affine parameters and biases."""
    rng = np.random.default_rng(seed + 10_000)
    params = network.init_params(sizes, seed, use_batchnorm=use_batchnorm, activation=activation, latent_layer=latent_layer)
    for layer in params.layers:
        if layer.use_batchnorm:
            layer.scale[:] = rng.uniform(0.5, 1.5, layer.scale.shape)
            layer.shift[:] = rng.normal(0.0, 0.3, layer.shift.shape)
        else:
            layer.biases[:] = rng.normal(0.0, 0.3, layer.biases.shape)
    return params


def random_problem(seed, sizes, n=8, *, use_batchnorm=True, variant="full", shared_batch_stats=True, latent_layer=None):
    """Parameters, two batches with labels, and a config for objective checks."""
    rng = np.random.default_rng(seed)
    params = random_params(seed, sizes, use_batchnorm=use_batchnorm, latent_layer=latent_layer)
    c = sizes[-1]
    xs = rng.normal(size=(n, sizes[0]))
    xt = rng.normal(size=(n, sizes[0])) + 0.7
    ys = np.arange(n) % c
    yt = rng.permutation(np.arange(n) % c)
    config = TrainConfig(
        hidden=tuple(sizes[1:-1]),
        variant=variant,
        shared_batch_stats=shared_batch_stats,
        iterations=1,
        warmup_iterations=0,
    )
    return params, xs, ys, xt, yt, config


def total_loss(params, xs, ys, xt, yt, config):
    return objective_and_grads(params, xs, ys, xt, yt, config, True)[1][3]


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def finite_difference_check(params, loss_fn, grads, h=1e-5, coords=None):
    """Largest relative error between analytic and central-difference gradients.

    ``coords`` limits the check to a list of ``(param_index, flat_index)``.
    """
    arrays = [a for _, a in network.iter_parameters(params)]
    grad_arrays = [g for _, g in network.iter_gradients(params, grads)]
    if coords is None:
        coords = [(p, i) for p, a in enumerate(arrays) for i in range(a.size)]
    worst = 0.0
    for p, i in coords:
        flat = arrays[p].reshape(-1)
        old = flat[i]
        flat[i] = old + h
        f_plus = loss_fn(params)
        flat[i] = old - h
        f_minus = loss_fn(params)
        flat[i] = old
        numeric = (f_plus - f_minus) / (2 * h)
        worst = max(worst, relative_error(float(grads_flat(grad_arrays[p])[i]), numeric))
    return worst


def grads_flat(a):
    return np.asarray(a).reshape(-1)


def relu_pattern(params, x, mode="train"):
    trace = network.forward(params, x, mode=mode)
    return [c.preact > 0 for c in trace.caches[:-1]]


def kink_free(params, x, h=1e-5, coords=None):
    """True when no ReLU switches state under +-h perturbations of the given coordinates."""
    arrays = [a for _, a in network.iter_parameters(params)]
    base = relu_pattern(params, x)
    if coords is None:
        coords = [(p, i) for p, a in enumerate(arrays) for i in range(a.size)]
    for p, i in coords:
        flat = arrays[p].reshape(-1)
        old = flat[i]
        for delta in (h, -h):
            flat[i] = old + delta
            pattern = relu_pattern(params, x)
            flat[i] = old
            if any(not np.array_equal(a, b) for a, b in zip(base, pattern)):
                return False
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def desk_config(**overrides):
    """The desk-scale preset used by the CLI, with optional overrides."""
    from dlsa.cli import PRESETS

    values = dict(PRESETS["desk"])
    values.update(overrides)
    return TrainConfig(**values)


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_RESULTS = {}


def record_criterion(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
