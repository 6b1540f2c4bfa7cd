"""Central finite-difference gradient checks."""

import numpy as np

STEP = 1e-3


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def numeric_grad(f, x, indices=None, step=STEP):
    """Central differences of scalar ``f`` at ``x`` (perturbed in place, then restored).

    ``indices`` is an iterable of flat indices; default is every coordinate.
    """
    flat = x.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        out.append((fp - fm) / (2 * step))
    return np.array(out)


def grad_check(f, x, indices=None, step=STEP):
    """Max relative error between the analytic and numeric gradient of ``f`` at ``x``.

    ``f(x)`` must return ``(value, grad)`` with ``grad`` shaped like ``x``.
    """
    return grad_check_report(f, x, indices, step)["max_error"]


def grad_check_report(f, x, indices=None, step=STEP, signature=None):
    """Like grad_check, but can skip coordinates whose stencil crosses a kink.

    ``signature()`` is called right after each evaluation of ``f`` and should
    return something comparable (e.g. the concatenated ReLU masks).  A
    coordinate whose +/- step evaluations change the signature is not smooth
    over the stencil and is reported under ``skipped`` instead of checked.
    """
    x = np.array(x, dtype=np.float64)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1).copy()
    base = signature() if signature is not None else None
    idx = np.arange(x.size) if indices is None else np.asarray(list(indices))
    flat = x.reshape(-1)
    errors, skipped = [], []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)[0]
        sp = signature() if signature is not None else None
        flat[i] = orig - step
        fm = f(x)[0]
        sm = signature() if signature is not None else None
        flat[i] = orig
        if signature is not None and not (np.array_equal(sp, base) and np.array_equal(sm, base)):
            skipped.append(int(i))
            continue
        errors.append(float(relative_error(analytic[i], (fp - fm) / (2 * step))))
    return {
        "max_error": max(errors) if errors else 0.0,
        "checked": len(errors),
        "skipped": skipped,
    }


def layer_report(layer, x, rng, step=STEP):
    """Input and parameter gradient check of ``loss = sum(layer(x) * r)`` for random ``r``.

    Kink-crossing coordinates are skipped via the layer's ReLU masks.
    """
    from .layers import relu_signature

    r = rng.normal(size=layer.forward(x).shape)
    params = layer.named_params()

    def zero():
        for _, p in params:
            p.zero_grad()

    def f_input(z):
        zero()
        return float((layer.forward(z) * r).sum()), layer.backward(r)

    sig = lambda: relu_signature(layer)  # noqa: E731
    reports = [grad_check_report(f_input, x.copy(), step=step, signature=sig)]
    for _, p in params:
        def f_param(v, p=p):
            p.value[...] = v
            zero()
            out = layer.forward(x)
            layer.backward(r)
            return float((out * r).sum()), p.grad.copy()
        original = p.value.copy()
        reports.append(grad_check_report(f_param, original.copy(), step=step, signature=sig))
        p.value[...] = original
    return {
        "max_error": max(rep["max_error"] for rep in reports),
        "checked": sum(rep["checked"] for rep in reports),
        "skipped": sum(len(rep["skipped"]) for rep in reports),
    }
