"""Random expression generator and an independent postfix evaluator."""

import math

from dmwp.expr import DEFAULT_CONSTANTS, OPS, Binary, Constant, Quantity


def random_expr(rng, max_depth, n_quant=4, constants=DEFAULT_CONSTANTS, ops=OPS):
    if max_depth == 0 or rng.random() < 0.3:
        if constants and rng.random() < 0.15:
            return Constant(constants[int(rng.integers(len(constants)))])
        return Quantity(int(rng.integers(1, n_quant + 1)))
    op = ops[int(rng.integers(len(ops)))]
    return Binary(op, random_expr(rng, max_depth - 1, n_quant, constants, ops),
                  random_expr(rng, max_depth - 1, n_quant, constants, ops))


def postfix_eval(prefix, values, constants=DEFAULT_CONSTANTS):
    """Evaluate by reversing the prefix stream into postfix and running a value stack."""
    stack = []
    for tok in reversed(prefix):
        if tok[0] == "N":
            stack.append(float(values[int(tok[1:]) - 1]))
        elif tok[0] == "C":
            stack.append(float(constants[int(tok[1:]) - 1]))
        else:
            a, b = stack.pop(), stack.pop()
            try:
                if tok == "+":
                    r = a + b
                elif tok == "-":
                    r = a - b
                elif tok == "*":
                    r = a * b
                elif tok == "/":
                    r = a / b
                else:
                    if a < 0 and abs(b - round(b)) <= 1e-9 * max(1.0, abs(b)):
                        b = round(b)
                    r = a ** b
                    if isinstance(r, complex):
                        return None
            except (ZeroDivisionError, OverflowError):
                return None
            if not math.isfinite(r):
                return None
            stack.append(r)
    return stack[0]


def fd_check(loss_fn, params, rng, per_param=12, h=1e-5):
    """Compare backward gradients with central differences on sampled entries.

    ``loss_fn(tape_or_none)`` must build the scalar loss; returns the worst
    relative error over all checked parameters (scaled per parameter).
    """
    import numpy as np

    from dmwp import autodiff as ad

    with ad.Tape() as tape:
        loss = loss_fn()
    grads = ad.backward(tape, loss, params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
        num = np.zeros(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            with ad.no_grad():
                fp = float(loss_fn().data)
            flat[i] = old - h
            with ad.no_grad():
                fm = float(loss_fn().data)
            flat[i] = old
            num[j] = (fp - fm) / (2 * h)
        ana = grads[name].reshape(-1)[idx]
        scale = max(np.abs(grads[name]).max(), np.abs(num).max(), 1e-6)
        worst = max(worst, float(np.abs(ana - num).max() / scale))
    return worst
