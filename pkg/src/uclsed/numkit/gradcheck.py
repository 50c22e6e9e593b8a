"""Central finite-difference verification of reverse-mode gradients."""
from dataclasses import dataclass, field

import numpy as np


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class GradCheckReport:
    tol: float
    max_rel_error: dict = field(default_factory=dict)
    # (param name, flat index, analytic, numeric, rel error)
    flagged: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.flagged

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    def summary(self):
        status = "ok" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.max_rel_error.items())
        return f"[{status}] tol={self.tol:g} {parts}"


def _scalar(loss_fn):
    value = float(np.asarray(loss_fn().data).reshape(()))
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss evaluated to {value}")
    return value


def grad_check(loss_fn, params, tol=1e-4, step=1e-5, floor=1e-6, names=None):
    """Compare analytic gradients of ``loss_fn()`` w.r.t. ``params`` to central differences.

    ``loss_fn`` takes no arguments and must rebuild its graph from the current
    ``param.data`` on every call; entries are perturbed in place and restored.
    The relative error of an entry is ``|a - n| / max(|a|, |n|, floor)`` where
    ``floor`` keeps round-off on vanishing gradients from being flagged.
    """
    names = names or [p.name or f"param{i}" for i, p in enumerate(params)]
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NonFiniteLoss(f"loss evaluated to {loss.data}")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    report = GradCheckReport(tol=tol)
    for name, p, ana in zip(names, params, analytic):
        flat = p.data.reshape(-1)
        worst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = _scalar(loss_fn)
            flat[k] = orig - step
            down = _scalar(loss_fn)
            flat[k] = orig
            num = (up - down) / (2 * step)
            a = ana.reshape(-1)[k]
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, rel)
            if rel > tol:
                report.flagged.append((name, k, a, num, rel))
        report.max_rel_error[name] = worst
    return report
