"""Finite-difference verification of the hand-written backward passes.

Builds a small two-level model, evaluates the full training objective
(cross-entropy/Dice loss plus the projection L1 term), and compares every
analytic parameter gradient against central differences of that loss. A
parameter element passes when either

    |analytic - numeric| <= abs_tol                      (near-zero case)
    |analytic - numeric| / max(|analytic|, |numeric|) <= rel_tol

Dropout is forced off and batch-norm running statistics are frozen during
the check, so the loss is a smooth deterministic function of the
parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from .losses import combined_loss, loss_gradient
from .network import SegModel, l1_penalty, toy_config
from .rng import derive_stream


@dataclass
class TensorCheck:
    name: str
    count: int
    passed: int
    max_abs_err: float
    max_rel_err: float

    @property
    def ok(self):
        return self.passed == self.count


@dataclass
class GradCheckReport:
    tensors: list = field(default_factory=list)
    rel_tol: float = 1e-4
    abs_tol: float = 1e-8

    @property
    def total(self):
        return sum(t.count for t in self.tensors)

    @property
    def total_passed(self):
        return sum(t.passed for t in self.tensors)

    @property
    def pass_fraction(self):
        return self.total_passed / self.total if self.total else 0.0

    @property
    def ok(self):
        return self.pass_fraction >= 0.99

    def failing_tensors(self):
        return [t for t in self.tensors if not t.ok]


def _total_loss(model, x, y_t, lambda_l1):
    probs, _ = model.forward(x, train=True, update_running=False)
    return combined_loss(y_t, probs).combined + l1_penalty(model, lambda_l1)


def check_model_gradients(model, x, y_t, lambda_l1=1e-5, h=1e-6,
                          rel_tol=1e-4, abs_tol=1e-8, fault_layer=None):
    """Compare analytic and finite-difference gradients element by element.

    ``fault_layer`` deliberately corrupts (negates) the analytic gradients
    of every tensor whose name starts with that prefix; it exists so the
    failure-reporting path itself can be exercised.
    """
    saved_rate = model.dropout.rate
    model.dropout.rate = 0.0
    try:
        probs, cache = model.forward(x, train=True, update_running=False,
                                     want_cache=True)
        model.zero_grads()
        model.backward(loss_gradient(y_t, probs), cache, lambda_l1=lambda_l1)
        analytic = {p.name: p.grad.copy() for p in model.parameters()}
        if fault_layer is not None:
            for name in analytic:
                if name.startswith(fault_layer):
                    analytic[name] = -analytic[name]

        report = GradCheckReport(rel_tol=rel_tol, abs_tol=abs_tol)
        for p in model.parameters():
            ga = analytic[p.name].ravel()
            flat = p.value.ravel()
            passed = 0
            max_abs = 0.0
            max_rel = 0.0
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp = _total_loss(model, x, y_t, lambda_l1)
                flat[j] = orig - h
                lm = _total_loss(model, x, y_t, lambda_l1)
                flat[j] = orig
                gfd = (lp - lm) / (2.0 * h)
                diff = abs(ga[j] - gfd)
                denom = max(abs(ga[j]), abs(gfd))
                rel = diff / denom if denom > 0 else 0.0
                max_abs = max(max_abs, diff)
                if denom > 0:
                    max_rel = max(max_rel, rel)
                if diff <= abs_tol or rel <= rel_tol:
                    passed += 1
            report.tensors.append(TensorCheck(
                name=p.name, count=flat.size, passed=passed,
                max_abs_err=max_abs, max_rel_err=max_rel))
        return report
    finally:
        model.dropout.rate = saved_rate


def default_check(seed=0, lambda_l1=1e-5, fault_layer=None):
    """Build the standard toy setup and run the full check.

    Returns (report, model). The input is a smooth random 16x16 image and
    the target a random binary mask, both derived from ``seed``.
    """
    rng = derive_stream(seed, 0)
    model = SegModel.create(toy_config(), rng)
    data_rng = derive_stream(seed, 1)
    x = data_rng.fill_uniform(16 * 16).reshape(1, 1, 16, 16)
    y_t = (data_rng.fill_uniform(16 * 16).reshape(1, 1, 16, 16) < 0.35) \
        .astype(np.float64)
    report = check_model_gradients(model, x, y_t, lambda_l1=lambda_l1,
                                   fault_layer=fault_layer)
    return report, model


def format_report(report):
    """Human-readable per-tensor table plus the overall verdict."""
    lines = []
    for t in report.tensors:
        status = "ok  " if t.ok else "FAIL"
        lines.append(f"{status} {t.name:28s} {t.passed:5d}/{t.count:<5d} "
                     f"max_rel={t.max_rel_err:.3e} max_abs={t.max_abs_err:.3e}")
    frac = report.pass_fraction
    lines.append(f"overall: {report.total_passed}/{report.total} "
                 f"({100.0 * frac:.2f}%) within rel {report.rel_tol:g} "
                 f"/ abs {report.abs_tol:g} -> "
                 + ("PASS" if report.ok else "FAIL"))
    failing = report.failing_tensors()
    if failing:
        lines.append("failing tensors: " + ", ".join(t.name for t in failing))
    return "\n".join(lines)
