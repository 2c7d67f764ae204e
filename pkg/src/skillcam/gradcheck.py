"""Finite-difference verification of the hand-derived gradients.

The check rebuilds the network in float64 and compares backprop against
central differences, coordinate by coordinate. Because ReLU makes the loss
piecewise-linear, a coordinate whose +/-h probes land on different
activation patterns straddles a kink where the difference quotient is not a
derivative; such coordinates are skipped and counted. Exhaustive
coordinate coverage on the full 16k-parameter model costs two forward
passes per coordinate, so the model-level check samples a fixed number of
coordinates per tensor (per-operation tests elsewhere cover every
coordinate on small shapes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from . import nn

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-4
REL_ERR_FLOOR = 1e-6


def relative_error(a: float, b: float, floor: float = REL_ERR_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


@dataclass
class TensorCheck:
    name: str
    n_checked: int
    n_skipped: int
    max_rel_err: float
    worst_coord: int | None
    passed: bool


@dataclass
class GradCheckReport:
    checks: list[TensorCheck]
    tolerance: float
    step: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            status = "ok" if c.passed else "FAIL"
            out.append(
                f"{status:4s} {c.name:22s} checked={c.n_checked:3d} "
                f"skipped={c.n_skipped} max_rel_err={c.max_rel_err:.3e}"
            )
        return out


def _activation_pattern(cache: model_mod.ForwardCache) -> np.ndarray:
    parts = [p > 0 for p in cache.pre1]
    parts.extend(p > 0 for p in cache.pre2)
    parts.append(cache.pre3 > 0)
    return np.concatenate([p.reshape(-1) for p in parts])


def check_model(
    net: "model_mod.SkillNet",
    x: np.ndarray,
    label: int,
    samples_per_tensor: int = 6,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    rng: np.random.Generator | None = None,
    corrupt: str | None = None,
) -> GradCheckReport:
    """Compare backprop to central differences on the assembled network.

    ``net`` must be float64 (build_model(..., dtype=np.float64)).
    ``samples_per_tensor`` <= 0 checks every coordinate. ``corrupt`` names a
    tensor whose analytic gradient gets perturbed before comparison; it
    exists for fault-injection tests of this checker.
    """
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)

    cache = model_mod.forward_cached(net, x)
    loss, _, dlogits = nn.softmax_cross_entropy(cache.logits, label)
    grads = model_mod.backward(net, cache, dlogits)
    if corrupt is not None:
        if corrupt not in grads:
            raise KeyError(f"no tensor named {corrupt!r} to corrupt")
        grads[corrupt] = grads[corrupt] + 0.05 * (1.0 + np.abs(grads[corrupt]))

    def loss_at_current_params() -> tuple[float, np.ndarray]:
        c = model_mod.forward_cached(net, x)
        return nn.softmax_cross_entropy(c.logits, label)[0], _activation_pattern(c)

    checks = []
    for name, tensor in net.named_tensors():
        flat = tensor.reshape(-1)
        if samples_per_tensor > 0 and flat.size > samples_per_tensor:
            coords = rng.choice(flat.size, size=samples_per_tensor, replace=False)
        else:
            coords = np.arange(flat.size)
        analytic = grads[name].reshape(-1)
        max_err, worst, n_checked, n_skipped = 0.0, None, 0, 0
        for j in coords:
            orig = flat[j]
            flat[j] = orig + step
            hi, pattern_hi = loss_at_current_params()
            flat[j] = orig - step
            lo, pattern_lo = loss_at_current_params()
            flat[j] = orig
            if not np.array_equal(pattern_hi, pattern_lo):
                n_skipped += 1  # kink inside [-h, +h]: quotient is not a derivative
                continue
            numeric = (hi - lo) / (2.0 * step)
            err = relative_error(float(analytic[j]), numeric)
            n_checked += 1
            if err > max_err:
                max_err, worst = err, int(j)
        checks.append(
            TensorCheck(
                name=name,
                n_checked=n_checked,
                n_skipped=n_skipped,
                max_rel_err=max_err,
                worst_coord=worst,
                passed=max_err < tolerance,
            )
        )
    return GradCheckReport(checks=checks, tolerance=tolerance, step=step)


def run_suite(
    seed: int,
    n_instances: int = 20,
    samples_per_tensor: int = 6,
    corrupt: str | None = None,
) -> tuple[bool, list[str]]:
    """Gradient-check ``n_instances`` fresh (model, input) pairs.

    Returns (all_passed, printable report lines). Instance i uses seeds
    derived from ``seed`` for the model, the input and the coordinate
    sampler, so the suite is reproducible.
    """
    grouping_mod = _grouping()
    lines = []
    all_ok = True
    for i in range(n_instances):
        net = model_mod.build_model(grouping_mod, seed=seed + i, dtype=np.float64)
        rng = np.random.default_rng(10_000 + seed + i)
        length = int(rng.integers(4, 17))
        x = rng.normal(size=(model_mod.N_INPUT_CHANNELS, length))
        label = int(rng.integers(0, 3))
        report = check_model(
            net,
            x,
            label,
            samples_per_tensor=samples_per_tensor,
            rng=rng,
            corrupt=corrupt,
        )
        worst = max(report.checks, key=lambda c: c.max_rel_err)
        status = "ok" if report.passed else "FAIL"
        lines.append(
            f"instance {i:2d} (l={length:2d}, label={label}): {status} "
            f"worst={worst.name} max_rel_err={worst.max_rel_err:.3e}"
        )
        if not report.passed:
            all_ok = False
            lines.extend("  " + l for l in report.lines() if l.startswith("FAIL"))
    return all_ok, lines


def _grouping():
    from .data import canonical_grouping

    return canonical_grouping()
