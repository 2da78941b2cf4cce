"""Small hand-built problems shared by the tests."""

from __future__ import annotations

import numpy as np

from entropic_control.problem import (
    ConstraintSet,
    ControlBox,
    ControlProblem,
    CostSpec,
    DistributionSpec,
    DynamicsSpec,
    TimeGrid,
)


def scalar_problem(
    drift=None,
    sigma=1.0,
    running=None,
    x0=0.0,
    T=1.0,
    steps=10,
    box=(-1.0, 1.0),
    terminal=None,
    g_max=0.0,
    f_max=10.0,
    b_max=10.0,
    constraint=None,
    linear=False,
    running_grad=None,
):
    """One-dimensional problem; defaults to ``b = 0``, ``f = 0``, ``sigma = 1``."""
    if drift is None:
        drift = lambda t, x, u: np.zeros_like(x)  # noqa: E731
    if running is None:
        running = lambda t, x, u: np.zeros(x.shape[0])  # noqa: E731
    kw = {}
    if linear:
        kw = dict(drift_form="linear_in_control", drift_base=lambda t, x: np.zeros_like(x))
    dyn = DynamicsSpec(drift=drift, diffusion=np.array([[sigma]]), state_dim=1, b_max=b_max,
                       c_sigma=sigma**2, **kw)
    cost = CostSpec(running=running, f_max=f_max, terminal=terminal, g_max=g_max, running_grad=running_grad)
    init = x0 if isinstance(x0, DistributionSpec) else DistributionSpec.dirac([x0])
    return ControlProblem(
        grid=TimeGrid(T, steps),
        box=ControlBox([box[0]], [box[1]]),
        dynamics=dyn,
        cost=cost,
        initial=init,
        constraint=constraint or ConstraintSet(),
    )


def double_well_problem(a=1.0, eps_box=2.0):
    """``b = u``, ``sigma = 1`` and the non-convex ``f(u) = min((u-a)^2, (u+a)^2)``."""
    return scalar_problem(
        drift=lambda t, x, u: np.broadcast_to(u, x.shape).astype(float, copy=True),
        running=lambda t, x, u: np.minimum((u[:, 0] - a) ** 2, (u[:, 0] + a) ** 2),
        box=(-eps_box, eps_box),
        steps=1,
        linear=True,
    )


def quadratic_box_problem(d=5, seed=0):
    """``b = A u`` with a random well-conditioned ``A``, convex quadratic ``f``, ``U = [0, 1]^d``."""
    rng = np.random.default_rng(seed)
    A = np.eye(d) + 0.3 * rng.normal(size=(d, d))
    c = rng.uniform(0, 1, d)
    S = np.diag(rng.uniform(0.5, 1.5, d))

    def drift(t, x, u):
        return u @ A.T

    def running(t, x, u):
        return 0.5 * np.sum((u - c) ** 2, axis=1)

    dyn = DynamicsSpec(
        drift=drift, diffusion=S, state_dim=d, b_max=10.0, c_sigma=0.25,
        drift_form="affine", drift_base=lambda t, x: np.zeros_like(x), control_map=A,
    )
    cost = CostSpec(running=running, f_max=10.0, running_grad=lambda t, x, u: u - c)
    return ControlProblem(
        grid=TimeGrid(1.0, 1),
        box=ControlBox(np.zeros(d), np.ones(d)),
        dynamics=dyn,
        cost=cost,
        initial=DistributionSpec.dirac(np.zeros(d)),
    )
