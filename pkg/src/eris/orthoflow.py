"""Gradient flow of the orthogonality penalty, integrated numerically.

The penalty ||w_d^T w_l||_F^2 induces the coupled matrix ODE

    dW_d/dt = -2 W_l W_l^T W_d,    dW_l/dt = -2 W_d W_d^T W_l,

whose value is non-increasing in time and decays to zero, driving the two
column spaces orthogonal. This module integrates the flow with explicit
Euler (simultaneous updates, automatic step halving on any loss increase)
and certifies the monotone decay from the logged trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .linalg import frob_norm_sq

MAX_DT_HALVINGS = 20


@dataclass
class FlowTrajectory:
    """Logged quantities along one integration run."""

    times: list[float] = field(default_factory=list)
    ortho_loss: list[float] = field(default_factory=list)
    frob_wd: list[float] = field(default_factory=list)
    frob_wl: list[float] = field(default_factory=list)
    frob_cross: list[float] = field(default_factory=list)

    def append(self, t: float, w_d: np.ndarray, w_l: np.ndarray) -> None:
        cross_sq = frob_norm_sq(w_d.T @ w_l)
        self.times.append(float(t))
        self.ortho_loss.append(cross_sq)
        self.frob_wd.append(float(np.sqrt(frob_norm_sq(w_d))))
        self.frob_wl.append(float(np.sqrt(frob_norm_sq(w_l))))
        self.frob_cross.append(float(np.sqrt(cross_sq)))


@dataclass
class CertReport:
    """Outcome of checking a trajectory against the monotone-decay claim."""

    max_increase: float
    final_loss: float
    final_cross_norm: float
    certified: bool
    violation_index: int | None = None


def flow_step(w_d: np.ndarray, w_l: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One explicit Euler step of the coupled flow, simultaneous update."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    new_wd = w_d - 2.0 * dt * (w_l @ (w_l.T @ w_d))
    new_wl = w_l - 2.0 * dt * (w_d @ (w_d.T @ w_l))
    if not (np.all(np.isfinite(new_wd)) and np.all(np.isfinite(new_wl))):
        raise FloatingPointError("non-finite values after flow step")
    return new_wd, new_wl


def simulate_flow(w_d0: np.ndarray, w_l0: np.ndarray, dt: float, steps: int,
                  log_every: int = 1) -> FlowTrajectory:
    """Integrate the flow for ``steps`` Euler steps, logging every ``log_every``.

    If a step would increase the loss the step is retried with dt halved (the
    halved dt persists); more than MAX_DT_HALVINGS halvings in total aborts
    with an error. The initial state and the final state are always logged.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if log_every < 1:
        raise ValueError("log_every must be >= 1")
    w_d = np.array(w_d0, dtype=np.float64)
    w_l = np.array(w_l0, dtype=np.float64)
    traj = FlowTrajectory()
    t = 0.0
    traj.append(t, w_d, w_l)
    loss = traj.ortho_loss[-1]
    halvings = 0
    for step in range(1, steps + 1):
        while True:
            cand_wd, cand_wl = flow_step(w_d, w_l, dt)
            cand_loss = frob_norm_sq(cand_wd.T @ cand_wl)
            if cand_loss <= loss:
                break
            halvings += 1
            if halvings > MAX_DT_HALVINGS:
                raise FloatingPointError(
                    f"flow diverges: loss still increasing after {MAX_DT_HALVINGS} dt halvings"
                )
            dt *= 0.5
        w_d, w_l = cand_wd, cand_wl
        loss = cand_loss
        t += dt
        if step % log_every == 0 or step == steps:
            traj.append(t, w_d, w_l)
    return traj


def verify_lemma(traj: FlowTrajectory, tol: float) -> CertReport:
    """Certify monotone decay of the logged loss and a near-zero endpoint.

    certified requires (a) no logged increment exceeding ``tol`` and (b) the
    final cross norm at most ``tol``; the first violating index, if any, is
    reported.
    """
    if not traj.ortho_loss:
        raise ValueError("empty trajectory")
    losses = np.asarray(traj.ortho_loss)
    increments = np.diff(losses)
    max_increase = float(increments.max()) if increments.size else 0.0
    violation = None
    if increments.size and max_increase > tol:
        violation = int(np.argmax(increments > tol)) + 1
    final_cross = traj.frob_cross[-1]
    certified = (violation is None) and (final_cross <= tol)
    return CertReport(
        max_increase=max_increase,
        final_loss=float(losses[-1]),
        final_cross_norm=float(final_cross),
        certified=certified,
        violation_index=violation,
    )


def save_trajectory(traj: FlowTrajectory, path: str) -> None:
    """Write the trajectory as CSV: t, ortho_loss, frob_Wd, frob_Wl, frob_cross."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "ortho_loss", "frob_Wd", "frob_Wl", "frob_cross"])
        for row in zip(traj.times, traj.ortho_loss, traj.frob_wd, traj.frob_wl, traj.frob_cross):
            writer.writerow(["%.17g" % v for v in row])


def load_trajectory(path: str) -> FlowTrajectory:
    traj = FlowTrajectory()
    with open(path) as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["t", "ortho_loss", "frob_Wd", "frob_Wl", "frob_cross"]:
            raise ValueError(f"unexpected trajectory header: {header}")
        for row in reader:
            t, loss, fwd, fwl, fc = (float(v) for v in row)
            traj.times.append(t)
            traj.ortho_loss.append(loss)
            traj.frob_wd.append(fwd)
            traj.frob_wl.append(fwl)
            traj.frob_cross.append(fc)
    return traj
