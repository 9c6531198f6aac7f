"""
Running an L-lag coupled pair to its meeting time, and the meeting counts
J and J~ derived from that time.

Time convention: the X-chain is L steps ahead. After X_0 .. X_L are drawn
alone, each joint step produces (X_{t+L}, Y_t) from (X_{t+L-1}, Y_{t-1}).
tau is recorded in X-time, tau = min{t >= L : X_t == Y_{t-L}}, so the first
check is on (X_L, Y_0).
"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from errors import CapExceeded, ConfigError, MissingTau
from kernels import CoupledKernel
from models import CoupledTrace, LagConfig, MeetingStats

logger = logging.getLogger(__name__)


def j_value(tau: int, k: int, lag: int) -> int:
    """J = max(0, ceil((tau - L - k) / L)), in integer arithmetic."""
    return max(0, -((lag + k - tau) // lag))


def j_values(taus: Union[Sequence[int], np.ndarray], k: int, lag: int) -> np.ndarray:
    taus = np.asarray(taus, dtype=np.int64)
    return np.maximum(0, -((lag + k - taus) // lag))


def run_lagged_coupling(
    kernel: CoupledKernel,
    config: LagConfig,
    rng: np.random.Generator,
    seed: tuple = (),
) -> CoupledTrace:
    lag = config.lag
    xs = [config.initial(rng)]
    ys = [config.initial(rng)]

    # 1. X runs L steps alone
    for _ in range(lag):
        xs.append(kernel.marginal_step(xs[-1], rng))

    # 2. Joint evolution until X_t == Y_{t-L}
    tau: Optional[int] = lag if kernel.states_equal(xs[lag], ys[0]) else None
    joint_steps = 0
    while tau is None:
        if len(xs) - 1 >= config.max_sweeps:
            raise CapExceeded(config.max_sweeps)
        x_new, y_new = kernel.joint_step(xs[-1], ys[-1], rng)
        joint_steps += 1
        xs.append(x_new)
        ys.append(y_new)
        if kernel.states_equal(x_new, y_new):
            tau = len(xs) - 1
    ys[tau - lag] = xs[tau]

    # 3. Collapsed chain: Y_t is X_{t+L} from here on
    while len(xs) - 1 < config.horizon:
        xs.append(kernel.marginal_step(xs[-1], rng))
    ys.extend(xs[t + lag] for t in range(len(ys), len(xs) - lag))

    logger.debug("coupled pair met at tau=%d (lag=%d, %d joint steps)", tau, lag, joint_steps)
    return CoupledTrace(xs, ys, tau, lag, tuple(seed), joint_steps)


def extend_trace(
    trace: CoupledTrace,
    kernel: CoupledKernel,
    y_length: int,
    rng: np.random.Generator,
) -> CoupledTrace:
    """Grow a met trace until its Y-path has at least ``y_length`` entries."""
    if trace.tau is None:
        raise MissingTau("cannot extend a trace whose chains never met")
    if len(trace.y_path) >= y_length:
        return trace
    lag = trace.lag
    xs = list(trace.x_path)
    while len(xs) < y_length + lag:
        xs.append(kernel.marginal_step(xs[-1], rng))
    ys = list(trace.y_path)
    ys.extend(xs[t + lag] for t in range(len(ys), len(xs) - lag))
    return CoupledTrace(xs, ys, trace.tau, lag, trace.seed, trace.joint_steps)


def meeting_stats_from_tau(tau: int, lag: int, k: int, rng: np.random.Generator) -> MeetingStats:
    j = j_value(tau, k, lag)
    xi = int(rng.integers(0, 2))
    return MeetingStats(j=j, j_tilde=j - xi, k=k, lag=lag)


def meeting_stats(trace: CoupledTrace, k: int, rng: np.random.Generator) -> MeetingStats:
    if trace.tau is None:
        raise MissingTau("trace hit the sweep cap; it has no meeting time")
    return meeting_stats_from_tau(trace.tau, trace.lag, k, rng)


# Trace files

def write_trace(trace: CoupledTrace, kernel: CoupledKernel, path: Union[str, Path]) -> None:
    tau = "none" if trace.tau is None else str(trace.tau)
    seed = "/".join(str(s) for s in trace.seed) or "-"
    lines = [
        f"# lag={trace.lag} tau={tau} seed={seed} joint_steps={trace.joint_steps}",
        "t\tx\ty",
    ]
    for t, x in enumerate(trace.x_path):
        y = kernel.encode_state(trace.y_path[t]) if t < len(trace.y_path) else ""
        lines.append(f"{t}\t{kernel.encode_state(x)}\t{y}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path: Union[str, Path], kernel: CoupledKernel) -> CoupledTrace:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("#"):
        raise ConfigError(f"{path}: not a trace file (missing '# lag=...' header)")
    header = dict(field.split("=", 1) for field in lines[0][1:].split())
    tau = None if header["tau"] == "none" else int(header["tau"])
    seed = () if header["seed"] == "-" else tuple(int(s) for s in header["seed"].split("/"))

    xs, ys = [], []
    for row in lines[2:]:
        _, x, y = row.split("\t")
        xs.append(kernel.decode_state(x))
        if y:
            ys.append(kernel.decode_state(y))
    return CoupledTrace(xs, ys, tau, int(header["lag"]), seed, int(header.get("joint_steps", 0)))
