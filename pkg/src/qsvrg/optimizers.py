"""Quantized SVRG and its baselines, simulated over a metered network.

One *outer iteration* is one epoch for the SVRG family (a full-gradient
round followed by ``T`` inner steps) and one update for GD, SGD and SAG.
All exchanged vectors are charged to a :class:`~qsvrg.netsim.Network`:

==============  =========================================================
algorithm       per outer iteration
==============  =========================================================
gd              broadcast w (64d) + N full gradients (64d each)
sgd, sag        one gradient up (64d) + broadcast w (64d)
q-gd            broadcast q(w) (b_w) + N quantized gradients (b_g each)
q-sgd, q-sag    one quantized gradient (b_g) + broadcast q(w) (b_w)
svrg, m-svrg    N reference gradients (64d each), then per inner step
                two gradients up (128d) and the new iterate down (64d)
qm-svrg-f/a     as above, but the reference gradient g_xi(w~) goes up
                quantized (b_g) and the iterate comes down quantized (b_w)
qm-svrg-f+/a+   both inner gradients go up quantized (2 b_g)
==============  =========================================================

Randomness comes from two independent streams derived from the seed: the
*index* stream (per epoch: T draws of xi, then one draw of zeta) and the
*quantizer* stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .netsim import Network
from .objective import FiniteSum
from .quantizer import GridSpec, QuantizerError, dequantize, quantize

__all__ = [
    "ALGORITHMS",
    "ConfigError",
    "DivergenceError",
    "OptimizerConfig",
    "RunState",
    "TraceRecord",
    "RunResult",
    "IndexStream",
    "PinnedStream",
    "run",
    "initial_state",
    "svrg_epoch",
    "msvrg_epoch",
    "qmsvrg_grids",
    "gd_step",
    "sgd_step",
    "sag_step",
]

SVRG_FAMILY = ("svrg", "m-svrg", "qm-svrg-f", "qm-svrg-a", "qm-svrg-f+", "qm-svrg-a+")
BASELINES = ("gd", "sgd", "sag", "q-gd", "q-sgd", "q-sag")
ALGORITHMS = SVRG_FAMILY + BASELINES

RADIUS_FLOOR = 1e-12


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Non-finite iterate; ``trace`` holds the records written so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


@dataclass
class OptimizerConfig:
    algorithm: str
    step_sizes: float | Sequence[float] = 0.2
    epoch_length: int = 8
    epochs: int = 10
    bits_param: int | None = None
    bits_grad: int | None = None
    fixed_param_center: float | Sequence[float] | None = None
    fixed_param_radius: float | Sequence[float] | None = None
    fixed_grad_center: float | Sequence[float] | None = None
    fixed_grad_radius: float | Sequence[float] | None = None
    grad_center: str = "reference"
    radius_floor: float = RADIUS_FLOOR
    init: Sequence[float] | None = None
    seed: int = 0

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()

    @property
    def quantized(self) -> bool:
        return self.algorithm.startswith("q")

    @property
    def grid_mode(self) -> str | None:
        if not self.quantized:
            return None
        return "adaptive" if self.algorithm.startswith("qm-svrg-a") else "fixed"

    @property
    def plus_variant(self) -> bool:
        return self.algorithm.endswith("+")

    @property
    def uses_memory(self) -> bool:
        return self.algorithm in ("m-svrg",) or self.algorithm.startswith("qm-svrg")

    def alpha(self, k: int) -> float:
        """Step size of outer iteration ``k`` (1-based)."""
        if np.ndim(self.step_sizes) == 0:
            return float(self.step_sizes)
        seq = list(self.step_sizes)
        return float(seq[min(k, len(seq)) - 1])

    def validate(self, dim: int | None = None) -> list[str]:
        """Every violated constraint, as readable messages."""
        errs = []
        if self.algorithm not in ALGORITHMS:
            errs.append(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        steps = [self.step_sizes] if np.ndim(self.step_sizes) == 0 else list(self.step_sizes)
        if not steps or any(not (math.isfinite(a) and a > 0) for a in steps):
            errs.append("step sizes must be positive and finite")
        if self.epoch_length < 1:
            errs.append("epoch_length must be >= 1")
        if self.epochs < 0:
            errs.append("epochs must be >= 0")
        if self.grad_center not in ("reference", "cached"):
            errs.append("grad_center must be 'reference' or 'cached'")
        if not self.radius_floor > 0:
            errs.append("radius_floor must be positive")
        if self.algorithm in ALGORITHMS and self.quantized:
            for name in ("bits_param", "bits_grad"):
                b = getattr(self, name)
                if b is None or b < 1:
                    errs.append(f"{name} is required for {self.algorithm}")
                elif dim is not None and b % dim:
                    errs.append(f"{name}={b} is not a multiple of d={dim}")
                elif dim is not None and b // dim > 62:
                    errs.append(f"{name}={b} exceeds 62 bits per coordinate")
            for name in ("fixed_param_radius", "fixed_grad_radius"):
                r = getattr(self, name)
                if r is not None and not np.all(np.asarray(r, dtype=float) > 0):
                    errs.append(f"{name} must be positive (a zero-width grid cannot be quantized onto)")
        return errs


@dataclass
class TraceRecord:
    k: int
    loss: float
    grad_norm: float
    delta: float
    bits_up: int
    bits_down: int
    rejected: bool = False
    clamps: int = 0
    control_bits: int = 0
    ref_grad_norm: float = float("nan")
    radius_param: float = float("nan")
    radius_grad: float = float("nan")
    radius_floored: bool = False
    delta_q: float = float("nan")
    beta_sum: float = float("nan")
    seed: int = 0

    CSV_FIELDS = ("k", "loss", "grad_norm", "delta", "bits_up", "bits_down", "rejected", "clamps")

    def as_row(self) -> dict:
        return asdict(self)


@dataclass
class RunState:
    reference_point: np.ndarray
    reference_gradient: np.ndarray
    inner_iterate: np.ndarray
    msvrg_memory: tuple[np.ndarray, float] | None = None
    per_worker_grad_cache: dict = field(default_factory=dict)
    sag_table: np.ndarray | None = None
    sag_sum: np.ndarray | None = None
    param_grid: GridSpec | None = None
    grad_center: np.ndarray | None = None
    grad_radius: np.ndarray | None = None
    initial_point: np.ndarray | None = None
    k: int = 0


@dataclass
class RunResult:
    w: np.ndarray
    trace: list[TraceRecord]
    state: RunState
    network: Network
    config: OptimizerConfig


class IndexStream:
    """Sampling order: T draws of xi per epoch, then one draw of zeta."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def xi(self, n: int, size: int) -> np.ndarray:
        return self.rng.integers(0, n, size=size)

    def zeta(self, T: int) -> int:
        return int(self.rng.integers(0, T))


class PinnedStream:
    """Replays fixed index sequences; for hand-checked tests."""

    def __init__(self, xis, zetas=()):
        self._xis = list(xis)
        self._zetas = list(zetas)

    def xi(self, n: int, size: int) -> np.ndarray:
        out, self._xis = self._xis[:size], self._xis[size:]
        if len(out) != size:
            raise IndexError("pinned xi sequence exhausted")
        return np.asarray(out, dtype=np.int64)

    def zeta(self, T: int) -> int:
        return int(self._zetas.pop(0))


def _streams(seed: int) -> tuple[IndexStream, np.random.Generator]:
    idx_seq, q_seq = np.random.SeedSequence(seed).spawn(2)
    return IndexStream(np.random.default_rng(idx_seq)), np.random.default_rng(q_seq)


def _vec(x, d: int, default: float = 0.0) -> np.ndarray:
    if x is None:
        return np.full(d, default)
    return np.broadcast_to(np.asarray(x, dtype=np.float64), (d,)).copy()


def initial_state(obj: FiniteSum, cfg: OptimizerConfig) -> RunState:
    d = obj.dim
    w0 = _vec(cfg.init, d)
    g0 = obj.grad_full(w0)
    state = RunState(w0.copy(), g0, w0.copy(), initial_point=w0.copy())
    if cfg.uses_memory:
        state.msvrg_memory = (w0.copy(), float(np.linalg.norm(g0)))
    if cfg.grid_mode == "fixed":
        mu = obj.strong_convexity()
        p_center = _vec(cfg.fixed_param_center, d)
        default_r = max(2.0 * float(np.linalg.norm(g0)) / mu, cfg.radius_floor)
        p_radius = _vec(cfg.fixed_param_radius, d, default_r)
        state.param_grid = GridSpec(p_center, p_radius, np.full(d, cfg.bits_param // d))
        state.grad_center = _vec(cfg.fixed_grad_center, d)
        if cfg.fixed_grad_radius is None:
            box = obj.gradient_box(p_center, p_radius)
            state.grad_radius = np.maximum(np.abs(state.grad_center) + box, cfg.radius_floor)
        else:
            state.grad_radius = _vec(cfg.fixed_grad_radius, d)
    if cfg.algorithm in ("sag", "q-sag"):
        state.sag_table = np.zeros((obj.n_components, d))
        state.sag_sum = np.zeros(d)
    return state


def qmsvrg_grids(state: RunState, cfg: OptimizerConfig, obj: FiniteSum):
    """Parameter grid and a factory for per-worker gradient grids.

    Adaptive mode: the parameter grid is centred at the reference point
    with radius 2 ||g~|| / mu; worker xi's gradient grid has radius
    2 L ||g~|| / mu.  Returns ``(param_grid, grad_grid_for, floored)``.
    """
    d = obj.dim
    if cfg.grid_mode == "fixed":
        bits = np.full(d, cfg.bits_grad // d)
        grad_grid = GridSpec(state.grad_center, state.grad_radius, bits)
        return state.param_grid, (lambda xi, g_ref_xi=None: grad_grid), False
    if cfg.grid_mode != "adaptive":
        raise ConfigError(f"{cfg.algorithm} does not use quantization grids")
    mu, L = obj.strong_convexity(), obj.smoothness_bound()
    gnorm = float(np.linalg.norm(state.reference_gradient))
    r_w, r_g = 2.0 * gnorm / mu, 2.0 * L * gnorm / mu
    floored = min(r_w, r_g) < cfg.radius_floor
    r_w, r_g = max(r_w, cfg.radius_floor), max(r_g, cfg.radius_floor)
    param_grid = GridSpec(state.reference_point, np.full(d, r_w), np.full(d, cfg.bits_param // d))
    g_bits = np.full(d, cfg.bits_grad // d)
    ref = state.reference_point
    # worker xi's grid is centred either on g_xi(w~), which the master holds
    # exactly from the full-precision outer round, or on the last quantized
    # value both ends cached (plus one old spacing of slack)
    if cfg.grad_center == "reference":
        def grad_grid_for(xi, g_ref_xi=None):
            if g_ref_xi is None:
                g_ref_xi = obj.grad_component(ref, xi)
            return GridSpec(g_ref_xi, np.full(d, r_g), g_bits)
    else:
        cache = state.per_worker_grad_cache
        w_init = state.initial_point

        def grad_grid_for(xi, g_ref_xi=None):
            center, spacing = cache.get(xi, (None, 0.0))
            if center is None:
                center = obj.grad_component(w_init, xi)
            return GridSpec(center, r_g + spacing, g_bits)

    return param_grid, grad_grid_for, floored


def _finite(x: np.ndarray, what: str, trace) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite {what}", trace)


def _record(obj, w, k, net, f_star, seed, grad=None, **extra) -> TraceRecord:
    g = obj.grad_full(w) if grad is None else grad
    loss = obj.loss(w)
    meter = net.meter
    return TraceRecord(
        k=k,
        loss=loss,
        grad_norm=float(np.linalg.norm(g)),
        delta=loss - f_star if f_star is not None else float("nan"),
        bits_up=meter.data_bits(direction="uplink"),
        bits_down=meter.data_bits(direction="downlink"),
        control_bits=meter.control_bits(),
        seed=seed,
        **extra,
    )


def svrg_epoch(state, cfg, obj, net, streams, k, f_star=None, trace=None, memory=False):
    """One epoch of (quantized) SVRG; returns the trace record.

    ``streams`` is ``(index_stream, quantizer_rng)``.  With ``memory`` the
    candidate reference point is rejected when its full-gradient norm is
    strictly larger than the stored one.
    """
    idx, qrng = streams
    d, N, T = obj.dim, obj.n_components, cfg.epoch_length
    alpha = cfg.alpha(k)
    net.epoch, net.inner_step = k, 0
    ref, g_ref = state.reference_point, state.reference_gradient

    net.upload_full(d, copies=N)
    quantized = cfg.quantized
    floored = False
    if quantized:
        if cfg.grid_mode == "adaptive":
            net.announce_scalar()
        param_grid, grad_grid_for, floored = qmsvrg_grids(state, cfg, obj)
        b_w, b_g = param_grid.total_bits, cfg.bits_grad

    w = ref.copy()
    iterates = [w]
    clamps = 0
    beta_sum = 0.0
    delta_acc = 0.0
    radius_g = float("nan")
    xis = idx.xi(N, T)
    for t, xi in enumerate(xis, start=1):
        xi = int(xi)
        net.inner_step = t
        g_cur = obj.grad_component(w, xi)
        g_old = obj.grad_component(ref, xi)
        if not quantized:
            net.upload_full(d, xi, copies=2)
            direction = g_cur - g_old + g_ref
        else:
            grid = grad_grid_for(xi, g_old)
            radius_g = float(grid.radius[0])
            q_old = quantize(g_old, grid, qrng)
            g_old_tx = dequantize(q_old)
            clamps += q_old.clamped
            delta_acc += float(np.sum((g_old_tx - g_old) ** 2))
            if cfg.plus_variant:
                q_cur = quantize(g_cur, grid, qrng)
                g_cur_tx = dequantize(q_cur)
                clamps += q_cur.clamped
                net.upload_quantized(b_g, xi, copies=2)
            else:
                g_cur_tx = g_cur
                net.upload_full(d, xi)
                net.upload_quantized(b_g, xi)
            if cfg.grad_center == "cached" and cfg.grid_mode == "adaptive":
                state.per_worker_grad_cache[xi] = (g_old_tx, float(grid.spacing[0]))
            direction = g_cur_tx - g_old_tx + g_ref
        u = w - alpha * direction
        _finite(u, f"inner iterate at epoch {k}, step {t}", trace)
        if quantized:
            q_u = quantize(u, param_grid, qrng)
            w = dequantize(q_u)
            clamps += q_u.clamped
            beta_sum += float(np.sum((w - u) ** 2))
            net.download_quantized(b_w)
        else:
            w = u
            net.download_full(d)
        iterates.append(w)
    zeta = idx.zeta(T)
    candidate = iterates[zeta]
    state.inner_iterate = w

    g_cand = obj.grad_full(candidate)
    rejected = False
    if memory and state.msvrg_memory is not None:
        _, best = state.msvrg_memory
        if float(np.linalg.norm(g_cand)) > best:
            rejected = True
    if not rejected:
        state.reference_point, state.reference_gradient = candidate.copy(), g_cand
        if memory:
            state.msvrg_memory = (candidate.copy(), float(np.linalg.norm(g_cand)))
    state.k = k

    extra = dict(
        rejected=rejected,
        clamps=clamps,
        ref_grad_norm=float(np.linalg.norm(g_ref)),
        radius_floored=floored,
    )
    if quantized:
        extra.update(
            radius_param=float(param_grid.radius[0]),
            radius_grad=radius_g,
            delta_q=delta_acc / T,
            beta_sum=beta_sum,
        )
    return _record(obj, state.reference_point, k, net, f_star, cfg.seed,
                   grad=state.reference_gradient, **extra)


def msvrg_epoch(state, cfg, obj, net, streams, k, f_star=None, trace=None):
    return svrg_epoch(state, cfg, obj, net, streams, k, f_star, trace, memory=True)


def _baseline_grids(state, cfg, obj):
    d = obj.dim
    return state.param_grid, GridSpec(state.grad_center, state.grad_radius, np.full(d, cfg.bits_grad // d))


def _broadcast(state, cfg, obj, net, qrng, u, k, trace):
    """Master moves to ``u`` (quantized onto the parameter grid when needed)."""
    _finite(u, f"iterate at iteration {k}", trace)
    if cfg.quantized:
        q = quantize(u, state.param_grid, qrng)
        net.download_quantized(q.total_bits)
        state.reference_point = dequantize(q)
        return q.clamped
    net.download_full(obj.dim)
    state.reference_point = u
    return 0


def _upload_grad(cfg, obj, net, qrng, g, xi, grad_grid):
    if cfg.quantized:
        q = quantize(g, grad_grid, qrng)
        net.upload_quantized(q.total_bits, xi)
        return dequantize(q), q.clamped
    net.upload_full(obj.dim, xi)
    return g, 0


def gd_step(state, cfg, obj, net, streams, k, f_star=None, trace=None):
    _, qrng = streams
    net.epoch, net.inner_step = k, 0
    w = state.reference_point
    clamps = 0
    if cfg.quantized:
        _, grad_grid = _baseline_grids(state, cfg, obj)
        q = quantize(obj.grad_components(w), grad_grid, qrng)
        g = dequantize(q).mean(axis=0)
        clamps += q.clamped
        net.upload_quantized(grad_grid.total_bits, copies=obj.n_components)
    else:
        g = obj.grad_full(w)
        net.upload_full(obj.dim, copies=obj.n_components)
    clamps += _broadcast(state, cfg, obj, net, streams[1], w - cfg.alpha(k) * g, k, trace)
    return _record(obj, state.reference_point, k, net, f_star, cfg.seed, clamps=clamps)


def sgd_step(state, cfg, obj, net, streams, k, f_star=None, trace=None):
    idx, qrng = streams
    net.epoch, net.inner_step = k, 0
    w = state.reference_point
    xi = int(idx.xi(obj.n_components, 1)[0])
    grad_grid = _baseline_grids(state, cfg, obj)[1] if cfg.quantized else None
    g, clamps = _upload_grad(cfg, obj, net, qrng, obj.grad_component(w, xi), xi, grad_grid)
    clamps += _broadcast(state, cfg, obj, net, qrng, w - cfg.alpha(k) * g, k, trace)
    return _record(obj, state.reference_point, k, net, f_star, cfg.seed, clamps=clamps)


def sag_step(state, cfg, obj, net, streams, k, f_star=None, trace=None):
    idx, qrng = streams
    net.epoch, net.inner_step = k, 0
    w = state.reference_point
    N = obj.n_components
    xi = int(idx.xi(N, 1)[0])
    grad_grid = _baseline_grids(state, cfg, obj)[1] if cfg.quantized else None
    g, clamps = _upload_grad(cfg, obj, net, qrng, obj.grad_component(w, xi), xi, grad_grid)
    state.sag_sum += g - state.sag_table[xi]
    state.sag_table[xi] = g
    clamps += _broadcast(state, cfg, obj, net, qrng, w - cfg.alpha(k) * state.sag_sum / N, k, trace)
    return _record(obj, state.reference_point, k, net, f_star, cfg.seed, clamps=clamps)


_STEP = {
    "svrg": svrg_epoch,
    "m-svrg": msvrg_epoch,
    "qm-svrg-f": msvrg_epoch,
    "qm-svrg-a": msvrg_epoch,
    "qm-svrg-f+": msvrg_epoch,
    "qm-svrg-a+": msvrg_epoch,
    "gd": gd_step,
    "q-gd": gd_step,
    "sgd": sgd_step,
    "q-sgd": sgd_step,
    "sag": sag_step,
    "q-sag": sag_step,
}


def run(obj: FiniteSum, cfg: OptimizerConfig, f_star: float | None = None,
        network: Network | None = None, index_stream=None, callback=None) -> RunResult:
    """Run ``cfg.epochs`` outer iterations from ``cfg.init`` (zero by default).

    ``trace[0]`` describes the starting point; ``trace[k]`` the state after
    outer iteration ``k``.  Raises :class:`DivergenceError` on a non-finite
    iterate, carrying the partial trace.
    """
    errs = cfg.validate(obj.dim)
    if errs:
        raise ConfigError("; ".join(errs))
    net = network if network is not None else Network()
    idx, qrng = _streams(cfg.seed)
    if index_stream is not None:
        idx = index_stream
    try:
        state = initial_state(obj, cfg)
    except QuantizerError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.grid_mode == "adaptive" and cfg.grad_center == "cached":
        # one-off full-precision seeding of every worker's cached centre
        net.epoch = 0
        net.upload_full(obj.dim, copies=obj.n_components)
    step = _STEP[cfg.algorithm]
    trace = [_record(obj, state.reference_point, 0, net, f_star, cfg.seed,
                     ref_grad_norm=float(np.linalg.norm(state.reference_gradient)))]
    for k in range(1, cfg.epochs + 1):
        rec = step(state, cfg, obj, net, (idx, qrng), k, f_star, trace)
        trace.append(rec)
        if callback is not None:
            callback(rec)
        if not (math.isfinite(rec.loss) and math.isfinite(rec.grad_norm)):
            raise DivergenceError(f"non-finite loss at outer iteration {k}", trace)
    return RunResult(state.reference_point.copy(), trace, state, net, cfg)
