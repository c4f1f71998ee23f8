"""No-U-Turn sampling with multinomial trajectories and windowed warmup.

The transition follows the multinomial NUTS used by Stan: trajectories are
doubled in a random direction, the proposal is drawn with weights
``exp(-H)`` (biased towards the newest subtree at the top level), and
doubling stops on a generalized U-turn, including the two extra checks
across subtree boundaries. Warmup tunes the step size by dual averaging and
a diagonal inverse metric over doubling windows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import InitializationError, NonFiniteError, ValidationError
from .trace import DETERMINISTIC, Trace

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0
MAX_INIT_TRIES = 100
# gamma 0.05 leaves realized acceptance well above target after short terminal buffers
DA_GAMMA = 0.2


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup_iters: int = 1000
    draw_iters: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_jitter: float = 2.0

    def __post_init__(self):
        if self.chains < 2:
            raise ValidationError("at least 2 chains are needed for convergence checks")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.draw_iters < 1 or self.warmup_iters < 0:
            raise ValidationError("draw_iters must be >= 1 and warmup_iters >= 0")
        if self.max_tree_depth < 1:
            raise ValidationError("max_tree_depth must be >= 1")
        if self.init_jitter < 0:
            raise ValidationError("init_jitter must be non-negative")


class _Point:
    __slots__ = ("q", "p", "grad", "logp", "psharp")

    def __init__(self, q, p, grad, logp, psharp):
        self.q, self.p, self.grad, self.logp, self.psharp = q, p, grad, logp, psharp


class _Tree:
    __slots__ = ("minus", "plus", "proposal", "rho", "log_w", "valid", "n", "sum_accept", "divergent")


class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)`` towards a target acceptance."""

    def __init__(self, step_size, target, gamma=DA_GAMMA, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.counter = 0

    def update(self, accept_stat):
        self.counter += 1
        a = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.x_bar = w * x + (1.0 - w) * self.x_bar
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


class WindowSchedule:
    """Expanding metric-adaptation windows between an initial and a terminal buffer."""

    def __init__(self, num_warmup, init_buffer=75, term_buffer=50, base_window=25):
        self.num_warmup = num_warmup
        self.enabled = num_warmup >= 20
        if init_buffer + base_window + term_buffer > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.1 * num_warmup)
            base_window = num_warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window
        self.counter = 0
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1

    def in_window(self):
        return (
            self.enabled
            and self.init_buffer <= self.counter < self.num_warmup - self.term_buffer
            and self.counter != self.num_warmup
        )

    def at_window_end(self):
        return self.enabled and self.counter == self.next_window and self.counter != self.num_warmup

    def _advance_window(self):
        last = self.num_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last and self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer:
            self.next_window = last

    def step(self):
        """Advance one iteration; True when a window just closed."""
        closed = self.at_window_end()
        if closed:
            self._advance_window()
        self.counter += 1
        return closed


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def regularized_variance(self):
        n = self.n
        var = self.m2 / (n - 1) if n > 1 else np.ones_like(self.m2)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


class _Chain:
    """One NUTS chain; all randomness comes from ``rng``."""

    def __init__(self, program, cfg, rng):
        self.program = program
        self.cfg = cfg
        self.rng = rng
        self.dim = program.dim
        self.inv_metric = np.ones(self.dim)
        self.step_size = 1.0

    # --- dynamics

    def _evaluate(self, q):
        logp, grad = self.program.value_and_grad(q)
        return logp, grad

    def _hamiltonian(self, pt):
        if not np.isfinite(pt.logp):
            return math.inf
        with np.errstate(over="ignore", invalid="ignore"):
            h = -pt.logp + 0.5 * float(pt.p @ (self.inv_metric * pt.p))
        return h if math.isfinite(h) else math.inf

    def _leapfrog(self, pt, eps):
        p = pt.p + 0.5 * eps * pt.grad
        q = pt.q + eps * self.inv_metric * p
        logp, grad = self._evaluate(q)
        p = p + 0.5 * eps * grad
        return _Point(q, p, grad, logp, self.inv_metric * p)

    def _draw_momentum(self, pt):
        p = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)
        return _Point(pt.q, p, pt.grad, pt.logp, self.inv_metric * p)

    @staticmethod
    def _no_uturn(psharp_minus, psharp_plus, rho):
        return float(psharp_minus @ rho) > 0.0 and float(psharp_plus @ rho) > 0.0

    def _leaf(self, pt, direction, h0):
        new = self._leapfrog(pt, direction * self.step_size)
        h = self._hamiltonian(new)
        if math.isnan(h):
            h = math.inf
        t = _Tree()
        t.minus = t.plus = t.proposal = new
        t.rho = new.p.copy()
        t.log_w = h0 - h
        t.divergent = (h - h0) > DIVERGENCE_THRESHOLD
        t.valid = not t.divergent
        t.n = 1
        t.sum_accept = 1.0 if h0 - h > 0 else math.exp(h0 - h)
        return t

    def _merge(self, first, second, direction, top_level):
        """Join ``second`` (built after ``first`` in ``direction``) onto ``first``."""
        left, right = (first, second) if direction > 0 else (second, first)
        t = _Tree()
        t.minus, t.plus = left.minus, right.plus
        t.n = first.n + second.n
        t.sum_accept = first.sum_accept + second.sum_accept
        t.divergent = first.divergent or second.divergent
        t.log_w = float(np.logaddexp(first.log_w, second.log_w))
        if top_level:
            # biased progressive sampling favours the new subtree
            take = second.log_w > first.log_w or self.rng.random() < math.exp(second.log_w - first.log_w)
        else:
            take = self.rng.random() < math.exp(second.log_w - t.log_w)
        t.proposal = second.proposal if take else first.proposal
        t.rho = left.rho + right.rho
        ok = self._no_uturn(left.minus.psharp, right.plus.psharp, t.rho)
        ok = ok and self._no_uturn(left.minus.psharp, right.minus.psharp, left.rho + right.minus.p)
        ok = ok and self._no_uturn(left.plus.psharp, right.plus.psharp, right.rho + left.plus.p)
        t.valid = ok
        return t

    def _build(self, pt, depth, direction, h0):
        if depth == 0:
            return self._leaf(pt, direction, h0)
        first = self._build(pt, depth - 1, direction, h0)
        if not first.valid:
            return first
        edge = first.plus if direction > 0 else first.minus
        second = self._build(edge, depth - 1, direction, h0)
        if not second.valid:
            second.n += first.n
            second.sum_accept += first.sum_accept
            return second
        return self._merge(first, second, direction, top_level=False)

    def transition(self, pt):
        pt = self._draw_momentum(pt)
        h0 = self._hamiltonian(pt)
        tree = _Tree()
        tree.minus = tree.plus = tree.proposal = pt
        tree.rho = pt.p.copy()
        tree.log_w = 0.0
        tree.valid, tree.n, tree.sum_accept, tree.divergent = True, 0, 0.0, False
        depth = 0
        while depth < self.cfg.max_tree_depth:
            direction = 1 if self.rng.random() < 0.5 else -1
            edge = tree.plus if direction > 0 else tree.minus
            sub = self._build(edge, depth, direction, h0)
            depth += 1
            if not sub.valid:
                tree.n += sub.n
                tree.sum_accept += sub.sum_accept
                tree.divergent = tree.divergent or sub.divergent
                break
            tree = self._merge(tree, sub, direction, top_level=True)
            if not tree.valid:
                break
        prop = tree.proposal
        accept = tree.sum_accept / max(tree.n, 1)
        energy = self._hamiltonian(prop)
        return prop, accept, depth, tree.divergent, energy, tree.n

    # --- tuning

    def find_step_size(self, pt):
        """Double or halve the step size until one leapfrog crosses acceptance 0.8."""
        eps = self.step_size
        target = math.log(0.8)
        direction = 0
        for _ in range(100):
            mom = self._draw_momentum(pt)
            h0 = self._hamiltonian(mom)
            self.step_size = eps
            new = self._leapfrog(mom, eps)
            h = self._hamiltonian(new)
            delta = h0 - (h if not math.isnan(h) else math.inf)
            if direction == 0:
                direction = 1 if delta > target else -1
            elif (direction == 1 and not delta > target) or (direction == -1 and not delta < target):
                break
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-12:
                raise NonFiniteError("step-size search diverged; posterior may be improper")
        self.step_size = eps
        return eps

    def initialize(self):
        center = self.program.init_center()
        jitter = self.cfg.init_jitter
        for _ in range(MAX_INIT_TRIES):
            q = center + self.rng.uniform(-jitter, jitter, self.dim)
            logp, grad = self._evaluate(q)
            if np.isfinite(logp) and np.all(np.isfinite(grad)):
                return _Point(q, np.zeros(self.dim), grad, logp, np.zeros(self.dim))
        try:
            self.program.value_and_grad(q, strict=True)
            blamed = None
        except NonFiniteError as exc:
            blamed = exc.param
        raise InitializationError(
            f"no finite starting point after {MAX_INIT_TRIES} attempts" + (f" (parameter {blamed!r})" if blamed else ""),
            blamed,
        )

    def run(self):
        cfg = self.cfg
        pt = self.initialize()
        self.find_step_size(pt)
        da = DualAveraging(self.step_size, cfg.target_accept)
        windows = WindowSchedule(cfg.warmup_iters)
        est = _Welford(self.dim)
        for _ in range(cfg.warmup_iters):
            pt, accept, *_ = self.transition(pt)
            self.step_size = da.update(accept)
            if windows.in_window():
                est.add(pt.q)
            if windows.step():
                self.inv_metric = est.regularized_variance()
                est = _Welford(self.dim)
                self.find_step_size(pt)
                da.restart(self.step_size)
        if cfg.warmup_iters > 0:
            self.step_size = da.final()

        n = cfg.draw_iters
        qs = np.empty((n, self.dim))
        stats = {k: np.empty(n) for k in ("accept_stat", "tree_depth", "divergences", "energy", "n_leapfrog")}
        for i in range(n):
            pt, accept, depth, divergent, energy, n_leap = self.transition(pt)
            qs[i] = pt.q
            stats["accept_stat"][i] = accept
            stats["tree_depth"][i] = depth
            stats["divergences"][i] = divergent
            stats["energy"][i] = energy
            stats["n_leapfrog"][i] = n_leap
        stats["step_size"] = np.full(n, self.step_size)
        return qs, stats


def chain_rngs(seed, chains):
    """Independent counter-based generators, one per chain."""
    children = np.random.SeedSequence(int(seed)).spawn(int(chains))
    return [np.random.Generator(np.random.Philox(s)) for s in children]


def _assemble(program, draws, chain_stats):
    chains = len(draws)
    n = draws[0].shape[0]
    samples = {p.name: np.empty((chains, n) + p.shape) for p in program.params}
    det_shapes = None
    det = {}
    loglik = None
    for c, qs in enumerate(draws):
        for i in range(n):
            values = program.constrain(qs[i])
            for k, v in values.items():
                samples[k][c, i] = v
            d = program.deterministics(values)
            if det_shapes is None:
                det_shapes = {k: np.shape(v) for k, v in d.items()}
                det = {k: np.empty((chains, n) + s) for k, s in det_shapes.items()}
            for k, v in d.items():
                det[k][c, i] = v
            if program.has_loglik:
                ll = program.pointwise_loglik(values)
                if loglik is None:
                    loglik = np.empty((chains, n, ll.size))
                loglik[c, i] = ll
    params = [(p.name, p.shape, str(p.constraint)) for p in program.params]
    for k, s in (det_shapes or {}).items():
        params.append((k, s, DETERMINISTIC))
        samples[k] = det[k]
    stats = {key: np.stack([s[key] for s in chain_stats]) for key in chain_stats[0]}
    stats["divergences"] = stats["divergences"].astype(int)
    stats["tree_depth"] = stats["tree_depth"].astype(int)
    return Trace(params, samples, loglik, stats)


def nuts_sample(program, cfg=None, **overrides):
    """Run ``cfg.chains`` NUTS chains on ``program`` and return a :class:`Trace`.

    Chains run one after another; each has its own generator spawned from
    ``cfg.seed`` so the result does not depend on execution order.
    """
    if cfg is None:
        cfg = SamplerConfig(**overrides)
    elif overrides:
        cfg = SamplerConfig(**{**cfg.__dict__, **overrides})
    if program.dim < 1:
        raise ValidationError("program has no parameters to sample")
    draws, stats = [], []
    for c, rng in enumerate(chain_rngs(cfg.seed, cfg.chains)):
        qs, st = _Chain(program, cfg, rng).run()
        log.debug("chain %d: step size %.3g, %d divergences", c, st["step_size"][0], int(st["divergences"].sum()))
        draws.append(qs)
        stats.append(st)
    return _assemble(program, draws, stats)
