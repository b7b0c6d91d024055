"""
Threshold OU - Simulator
Euler-Maruyama simulation on a uniform grid, one random stream per path.

Coefficients are frozen at the left endpoint of every Euler step; a state
exactly at the threshold uses the plus-side coefficients.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from threshold_ou.core.config import get_simulation_config
from threshold_ou.core.exceptions import DivergedError, InvalidInputError
from threshold_ou.models import InitMode, SimSpec, Trajectory
from threshold_ou.services.stationary import sample_stationary, stationary_dist
from threshold_ou.utils.numerics import NormalSource, RngStream

logger = logging.getLogger(__name__)


class EulerEngine:
    """Advances a block of paths in lockstep; each row draws from its own stream"""

    def __init__(self, spec: SimSpec, divergence_bound: float = 1e12, noise_chunk: int = 4096):
        self.spec = spec
        self.divergence_bound = divergence_bound
        self.noise_chunk = noise_chunk
        p = spec.params
        self.r = p.r
        self.coef_plus = (p.a_plus, p.b_plus, p.sigma_plus)
        self.coef_minus = (p.a_minus, p.b_minus, p.sigma_minus)

    def _advance(
        self,
        x: np.ndarray,
        rngs: Sequence[NormalSource],
        n_steps: int,
        h: float,
        record_every: int,
        out: Optional[np.ndarray],
        path_indices: Sequence[Optional[int]],
    ) -> np.ndarray:
        """Run n_steps Euler steps; every record_every-th state goes to out[:, k]"""
        a_p, b_p, s_p = self.coef_plus
        a_m, b_m, s_m = self.coef_minus
        sqrt_h = math.sqrt(h)
        bound = self.divergence_bound
        step = 0
        while step < n_steps:
            chunk = min(self.noise_chunk, n_steps - step)
            noise = np.vstack([rng.standard_normal(chunk) for rng in rngs])
            for j in range(chunk):
                plus = x >= self.r
                a = np.where(plus, a_p, a_m)
                b = np.where(plus, b_p, b_m)
                s = np.where(plus, s_p, s_m)
                x = x + (b - a * x) * h + s * sqrt_h * noise[:, j]
                step += 1
                ok = np.abs(x) <= bound
                if not ok.all():
                    bad = int(np.flatnonzero(~ok)[0])
                    raise DivergedError(step=step, path_index=path_indices[bad], value=float(x[bad]))
                if out is not None and step % record_every == 0:
                    out[:, step // record_every] = x
        return x

    def initial_states(self, rngs: Sequence[NormalSource], path_indices: Sequence[Optional[int]]) -> np.ndarray:
        spec = self.spec
        if spec.init == InitMode.DETERMINISTIC:
            return np.full(len(rngs), float(spec.x0))
        if spec.burn_in > 0:
            start = spec.x0 if spec.x0 is not None else spec.params.r
            x = np.full(len(rngs), float(start))
            n_burn = max(1, int(round(spec.burn_in / spec.h)))
            return self._advance(x, rngs, n_burn, spec.h, 1, None, path_indices)
        dist = stationary_dist(spec.params)
        return np.array([sample_stationary(dist, rng) for rng in rngs])

    def run(self, rngs: Sequence[NormalSource], path_indices: Optional[Sequence[Optional[int]]] = None) -> np.ndarray:
        """Array of shape (len(rngs), N + 1)"""
        spec = self.spec
        if path_indices is None:
            path_indices = [None] * len(rngs)
        x = self.initial_states(rngs, path_indices)
        out = np.empty((len(rngs), spec.N + 1))
        out[:, 0] = x
        self._advance(x, rngs, spec.N * spec.substeps, spec.h, spec.substeps, out, path_indices)
        return out


def _engine(spec: SimSpec) -> EulerEngine:
    config = get_simulation_config()
    return EulerEngine(spec, divergence_bound=config["divergence_bound"], noise_chunk=config["noise_chunk"])


def simulate(spec: SimSpec, rng: NormalSource) -> Trajectory:
    """One Euler path; deterministic given the stream"""
    values = _engine(spec).run([rng])[0]
    return Trajectory(t0=0.0, dt=spec.dt, values=values)


BlockReducer = Callable[[List[int], np.ndarray], Any]


def _simulate_block(spec: SimSpec, seed: int, indices: List[int], reducer: Optional[BlockReducer] = None) -> Any:
    rngs = [RngStream(seed=seed, stream_index=i) for i in indices]
    block = _engine(spec).run(rngs, path_indices=indices)
    return reducer(indices, block) if reducer is not None else block


def _index_chunks(first_index: int, n_paths: int, chunk: int) -> List[List[int]]:
    indices = list(range(first_index, first_index + n_paths))
    return [indices[k:k + chunk] for k in range(0, n_paths, chunk)]


def iter_batch_blocks(
    spec: SimSpec,
    n_paths: int,
    seed: int,
    first_index: int = 0,
    path_chunk: Optional[int] = None,
    n_workers: Optional[int] = None,
    reducer: Optional[BlockReducer] = None,
) -> Iterator[Tuple[List[int], Any]]:
    """
    Yield (path indices, values block) in path-index order.

    Path i always uses stream i, so the blocks do not depend on the chunk size
    or the number of workers. With a reducer, reducer(indices, block) runs next
    to the simulation (in the worker process) and its result is yielded instead
    of the block; it must be picklable when n_workers > 1.
    """
    if n_paths < 1:
        raise InvalidInputError(f"n_paths must be at least 1, got {n_paths}")
    config = get_simulation_config()
    path_chunk = path_chunk or config["path_chunk"]
    n_workers = n_workers or config["n_workers"]
    chunks = _index_chunks(first_index, n_paths, path_chunk)
    logger.info(f"Simulating {n_paths} paths (T={spec.T}, N={spec.N}, substeps={spec.substeps}) on {n_workers} worker(s)")

    if n_workers == 1:
        for indices in chunks:
            yield indices, _simulate_block(spec, seed, indices, reducer)
        return

    with ProcessPoolExecutor(max_workers=n_workers) as executor:
        n = len(chunks)
        blocks = executor.map(_simulate_block, [spec] * n, [seed] * n, chunks, [reducer] * n)
        for indices, block in zip(chunks, blocks):
            yield indices, block


def simulate_batch(
    spec: SimSpec,
    n_paths: int,
    seed: int,
    first_index: int = 0,
    path_chunk: Optional[int] = None,
    n_workers: Optional[int] = None,
) -> List[Trajectory]:
    """n_paths independent trajectories, path i on stream first_index + i"""
    trajectories = []
    for _, block in iter_batch_blocks(spec, n_paths, seed, first_index, path_chunk, n_workers):
        trajectories.extend(Trajectory(t0=0.0, dt=spec.dt, values=row) for row in block)
    return trajectories
