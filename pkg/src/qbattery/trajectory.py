"""Coarse run with checkpoints, so maxima can be refined without rerunning."""

from __future__ import annotations

import math
from typing import Callable, Iterable, Iterator

import numpy as np

from .results import DynamicsResult

Advance = Callable[[np.ndarray, float, np.ndarray], Iterator[np.ndarray]]
Observe = Callable[[Iterable[np.ndarray], np.ndarray, bool], DynamicsResult]


class Trajectory:
    """Propagate once over ``times`` and keep enough states to restart anywhere.

    ``advance(psi, t_from, times)`` yields the state at each of ``times``;
    ``observe(states, times, light)`` reduces states to a :class:`DynamicsResult`;
    with ``light`` set it may skip the costly diagnostics (total energy,
    entanglement), which maxima refinement does not need.
    Checkpoints are thinned so their total size stays under ``max_bytes``.
    """

    def __init__(
        self,
        advance: Advance,
        observe: Observe,
        psi0: np.ndarray,
        times,
        max_bytes: float = 2**28,
    ):
        self._advance = advance
        self._observe = observe
        times = np.asarray(times, dtype=float)
        stride = (
            max(1, math.ceil(times.size * psi0.nbytes / max_bytes)) if max_bytes > 0 else times.size + 1
        )
        self._cp_t = [0.0]
        self._cp_psi = [np.array(psi0)]

        def stream():
            for i, psi in enumerate(advance(psi0, 0.0, times)):
                if i % stride == 0 and times[i] > self._cp_t[-1]:
                    self._cp_t.append(float(times[i]))
                    self._cp_psi.append(psi)
                yield psi

        self.result = observe(stream(), times, False)

    def states_at(self, times) -> Iterator[np.ndarray]:
        times = np.asarray(times, dtype=float)
        if times.size and np.any(np.diff(times) < 0):
            raise ValueError("times must be non-decreasing")
        cp_t = np.asarray(self._cp_t)
        start = np.searchsorted(cp_t, times, side="right") - 1
        start = np.maximum(start, 0)
        i = 0
        while i < times.size:
            c = start[i]
            j = i
            while j < times.size and start[j] == c:
                j += 1
            yield from self._advance(self._cp_psi[c], self._cp_t[c], times[i:j])
            i = j

    def evaluate(self, times, light: bool = False) -> DynamicsResult:
        times = np.asarray(times, dtype=float)
        return self._observe(self.states_at(times), times, light)
