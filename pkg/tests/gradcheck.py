"""Central-difference gradient checking shared by the autodiff and refiner tests"""

from typing import Callable, Iterable, Optional, Tuple

import numpy as np

STEP = 1e-5
FLOOR = 1e-3


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def numeric_partial(loss: Callable[[], float], array: np.ndarray, index: Tuple[int, ...], h: float = STEP) -> float:
    """d loss / d array[index], perturbing ``array`` in place and restoring it"""
    original = array[index]
    array[index] = original + h
    plus = loss()
    array[index] = original - h
    minus = loss()
    array[index] = original
    return (plus - minus) / (2.0 * h)


def sample_indices(shape: Tuple[int, ...], count: int, rng: np.random.Generator) -> Iterable[Tuple[int, ...]]:
    """Up to ``count`` distinct flat positions of ``shape`` as index tuples"""
    size = int(np.prod(shape))
    picks = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(int(p), shape) for p in picks]


def max_relative_error(
    loss: Callable[[], float],
    array: np.ndarray,
    analytic: np.ndarray,
    count: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest relative error over all (or ``count`` sampled) entries of ``array``"""
    if count is None:
        indices = list(np.ndindex(array.shape))
    else:
        indices = sample_indices(array.shape, count, rng or np.random.default_rng(0))
    worst = 0.0
    for index in indices:
        numeric = numeric_partial(loss, array, index)
        worst = max(worst, relative_error(float(analytic[index]), numeric))
    return worst
