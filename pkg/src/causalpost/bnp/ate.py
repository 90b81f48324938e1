"""Bayesian-bootstrap standardization over per-draw prediction blocks.

Any regression that yields per-draw conditional means at the stacked
treated/control test rows feeds this step: per posterior draw, a fresh
Bayesian-bootstrap weight vector averages the treated-minus-control
difference over subjects, giving one draw of the average treatment effect.
"""

from __future__ import annotations

import numpy as np

from ..effects import EstimandDraws, bb_weights, standardize_marginal
from ..errors import ShapeError
from ..prob import RngHandle

__all__ = ["bnp_ate"]


def bnp_ate(
    predict_1,
    predict_0,
    rng: RngHandle,
    name: str = "ate",
    chain=None,
    iteration=None,
) -> EstimandDraws:
    """ATE draws from aligned (draws x subjects) prediction blocks.

    Row m of each block holds draw m's conditional means at the same n
    subjects under treatment and control. Each draw gets its own weight
    vector from a stream keyed by the draw index, so results do not depend
    on evaluation order.
    """
    mu1 = np.atleast_2d(np.asarray(predict_1, dtype=float))
    mu0 = np.atleast_2d(np.asarray(predict_0, dtype=float))
    if mu1.shape != mu0.shape:
        raise ShapeError(
            f"prediction blocks differ in shape: {mu1.shape} vs {mu0.shape}"
        )
    m, n = mu1.shape
    values = np.empty(m)
    for i in range(m):
        w = bb_weights(n, rng.derive(i).generator())
        values[i] = standardize_marginal(mu1[i], mu0[i], w, kind="difference")
    return EstimandDraws(
        name=name, values=values, kind="difference", chain=chain, iteration=iteration
    )
