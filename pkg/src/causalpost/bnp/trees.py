"""Sum-of-trees regression sampled by backfitting.

Each of J regression trees is refit in turn against the partial residual of
the other J-1 trees: a grow-or-prune structure move is Metropolis-accepted
on the leaf-integrated marginal likelihood, then leaf values are drawn from
their Gaussian conditionals, and the noise variance from its inverse-gamma
conditional. The outcome is rescaled to [-0.5, 0.5] before sampling so the
default leaf prior sd 0.5/(2 sqrt(J)) keeps each tree a weak learner; the
move set is grow/prune only, trading mixing speed for a small verifiable
kernel.

Split rules reference observed covariate values: a grow proposal picks a
leaf uniformly, a covariate uniformly among those with at least two distinct
values in the leaf, and a threshold uniformly among that covariate's
distinct in-leaf values (excluding the maximum), so both children are
non-empty by construction. A grow proposal finding no usable covariate is
rejected in place (the chain stays), never an abort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainccinv

from ..data import ObservedDataset
from ..engine import ChainConfig
from ..errors import InvalidParameterError, ShapeError
from ..prob import RngHandle

__all__ = ["BARTConfig", "TreeEnsemble", "BARTFit", "bart_fit_predict"]


@dataclass(frozen=True)
class BARTConfig:
    """Ensemble size and priors.

    ``leaf_sd`` is the leaf-value prior sd on the rescaled outcome; None
    picks 0.5/(2 sqrt(n_trees)). The noise variance prior is
    InvGamma(nu/2, nu*lam/2) with lam calibrated so the least-squares
    residual variance sits at the ``q`` prior quantile.
    """

    n_trees: int = 200
    a_split: float = 0.95
    b_split: float = 2.0
    leaf_sd: float = None
    nu: float = 3.0
    q: float = 0.9

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidParameterError("n_trees must be >= 1")
        if not 0.0 <= self.a_split < 1.0:
            raise InvalidParameterError("a_split must be in [0, 1)")
        if self.b_split < 0.0:
            raise InvalidParameterError("b_split must be >= 0")
        if self.leaf_sd is not None and self.leaf_sd <= 0.0:
            raise InvalidParameterError("leaf_sd must be > 0")
        if self.nu <= 0.0:
            raise InvalidParameterError("nu must be > 0")
        if not 0.0 < self.q < 1.0:
            raise InvalidParameterError("q must be in (0, 1)")


class _Node:
    """Binary tree node; a leaf iff ``var`` is None.

    Leaves carry the index arrays of the training and test rows they own, so
    structure moves and predictions touch only the affected rows.
    """

    __slots__ = ("var", "cut", "left", "right", "value", "train_rows", "test_rows", "depth")

    def __init__(self, depth, train_rows, test_rows):
        self.var = None
        self.cut = 0.0
        self.left = None
        self.right = None
        self.value = 0.0
        self.train_rows = train_rows
        self.test_rows = test_rows
        self.depth = depth

    def is_leaf(self):
        return self.var is None


def _leaves(root):
    out, stack = [], [root]
    while stack:
        node = stack.pop()
        if node.is_leaf():
            out.append(node)
        else:
            stack.append(node.right)
            stack.append(node.left)
    return out


def _nogs(root):
    """Internal nodes whose both children are leaves (prunable nodes)."""
    out, stack = [], [root]
    while stack:
        node = stack.pop()
        if node.is_leaf():
            continue
        if node.left.is_leaf() and node.right.is_leaf():
            out.append(node)
        else:
            stack.append(node.right)
            stack.append(node.left)
    return out


@dataclass
class TreeEnsemble:
    """One sum-of-trees state on the rescaled outcome scale."""

    trees: list
    sigma: float
    leaf_prior_sd: float
    depth_prior: tuple

    @property
    def j(self) -> int:
        return len(self.trees)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Sum of the trees' step functions at rows of ``x`` (rescaled scale).

        Trees contribute in list order, so repeated evaluation of one state
        is bit-for-bit reproducible.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        total = np.zeros(x.shape[0])
        for root in self.trees:
            vec = np.zeros(x.shape[0])
            stack = [(root, np.arange(x.shape[0]))]
            while stack:
                node, rows = stack.pop()
                if node.is_leaf():
                    vec[rows] = node.value
                else:
                    go_left = x[rows, node.var] <= node.cut
                    stack.append((node.right, rows[~go_left]))
                    stack.append((node.left, rows[go_left]))
            total += vec
        return total


@dataclass
class BARTFit:
    """Per-draw test predictions plus the final sampler state.

    ``mu`` and ``sigma`` are on the original outcome scale. ``ensemble`` and
    ``train_fit`` snapshot the last chain's final state on the rescaled
    scale; ``train_fit`` is the stored ensemble prediction at the training
    rows, reproducible exactly from ``ensemble.predict``.
    """

    mu: np.ndarray
    sigma: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    ensemble: TreeEnsemble
    train_fit: np.ndarray
    y_mid: float
    y_scale: float

    @property
    def n_draws(self) -> int:
        return self.mu.shape[0]


def _leaf_ml_parts(count, total, sigma2, leaf_var):
    """Leaf marginal-likelihood terms that change under grow/prune.

    The Gaussian data terms shared by a node and its two children cancel in
    the move ratio, leaving the shrinkage determinant and the mean bonus.
    """
    return -0.5 * math.log1p(count * leaf_var / sigma2) + (
        leaf_var * total * total / (2.0 * sigma2 * (sigma2 + count * leaf_var))
    )


def _split_prob(depth, a_split, b_split):
    return a_split * (1.0 + depth) ** (-b_split)


def _grow(root, x_train, x_test, resid, sigma2, leaf_var, a_split, b_split, gen):
    """Propose and Metropolis-accept one grow move; returns True on accept."""
    if a_split == 0.0:
        return False
    leaves = _leaves(root)
    leaf = leaves[int(gen.integers(len(leaves)))]
    rows = leaf.train_rows
    usable = [
        v
        for v in range(x_train.shape[1])
        if x_train[rows, v].min() < x_train[rows, v].max()
    ]
    if not usable:
        return False
    var = usable[int(gen.integers(len(usable)))]
    cuts = np.unique(x_train[rows, var])[:-1]
    cut = float(cuts[int(gen.integers(len(cuts)))])

    go_left = x_train[rows, var] <= cut
    r = resid[rows]
    s_all = float(r.sum())
    s_left = float(r[go_left].sum())
    m_all = rows.shape[0]
    m_left = int(np.count_nonzero(go_left))

    d = leaf.depth
    p_here = _split_prob(d, a_split, b_split)
    p_child = _split_prob(d + 1, a_split, b_split)
    log_accept = (
        _leaf_ml_parts(m_left, s_left, sigma2, leaf_var)
        + _leaf_ml_parts(m_all - m_left, s_all - s_left, sigma2, leaf_var)
        - _leaf_ml_parts(m_all, s_all, sigma2, leaf_var)
        + math.log(p_here)
        + 2.0 * math.log1p(-p_child)
        - math.log1p(-p_here)
    )
    # proposal asymmetry: grow picked a leaf, the reverse prune picks a nog
    n_nog_new = len(_nogs(root)) + 1 - _parent_becomes_non_nog(root, leaf)
    p_grow_cur = 1.0 if root.is_leaf() else 0.5
    log_accept += math.log(0.5) - math.log(n_nog_new)
    log_accept -= math.log(p_grow_cur) - math.log(len(leaves))

    if gen.random() >= math.exp(min(log_accept, 0.0)):
        return False
    test_left = x_test[leaf.test_rows, var] <= cut
    leaf.var = var
    leaf.cut = cut
    leaf.left = _Node(d + 1, rows[go_left], leaf.test_rows[test_left])
    leaf.right = _Node(d + 1, rows[~go_left], leaf.test_rows[~test_left])
    leaf.train_rows = None
    leaf.test_rows = None
    return True


def _parent_becomes_non_nog(root, leaf):
    """1 if growing ``leaf`` removes its parent from the prunable set."""
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf():
            continue
        if node.left is leaf or node.right is leaf:
            return 1 if (node.left.is_leaf() and node.right.is_leaf()) else 0
        stack.append(node.right)
        stack.append(node.left)
    return 0


def _prune(root, resid, sigma2, leaf_var, a_split, b_split, gen):
    """Propose and Metropolis-accept one prune move; returns True on accept."""
    if root.is_leaf():
        return False
    nogs = _nogs(root)
    node = nogs[int(gen.integers(len(nogs)))]
    rows = np.concatenate([node.left.train_rows, node.right.train_rows])
    r_left = resid[node.left.train_rows]
    r_right = resid[node.right.train_rows]
    s_left = float(r_left.sum())
    s_right = float(r_right.sum())
    m_left = node.left.train_rows.shape[0]
    m_right = node.right.train_rows.shape[0]

    d = node.depth
    p_here = _split_prob(d, a_split, b_split)
    p_child = _split_prob(d + 1, a_split, b_split)
    log_accept = (
        _leaf_ml_parts(m_left + m_right, s_left + s_right, sigma2, leaf_var)
        - _leaf_ml_parts(m_left, s_left, sigma2, leaf_var)
        - _leaf_ml_parts(m_right, s_right, sigma2, leaf_var)
        + math.log1p(-p_here)
        - math.log(p_here)
        - 2.0 * math.log1p(-p_child)
    )
    # reverse move grows the merged leaf back
    n_leaves_new = len(_leaves(root)) - 1
    p_grow_new = 1.0 if n_leaves_new == 1 else 0.5
    log_accept += math.log(p_grow_new) - math.log(n_leaves_new)
    log_accept -= math.log(0.5) - math.log(len(nogs))

    if gen.random() >= math.exp(min(log_accept, 0.0)):
        return False
    node.var = None
    node.train_rows = rows
    node.test_rows = np.concatenate([node.left.test_rows, node.right.test_rows])
    node.left = None
    node.right = None
    return True


def _draw_leaf_values(root, resid, sigma2, leaf_var, fit_vec, gen):
    """Gibbs-draw every leaf value and rebuild the tree's fitted vector."""
    for leaf in _leaves(root):
        rows = leaf.train_rows
        m = rows.shape[0]
        post_var = 1.0 / (m / sigma2 + 1.0 / leaf_var)
        post_mean = post_var * float(resid[rows].sum()) / sigma2
        leaf.value = post_mean + math.sqrt(post_var) * float(gen.standard_normal())
        fit_vec[rows] = leaf.value


def _tree_test_vector(root, n_test):
    vec = np.zeros(n_test)
    for leaf in _leaves(root):
        vec[leaf.test_rows] = leaf.value
    return vec


def bart_fit_predict(
    data: ObservedDataset, test, cfg: BARTConfig, chain: ChainConfig
) -> BARTFit:
    """Backfitting sampler; returns per-draw predictions at ``test`` rows.

    Covariates are (A, confounders...) and ``test`` rows must match that
    width. Chains run sequentially on independent streams keyed by
    (seed, chain id). The returned ``ensemble``/``train_fit`` pair snapshots
    the last chain's final state; the stored ``train_fit`` comes from the
    same tree-order summation ``TreeEnsemble.predict`` uses, so the two
    agree exactly.
    """
    x_train = np.column_stack([data.a, data.confounders])
    x_test = np.atleast_2d(np.asarray(test, dtype=float))
    if x_test.shape[1] != x_train.shape[1]:
        raise ShapeError(
            f"test rows have {x_test.shape[1]} columns, training data has "
            f"{x_train.shape[1]} (treatment first, then confounders)"
        )
    n = x_train.shape[0]
    n_test = x_test.shape[0]

    y_min = float(data.y.min())
    y_range = float(data.y.max()) - y_min
    if y_range == 0.0:
        y_range = 1.0
    y_mid = y_min + 0.5 * y_range
    y = (data.y - y_mid) / y_range

    leaf_sd = cfg.leaf_sd if cfg.leaf_sd is not None else 0.5 / (2.0 * math.sqrt(cfg.n_trees))
    leaf_var = leaf_sd * leaf_sd

    design = np.column_stack([np.ones(n), x_train])
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    sig2_hat = max(float(np.var(y - design @ beta)), 1e-12)
    # lam puts sig2_hat at the q quantile of InvGamma(nu/2, nu lam / 2)
    lam = 2.0 * sig2_hat * float(gammainccinv(cfg.nu / 2.0, cfg.q)) / cfg.nu

    retained = -(-(chain.iterations - chain.burnin) // chain.thin)
    m_total = chain.n_chains * retained
    mu = np.empty((m_total, n_test))
    sig = np.empty(m_total)
    chain_ids = np.empty(m_total, dtype=int)
    iters = np.empty(m_total, dtype=int)

    out_row = 0
    final_trees = None
    final_sigma = None
    final_fit = None
    all_test = np.arange(n_test)
    all_train = np.arange(n)
    for c in range(chain.n_chains):
        gen = RngHandle(chain.seed, c).generator()
        trees = [
            _Node(0, all_train.copy(), all_test.copy()) for _ in range(cfg.n_trees)
        ]
        fits = np.zeros((cfg.n_trees, n))
        total_fit = np.zeros(n)
        sigma2 = sig2_hat

        for t in range(chain.iterations):
            for j, root in enumerate(trees):
                resid = y - (total_fit - fits[j])
                if root.is_leaf() or gen.random() < 0.5:
                    _grow(
                        root, x_train, x_test, resid, sigma2, leaf_var,
                        cfg.a_split, cfg.b_split, gen,
                    )
                else:
                    _prune(root, resid, sigma2, leaf_var, cfg.a_split, cfg.b_split, gen)
                old = fits[j].copy()
                _draw_leaf_values(root, resid, sigma2, leaf_var, fits[j], gen)
                total_fit += fits[j] - old
            # re-sum in tree order: the stored fit is exactly what the trees say
            total_fit = np.zeros(n)
            for j in range(cfg.n_trees):
                total_fit += fits[j]
            err = y - total_fit
            shape = 0.5 * (cfg.nu + n)
            scale = 0.5 * (cfg.nu * lam + float(err @ err))
            sigma2 = scale / float(gen.standard_gamma(shape))

            if t >= chain.burnin and (t - chain.burnin) % chain.thin == 0:
                pred = np.zeros(n_test)
                for root in trees:
                    pred += _tree_test_vector(root, n_test)
                mu[out_row] = pred * y_range + y_mid
                sig[out_row] = math.sqrt(sigma2) * y_range
                chain_ids[out_row] = c
                iters[out_row] = t
                out_row += 1

        final_trees = trees
        final_sigma = math.sqrt(sigma2)
        final_fit = total_fit

    ensemble = TreeEnsemble(
        trees=final_trees,
        sigma=final_sigma,
        leaf_prior_sd=leaf_sd,
        depth_prior=(cfg.a_split, cfg.b_split),
    )
    return BARTFit(
        mu=mu,
        sigma=sig,
        chain=chain_ids,
        iteration=iters,
        ensemble=ensemble,
        train_fit=final_fit,
        y_mid=y_mid,
        y_scale=y_range,
    )
