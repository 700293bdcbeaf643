"""Compiled kernels for the sum-of-trees sampler.

Each tree lives in a fixed-capacity node pool (one row of the 2-d state
arrays per tree). Rows of the training matrix are tracked by the pool index
of the leaf they currently sit in, so a Metropolis-Hastings move only ever
touches the rows of the affected leaves.

Node kinds: 0 numeric split, 1 missingness split, 2 leaf.
"""

import math

import numpy as np
from numba import njit

NUMERIC = 0
MISSINGNESS = 1
LEAF = 2

SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def goes_left(x, kind, cut, miss_left):
    if math.isnan(x):
        if kind == MISSINGNESS:
            return True
        return miss_left
    if kind == MISSINGNESS:
        return False
    return x <= cut


@njit(cache=True)
def leaf_loglik(n, s, tau2):
    # marginal likelihood of a leaf's residuals, leaf value integrated out,
    # up to terms that cancel between trees sharing the same rows
    d = 1.0 + n * tau2
    return -0.5 * math.log(d) + 0.5 * tau2 * s * s / d


@njit(cache=True)
def split_prob(depth, base, power, max_depth):
    if depth >= max_depth:
        return 0.0
    return base * (1.0 + depth) ** (-power)


@njit(cache=True)
def init_state(kind, left, right, parent, depth, used, value, free_stack, free_top, row_leaf):
    q, cap = kind.shape
    for t in range(q):
        for c in range(cap):
            kind[t, c] = LEAF
            left[t, c] = -1
            right[t, c] = -1
            parent[t, c] = -1
            depth[t, c] = 0
            used[t, c] = False
            value[t, c] = 0.0
        used[t, 0] = True
        # free nodes popped from the top: lowest index first
        k = 0
        for c in range(cap - 1, 0, -1):
            free_stack[t, k] = c
            k += 1
        free_top[t] = k
    row_leaf[:, :] = 0


@njit(cache=True)
def _propose_rule(p, pool_start, pool_len, pool_vals, has_missing, mia):
    j = np.random.randint(p)
    n_opt = pool_len[j]
    if mia and has_missing[j]:
        n_opt += 1
    if n_opt == 0:
        return -1, NUMERIC, 0.0, False
    k = np.random.randint(n_opt)
    if k == pool_len[j]:
        return j, MISSINGNESS, 0.0, True
    miss_left = np.random.random() < 0.5
    return j, NUMERIC, pool_vals[pool_start[j] + k], miss_left


@njit(cache=True)
def _count_nodes(t, kind, left, right, used, cap):
    n_leaf = 0
    n_int = 0
    n_nog = 0
    for c in range(cap):
        if not used[t, c]:
            continue
        if kind[t, c] == LEAF:
            n_leaf += 1
        else:
            n_int += 1
            if kind[t, left[t, c]] == LEAF and kind[t, right[t, c]] == LEAF:
                n_nog += 1
    return n_leaf, n_int, n_nog


@njit(cache=True)
def _pick_node(t, kind, left, right, used, cap, want_nog, index):
    # index-th leaf (want_nog False) or index-th internal node with two leaf children
    k = 0
    for c in range(cap):
        if not used[t, c]:
            continue
        if want_nog:
            if kind[t, c] != LEAF and kind[t, left[t, c]] == LEAF and kind[t, right[t, c]] == LEAF:
                if k == index:
                    return c
                k += 1
        elif kind[t, c] == LEAF:
            if k == index:
                return c
            k += 1
    return -1


@njit(cache=True)
def _move_prob(move, n_int, w_grow, w_prune, w_change):
    # probability of choosing `move` given which moves are feasible
    if n_int == 0:
        return 1.0 if move == 0 else 0.0
    tot = w_grow + w_prune + w_change
    if move == 0:
        return w_grow / tot
    if move == 1:
        return w_prune / tot
    return w_change / tot


@njit(cache=True)
def tree_step(t, X, resid, row_leaf, idx_buf,
              kind, var, cut, miss_left, left, right, parent, depth, used, value,
              free_stack, free_top,
              pool_start, pool_len, pool_vals, has_missing, mia,
              tau2, base, power, max_depth, w_grow, w_prune, w_change,
              prior_only, allow_empty):
    """One Metropolis-Hastings move on tree ``t``. Returns 0/1/2 for an accepted
    grow/prune/change and -1 when nothing changed."""
    n, p = X.shape
    cap = kind.shape[1]
    n_leaf, n_int, n_nog = _count_nodes(t, kind, left, right, used, cap)

    u = np.random.random()
    if n_int == 0:
        move = 0
    else:
        tot = w_grow + w_prune + w_change
        if u < w_grow / tot:
            move = 0
        elif u < (w_grow + w_prune) / tot:
            move = 1
        else:
            move = 2

    if move == 0:
        leaf = _pick_node(t, kind, left, right, used, cap, False, np.random.randint(n_leaf))
        d = depth[t, leaf]
        j, knd, c, ml = _propose_rule(p, pool_start, pool_len, pool_vals, has_missing, mia)
        if j < 0 or free_top[t] < 2:
            return -1
        ps = split_prob(d, base, power, max_depth)
        if ps <= 0.0:
            return -1
        m = 0
        nl = 0
        sl = 0.0
        sr = 0.0
        for i in range(n):
            if row_leaf[t, i] == leaf:
                idx_buf[m] = i
                m += 1
                if goes_left(X[i, j], knd, c, ml):
                    nl += 1
                    sl += resid[i]
                else:
                    sr += resid[i]
        nr = m - nl
        if (nl == 0 or nr == 0) and not allow_empty:
            return -1
        pc = split_prob(d + 1, base, power, max_depth)
        pl = parent[t, leaf]
        sibling_leaf = pl >= 0 and kind[t, left[t, pl]] == LEAF and kind[t, right[t, pl]] == LEAF
        w_new = n_nog + 1 - (1 if sibling_leaf else 0)
        log_r = (math.log(_move_prob(1, 1, w_grow, w_prune, w_change) / w_new)
                 - math.log(_move_prob(0, n_int, w_grow, w_prune, w_change) / n_leaf)
                 + math.log(ps) + 2.0 * math.log(1.0 - pc) - math.log(1.0 - ps))
        if not prior_only:
            log_r += (leaf_loglik(nl, sl, tau2) + leaf_loglik(nr, sr, tau2)
                      - leaf_loglik(m, sl + sr, tau2))
        if math.log(np.random.random()) >= log_r:
            return -1
        free_top[t] -= 1
        a = free_stack[t, free_top[t]]
        free_top[t] -= 1
        b = free_stack[t, free_top[t]]
        for node in (a, b):
            used[t, node] = True
            kind[t, node] = LEAF
            parent[t, node] = leaf
            depth[t, node] = d + 1
            value[t, node] = 0.0
            left[t, node] = -1
            right[t, node] = -1
        kind[t, leaf] = knd
        var[t, leaf] = j
        cut[t, leaf] = c
        miss_left[t, leaf] = ml
        left[t, leaf] = a
        right[t, leaf] = b
        for k in range(m):
            i = idx_buf[k]
            row_leaf[t, i] = a if goes_left(X[i, j], knd, c, ml) else b
        return 0

    node = _pick_node(t, kind, left, right, used, cap, True, np.random.randint(n_nog))
    a = left[t, node]
    b = right[t, node]
    m = 0
    nl = 0
    sl = 0.0
    sr = 0.0
    for i in range(n):
        r = row_leaf[t, i]
        if r == a:
            idx_buf[m] = i
            m += 1
            nl += 1
            sl += resid[i]
        elif r == b:
            idx_buf[m] = i
            m += 1
            sr += resid[i]
    nr = m - nl

    if move == 1:
        d = depth[t, node]
        ps = split_prob(d, base, power, max_depth)
        pc = split_prob(d + 1, base, power, max_depth)
        n_int_new = n_int - 1
        log_r = (math.log(_move_prob(0, n_int_new, w_grow, w_prune, w_change) / (n_leaf - 1))
                 - math.log(_move_prob(1, n_int, w_grow, w_prune, w_change) / n_nog)
                 - (math.log(ps) + 2.0 * math.log(1.0 - pc) - math.log(1.0 - ps)))
        if not prior_only:
            log_r += (leaf_loglik(m, sl + sr, tau2)
                      - leaf_loglik(nl, sl, tau2) - leaf_loglik(nr, sr, tau2))
        if math.log(np.random.random()) >= log_r:
            return -1
        for child in (a, b):
            used[t, child] = False
            kind[t, child] = LEAF
            free_stack[t, free_top[t]] = child
            free_top[t] += 1
        kind[t, node] = LEAF
        var[t, node] = -1
        left[t, node] = -1
        right[t, node] = -1
        value[t, node] = 0.0
        for k in range(m):
            row_leaf[t, idx_buf[k]] = node
        return 1

    # change the rule of a node whose children are both leaves
    j, knd, c, ml = _propose_rule(p, pool_start, pool_len, pool_vals, has_missing, mia)
    if j < 0:
        return -1
    nl2 = 0
    sl2 = 0.0
    sr2 = 0.0
    for k in range(m):
        i = idx_buf[k]
        if goes_left(X[i, j], knd, c, ml):
            nl2 += 1
            sl2 += resid[i]
        else:
            sr2 += resid[i]
    nr2 = m - nl2
    if (nl2 == 0 or nr2 == 0) and not allow_empty:
        return -1
    log_r = 0.0
    if not prior_only:
        log_r = (leaf_loglik(nl2, sl2, tau2) + leaf_loglik(nr2, sr2, tau2)
                 - leaf_loglik(nl, sl, tau2) - leaf_loglik(nr, sr, tau2))
    if math.log(np.random.random()) >= log_r:
        return -1
    kind[t, node] = knd
    var[t, node] = j
    cut[t, node] = c
    miss_left[t, node] = ml
    for k in range(m):
        i = idx_buf[k]
        row_leaf[t, i] = a if goes_left(X[i, j], knd, c, ml) else b
    return 2


@njit(cache=True)
def sweep(seed, X, z, fit, resid, row_leaf, idx_buf, cnt, sums,
          kind, var, cut, miss_left, left, right, parent, depth, used, value,
          free_stack, free_top,
          pool_start, pool_len, pool_vals, has_missing, mia,
          tau2, base, power, max_depth, w_grow, w_prune, w_change,
          prior_only, allow_empty, accepted):
    """One backfitting pass over all trees: MH move, then conjugate leaf draws.

    ``fit`` holds the current sum of trees per row and is kept in sync.
    Error variance is fixed at 1.
    """
    np.random.seed(seed)
    q, cap = kind.shape
    n = X.shape[0]
    for t in range(q):
        for i in range(n):
            resid[i] = z[i] - fit[i] + value[t, row_leaf[t, i]]
        res = tree_step(t, X, resid, row_leaf, idx_buf,
                        kind, var, cut, miss_left, left, right, parent, depth, used, value,
                        free_stack, free_top,
                        pool_start, pool_len, pool_vals, has_missing, mia,
                        tau2, base, power, max_depth, w_grow, w_prune, w_change,
                        prior_only, allow_empty)
        if res >= 0:
            accepted[res] += 1
        for c in range(cap):
            cnt[c] = 0.0
            sums[c] = 0.0
        if not prior_only:
            for i in range(n):
                c = row_leaf[t, i]
                cnt[c] += 1.0
                sums[c] += resid[i]
        for c in range(cap):
            if used[t, c] and kind[t, c] == LEAF:
                v = 1.0 / (cnt[c] + 1.0 / tau2)
                value[t, c] = v * sums[c] + math.sqrt(v) * np.random.standard_normal()
        # resid excludes tree t, so this swaps in its new contribution
        for i in range(n):
            fit[i] = z[i] - resid[i] + value[t, row_leaf[t, i]]


@njit(cache=True)
def _export_subtree(t, c, kind, var, cut, miss_left, left, right, value,
                    o_kind, o_var, o_cut, o_ml, o_val, pos):
    # iterative preorder: left subtree immediately follows its parent
    stack = np.empty(kind.shape[1], np.int64)
    top = 0
    stack[top] = c
    top += 1
    while top > 0:
        top -= 1
        c = stack[top]
        k = kind[t, c]
        o_kind[pos] = k
        if k == LEAF:
            o_var[pos] = -1
            o_cut[pos] = 0.0
            o_ml[pos] = False
            o_val[pos] = value[t, c]
        else:
            o_var[pos] = var[t, c]
            o_cut[pos] = cut[t, c]
            o_ml[pos] = miss_left[t, c]
            o_val[pos] = 0.0
            stack[top] = right[t, c]
            top += 1
            stack[top] = left[t, c]
            top += 1
        pos += 1
    return pos


@njit(cache=True)
def export_forest(kind, var, cut, miss_left, left, right, used, value):
    """Preorder node arrays for all trees of the current state, plus tree sizes."""
    q, cap = kind.shape
    total = 0
    sizes = np.zeros(q, np.int64)
    for t in range(q):
        s = 0
        for c in range(cap):
            if used[t, c]:
                s += 1
        sizes[t] = s
        total += s
    o_kind = np.empty(total, np.int8)
    o_var = np.empty(total, np.int32)
    o_cut = np.empty(total, np.float64)
    o_ml = np.empty(total, np.bool_)
    o_val = np.empty(total, np.float64)
    pos = 0
    for t in range(q):
        pos = _export_subtree(t, 0, kind, var, cut, miss_left, left, right, value,
                              o_kind, o_var, o_cut, o_ml, o_val, pos)
    return sizes, o_kind, o_var, o_cut, o_ml, o_val


@njit(cache=True)
def right_children(kind, tree_start, tree_size):
    """Absolute index of each internal node's right child in preorder arrays."""
    n = kind.shape[0]
    right = np.full(n, -1, np.int64)
    stack = np.empty(n + 1, np.int64)
    for t in range(tree_start.shape[0]):
        start = tree_start[t]
        end = start + tree_size[t]
        top = 0
        # stack of internal nodes whose right child is still unplaced
        for k in range(start, end):
            if top > 0 and k > start and kind[k - 1] == LEAF:
                top -= 1
                right[stack[top]] = k
            if kind[k] != LEAF:
                stack[top] = k
                top += 1
    return right


@njit(cache=True)
def predict_forests(XT, kind, var, cut, miss_left, value, right, tree_start, draw_start, n_draws,
                    out_sum, out_prob):
    """Average of Phi(sum of trees) over draws; also the mean latent sum.

    ``XT`` is the predictor matrix transposed (p, n) so a split reads a
    contiguous column.
    """
    n = XT.shape[1]
    s = np.zeros(n)
    for d in range(n_draws):
        s[:] = 0.0
        for t in range(draw_start[d], draw_start[d + 1]):
            root = tree_start[t]
            for i in range(n):
                k = root
                while kind[k] != LEAF:
                    if goes_left(XT[var[k], i], kind[k], cut[k], miss_left[k]):
                        k = k + 1
                    else:
                        k = right[k]
                s[i] += value[k]
        for i in range(n):
            out_sum[i] += s[i]
            out_prob[i] += 0.5 * math.erfc(-s[i] / SQRT2)
    for i in range(n):
        out_sum[i] /= n_draws
        out_prob[i] /= n_draws


@njit(cache=True)
def route_leaves(X, kind, var, cut, miss_left, right, root):
    """Leaf index reached by each row in one preorder tree."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        k = root
        while kind[k] != LEAF:
            if goes_left(X[i, var[k]], kind[k], cut[k], miss_left[k]):
                k = k + 1
            else:
                k = right[k]
        out[i] = k
    return out
