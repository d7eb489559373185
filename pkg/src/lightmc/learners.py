"""Per-column regression base learners.

Every code column j gets one learner trained against targets
M[label_i, j]. Two kinds are built in: gradient-boosted regression trees
(exact greedy splits on sparse rows, one tree per outer round, predictions
are the shrinkage-scaled sum of tree outputs) and a per-instance SGD linear
model. Columns are independent and may be fitted in parallel.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .codebook import CodingMatrix
from .data_io import SparseDataset
from .errors import (
    DimensionMismatch,
    EmptyDataset,
    IndexOutOfRange,
    InvalidArg,
    NonFiniteGradient,
    ParseError,
)

BOOSTED_TREES = "boosted_trees"
LINEAR_SGD = "linear_sgd"
_KINDS = (BOOSTED_TREES, LINEAR_SGD)

_HEADER = "lightmc-ensemble"


@dataclass(frozen=True)
class LearnerSpec:
    """Hyperparameters shared by all columns.

    learning_rate is the boosting shrinkage for trees and the SGD step size
    for the linear learner. epochs_per_round only affects the linear kind.
    """

    kind: str = BOOSTED_TREES
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_samples_leaf: int = 1
    epochs_per_round: int = 1

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise InvalidArg(f"unknown learner kind {self.kind!r}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise InvalidArg(
                f"learning rate must be in (0, 1], got {self.learning_rate}"
            )
        if self.max_leaves < 2:
            raise InvalidArg(f"max_leaves must be >= 2, got {self.max_leaves}")
        if self.min_samples_leaf < 1:
            raise InvalidArg(
                f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}"
            )
        if self.epochs_per_round < 1:
            raise InvalidArg(
                f"epochs_per_round must be >= 1, got {self.epochs_per_round}"
            )


# ---------------------------------------------------------------------------
# regression trees


class _Tree:
    """Array-encoded binary regression tree. feature == -1 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    def predict(self, data: SparseDataset, rows: np.ndarray | None = None) -> np.ndarray:
        if rows is None:
            rows = np.arange(data.num_rows)
        out = np.empty(rows.shape[0])
        stack = [(0, rows, np.arange(rows.shape[0]))]
        while stack:
            nid, rr, pp = stack.pop()
            if self.feature[nid] < 0:
                out[pp] = self.value[nid]
            elif rr.size:
                mask = _left_mask(
                    data, rr, int(self.feature[nid]), float(self.threshold[nid])
                )
                stack.append((int(self.left[nid]), rr[mask], pp[mask]))
                stack.append((int(self.right[nid]), rr[~mask], pp[~mask]))
        return out


def _left_mask(
    data: SparseDataset, rows: np.ndarray, feature: int, threshold: float
) -> np.ndarray:
    """Boolean mask over `rows` (sorted ascending): x[row, feature] <= threshold.

    Rows without a stored entry take the implicit value 0.
    """
    col_indptr, col_rows, col_vals = data.columns
    lo, hi = col_indptr[feature], col_indptr[feature + 1]
    crows = col_rows[lo:hi]
    cvals = col_vals[lo:hi]
    mask = np.full(rows.shape[0], 0.0 <= threshold)
    pos = np.searchsorted(rows, crows)
    hit = pos < rows.shape[0]
    hit[hit] = rows[pos[hit]] == crows[hit]
    mask[pos[hit]] = cvals[hit] <= threshold
    return mask


def _best_split(data, rows, row_residuals, total_sum, spec):
    """Best variance-reduction split of a node, or None.

    Convenience wrapper over the presorted search; `row_residuals` is
    aligned with `rows`.
    """
    sf, sv, srow = data.sorted_entries
    in_node = np.zeros(data.num_rows, dtype=bool)
    in_node[rows] = True
    ents = np.flatnonzero(in_node[srow])
    res_full = np.zeros(data.num_rows)
    res_full[rows] = row_residuals
    return _best_split_sorted(sf, sv, srow, ents, rows, res_full, total_sum, spec)


def _best_split_sorted(sf, sv, srow, ents, rows, res_full, total_sum, spec):
    """Split search over a node's slice of the presorted entry arrays.

    `ents` indexes (sf, sv, srow) and is ascending, so the node's entries
    arrive sorted by (feature, value) with no per-node sort. The implicit
    zero block of each feature is spliced in as one synthetic group between
    its negative and nonnegative stored values, so thresholds on either
    side of zero are all evaluated. Ties break toward the lowest feature
    index, then the lowest threshold.
    """
    n = rows.shape[0]
    msl = spec.min_samples_leaf
    if n < 2 * msl or ents.size == 0:
        return None
    f = sf[ents]
    v = sv[ents]
    r = res_full[srow[ents]]

    seg_start = np.flatnonzero(np.concatenate(([True], f[1:] != f[:-1])))
    seg_end = np.concatenate((seg_start[1:], [f.size]))
    uniq = f[seg_start]
    csum = np.concatenate(([0.0], np.cumsum(r)))
    nnz_sum = csum[seg_end] - csum[seg_start]
    nnz_cnt = (seg_end - seg_start).astype(np.float64)
    zero_cnt = n - nnz_cnt
    zero_sum = total_sum - nnz_sum

    zmask = zero_cnt > 0
    if zmask.any():
        cneg = np.concatenate(([0], np.cumsum(v < 0.0)))
        insert_at = (seg_start + (cneg[seg_end] - cneg[seg_start]))[zmask]
        ef = np.insert(f, insert_at, uniq[zmask])
        ev = np.insert(v, insert_at, 0.0)
        er = np.insert(r, insert_at, zero_sum[zmask])
        ec = np.insert(np.ones(f.size), insert_at, zero_cnt[zmask])
    else:
        ef, ev, er, ec = f, v, r, np.ones(f.size)

    # merge duplicate (feature, value) groups, including stored zeros
    fresh = np.concatenate(([True], (ef[1:] != ef[:-1]) | (ev[1:] != ev[:-1])))
    gidx = np.flatnonzero(fresh)
    gf = ef[gidx]
    gv = ev[gidx]
    gr = np.add.reduceat(er, gidx)
    gc = np.add.reduceat(ec, gidx)

    gstart = np.concatenate(([True], gf[1:] != gf[:-1]))
    seg_id = np.cumsum(gstart) - 1
    starts = np.flatnonzero(gstart)
    cum_r = np.cumsum(gr)
    cum_c = np.cumsum(gc)
    left_r = cum_r - (cum_r[starts] - gr[starts])[seg_id]
    left_c = cum_c - (cum_c[starts] - gc[starts])[seg_id]

    cand = np.flatnonzero(np.concatenate((gf[1:] == gf[:-1], [False])))
    if cand.size == 0:
        return None
    n_left = left_c[cand]
    s_left = left_r[cand]
    n_right = n - n_left
    s_right = total_sum - s_left
    ok = (n_left >= msl) & (n_right >= msl)
    if not ok.any():
        return None
    parent = total_sum * total_sum / n
    gain = np.full(cand.shape[0], -np.inf)
    gain[ok] = (
        s_left[ok] ** 2 / n_left[ok] + s_right[ok] ** 2 / n_right[ok] - parent
    )
    best = int(np.argmax(gain))  # first max: lowest feature, then lowest threshold
    if gain[best] <= 1e-12 * (1.0 + abs(parent)):
        return None
    lo_v, hi_v = gv[cand[best]], gv[cand[best] + 1]
    thr = 0.5 * (lo_v + hi_v)
    if thr >= hi_v:  # midpoint rounded up to the right value; keep the cut exact
        thr = lo_v
    return float(gain[best]), int(gf[cand[best]]), float(thr)


def _apply_split(sf, sv, srow, ents, rows, feature, threshold, side_full):
    """Write each node row's split side into the scratch buffer `side_full`.

    `side_full` is indexed by global row id; only positions of `rows` are
    written. Rows without a stored entry at `feature` take the implicit
    value 0.
    """
    side_full[rows] = 0.0 <= threshold
    sel = ents[sf[ents] == feature]
    if sel.size:
        side_full[srow[sel]] = sv[sel] <= threshold


def _fit_tree(data, residuals, spec):
    """Grow one least-squares tree best-first under the leaf cap.

    Returns (tree, per-row training predictions).
    """
    n = data.num_rows
    sf, sv, srow = data.sorted_entries
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [float(residuals.mean())]
    leaf_rows: dict[int, np.ndarray] = {0: np.arange(n)}
    leaf_ents: dict[int, np.ndarray] = {0: np.arange(sf.shape[0])}
    side_full = np.empty(n, dtype=bool)
    counter = itertools.count()
    candidates: list[tuple[float, int, int, int, float]] = []

    def consider(node_id: int) -> None:
        rows_n = leaf_rows[node_id]
        split = _best_split_sorted(
            sf, sv, srow, leaf_ents[node_id], rows_n, residuals,
            float(residuals[rows_n].sum()), spec,
        )
        if split is not None:
            gain, feat, thr = split
            candidates.append((gain, next(counter), node_id, feat, thr))

    consider(0)
    leaves = 1
    while leaves < spec.max_leaves and candidates:
        best_i = min(
            range(len(candidates)), key=lambda i: (-candidates[i][0], candidates[i][1])
        )
        _, _, node_id, feat, thr = candidates.pop(best_i)
        rows_n = leaf_rows.pop(node_id)
        ents_n = leaf_ents.pop(node_id)
        _apply_split(sf, sv, srow, ents_n, rows_n, feat, thr, side_full)
        side = side_full[rows_n]
        rows_l, rows_r = rows_n[side], rows_n[~side]
        ent_side = side_full[srow[ents_n]]
        lid, rid = len(feature), len(feature) + 1
        for child_rows in (rows_l, rows_r):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(residuals[child_rows].mean()))
        feature[node_id] = feat
        threshold[node_id] = thr
        left[node_id] = lid
        right[node_id] = rid
        leaf_rows[lid] = rows_l
        leaf_rows[rid] = rows_r
        leaf_ents[lid] = ents_n[ent_side]
        leaf_ents[rid] = ents_n[~ent_side]
        consider(lid)
        consider(rid)
        leaves += 1

    preds = np.empty(n)
    for nid, rws in leaf_rows.items():
        preds[rws] = value[nid]
    return _Tree(feature, threshold, left, right, value), preds


# ---------------------------------------------------------------------------
# members


class _TreesMember:
    def __init__(self, spec: LearnerSpec):
        self.spec = spec
        self.trees: list[_Tree] = []
        self._cache_token: int | None = None
        self._cache_pred: np.ndarray | None = None

    def _current_train_pred(self, data: SparseDataset) -> np.ndarray:
        if self._cache_token != data.token or self._cache_pred is None:
            self._cache_pred = self.predict(data)
            self._cache_token = data.token
        return self._cache_pred

    def fit_round(self, data, targets, epoch_orders) -> None:
        current = self._current_train_pred(data)
        tree, leaf_pred = _fit_tree(data, targets - current, self.spec)
        self.trees.append(tree)
        self._cache_pred = current + self.spec.learning_rate * leaf_pred

    def predict(self, data, rows=None) -> np.ndarray:
        n = data.num_rows if rows is None else rows.shape[0]
        out = np.zeros(n)
        for tree in self.trees:
            out += tree.predict(data, rows)
        return self.spec.learning_rate * out

    def predict_stage(self, data, stage: int) -> np.ndarray:
        return self.spec.learning_rate * self.trees[stage].predict(data)


class _LinearMember:
    def __init__(self, spec: LearnerSpec, num_features: int):
        self.spec = spec
        self.weights = np.zeros(num_features)
        self.bias = 0.0

    def fit_round(self, data, targets, epoch_orders) -> None:
        lr = self.spec.learning_rate
        w = self.weights
        b = self.bias
        for order in epoch_orders:
            for i in order:
                js, vs = data.row(i)
                g = float(w[js] @ vs) + b - targets[i]
                w[js] -= lr * g * vs
                b -= lr * g
        if not (np.isfinite(b) and np.all(np.isfinite(w))):
            raise NonFiniteGradient(
                "linear learner diverged; lower the learning rate"
            )
        self.bias = b

    def predict(self, data, rows=None) -> np.ndarray:
        contrib = self.weights[data.indices] * data.values
        out = (
            np.bincount(data._row_ids, weights=contrib, minlength=data.num_rows)
            + self.bias
        )
        return out if rows is None else out[rows]


# ---------------------------------------------------------------------------
# ensemble


@dataclass
class BaseLearnerEnsemble:
    """L independent column learners plus bookkeeping for reproducibility."""

    members: list
    is_boosting: bool
    spec: LearnerSpec
    num_features: int
    seed: int
    rounds_done: int = 0

    @property
    def code_length(self) -> int:
        return len(self.members)


def new_ensemble(
    code_length: int, spec: LearnerSpec, num_features: int, seed: int = 0
) -> BaseLearnerEnsemble:
    spec.validate()
    if code_length < 1:
        raise InvalidArg(f"code length must be >= 1, got {code_length}")
    if num_features < 1:
        raise InvalidArg(f"num_features must be >= 1, got {num_features}")
    if spec.kind == BOOSTED_TREES:
        members = [_TreesMember(spec) for _ in range(code_length)]
    else:
        members = [_LinearMember(spec, num_features) for _ in range(code_length)]
    return BaseLearnerEnsemble(
        members=members,
        is_boosting=spec.kind == BOOSTED_TREES,
        spec=spec,
        num_features=num_features,
        seed=seed,
    )


def make_targets(matrix: CodingMatrix, labels: np.ndarray, column: int) -> np.ndarray:
    """Regression targets of one column: the labelled row's entry there."""
    if not 0 <= column < matrix.code_length:
        raise IndexOutOfRange(f"column {column} not in [0, {matrix.code_length})")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= matrix.num_classes):
        raise IndexOutOfRange(f"labels must lie in [0, {matrix.num_classes})")
    return matrix.entries[labels, column]


def train_round(
    ensemble: BaseLearnerEnsemble,
    data: SparseDataset,
    matrix: CodingMatrix,
    spec: LearnerSpec | None = None,
    threads: int = 1,
) -> BaseLearnerEnsemble:
    """Train every column for one round against the current matrix.

    Trees fit one new stage to residuals; the linear learner runs its SGD
    epochs from its current weights. The per-epoch instance order is shared
    across columns so permuting columns permutes outputs exactly.
    """
    spec = ensemble.spec if spec is None else spec
    if data.num_rows == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if matrix.code_length != ensemble.code_length:
        raise DimensionMismatch(
            f"matrix has {matrix.code_length} columns, ensemble has "
            f"{ensemble.code_length}"
        )
    if data.num_features != ensemble.num_features:
        raise DimensionMismatch(
            f"data has {data.num_features} features, ensemble expects "
            f"{ensemble.num_features}"
        )
    epoch_orders: list[np.ndarray] = []
    if not ensemble.is_boosting:
        rng = np.random.default_rng([ensemble.seed, 7919, ensemble.rounds_done])
        epoch_orders = [rng.permutation(data.num_rows) for _ in range(spec.epochs_per_round)]
    else:
        data.sorted_entries  # build the shared sorted view outside worker threads

    def fit_column(j: int) -> None:
        ensemble.members[j].fit_round(
            data, make_targets(matrix, data.labels, j), epoch_orders
        )

    _run_columns(fit_column, ensemble.code_length, threads)
    ensemble.rounds_done += 1
    return ensemble


def predict_all(
    ensemble: BaseLearnerEnsemble, data: SparseDataset, threads: int = 1
) -> np.ndarray:
    """Outputs of every column on every instance, shape (N, L)."""
    if data.num_features != ensemble.num_features:
        raise DimensionMismatch(
            f"data has {data.num_features} features, ensemble expects "
            f"{ensemble.num_features}"
        )
    out = np.zeros((data.num_rows, ensemble.code_length))
    data.columns

    def predict_column(j: int) -> None:
        out[:, j] = ensemble.members[j].predict(data)

    _run_columns(predict_column, ensemble.code_length, threads)
    return out


def accumulate_round_outputs(
    ensemble: BaseLearnerEnsemble, data: SparseDataset, buffer: np.ndarray
) -> None:
    """Refresh an output buffer after one train_round.

    Boosting adds only the newest stage; the linear learner recomputes its
    column. The buffer must have been kept current since round zero.
    """
    if buffer.shape != (data.num_rows, ensemble.code_length):
        raise DimensionMismatch(
            f"buffer shape {buffer.shape}, expected "
            f"({data.num_rows}, {ensemble.code_length})"
        )
    for j, member in enumerate(ensemble.members):
        if ensemble.is_boosting:
            if member._cache_token == data.token and member._cache_pred is not None:
                buffer[:, j] = member._cache_pred  # training data: grower already has it
            else:
                buffer[:, j] += member.predict_stage(data, -1)
        else:
            buffer[:, j] = member.predict(data)


def _run_columns(job, code_length: int, threads: int) -> None:
    if threads > 1 and code_length > 1:
        with ThreadPoolExecutor(max_workers=min(threads, code_length)) as pool:
            list(pool.map(job, range(code_length)))
    else:
        for j in range(code_length):
            job(j)


# ---------------------------------------------------------------------------
# serialization


def save_ensemble(ensemble: BaseLearnerEnsemble, path) -> None:
    """Versioned text dump; trees are listed in pre-order."""
    spec = ensemble.spec
    lines = [f"{_HEADER} v1 {ensemble.code_length} {spec.kind}"]
    lines.append(f"alpha {spec.learning_rate!r}")
    lines.append(f"features {ensemble.num_features}")
    for j, member in enumerate(ensemble.members):
        if isinstance(member, _TreesMember):
            lines.append(f"member {j} {len(member.trees)}")
            for t, tree in enumerate(member.trees):
                _dump_tree(tree, t, lines)
        else:
            lines.append(f"member {j}")
            weights = " ".join(repr(float(w)) for w in member.weights)
            lines.append(f"weights {member.weights.shape[0]} {weights}".rstrip())
            lines.append(f"bias {float(member.bias)!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _dump_tree(tree: _Tree, index: int, lines: list[str]) -> None:
    order = []
    stack = [0]
    while stack:
        nid = stack.pop()
        order.append(nid)
        if tree.feature[nid] >= 0:
            stack.append(int(tree.right[nid]))
            stack.append(int(tree.left[nid]))
    remap = {old: new for new, old in enumerate(order)}
    lines.append(f"tree {index} {len(order)}")
    for old in order:
        if tree.feature[old] >= 0:
            lines.append(
                f"{remap[old]} {int(tree.feature[old])} "
                f"{float(tree.threshold[old])!r} "
                f"{remap[int(tree.left[old])]} {remap[int(tree.right[old])]} "
                f"{float(tree.value[old])!r}"
            )
        else:
            lines.append(f"{remap[old]} -1 0.0 -1 -1 {float(tree.value[old])!r}")


def load_ensemble(path) -> BaseLearnerEnsemble:
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ParseError(f"{path}: empty ensemble file")
    head = raw[0].split()
    if len(head) != 4 or head[0] != _HEADER or head[1] != "v1":
        raise ParseError(f"{path}: bad ensemble header {raw[0]!r}", line=1)
    code_length = int(head[2])
    kind = head[3]
    if kind not in _KINDS:
        raise ParseError(f"{path}: unknown learner kind {kind!r}", line=1)
    try:
        alpha = float(raw[1].split()[1])
        num_features = int(raw[2].split()[1])
    except (IndexError, ValueError):
        raise ParseError(f"{path}: bad ensemble property lines") from None
    spec = LearnerSpec(kind=kind, learning_rate=alpha)
    ensemble = new_ensemble(code_length, spec, num_features)
    pos = 3
    try:
        for j in range(code_length):
            parts = raw[pos].split()
            if parts[0] != "member" or int(parts[1]) != j:
                raise ParseError(f"{path}: expected member {j}", line=pos + 1)
            pos += 1
            if kind == BOOSTED_TREES:
                n_trees = int(parts[2])
                member = ensemble.members[j]
                for _ in range(n_trees):
                    tree, pos = _parse_tree(raw, pos, path)
                    member.trees.append(tree)
            else:
                wparts = raw[pos].split()
                n_w = int(wparts[1])
                weights = np.array([float(x) for x in wparts[2 : 2 + n_w]])
                if weights.shape[0] != n_w:
                    raise ParseError(f"{path}: truncated weights", line=pos + 1)
                pos += 1
                bias = float(raw[pos].split()[1])
                pos += 1
                ensemble.members[j].weights = weights
                ensemble.members[j].bias = bias
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: corrupt ensemble file ({exc})") from None
    return ensemble


def _parse_tree(raw: list[str], pos: int, path) -> tuple[_Tree, int]:
    parts = raw[pos].split()
    if parts[0] != "tree":
        raise ParseError(f"{path}: expected a tree header", line=pos + 1)
    n_nodes = int(parts[2])
    pos += 1
    feature = np.empty(n_nodes, dtype=np.int64)
    threshold = np.empty(n_nodes)
    left = np.empty(n_nodes, dtype=np.int64)
    right = np.empty(n_nodes, dtype=np.int64)
    value = np.empty(n_nodes)
    for i in range(n_nodes):
        fields = raw[pos + i].split()
        nid = int(fields[0])
        feature[nid] = int(fields[1])
        threshold[nid] = float(fields[2])
        left[nid] = int(fields[3])
        right[nid] = int(fields[4])
        value[nid] = float(fields[5])
    return _Tree(feature, threshold, left, right, value), pos + n_nodes
