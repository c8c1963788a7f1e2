"""Pick (N, s) under an accuracy-loss budget from sparse measurements.

Accuracy is modelled per task by piecewise-bilinear interpolation over a
rectangular knot grid of (N > 1, s > 0) measurements; rows with N = 1 or
s = 0 (pruned-only, multiplexed-only, baseline) are used as measured.
Throughput is a lookup table from one reference task applied to all tasks.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

# accuracies within this of the threshold count as meeting it; below any
# meaningful measurement precision, above float round-off in xi = acc - budget
FEASIBILITY_TOL = 1e-9
DEFAULT_BUDGETS = tuple(round(0.005 * i, 3) for i in range(21))


class PlannerError(ValueError):
    pass


class IncompleteGridError(PlannerError):
    pass


class DuplicateMeasurementError(PlannerError):
    pass


class DegenerateGridError(PlannerError):
    pass


class OutOfDomainError(PlannerError):
    pass


class MissingMeasurementError(PlannerError, KeyError):
    pass


def key(n, s) -> tuple[int, float]:
    return int(n), round(float(s), 6)


@dataclass(frozen=True)
class MeasurementRecord:
    task: str
    n: int
    sparsity: float
    accuracy: float
    throughput: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"N must be >= 1, got {self.n}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity {self.sparsity} outside [0, 1]")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if not self.throughput > 0:
            raise ValueError(f"throughput multiplier must be positive, got {self.throughput}")

    @property
    def key(self):
        return key(self.n, self.sparsity)


def _task_records(records, task: str | None) -> tuple[str, dict]:
    tasks = sorted({r.task for r in records})
    if task is None:
        if len(tasks) != 1:
            raise PlannerError(f"records hold several tasks {tasks}; name one")
        task = tasks[0]
    table = {}
    for r in records:
        if r.task != task:
            continue
        if r.key in table:
            raise DuplicateMeasurementError(f"duplicate measurement for {task} at (N, s) = {r.key}")
        table[r.key] = r
    if not table:
        raise PlannerError(f"no records for task {task!r}")
    return task, table


def _bilinear(n0, n1, s0, s1, f00, f10, f01, f11, n, s):
    """Lagrange form; f_ab is the value at (n_a, s_b)."""
    tn = (n - n0) / (n1 - n0)
    ts = (s - s0) / (s1 - s0)
    return (f00 * (1 - tn) * (1 - ts) + f10 * tn * (1 - ts)
            + f01 * (1 - tn) * ts + f11 * tn * ts)


@dataclass
class AccuracyModel:
    """Bilinear pieces over cells [N_i, N_i+1] x [s_j, s_j+1].

    ``coeffs[i, j, a, b]`` multiplies N**a * s**b in cell (i, j).
    Evaluation uses the equivalent corner-weight form, which is exact at
    the knots.
    """

    task: str
    n_knots: np.ndarray
    s_knots: np.ndarray
    grid: np.ndarray  # (p, q) measured accuracy at (n_knots[i], s_knots[j])
    coeffs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.n_knots = np.asarray(self.n_knots, dtype=np.float64)
        self.s_knots = np.asarray(self.s_knots, dtype=np.float64)
        self.grid = np.asarray(self.grid, dtype=np.float64)
        p, q = len(self.n_knots), len(self.s_knots)
        if p < 2 or q < 2:
            raise DegenerateGridError(f"need at least a 2x2 knot grid, got {p}x{q}")
        if np.any(np.diff(self.n_knots) <= 0) or np.any(np.diff(self.s_knots) <= 0):
            raise DegenerateGridError("knots must be strictly increasing")
        if self.grid.shape != (p, q):
            raise DegenerateGridError(f"grid shape {self.grid.shape} != ({p}, {q})")
        self.coeffs = _cell_coefficients(self.n_knots, self.s_knots, self.grid)

    def contains(self, n, s) -> bool:
        return (self.n_knots[0] <= n <= self.n_knots[-1]) and (self.s_knots[0] <= s <= self.s_knots[-1])

    def __call__(self, n, s) -> float:
        if not self.contains(n, s):
            raise OutOfDomainError(f"({n}, {s}) lies outside the knot hull of {self.task}")
        i = min(np.searchsorted(self.n_knots, n, side="right") - 1, len(self.n_knots) - 2)
        j = min(np.searchsorted(self.s_knots, s, side="right") - 1, len(self.s_knots) - 2)
        g, N, S = self.grid, self.n_knots, self.s_knots
        return float(_bilinear(N[i], N[i + 1], S[j], S[j + 1],
                               g[i, j], g[i + 1, j], g[i, j + 1], g[i + 1, j + 1], n, s))

    def polynomial(self, n, s) -> float:
        """Evaluate via the stored k_ab coefficients (same surface, more round-off)."""
        i = min(np.searchsorted(self.n_knots, n, side="right") - 1, len(self.n_knots) - 2)
        j = min(np.searchsorted(self.s_knots, s, side="right") - 1, len(self.s_knots) - 2)
        k = self.coeffs[max(i, 0), max(j, 0)]
        return float(k[0, 0] + k[1, 0] * n + k[0, 1] * s + k[1, 1] * n * s)


def _cell_coefficients(N, S, g) -> np.ndarray:
    p, q = g.shape
    out = np.zeros((p - 1, q - 1, 2, 2))
    for i in range(p - 1):
        for j in range(q - 1):
            n0, n1, s0, s1 = N[i], N[i + 1], S[j], S[j + 1]
            f00, f10, f01, f11 = g[i, j], g[i + 1, j], g[i, j + 1], g[i + 1, j + 1]
            D = (n1 - n0) * (s1 - s0)
            out[i, j, 0, 0] = (f00 * n1 * s1 - f10 * n0 * s1 - f01 * n1 * s0 + f11 * n0 * s0) / D
            out[i, j, 1, 0] = (-f00 * s1 + f10 * s1 + f01 * s0 - f11 * s0) / D
            out[i, j, 0, 1] = (-f00 * n1 + f10 * n0 + f01 * n1 - f11 * n0) / D
            out[i, j, 1, 1] = (f00 - f10 - f01 + f11) / D
    return out


def fit_accuracy(records, task: str | None = None, n_knots=None, s_knots=None) -> AccuracyModel:
    """Interpolating model over the (N > 1, s > 0) records of one task.

    ``n_knots``/``s_knots`` restrict the fit to a training sub-grid (rows off
    it stay available as measurements); by default every such record is a
    knot. The knots used must fill a complete rectangular grid.
    """
    task, table = _task_records(records, task)
    pts = {k: r.accuracy for k, r in table.items() if k[0] > 1 and k[1] > 0}
    if n_knots is not None or s_knots is not None:
        ns = {key(n, 0)[0] for n in n_knots} if n_knots is not None else {k[0] for k in pts}
        ss = {key(1, s)[1] for s in s_knots} if s_knots is not None else {k[1] for k in pts}
        missing = sorted((n, s) for n in ns for s in ss if (n, s) not in pts)
        if missing:
            raise IncompleteGridError(f"{task}: grid is missing cells {missing}")
        pts = {k: v for k, v in pts.items() if k[0] in ns and k[1] in ss}
    ns = sorted({k[0] for k in pts})
    ss = sorted({k[1] for k in pts})
    if len(ns) < 2 or len(ss) < 2:
        raise DegenerateGridError(f"{task}: need >= 2 widths and >= 2 sparsities, got {len(ns)}x{len(ss)}")
    missing = [(n, s) for n in ns for s in ss if (n, s) not in pts]
    if missing:
        raise IncompleteGridError(f"{task}: grid is missing cells {missing}")
    grid = np.array([[pts[(n, s)] for s in ss] for n in ns])
    return AccuracyModel(task, np.array(ns, dtype=np.float64), np.array(ss), grid)


def eval_accuracy(model: AccuracyModel, records, n, s) -> float:
    """Measured value for N = 1 or s = 0, otherwise the interpolated one."""
    k = key(n, s)
    if k[0] == 1 or k[1] == 0:
        _, table = _task_records(records, model.task)
        if k not in table:
            raise MissingMeasurementError(f"{model.task}: no measurement at (N, s) = {k}")
        return table[k].accuracy
    return model(n, s)


@dataclass
class ThroughputModel:
    reference_task: str
    table: dict

    def __call__(self, n, s) -> float:
        k = key(n, s)
        if k not in self.table:
            raise MissingMeasurementError(f"reference task {self.reference_task} has no throughput at {k}")
        return self.table[k]


def fit_throughput(records, reference_task: str) -> ThroughputModel:
    _, table = _task_records(records, reference_task)
    return ThroughputModel(reference_task, {k: r.throughput for k, r in table.items()})


def eval_throughput(model: ThroughputModel, n, s) -> float:
    return model(n, s)


def zeta(acc: float, throughput: float, xi: float) -> float:
    """Throughput if the accuracy meets the threshold, else 0."""
    return throughput if acc >= xi - FEASIBILITY_TOL else 0.0


@dataclass(frozen=True)
class PlannerQuery:
    budget: float
    candidates: tuple
    k: int = 3

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("accuracy-loss budget must be >= 0")
        if not self.candidates:
            raise ValueError("candidate set is empty")


@dataclass(frozen=True)
class Prediction:
    n: int
    sparsity: float
    accuracy: float
    throughput: float
    score: float


def baseline_accuracy(records, task: str) -> float:
    _, table = _task_records(records, task)
    if (1, 0.0) not in table:
        raise MissingMeasurementError(f"{task}: baseline row (N=1, s=0) is required")
    return table[(1, 0.0)].accuracy


def rank(scored) -> list:
    """Drop zero scores; order by score desc, then smaller N, then smaller s."""
    return sorted((p for p in scored if p.score > 0), key=lambda p: (-p.score, p.n, p.sparsity))


def predict_topk(acc_model: AccuracyModel, thr_model: ThroughputModel, records, query: PlannerQuery) -> list[Prediction]:
    xi = baseline_accuracy(records, acc_model.task) - query.budget
    scored = []
    for n, s in query.candidates:
        n, s = key(n, s)
        a = eval_accuracy(acc_model, records, n, s)
        t = thr_model(n, s)
        scored.append(Prediction(n, s, a, t, zeta(a, t, xi)))
    return rank(scored)[:query.k]


# model quality

def _line(x0, y0, x1, y1, x):
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def _loocv_local(N, S, g) -> np.ndarray:
    def axis_pair(i, size):
        if 0 < i < size - 1:
            return i - 1, i + 1
        return (1, 2) if i == 0 else (size - 2, size - 3)

    p, q = g.shape
    out = np.empty_like(g)
    for i in range(p):
        for j in range(q):
            if 0 < i < p - 1 and 0 < j < q - 1:
                out[i, j] = _bilinear(N[i - 1], N[i + 1], S[j - 1], S[j + 1],
                                      g[i - 1, j - 1], g[i + 1, j - 1], g[i - 1, j + 1], g[i + 1, j + 1],
                                      N[i], S[j])
                continue
            a, b = axis_pair(i, p)
            along_n = _line(N[a], g[a, j], N[b], g[b, j], N[i])
            a, b = axis_pair(j, q)
            along_s = _line(S[a], g[i, a], S[b], g[i, b], S[j])
            out[i, j] = 0.5 * (along_n + along_s)
    return out


def _loocv_median(N, S, g) -> np.ndarray:
    p, q = g.shape
    rows = np.array(list(itertools.combinations(range(p), 2)))
    cols = np.array(list(itertools.combinations(range(q), 2)))
    a, b = np.repeat(rows, len(cols), axis=0).T
    c, d = np.tile(cols, (len(rows), 1)).T
    out = np.empty_like(g)
    for i in range(p):
        for j in range(q):
            keep = ~(((a == i) | (b == i)) & ((c == j) | (d == j)))
            est = _bilinear(N[a], N[b], S[c], S[d], g[a, c], g[b, c], g[a, d], g[b, d], N[i], S[j])
            out[i, j] = np.median(est[keep])
    return out


def loocv_predictions(model: AccuracyModel, policy: str = "median") -> np.ndarray:
    """Predict every knot from the others; returns a (p, q) array.

    ``policy="median"`` takes the median over every bilinear patch whose
    four corners are remaining knots (interpolating or extrapolating).
    Each patch reproduces bilinear surfaces exactly, and one bad knot
    shifts only patches that use it, so it cannot drag its neighbours'
    predictions off.

    ``policy="local"`` uses the nearest stencil instead: interior knots
    from the bilinear patch through their four diagonal neighbours,
    boundary knots from one linear estimate per axis (extrapolating from
    the two nearest knots where needed), averaged. Extrapolation weights
    reach 2, so an outlier also fails the knots next to it.
    """
    N, S, g = model.n_knots, model.s_knots, model.grid
    p, q = g.shape
    if p < 3 or q < 3:
        raise DegenerateGridError(f"leave-one-out needs at least a 3x3 grid, got {p}x{q}")
    if policy == "median":
        return _loocv_median(N, S, g)
    if policy == "local":
        return _loocv_local(N, S, g)
    raise ValueError(f"unknown leave-one-out policy {policy!r}")


def loocv_accuracy(model: AccuracyModel, delta: float = 0.015, policy: str = "median") -> float:
    """Fraction of held-out knots predicted within ``delta`` of the measurement (M_A)."""
    err = np.abs(loocv_predictions(model, policy) - model.grid)
    return float(np.mean(err <= delta + FEASIBILITY_TOL))


def eval_throughput_model(thr_model: ThroughputModel, records, task: str | None = None, band: float = 0.20) -> float:
    """Fraction of a task's measured pairs whose lookup lies within ``band`` relative error (M_T)."""
    _, table = _task_records(records, task)
    pairs = [k for k in table if k in thr_model.table]
    if not pairs:
        raise DegenerateGridError("no (N, s) pairs shared between the task and the reference table")
    hits = sum(abs(thr_model.table[k] / table[k].throughput - 1.0) <= band + FEASIBILITY_TOL for k in pairs)
    return hits / len(pairs)


@dataclass
class SweepRow:
    budget: float
    predicted: list
    oracle: Prediction | None
    hit: bool
    feasibility_agrees: bool


@dataclass
class SweepResult:
    rows: list

    @property
    def hit_rate(self) -> float:
        return sum(r.hit for r in self.rows) / len(self.rows)

    @property
    def feasibility_exact(self) -> bool:
        return all(r.feasibility_agrees for r in self.rows)


def budget_sweep(acc_model: AccuracyModel, thr_model: ThroughputModel, records, candidates, truth,
                 budgets=DEFAULT_BUDGETS, k: int = 3) -> SweepResult:
    """Top-k predictions per budget, scored against an exhaustive oracle.

    ``truth`` maps each candidate (N, s) to its true (accuracy, throughput);
    it must include the baseline (1, 0). A budget is a hit when the oracle's
    best feasible candidate appears among the top-k predictions.
    """
    truth = {key(*c): v for c, v in truth.items()}
    if (1, 0.0) not in truth:
        raise MissingMeasurementError("truth table needs the baseline (1, 0)")
    cands = [key(*c) for c in candidates]
    base_pred = baseline_accuracy(records, acc_model.task)
    pred_acc = {c: eval_accuracy(acc_model, records, *c) for c in cands}
    rows = []
    for b in budgets:
        xi_pred = base_pred - b
        xi_true = truth[(1, 0.0)][0] - b
        predicted = rank(Prediction(n, s, pred_acc[(n, s)], thr_model(n, s),
                                    zeta(pred_acc[(n, s)], thr_model(n, s), xi_pred)) for n, s in cands)[:k]
        oracle_all = rank(Prediction(n, s, truth[(n, s)][0], truth[(n, s)][1],
                                     zeta(truth[(n, s)][0], truth[(n, s)][1], xi_true)) for n, s in cands)
        oracle = oracle_all[0] if oracle_all else None
        hit = (not predicted) if oracle is None else any((p.n, p.sparsity) == (oracle.n, oracle.sparsity)
                                                        for p in predicted)
        agrees = all((pred_acc[c] >= xi_pred - FEASIBILITY_TOL) == (truth[c][0] >= xi_true - FEASIBILITY_TOL)
                     for c in cands)
        rows.append(SweepRow(b, predicted, oracle, hit, agrees))
    return SweepResult(rows)


def truth_from_records(records, task: str | None = None) -> dict:
    """{(N, s): (accuracy, throughput)} from a task's measured rows."""
    _, table = _task_records(records, task)
    return {k: (r.accuracy, r.throughput) for k, r in table.items()}
