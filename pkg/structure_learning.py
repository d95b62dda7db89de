"""
Structure learning for the risk-factor DAG.

Only graphs whose likelihood needs no numerical integration are visited:
the reduced space of graphs where every conditional CDF demanded by the
pair-copula construction is reachable by h-function recursion. Graphs are
scored by an approximate BIC built from sequential copula estimates and
sampled with a Metropolis-Hastings chain over single-edge additions and
deletions. Edge features, CPDAGs and classification metrics evaluate the
sampled graphs against a known truth.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from data_model import CopulaParams, Dag, DagCopulaKey, GarchParams, InvalidInputError, ReturnPanel
from estimation import GewekeResult, SequentialDagFitter, geweke_burnin
from pcc_engine import marginal_pits
from simulate import make_rng
from tcopula import DEFAULT_M_SC

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.01, 0.10, 0.50, 0.90, 0.99)


def cumulative_parent_test(dag: Dag, i: int, k: int) -> bool:
    """
    Whether F(i[k] | i[1..k-1]) is reachable by h-recursion.

    pi starts as the first k parents of i. Each round intersects the parents
    of pi's last element with the rest of pi: an empty intersection passes,
    a leading run of that element's parents continues with the intersection,
    anything else fails.
    """
    parents = dag.parents(i)
    if not 1 <= k <= len(parents):
        raise InvalidInputError(f"k={k} outside 1..{len(parents)} for node {i}")
    pi = parents[:k]
    while True:
        plus, minus = pi[-1], set(pi[:-1])
        plus_parents = dag.parents(plus)
        tilde = tuple(x for x in plus_parents if x in minus)
        if not tilde:
            return True
        if tilde != plus_parents[:len(tilde)]:
            return False
        pi = tilde


def reduced_space_violations(dag: Dag) -> List[Tuple[int, int]]:
    """Every (node, k) whose cumulative parent test fails, k 1-based"""
    return [(i, k) for i in dag.order for k in range(1, len(dag.parents(i)) + 1)
            if not cumulative_parent_test(dag, i, k)]


def in_reduced_space(dag: Dag) -> bool:
    return all(cumulative_parent_test(dag, i, k)
               for i in dag.order for k in range(1, len(dag.parents(i)) + 1))


def neighborhood(dag: Dag) -> List[Dag]:
    """Graphs one edge addition or deletion away, acyclic and in the reduced space"""
    found = []
    for i in range(dag.m):
        for j in range(dag.m):
            if i == j:
                continue
            if dag.has_edge(i, j):
                candidate = dag.without_edge(i, j)
            elif dag.has_edge(j, i):
                continue
            else:
                candidate = dag.with_edge(i, j)
            if candidate is not None and in_reduced_space(candidate):
                found.append(candidate)
    return found


@dataclass
class ScoredGraph:
    dag: Dag
    bic: float
    loglik: float = 0.0
    theta2_tilde: Dict[DagCopulaKey, CopulaParams] = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return 4 * self.dag.n_edges


def score_from_fit(dag: Dag, loglik: float, T: int) -> float:
    """l2 at the sequential estimates minus (|theta2| / 2) log T, |theta2| = 4 per edge"""
    return float(loglik - 2.0 * dag.n_edges * np.log(T))


def bic_score(panel: ReturnPanel, marginals: Sequence[GarchParams], dag: Dag,
              fitter: Optional[SequentialDagFitter] = None, m_sc: int = DEFAULT_M_SC) -> ScoredGraph:
    """
    Approximate BIC of the factor DAG. Stock columns do not enter the score.

    Args:
        fitter: sequential fitter bound to this panel's factor PITs; pass the
                same one across calls to reuse node fits
    """
    if not in_reduced_space(dag):
        raise InvalidInputError(f"Graph {dag.edges()} is outside the reduced space")
    if fitter is None:
        pits = marginal_pits(panel.without_stocks(), marginals[:panel.m])
        fitter = SequentialDagFitter(pits.u, m_sc)
    fit = fitter.fit(Dag(dag.m, dag.adjacency))
    return ScoredGraph(dag, score_from_fit(dag, fit.loglik, panel.T), fit.loglik, fit.theta2)


@dataclass
class StructureChain:
    """Graph chain: graphs[0] is the start, graphs[n] the state after iteration n"""
    graphs: List[Dag]
    scores: np.ndarray
    accepted: np.ndarray
    neighborhood_sizes: np.ndarray

    @property
    def N(self) -> int:
        return len(self.graphs) - 1

    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else float('nan')


def structure_mcmc(panel: Optional[ReturnPanel], marginals: Optional[Sequence[GarchParams]],
                   init: Optional[Dag] = None, n_iter: int = 200, seed: int = 0,
                   fitter: Optional[SequentialDagFitter] = None, m_sc: int = DEFAULT_M_SC,
                   score: Optional[Callable[[Dag], float]] = None, m: Optional[int] = None,
                   progress: Optional[Callable[[int, int], None]] = None) -> StructureChain:
    """
    Metropolis-Hastings over the reduced DAG space.

    Proposals pick a neighbor uniformly; with a flat prior the acceptance
    ratio is exp(s' - s) |nbd(G)| / |nbd(G')|.

    Args:
        panel, marginals: data for the BIC score; unused when score is given
        init: start graph, empty by default
        score: graph score override (log scale)
        m: node count when neither panel nor init fixes it
    """
    if m is None:
        m = init.m if init is not None else panel.m
    current = Dag(m, init.adjacency) if init is not None else Dag.empty(m)
    if not in_reduced_space(current):
        raise InvalidInputError("Start graph is outside the reduced space")

    if score is None:
        if fitter is None:
            pits = marginal_pits(panel.without_stocks(), marginals[:panel.m])
            fitter = SequentialDagFitter(pits.u, m_sc)

        def score(dag: Dag) -> float:
            return score_from_fit(dag, fitter.fit(dag).loglik, panel.T)

    scores: Dict[bytes, float] = {}
    neighbors: Dict[bytes, List[Dag]] = {}

    def score_of(dag: Dag) -> float:
        if dag.key not in scores:
            scores[dag.key] = float(score(dag))
        return scores[dag.key]

    def neighbors_of(dag: Dag) -> List[Dag]:
        if dag.key not in neighbors:
            neighbors[dag.key] = neighborhood(dag)
        return neighbors[dag.key]

    rng = make_rng(seed)
    graphs = [current]
    trace = [score_of(current)]
    accepted = np.zeros(n_iter, dtype=bool)
    sizes = np.zeros(n_iter, dtype=int)
    for step in range(n_iter):
        options = neighbors_of(current)
        sizes[step] = len(options)
        if not options:
            graphs.append(current)
            trace.append(trace[-1])
            if progress is not None:
                progress(step + 1, n_iter)
            continue
        proposal = options[int(rng.integers(len(options)))]
        log_ratio = (score_of(proposal) - score_of(current)
                     + np.log(len(options)) - np.log(len(neighbors_of(proposal))))
        if np.log(rng.random()) < log_ratio:
            current = proposal
            accepted[step] = True
        graphs.append(current)
        trace.append(score_of(current))
        if progress is not None:
            progress(step + 1, n_iter)
    if fitter is not None:
        logger.info(f"Structure chain: {len(scores)} graphs scored, "
                    f"node cache {fitter.hits} hits / {fitter.misses} fits")
    return StructureChain(graphs, np.array(trace), accepted, sizes)


def edge_features(samples: Sequence[Dag]) -> np.ndarray:
    """Fraction of graphs containing each edge i -> j"""
    if not samples:
        raise InvalidInputError("Edge features need at least one graph")
    return np.mean([g.adjacency for g in samples], axis=0).astype(float)


def graph_distance(dag: Dag, reference: Dag) -> int:
    """Number of adjacency entries that differ"""
    if dag.m != reference.m:
        raise InvalidInputError(f"Graphs have {dag.m} and {reference.m} nodes")
    return int(np.sum(dag.adjacency != reference.adjacency))


def top_graphs(chain: StructureChain, n: int, burn_in: int = 0) -> List[ScoredGraph]:
    """Distinct graphs visited after burn_in, best score first"""
    seen = {}
    for dag, value in zip(chain.graphs[burn_in:], chain.scores[burn_in:]):
        seen.setdefault(dag.key, ScoredGraph(dag, float(value)))
    ranked = sorted(seen.values(), key=lambda g: -g.bic)
    return ranked[:n]


def chain_diagnostics(chain: StructureChain, reference: Optional[Dag] = None) -> GewekeResult:
    """Geweke burn-in on d(G) against reference when known, else on the score trace"""
    if reference is not None:
        series = np.array([graph_distance(g, reference) for g in chain.graphs], dtype=float)
        if np.ptp(series) == 0:
            series = chain.scores
    else:
        series = chain.scores
    return geweke_burnin(series)


class Cpdag:
    """
    Equivalence class of a DAG as an incidence matrix: incidence[i, j] = 1
    and incidence[j, i] = 0 is a directed edge i -> j, both set is an
    undirected (reversible) edge.
    """

    NONE, DIRECTED, UNDIRECTED = 0, 1, 2

    def __init__(self, incidence: np.ndarray):
        self.incidence = np.array(incidence, dtype=np.int8)
        self.m = self.incidence.shape[0]

    @classmethod
    def from_dag(cls, dag: Dag) -> 'Cpdag':
        A = dag.adjacency.astype(np.int8)
        incidence = A | A.T
        m = dag.m
        for j in range(m):
            parents = np.flatnonzero(A[:, j])
            for x in parents:
                for y in parents:
                    if x < y and not (A[x, y] or A[y, x]):
                        incidence[j, x] = 0
                        incidence[j, y] = 0
        _meek_closure(incidence)
        return cls(incidence)

    def marks(self) -> np.ndarray:
        """m x m with DIRECTED at (i, j) for i -> j and UNDIRECTED on both sides of i - j"""
        both = self.incidence & self.incidence.T
        return np.where(both == 1, self.UNDIRECTED, np.where(self.incidence == 1, self.DIRECTED, self.NONE))

    def directed_edges(self) -> List[Tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.incidence & (1 - self.incidence.T)))]

    def undirected_edges(self) -> List[Tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(self.incidence & self.incidence.T)))]

    def skeleton(self) -> np.ndarray:
        return self.incidence | self.incidence.T

    def __eq__(self, other):
        if not isinstance(other, Cpdag):
            return NotImplemented
        return bool(np.array_equal(self.incidence, other.incidence))

    def __repr__(self):
        return f"Cpdag(directed={self.directed_edges()}, undirected={self.undirected_edges()})"


def _adjacent(incidence, a, b) -> bool:
    return bool(incidence[a, b] or incidence[b, a])


def _directed(incidence, a, b) -> bool:
    return bool(incidence[a, b] and not incidence[b, a])


def _undirected(incidence, a, b) -> bool:
    return bool(incidence[a, b] and incidence[b, a])


def _meek_closure(incidence: np.ndarray):
    """Apply orientation rules 1-3 in place until nothing changes"""
    m = incidence.shape[0]
    changed = True
    while changed:
        changed = False
        for a in range(m):
            for b in range(m):
                if a == b or not _undirected(incidence, a, b):
                    continue
                # rule 1: c -> a - b, c and b not adjacent
                rule1 = any(_directed(incidence, c, a) and not _adjacent(incidence, c, b)
                            for c in range(m) if c not in (a, b))
                # rule 2: a -> c -> b
                rule2 = any(_directed(incidence, a, c) and _directed(incidence, c, b)
                            for c in range(m) if c not in (a, b))
                # rule 3: a - c -> b, a - d -> b, c and d not adjacent
                middles = [c for c in range(m) if c not in (a, b)
                           and _undirected(incidence, a, c) and _directed(incidence, c, b)]
                rule3 = any(not _adjacent(incidence, c, d) for c in middles for d in middles if c < d)
                if rule1 or rule2 or rule3:
                    incidence[b, a] = 0
                    changed = True


def cpdag(dag: Dag) -> Cpdag:
    return Cpdag.from_dag(dag)


def confusion_rates(tp: int, fp: int, fn: int, tn: int) -> Dict[str, Optional[float]]:
    """ACC, FDR, FOR, SEN, SPE; None where the denominator is zero"""
    def ratio(num, den):
        return num / den if den else None

    return {
        'ACC': ratio(tp + tn, tp + fp + fn + tn),
        'FDR': ratio(fp, tp + fp),
        'FOR': ratio(fn, fn + tn),
        'SEN': ratio(tp, tp + fn),
        'SPE': ratio(tn, tn + fp),
    }


def _classification_units(features: np.ndarray, truth: Cpdag) -> Tuple[np.ndarray, np.ndarray]:
    """
    Scored units with labels. An undirected truth edge is one unit scored by
    the larger of its two directed features; every other ordered pair is its
    own unit.
    """
    scores, labels = [], []
    m = truth.m
    for i in range(m):
        for j in range(i + 1, m):
            if _undirected(truth.incidence, i, j):
                scores.append(max(features[i, j], features[j, i]))
                labels.append(True)
                continue
            for a, b in ((i, j), (j, i)):
                scores.append(features[a, b])
                labels.append(_directed(truth.incidence, a, b))
    return np.array(scores, dtype=float), np.array(labels, dtype=bool)


@dataclass
class ThresholdMetrics:
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    rates: Dict[str, Optional[float]]


@dataclass
class ClassificationReport:
    rows: List[ThresholdMetrics]
    auroc: Optional[float]

    def to_frame(self) -> pd.DataFrame:
        """One row per threshold; undefined rates are NaN"""
        frame = pd.DataFrame([{'threshold': r.threshold, 'TP': r.tp, 'FP': r.fp, 'FN': r.fn, 'TN': r.tn,
                               **r.rates} for r in self.rows])
        return frame.astype({name: float for name in ('ACC', 'FDR', 'FOR', 'SEN', 'SPE')})


def _counts(scores, labels, threshold):
    predicted = scores >= threshold
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    tn = int(np.sum(~predicted & ~labels))
    return tp, fp, fn, tn


def auroc(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Area under the ROC curve over every threshold, trapezoid rule; None without both classes"""
    positives = int(labels.sum())
    negatives = int(labels.size - positives)
    if positives == 0 or negatives == 0:
        return None
    points = [(0.0, 0.0), (1.0, 1.0)]
    for threshold in np.unique(scores):
        tp, fp, _, _ = _counts(scores, labels, threshold)
        points.append((fp / negatives, tp / positives))
    points.sort()
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def classification_metrics(features: np.ndarray, truth: Cpdag,
                           thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> ClassificationReport:
    """Edge predictions feature >= c against the true CPDAG, per threshold, plus AUROC"""
    features = np.asarray(features, dtype=float)
    if features.shape != (truth.m, truth.m):
        raise InvalidInputError(f"Features are {features.shape}, truth has {truth.m} nodes")
    scores, labels = _classification_units(features, truth)
    rows = []
    for c in thresholds:
        tp, fp, fn, tn = _counts(scores, labels, c)
        rows.append(ThresholdMetrics(float(c), tp, fp, fn, tn, confusion_rates(tp, fp, fn, tn)))
    return ClassificationReport(rows, auroc(scores, labels))


def write_graph_log_csv(chain: StructureChain, path: str):
    """iter,score,adjacency_bits"""
    pd.DataFrame({
        'iter': np.arange(len(chain.graphs)),
        'score': chain.scores,
        'adjacency_bits': [g.bits() for g in chain.graphs],
    }).to_csv(path, index=False, float_format='%.17g')


def read_graph_log_csv(path: str, m: int) -> StructureChain:
    frame = pd.read_csv(path, dtype={'adjacency_bits': str})
    graphs = [Dag.from_bits(m, bits.zfill(m * m)) for bits in frame['adjacency_bits']]
    n = len(graphs) - 1
    return StructureChain(graphs, frame['score'].to_numpy(dtype=float), np.zeros(n, dtype=bool),
                          np.zeros(n, dtype=int))


def write_edge_features_csv(features: np.ndarray, path: str, labels: Optional[Sequence[str]] = None):
    labels = list(labels) if labels is not None else [str(i) for i in range(features.shape[0])]
    pd.DataFrame(features, index=labels, columns=labels).to_csv(path, index_label='from')
