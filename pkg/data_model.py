"""
Core domain types for the GC-GARCH model: return panels, marginal and copula
parameter sets, the risk-factor DAG and the fitted model bundle.

Node indices are 0-based. A Dag carries a topological order; parent sets are
always reported sorted by position in that order, which is the labelling the
pair-copula construction works in.
"""
import heapq
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd


class GcGarchError(Exception):
    """Base class for model errors"""


class InvalidInputError(GcGarchError, ValueError):
    """Input rejected before any computation"""


class StructuralError(GcGarchError):
    """A conditional CDF is not reachable by h-function recursion"""


class DegenerateDataError(GcGarchError, ValueError):
    """Statistic undefined for the given data (zero variance, empty tail...)"""


class SolverError(GcGarchError):
    """Linear program or linear solve failed"""


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """
    T x (m+p) daily log returns in percent.

    The first m columns are risk factors, the remaining p columns are stocks.
    """
    dates: Tuple[str, ...]
    symbols: Tuple[str, ...]
    values: np.ndarray
    m: int

    def __post_init__(self):
        values = _readonly(self.values)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'dates', tuple(str(d) for d in self.dates))
        object.__setattr__(self, 'symbols', tuple(str(s) for s in self.symbols))

        if values.ndim != 2:
            raise InvalidInputError(f"Return values must be a matrix, got shape {values.shape}")
        if values.shape[0] != len(self.dates):
            raise InvalidInputError(f"{values.shape[0]} rows but {len(self.dates)} dates")
        if values.shape[1] != len(self.symbols):
            raise InvalidInputError(f"{values.shape[1]} columns but {len(self.symbols)} symbols")
        if not 1 <= self.m <= values.shape[1]:
            raise InvalidInputError(f"Risk factor count m={self.m} outside 1..{values.shape[1]}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("Return panel contains missing or non-finite entries")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1] - self.m

    @property
    def factors(self) -> np.ndarray:
        return self.values[:, :self.m]

    @property
    def stocks(self) -> np.ndarray:
        return self.values[:, self.m:]

    @property
    def stock_symbols(self) -> Tuple[str, ...]:
        return self.symbols[self.m:]

    def window(self, start: int, stop: int) -> 'ReturnPanel':
        """Rows start..stop-1 as a new panel"""
        return ReturnPanel(self.dates[start:stop], self.symbols, self.values[start:stop], self.m)

    def without_stocks(self) -> 'ReturnPanel':
        return ReturnPanel(self.dates, self.symbols[:self.m], self.values[:, :self.m], self.m)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(np.array(self.values), columns=list(self.symbols))
        frame.insert(0, 'date', list(self.dates))
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, m: int) -> 'ReturnPanel':
        symbols = [c for c in frame.columns if c != 'date']
        return cls(tuple(frame['date'].astype(str)), tuple(symbols), frame[symbols].to_numpy(dtype=float), m)


@dataclass(frozen=True)
class GarchParams:
    omega: float
    alpha: float
    beta: float
    v: float

    def violations(self) -> List[str]:
        return validate_garch_params(self)


@dataclass(frozen=True)
class CopulaParams:
    phi_bar: float
    a: float
    b: float
    v: float

    def violations(self) -> List[str]:
        return validate_copula_params(self)


def validate_garch_params(params: GarchParams) -> List[str]:
    """Empty list iff omega>0, alpha>=0, beta>=0, alpha+beta<1 and v>2"""
    problems = []
    if not params.omega > 0:
        problems.append(f"omega must be > 0 (got {params.omega})")
    if not params.alpha >= 0:
        problems.append(f"alpha must be >= 0 (got {params.alpha})")
    if not params.beta >= 0:
        problems.append(f"beta must be >= 0 (got {params.beta})")
    if not params.alpha + params.beta < 1:
        problems.append(f"alpha + beta must be < 1 (got {params.alpha + params.beta})")
    if not params.v > 2:
        problems.append(f"v must be > 2 (got {params.v})")
    return problems


def validate_copula_params(params: CopulaParams) -> List[str]:
    """Empty list iff 0<=a,b<1, a+b<1, -1<phi_bar<1 and v>2"""
    problems = []
    if not 0 <= params.a < 1:
        problems.append(f"a must be in [0, 1) (got {params.a})")
    if not 0 <= params.b < 1:
        problems.append(f"b must be in [0, 1) (got {params.b})")
    if not params.a + params.b < 1:
        problems.append(f"a + b must be < 1 (got {params.a + params.b})")
    if not -1 < params.phi_bar < 1:
        problems.append(f"phi_bar must be in (-1, 1) (got {params.phi_bar})")
    if not params.v > 2:
        problems.append(f"v must be > 2 (got {params.v})")
    return problems


def is_acyclic(adjacency: np.ndarray) -> bool:
    return default_order(adjacency) is not None


def default_order(adjacency: np.ndarray) -> Optional[Tuple[int, ...]]:
    """Kahn's algorithm, smallest label first; None if the graph has a cycle"""
    adjacency = np.asarray(adjacency)
    m = adjacency.shape[0]
    indegree = adjacency.sum(axis=0).astype(int)
    ready = [i for i in range(m) if indegree[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for child in np.flatnonzero(adjacency[node]):
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, int(child))
    if len(order) < m:
        return None
    return tuple(order)


@dataclass(frozen=True, eq=False)
class Dag:
    """
    Directed acyclic graph over m risk factors.

    adjacency[i, j] == 1 means edge i -> j. order is a topological order; if
    omitted, the smallest-label-first order is used.
    """
    m: int
    adjacency: np.ndarray
    order: Tuple[int, ...] = field(default=None)

    def __post_init__(self):
        adjacency = np.array(self.adjacency, dtype=np.int8, copy=True)
        if adjacency.shape != (self.m, self.m):
            raise InvalidInputError(f"Adjacency must be {self.m}x{self.m}, got {adjacency.shape}")
        if not np.isin(adjacency, (0, 1)).all():
            raise InvalidInputError("Adjacency entries must be 0 or 1")
        if np.any(np.diag(adjacency)):
            raise InvalidInputError("Self-loops are not allowed")
        adjacency.setflags(write=False)
        object.__setattr__(self, 'adjacency', adjacency)

        if self.order is None:
            order = default_order(adjacency)
            if order is None:
                raise InvalidInputError("Graph contains a cycle")
            object.__setattr__(self, 'order', order)
        else:
            order = tuple(int(i) for i in self.order)
            if sorted(order) != list(range(self.m)):
                raise InvalidInputError(f"Order {order} is not a permutation of 0..{self.m - 1}")
            position = {node: k for k, node in enumerate(order)}
            for i, j in zip(*np.nonzero(adjacency)):
                if position[i] >= position[j]:
                    raise InvalidInputError(f"Order {order} is not topological for edge {i}->{j}")
            object.__setattr__(self, 'order', order)

        position = np.empty(self.m, dtype=int)
        position[list(self.order)] = np.arange(self.m)
        object.__setattr__(self, '_position', position)

    @classmethod
    def empty(cls, m: int) -> 'Dag':
        return cls(m, np.zeros((m, m), dtype=np.int8))

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[Tuple[int, int]], order: Optional[Sequence[int]] = None) -> 'Dag':
        adjacency = np.zeros((m, m), dtype=np.int8)
        for i, j in edges:
            adjacency[i, j] = 1
        return cls(m, adjacency, tuple(order) if order is not None else None)

    @property
    def key(self) -> bytes:
        return self.adjacency.tobytes()

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return self.m == other.m and self.key == other.key and self.order == other.order

    def __hash__(self):
        return hash((self.m, self.key, self.order))

    def __repr__(self):
        return f"Dag(m={self.m}, edges={self.edges()}, order={self.order})"

    def position(self, node: int) -> int:
        return int(self._position[node])

    def parents(self, node: int) -> Tuple[int, ...]:
        """pa(node) sorted by position in the topological order"""
        found = np.flatnonzero(self.adjacency[:, node])
        return tuple(sorted((int(i) for i in found), key=self.position))

    def children(self, node: int) -> Tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.adjacency[node]))

    def ancestors(self, node: int) -> Tuple[int, ...]:
        seen = set()
        stack = list(self.parents(node))
        while stack:
            current = stack.pop()
            if current not in seen:
                seen.add(current)
                stack.extend(self.parents(current))
        return tuple(sorted(seen, key=self.position))

    def edges(self) -> List[Tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adjacency))]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adjacency[i, j])

    def with_edge(self, i: int, j: int) -> Optional['Dag']:
        """Graph with i->j added, in default order; None if it would be cyclic"""
        adjacency = np.array(self.adjacency)
        adjacency[i, j] = 1
        if default_order(adjacency) is None:
            return None
        return Dag(self.m, adjacency)

    def without_edge(self, i: int, j: int) -> 'Dag':
        adjacency = np.array(self.adjacency)
        adjacency[i, j] = 0
        return Dag(self.m, adjacency)

    def relabeled(self) -> 'Dag':
        """Nodes renamed by their position in the order; the result has the identity order"""
        perm = list(self.order)
        adjacency = self.adjacency[np.ix_(perm, perm)]
        return Dag(self.m, adjacency, tuple(range(self.m)))

    def bits(self) -> str:
        return ''.join(str(int(x)) for x in self.adjacency.ravel())

    @classmethod
    def from_bits(cls, m: int, bits: str) -> 'Dag':
        adjacency = np.array([int(c) for c in bits], dtype=np.int8).reshape(m, m)
        return cls(m, adjacency)


class DagCopulaKey(NamedTuple):
    """Copula c_{child, parent | given}"""
    child: int
    parent: int
    given: Tuple[int, ...]

    def label(self) -> str:
        base = f"{self.child},{self.parent}"
        if self.given:
            base += "|" + ",".join(str(g) for g in self.given)
        return base


def dag_copula_keys(dag: Dag) -> List[DagCopulaKey]:
    """All DAG copulas, node by node in topological order, parents in order"""
    keys = []
    for node in dag.order:
        parents = dag.parents(node)
        for k, parent in enumerate(parents):
            keys.append(DagCopulaKey(node, parent, parents[:k]))
    return keys


@dataclass(frozen=True)
class FittedModel:
    """
    Marginals for all m+p series, the factor DAG with its copulas, and for each
    stock one copula per level. Level i conditions on the factor at position i
    of dag.order.
    """
    marginals: Tuple[GarchParams, ...]
    dag: Dag
    dag_copulas: Dict[DagCopulaKey, CopulaParams]
    stock_copulas: Tuple[Tuple[CopulaParams, ...], ...]
    m_sc: int = 2
    symbols: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'marginals', tuple(self.marginals))
        object.__setattr__(self, 'stock_copulas', tuple(tuple(levels) for levels in self.stock_copulas))
        object.__setattr__(self, 'symbols', tuple(self.symbols))
        problems = self.violations()
        if problems:
            raise InvalidInputError("Invalid model: " + "; ".join(problems))

    @property
    def m(self) -> int:
        return self.dag.m

    @property
    def p(self) -> int:
        return len(self.marginals) - self.dag.m

    def violations(self) -> List[str]:
        problems = []
        m = self.dag.m
        p = len(self.marginals) - m
        if p < 0:
            problems.append(f"{len(self.marginals)} marginals for {m} risk factors")
        expected = set(dag_copula_keys(self.dag))
        if set(self.dag_copulas) != expected:
            problems.append(f"dag_copulas has {len(self.dag_copulas)} entries, expected {len(expected)}")
        if len(self.stock_copulas) != max(p, 0) or any(len(levels) != m for levels in self.stock_copulas):
            problems.append(f"stock_copulas must hold {m} levels for each of {max(p, 0)} stocks")
        if self.m_sc < 1:
            problems.append(f"m_sc must be >= 1 (got {self.m_sc})")
        if self.symbols and len(self.symbols) != len(self.marginals):
            problems.append(f"{len(self.symbols)} symbols for {len(self.marginals)} series")
        for idx, params in enumerate(self.marginals):
            problems.extend(f"marginal {idx}: {msg}" for msg in validate_garch_params(params))
        for key, params in self.dag_copulas.items():
            problems.extend(f"copula {key.label()}: {msg}" for msg in validate_copula_params(params))
        for j, levels in enumerate(self.stock_copulas):
            for level, params in enumerate(levels):
                problems.extend(f"stock {j} level {level}: {msg}" for msg in validate_copula_params(params))
        return problems

    def default_symbols(self) -> Tuple[str, ...]:
        if self.symbols:
            return self.symbols
        return tuple([f"F{i}" for i in range(self.m)] + [f"S{j}" for j in range(self.p)])


def log_returns(prices: np.ndarray, dates: Optional[Sequence[str]] = None,
                symbols: Optional[Sequence[str]] = None, m: int = 1) -> ReturnPanel:
    """
    Percent log returns r_t = 100 * (ln S_t - ln S_{t-1}).

    Args:
        prices: (T+1) x (m+p) positive prices, rows in time order
        dates: T+1 date labels (the first is dropped), defaults to 0..T
        symbols: column names, defaults to C0, C1, ...
        m: number of leading risk-factor columns

    Returns:
        ReturnPanel with T rows
    """
    try:
        prices = np.array(prices, dtype=float)
    except ValueError as e:
        raise InvalidInputError(f"Price rows have mismatched lengths: {e}")
    if prices.ndim == 1:
        prices = prices[:, None]
    if prices.ndim != 2 or prices.shape[0] < 2:
        raise InvalidInputError("Need at least two rows of prices")
    if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
        raise InvalidInputError("Prices must be finite and strictly positive")

    values = 100.0 * np.diff(np.log(prices), axis=0)
    if dates is None:
        dates = [str(t) for t in range(prices.shape[0])]
    if len(dates) != prices.shape[0]:
        raise InvalidInputError(f"{len(dates)} dates for {prices.shape[0]} price rows")
    if symbols is None:
        symbols = [f"C{i}" for i in range(prices.shape[1])]
    return ReturnPanel(tuple(dates[1:]), tuple(symbols), values, m)


def read_manifest(path: str) -> Tuple[List[str], List[str]]:
    """Manifest CSV with columns symbol,role; returns (factor symbols, stock symbols) in file order"""
    manifest = pd.read_csv(path, dtype=str)
    missing = {'symbol', 'role'} - set(manifest.columns)
    if missing:
        raise InvalidInputError(f"Manifest {path} lacks columns: {sorted(missing)}")
    roles = manifest['role'].str.strip().str.lower()
    unknown = sorted(set(roles) - {'factor', 'stock'})
    if unknown:
        raise InvalidInputError(f"Unknown roles in manifest: {unknown}")
    symbols = manifest['symbol'].str.strip()
    if symbols.duplicated().any():
        raise InvalidInputError(f"Duplicate symbols in manifest: {sorted(set(symbols[symbols.duplicated()]))}")
    factors = list(symbols[roles == 'factor'])
    if not factors:
        raise InvalidInputError("Manifest declares no risk factors")
    return factors, list(symbols[roles == 'stock'])


def load_price_csv(prices_path: str, manifest_path: str) -> ReturnPanel:
    """
    Build a return panel from a long price file (date,symbol,close) and a
    manifest fixing which symbols are risk factors and the column order.
    """
    factors, stocks = read_manifest(manifest_path)
    columns = factors + stocks

    prices = pd.read_csv(prices_path, dtype={'symbol': str})
    missing = {'date', 'symbol', 'close'} - set(prices.columns)
    if missing:
        raise InvalidInputError(f"Price file {prices_path} lacks columns: {sorted(missing)}")
    prices['date'] = pd.to_datetime(prices['date'], format='ISO8601')
    prices = prices[prices['symbol'].isin(columns)]
    if prices.duplicated(['date', 'symbol']).any():
        raise InvalidInputError("Duplicate (date, symbol) rows in price file")

    wide = prices.pivot(index='date', columns='symbol', values='close').sort_index()
    absent = [s for s in columns if s not in wide.columns]
    if absent:
        raise InvalidInputError(f"No prices for symbols: {absent}")
    wide = wide[columns]
    if wide.isna().any().any():
        gaps = wide.isna().sum()
        raise InvalidInputError(f"Missing prices: {dict(gaps[gaps > 0])}")

    dates = [d.strftime('%Y-%m-%d') for d in wide.index]
    return log_returns(wide.to_numpy(), dates, columns, m=len(factors))


def write_panel_csv(panel: ReturnPanel, path: str, manifest_path: Optional[str] = None):
    """Wide CSV date,<symbols>; optionally the matching manifest"""
    panel.to_frame().to_csv(path, index=False, float_format='%.17g')
    if manifest_path:
        roles = ['factor'] * panel.m + ['stock'] * panel.p
        pd.DataFrame({'symbol': panel.symbols, 'role': roles}).to_csv(manifest_path, index=False)


def read_panel_csv(path: str, manifest_path: Optional[str] = None, m: Optional[int] = None) -> ReturnPanel:
    frame = pd.read_csv(path, dtype={'date': str})
    if manifest_path:
        factors, stocks = read_manifest(manifest_path)
        frame = frame[['date'] + factors + stocks]
        m = len(factors)
    if m is None:
        raise InvalidInputError("Risk factor count unknown: pass a manifest or m")
    return ReturnPanel.from_frame(frame, m)


def parse_edges(text: str) -> List[Tuple[int, int]]:
    """'0->1,1->2' -> [(0, 1), (1, 2)]"""
    edges = []
    for chunk in text.split(','):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            left, right = chunk.split('->')
            edges.append((int(left), int(right)))
        except ValueError:
            raise InvalidInputError(f"Bad edge '{chunk}', expected i->j")
    return edges
