"""
Moving-window investment experiment.

At the last trading day of every week the model is refit on the trailing
window, the minimum-variance and minimum-CVaR books are solved on one-day
scenarios, and the weights are held through the following week. Strategy 1
always invests; strategy 2 invests a CVaR book only when its predicted CVaR
does not exceed the average of the previous ws weekly predictions, and
holds cash otherwise.
"""
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from data_model import Dag, FittedModel, GcGarchError, InvalidInputError, ReturnPanel, parse_edges
from estimation import estimate_model
from marginal_garch import fit_marginals
from portfolio import model_average, mv_cvars, single_model_forecast, solve_mcvar, solve_mv
from simulate import derive_seed
from structure_learning import structure_mcmc, top_graphs

logger = logging.getLogger(__name__)

ENV_PREFIX = 'GCGARCH_'
STRUCTURE_MODES = ('fixed', 'refit', 'map+avg')


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 750
    K: int = 20000
    alphas: Tuple[float, ...] = (0.0005, 0.001, 0.005, 0.01, 0.05)
    n_graphs: int = 3
    strategy: int = 1
    ws: int = 8
    reserve_weeks: int = 32
    capital: float = 10000.0
    seed: int = 0
    structure: str = 'fixed'
    structure_iterations: int = 200
    dag_edges: Optional[str] = None
    estimation: str = 'sequential'
    mcmc_iterations: int = 2000
    m_sc: int = 2
    long_only: bool = False
    workers: int = 1

    def violations(self) -> List[str]:
        problems = []
        if self.window < 100:
            problems.append(f"window must be >= 100 (got {self.window})")
        if not self.alphas or any(not 0 < a < 1 for a in self.alphas):
            problems.append(f"alphas must all lie in (0, 1) (got {self.alphas})")
        elif self.K * min(self.alphas) < 1:
            problems.append(f"K * min(alphas) must be >= 1 (got {self.K * min(self.alphas):.3g})")
        if self.strategy not in (1, 2):
            problems.append(f"strategy must be 1 or 2 (got {self.strategy})")
        if self.ws < 1 or self.ws > self.reserve_weeks:
            problems.append(f"ws must be in 1..reserve_weeks={self.reserve_weeks} (got {self.ws})")
        if self.n_graphs < 1:
            problems.append(f"n_graphs must be >= 1 (got {self.n_graphs})")
        if self.capital <= 0:
            problems.append(f"capital must be positive (got {self.capital})")
        if self.structure not in STRUCTURE_MODES:
            problems.append(f"structure must be one of {STRUCTURE_MODES} (got {self.structure!r})")
        if self.estimation not in ('sequential', 'mcmc'):
            problems.append(f"estimation must be 'sequential' or 'mcmc' (got {self.estimation!r})")
        return problems

    def validate(self) -> 'BacktestConfig':
        problems = self.violations()
        if problems:
            raise InvalidInputError("Invalid backtest config: " + "; ".join(problems))
        return self

    def fixed_dag(self, m: int) -> Optional[Dag]:
        if not self.dag_edges:
            return None
        return Dag.from_edges(m, parse_edges(self.dag_edges))

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> 'BacktestConfig':
        """
        Defaults, then GCGARCH_* environment variables, then the KEY=VALUE
        config file, then overrides (None values are skipped).
        """
        config = cls()
        env = {f.name: os.getenv(ENV_PREFIX + f.name.upper()) for f in fields(cls)}
        config = config._apply({k: v for k, v in env.items() if v not in (None, '')}, 'environment')
        if path:
            if not os.path.exists(path):
                raise FileNotFoundError(f"Config file not found: {path}")
            values = dotenv_values(path)
            unknown = [k for k in values if not k.startswith(ENV_PREFIX)
                       or k[len(ENV_PREFIX):].lower() not in {f.name.lower() for f in fields(cls)}]
            if unknown:
                raise ValueError(f"Unknown keys in {path}: {unknown}")
            by_name = {f.name.lower(): f.name for f in fields(cls)}
            config = config._apply({by_name[k[len(ENV_PREFIX):].lower()]: v for k, v in values.items()
                                    if v is not None}, path)
        if overrides:
            config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
        return config.validate()

    def _apply(self, raw: Mapping[str, str], source: str) -> 'BacktestConfig':
        parsed = {}
        for f in fields(self):
            if f.name in raw:
                parsed[f.name] = _parse_value(f.name, getattr(self, f.name), raw[f.name], source)
        return replace(self, **parsed)


def _parse_csv(value: str) -> List[str]:
    return [item.strip() for item in value.split(',') if item.strip()]


def _parse_value(name: str, current, text: str, source: str):
    key = ENV_PREFIX + name.upper()
    text = text.strip()
    try:
        if isinstance(current, bool):
            if text.lower() in ('1', 'true', 'yes', 'on'):
                return True
            if text.lower() in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(float(x) for x in _parse_csv(text))
        return text or None
    except ValueError:
        raise ValueError(f"Bad value for {key} in {source}: {text!r}")


@dataclass(frozen=True)
class WeekSlot:
    """Fit on the last trading day of a week, invest from the next day to the end of the next week"""
    fit_index: int
    invest_index: int
    end_index: int


def weekly_schedule(dates: Sequence[str]) -> List[WeekSlot]:
    """One slot per pair of consecutive calendar weeks present in dates"""
    try:
        stamps = pd.to_datetime(pd.Series(list(dates)), format='ISO8601')
    except (ValueError, TypeError) as e:
        raise InvalidInputError(f"Dates are not calendar dates: {e}")
    if not stamps.is_monotonic_increasing:
        raise InvalidInputError("Dates must be sorted")
    iso = stamps.dt.isocalendar()
    week_id = (iso['year'] * 100 + iso['week']).to_numpy()
    boundaries = np.flatnonzero(np.diff(week_id) != 0)
    starts = np.concatenate([[0], boundaries + 1])
    ends = np.concatenate([boundaries, [len(week_id) - 1]])
    return [WeekSlot(int(ends[g]), int(starts[g + 1]), int(ends[g + 1])) for g in range(len(starts) - 1)]


def simple_returns(log_returns_pct: np.ndarray) -> np.ndarray:
    """R = exp(r / 100) - 1"""
    return np.expm1(np.asarray(log_returns_pct, dtype=float) / 100.0)


def cumulative_values(capital: float, growth: Sequence[float]) -> np.ndarray:
    """capital times the running product of gross growth factors"""
    return capital * np.cumprod(np.asarray(growth, dtype=float))


def strategy2_invests(cvar: float, previous: Sequence[float]) -> bool:
    """Invest when the predicted CVaR is no higher than the average of the previous predictions"""
    previous = np.asarray(previous, dtype=float)
    if previous.size == 0 or not np.isfinite(cvar) or np.any(~np.isfinite(previous)):
        return False
    return bool(cvar <= previous.mean())


@dataclass(frozen=True)
class CostResult:
    cost: Optional[float]
    exceedances: int


def cost_function(realized: Sequence[float], cvars: Sequence[float]) -> CostResult:
    """
    Mean of |-R - CVaR| over the weeks where the first-day loss -R reaches
    the predicted CVaR; cost is None when there is no such week.
    """
    R = np.asarray(realized, dtype=float)
    cvar = np.asarray(cvars, dtype=float)
    if R.shape != cvar.shape:
        raise InvalidInputError(f"{R.size} realized returns for {cvar.size} CVaR predictions")
    hit = (-R >= cvar) & np.isfinite(cvar)
    g = int(hit.sum())
    if g == 0:
        return CostResult(None, 0)
    return CostResult(float(np.mean(np.abs(-R[hit] - cvar[hit]))), g)


@dataclass
class WeekFit:
    """Everything decided at one fit day"""
    mv_weights: np.ndarray
    mv_cvar: Dict[float, float]
    mcvar_weights: Dict[float, np.ndarray]
    mcvar_cvar: Dict[float, float]
    dag: Optional[Dag] = None
    error: Optional[str] = None


class WindowFitter:
    """
    Fits the model on successive trailing windows, carrying warm starts and
    the current graph from one week to the next.
    """

    def __init__(self, config: BacktestConfig, m: int):
        self.config = config
        self.m = m
        self.dag = config.fixed_dag(m)
        self.marginal_inits = None
        self.learned = False

    def _learn(self, history: ReturnPanel, marginals, week: int):
        config = self.config
        init = self.dag if self.dag is not None else Dag.empty(self.m)
        chain = structure_mcmc(history, marginals, init, config.structure_iterations,
                               derive_seed(config.seed, week, 1), m_sc=config.m_sc)
        return top_graphs(chain, config.n_graphs if config.structure == 'map+avg' else 1, chain.N // 2)

    def models(self, history: ReturnPanel, week: int) -> Tuple[List[FittedModel], List[float]]:
        config = self.config
        scored = None
        if config.dag_edges is None and (config.structure != 'fixed' or not self.learned):
            marginal_fits = fit_marginals(history, self.marginal_inits)
            scored = self._learn(history, [f.params for f in marginal_fits], week)
            self.dag = scored[0].dag
            self.learned = True

        graphs = [g.dag for g in scored] if scored and config.structure == 'map+avg' else [self.dag]
        scores = [g.bic for g in scored] if scored and config.structure == 'map+avg' else [0.0]
        models = []
        for j, dag in enumerate(graphs):
            result = estimate_model(history, dag, config.estimation, config.mcmc_iterations,
                                    derive_seed(config.seed, week, 2, j), config.m_sc, self.marginal_inits,
                                    config.workers)
            if j == 0:
                self.marginal_inits = result.model.marginals
            models.append(result.model)
        return models, scores

    def fit_week(self, panel: ReturnPanel, slot: WeekSlot, week: int) -> WeekFit:
        config = self.config
        history = panel.window(slot.fit_index + 1 - config.window, slot.fit_index + 1)
        models, scores = self.models(history, week)
        seed = derive_seed(config.seed, week)
        if len(models) == 1:
            forecast = single_model_forecast(models[0], history, config.K, seed, config.workers)
        else:
            forecast = model_average(models, scores, history, config.K, seed, config.workers)

        mv = solve_mv(forecast.covariance, config.long_only)
        mv_cvar = dict(zip(config.alphas, mv_cvars(forecast.scenarios, mv, config.alphas)))
        mcvar_weights, mcvar_cvar = {}, {}
        for alpha in config.alphas:
            solution = solve_mcvar(forecast.scenarios, alpha, config.long_only)
            mcvar_weights[alpha] = solution.weights
            mcvar_cvar[alpha] = solution.objective
        return WeekFit(mv.weights, mv_cvar, mcvar_weights, mcvar_cvar, models[0].dag)


@dataclass
class BacktestReport:
    """
    weekly holds one row per investment week, book and alpha: fit_date,
    invest_date, end_date, book ('mv' or 'mcvar'), alpha, cvar (percent),
    first_day_return (percent), growth (gross weekly factor), gate
    (strategy 2 invests; mcvar rows only), error.
    """
    weekly: pd.DataFrame
    weights: pd.DataFrame
    capital: float = 10000.0
    ws: int = 8
    errors: List[Tuple[str, str]] = field(default_factory=list)

    def books(self) -> List[Tuple[str, float]]:
        return [(book, float(alpha)) for book, alpha in
                self.weekly[['book', 'alpha']].drop_duplicates().itertuples(index=False)]

    def book_rows(self, book: str, alpha: float) -> pd.DataFrame:
        rows = self.weekly[(self.weekly['book'] == book) & np.isclose(self.weekly['alpha'], alpha)]
        return rows.sort_values('week')

    @property
    def n_weeks(self) -> int:
        return int(self.weekly['week'].nunique()) if len(self.weekly) else 0

    def cumulative_values(self) -> pd.DataFrame:
        """Strategy 1 for every book, strategy 2 for the CVaR books, indexed by week end date"""
        columns = {}
        index = None
        for book, alpha in self.books():
            rows = self.book_rows(book, alpha)
            index = rows['end_date'].to_numpy() if index is None else index
            if book == 'mv':
                name = 'mv'
                if name not in columns:
                    columns[name] = cumulative_values(self.capital, rows['growth'])
                continue
            name = f"mcvar_{alpha:g}"
            columns[name] = cumulative_values(self.capital, rows['growth'])
            gated = np.where(rows['gate'].astype(bool), rows['growth'], 1.0)
            columns[f"{name}_s2"] = cumulative_values(self.capital, gated)
        frame = pd.DataFrame(columns)
        frame.insert(0, 'date', index if index is not None else [])
        return frame

    def cost_table(self) -> pd.DataFrame:
        records = []
        for book, alpha in self.books():
            rows = self.book_rows(book, alpha)
            result = cost_function(rows['first_day_return'], rows['cvar'])
            records.append({'book': book, 'alpha': alpha, 'cost': result.cost,
                            'exceedances': result.exceedances, 'weeks': len(rows)})
        return pd.DataFrame(records, columns=['book', 'alpha', 'cost', 'exceedances', 'weeks'])

    def strategy2_summary(self) -> pd.DataFrame:
        """Weeks invested and average weekly return (percent) on excluded and on all weeks"""
        records = []
        for book, alpha in self.books():
            if book != 'mcvar':
                continue
            rows = self.book_rows(book, alpha)
            returns = (rows['growth'].to_numpy() - 1.0) * 100.0
            gate = rows['gate'].astype(bool).to_numpy()
            records.append({
                'alpha': alpha, 'ws': self.ws,
                'weeks_invested': int(gate.sum()), 'weeks': len(rows),
                'avg_excluded_return': float(returns[~gate].mean()) if (~gate).any() else None,
                'avg_all_return': float(returns.mean()) if len(returns) else None,
            })
        return pd.DataFrame(records, columns=['alpha', 'ws', 'weeks_invested', 'weeks',
                                              'avg_excluded_return', 'avg_all_return'])

    def cvar_frame(self) -> pd.DataFrame:
        rows = self.weekly[self.weekly['book'] == 'mcvar']
        return rows[['invest_date', 'alpha', 'cvar']].rename(columns={'invest_date': 'date'})

    def write(self, out_dir: str):
        """weekly.csv and weights.csv, the raw results read back by read_report"""
        os.makedirs(out_dir, exist_ok=True)
        self.weekly.to_csv(os.path.join(out_dir, 'weekly.csv'), index=False, float_format='%.17g')
        self.weights.to_csv(os.path.join(out_dir, 'weights.csv'), index=False, float_format='%.17g')

    def write_tables(self, out_dir: str) -> List[str]:
        """Plot-ready series and tables; returns the paths written"""
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for name, frame in (('cumulative_values.csv', self.cumulative_values()),
                            ('cost_table.csv', self.cost_table()),
                            ('strategy2_summary.csv', self.strategy2_summary()),
                            ('cvar.csv', self.cvar_frame()),
                            ('weights.csv', self.weights)):
            path = os.path.join(out_dir, name)
            frame.to_csv(path, index=False, float_format='%.17g')
            written.append(path)
        return written


def read_report(out_dir: str, capital: float = 10000.0, ws: int = 8) -> BacktestReport:
    weekly = pd.read_csv(os.path.join(out_dir, 'weekly.csv'), dtype={'fit_date': str, 'invest_date': str,
                                                                      'end_date': str, 'error': str})
    weights = pd.read_csv(os.path.join(out_dir, 'weights.csv'), dtype={'date': str, 'symbol': str})
    return BacktestReport(weekly, weights, capital, ws)


def run_backtest(panel: ReturnPanel, config: BacktestConfig,
                 progress: Optional[Callable[[int, int], None]] = None,
                 fitter: Optional[WindowFitter] = None) -> BacktestReport:
    """
    Weekly refits over the panel. The first reserve_weeks fits only feed the
    strategy 2 averages; investing starts with the fit after them. A week
    whose fit fails keeps the previous week's weights and predictions.

    The daily portfolio return is sum_j w_j (exp(r_j / 100) - 1): weights
    apply to each stock's simple return, never to the log returns.
    """
    config.validate()
    if panel.p < 1:
        raise InvalidInputError("The backtest needs at least one stock column")
    slots = [s for s in weekly_schedule(panel.dates) if s.fit_index + 1 >= config.window]
    if len(slots) <= config.reserve_weeks:
        raise InvalidInputError(
            f"Panel gives {len(slots)} fit weeks after the {config.window}-day window; "
            f"need more than reserve_weeks={config.reserve_weeks}")
    fitter = fitter or WindowFitter(config, panel.m)
    realized = simple_returns(panel.stocks)
    symbols = panel.stock_symbols

    fits: List[Optional[WeekFit]] = []
    errors = []
    previous: Optional[WeekFit] = None
    for week, slot in enumerate(slots):
        try:
            fit = fitter.fit_week(panel, slot, week)
        except (GcGarchError, ValueError, np.linalg.LinAlgError) as e:
            logger.warning(f"Week of {panel.dates[slot.fit_index]}: fit failed ({e}), keeping previous weights")
            errors.append((panel.dates[slot.fit_index], str(e)))
            fit = replace(previous, error=str(e)) if previous is not None else None
        fits.append(fit)
        previous = fit or previous
        if progress is not None:
            progress(week + 1, len(slots))

    history = {alpha: [f.mcvar_cvar[alpha] if f else np.nan for f in fits] for alpha in config.alphas}
    records, weight_records = [], []
    for week in range(config.reserve_weeks, len(slots)):
        slot, fit = slots[week], fits[week]
        days = realized[slot.invest_index:slot.end_index + 1]
        base = {'week': week - config.reserve_weeks, 'fit_date': panel.dates[slot.fit_index],
                'invest_date': panel.dates[slot.invest_index], 'end_date': panel.dates[slot.end_index],
                'error': fit.error if fit else 'no fit available'}
        books = []
        if fit is not None:
            books.append(('mv', fit.mv_weights, fit.mv_cvar, None))
            for alpha in config.alphas:
                gate = strategy2_invests(fit.mcvar_cvar[alpha], history[alpha][week - config.ws:week])
                books.append(('mcvar', fit.mcvar_weights[alpha], {alpha: fit.mcvar_cvar[alpha]}, gate))
        else:
            cash = np.zeros(panel.p)
            books.append(('mv', cash, {a: np.nan for a in config.alphas}, None))
            books.extend(('mcvar', cash, {a: np.nan}, False) for a in config.alphas)

        for book, weights, cvars, gate in books:
            daily = days @ weights
            growth = float(np.prod(1.0 + daily))
            for alpha, cvar in cvars.items():
                records.append({**base, 'book': book, 'alpha': alpha, 'cvar': cvar,
                                'first_day_return': 100.0 * float(daily[0]), 'growth': growth,
                                'gate': gate})
            label = book if book == 'mv' else f"mcvar_{next(iter(cvars)):g}"
            weight_records.extend({'date': base['invest_date'], 'book': label, 'symbol': s, 'weight': float(w)}
                                  for s, w in zip(symbols, weights))

    weekly = pd.DataFrame(records, columns=['week', 'fit_date', 'invest_date', 'end_date', 'book', 'alpha',
                                            'cvar', 'first_day_return', 'growth', 'gate', 'error'])
    weights = pd.DataFrame(weight_records, columns=['date', 'book', 'symbol', 'weight'])
    report = BacktestReport(weekly, weights, config.capital, config.ws, errors)
    logger.info(f"Backtest finished: {report.n_weeks} investment weeks, {len(errors)} failed fits")
    return report
