#!/usr/bin/env python3
"""
Sequential vs MCMC DAG estimates as inputs to the stock copula fits.

On repeated simulated panels the DAG copulas are estimated sequentially and
by RAM (posterior mean and median); stock copulas are then fitted given
each set and compared to the truth, level by level.

Usage:
  python compare_estimators.py --replications 10 --stocks 10 --days 1000
"""
import argparse
import logging
import os
import sys

import pandas as pd
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import Progress
from rich.table import Table

from estimation import SequentialDagFitter, fit_dag_mcmc, fit_stocks
from marginal_garch import fit_marginals
from pcc_engine import dag_loglik_from_u, marginal_pits
from simulate import derive_seed, s1_model, s2_model, simulate_panel

load_dotenv()

console = Console()

FIELDS = ('phi_bar', 'a', 'b', 'v')


def stock_errors(model, panel, marginals, u, theta2, workers):
    """|estimate - truth| for every stock copula, as rows (level, field, error)"""
    lattice = dag_loglik_from_u(u[:, :model.m], model.dag, theta2, model.m_sc).lattice
    fits = fit_stocks(panel, marginals, lattice, workers)
    rows = []
    for j, levels in enumerate(fits.theta3):
        for level, params in enumerate(levels):
            truth = model.stock_copulas[j][level]
            for name in FIELDS:
                rows.append({'level': level, 'field': name,
                             'error': abs(getattr(params, name) - getattr(truth, name))})
    return rows


def run_replication(model, r: int, args) -> pd.DataFrame:
    panel = simulate_panel(model, args.days, derive_seed(args.seed, r, 1))
    marginals = [f.params for f in fit_marginals(panel)]
    u = marginal_pits(panel, marginals).u
    sequential = SequentialDagFitter(u[:, :model.m], model.m_sc).fit(model.dag)
    posterior = fit_dag_mcmc(panel, marginals, model.dag, args.mcmc_iterations, derive_seed(args.seed, r, 2),
                             sequential, model.m_sc)
    rows = []
    for estimator, theta2 in (('sequential', sequential.theta2), ('posterior_mean', posterior.means),
                              ('posterior_median', posterior.medians)):
        for row in stock_errors(model, panel, marginals, u, theta2, args.workers):
            rows.append({'replication': r, 'estimator': estimator, **row})
    return pd.DataFrame(rows)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description='Compare DAG estimators through the stock copula fits')
    parser.add_argument('--graph', choices=['s1', 's2'], default='s1')
    parser.add_argument('--replications', type=int, default=10)
    parser.add_argument('--stocks', type=int, default=10)
    parser.add_argument('--days', type=int, default=1000)
    parser.add_argument('--mcmc-iterations', type=int, default=5000)
    parser.add_argument('--workers', type=int, default=1)
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--out', help='CSV of MAE by estimator, level and parameter')
    args = parser.parse_args(argv)
    logging.basicConfig(level=os.getenv('GCGARCH_LOG_LEVEL', 'WARNING').upper(), format="%(message)s",
                        handlers=[RichHandler(console=console)])

    model = s1_model(args.stocks, args.seed) if args.graph == 's1' else s2_model(args.stocks, args.seed)
    frames = []
    with Progress(console=console) as progress:
        task = progress.add_task("Replications", total=args.replications)
        for r in range(args.replications):
            frames.append(run_replication(model, r, args))
            progress.advance(task)

    errors = pd.concat(frames)
    mae = errors.groupby(['estimator', 'level', 'field'])['error'].mean().unstack('field')[list(FIELDS)]
    table = Table(title="Stock copula MAE by level")
    for column in ("Estimator", "Level") + FIELDS:
        table.add_column(column, justify="right")
    for (estimator, level), row in mae.iterrows():
        table.add_row(estimator, str(level), *(f"{row[name]:.4f}" for name in FIELDS))
    console.print(table)
    best = mae['phi_bar'].groupby(level='estimator').mean()
    console.print("Mean phi_bar MAE: " + ", ".join(f"{k} {v:.4f}" for k, v in best.items()))
    if args.out:
        mae.reset_index().to_csv(args.out, index=False, float_format='%.6g')
        console.print(f"[green]✓ Saved {args.out}[/green]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
