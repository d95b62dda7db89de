#!/usr/bin/env python3
"""
Repeated simulation study on the built-in graphs.

Each replication simulates a panel from the S1 or S2 configuration, fits
the DAG copulas on the true graph (sequential start, then RAM), runs
structure MCMC from the empty graph and scores the edge features against
the true CPDAG.

Usage:
  python simulation_study.py --graph s1 --replications 20 --stocks 20 --days 1000
  python simulation_study.py --graph s2 --replications 5 --mcmc-iterations 2000 --out study/
"""
import argparse
import logging
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import Progress
from rich.table import Table

from data_model import DagCopulaKey, FittedModel
from estimation import fit_dag_mcmc
from marginal_garch import fit_marginals
from simulate import derive_seed, s1_model, s2_model, simulate_panel
from structure_learning import (DEFAULT_THRESHOLDS, chain_diagnostics, classification_metrics, cpdag,
                                edge_features, structure_mcmc)

load_dotenv()

console = Console()
logger = logging.getLogger(__name__)


@dataclass
class ReplicationResult:
    replication: int
    phi_estimates: Dict[DagCopulaKey, float]
    phi_errors: Dict[DagCopulaKey, float]
    covered: Dict[DagCopulaKey, bool]
    auroc: Optional[float]
    metrics: pd.DataFrame
    geweke_p: Optional[float]
    acceptance_rate: float


def run_replication(model: FittedModel, r: int, args) -> ReplicationResult:
    panel = simulate_panel(model, args.days, derive_seed(args.seed, r, 1))
    marginals = [f.params for f in fit_marginals(panel)]

    posterior = fit_dag_mcmc(panel, marginals, model.dag, args.mcmc_iterations, derive_seed(args.seed, r, 2))
    estimates, errors, covered = {}, {}, {}
    for key, truth in model.dag_copulas.items():
        estimates[key] = posterior.theta2[key].phi_bar
        errors[key] = abs(posterior.theta2[key].phi_bar - truth.phi_bar)
        low, high = posterior.intervals[key]
        covered[key] = low.phi_bar <= truth.phi_bar <= high.phi_bar

    chain = structure_mcmc(panel, marginals, None, args.structure_iterations, derive_seed(args.seed, r, 3))
    geweke_p, burn_in = None, chain.N // 2
    try:
        geweke = chain_diagnostics(chain, model.dag)
        geweke_p, burn_in = geweke.p_value, geweke.burn_in
    except ValueError as e:
        logger.info(f"Replication {r}: no Geweke diagnostic ({e})")
    features = edge_features(chain.graphs[burn_in:])
    report = classification_metrics(features, cpdag(model.dag), DEFAULT_THRESHOLDS)
    return ReplicationResult(r, estimates, errors, covered, report.auroc, report.to_frame(), geweke_p,
                             chain.acceptance_rate())


def phi_mae(results: List[ReplicationResult]) -> Dict[DagCopulaKey, float]:
    return {key: float(np.mean([r.phi_errors[key] for r in results])) for key in results[0].phi_errors}


def spread_coverage(model: FittedModel, results: List[ReplicationResult]) -> Dict[DagCopulaKey, bool]:
    """Whether the 5%-95% quantiles of the point estimates across replications contain the true phi_bar"""
    covered = {}
    for key, truth in model.dag_copulas.items():
        low, high = np.quantile([r.phi_estimates[key] for r in results], [0.05, 0.95])
        covered[key] = bool(low <= truth.phi_bar <= high)
    return covered


def mean_auroc(results: List[ReplicationResult]) -> float:
    aurocs = [r.auroc for r in results if r.auroc is not None]
    return float(np.mean(aurocs)) if aurocs else float('nan')


def geweke_pass_rate(results: List[ReplicationResult], level: float = 0.01) -> float:
    return sum(r.geweke_p is not None and r.geweke_p > level for r in results) / len(results)


def summarize(model: FittedModel, results: List[ReplicationResult], out_dir: Optional[str]):
    table = Table(title=f"phi_bar recovery over {len(results)} replications")
    table.add_column("Copula", style="cyan")
    table.add_column("true phi_bar", justify="right")
    table.add_column("MAE", justify="right", style="green")
    table.add_column("90% interval hits", justify="right")
    table.add_column("in 5-95% spread", justify="right")
    rows = []
    maes, spread = phi_mae(results), spread_coverage(model, results)
    for key, truth in model.dag_copulas.items():
        coverage = sum(r.covered[key] for r in results)
        rows.append({'copula': key.label(), 'phi_bar': truth.phi_bar, 'mae': maes[key],
                     'covered': coverage, 'in_spread': spread[key], 'replications': len(results)})
        table.add_row(key.label(), f"{truth.phi_bar:.2f}", f"{maes[key]:.4f}",
                      f"{coverage}/{len(results)}", "✓" if spread[key] else "[yellow]✗[/yellow]")
    console.print(table)

    metrics = pd.concat([r.metrics for r in results])
    mean_metrics = metrics.groupby('threshold').mean(numeric_only=True).reset_index()
    console.print(mean_metrics.to_string(index=False))

    console.print(Panel(f"mean AUROC: {mean_auroc(results):.4f}\n"
                        f"Geweke p > 0.01: {geweke_pass_rate(results):.0%} of {len(results)}\n"
                        f"mean structure acceptance: {np.mean([r.acceptance_rate for r in results]):.3f}",
                        title="Structure learning", style="bold"))

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        pd.DataFrame(rows).to_csv(os.path.join(out_dir, 'phi_recovery.csv'), index=False)
        mean_metrics.to_csv(os.path.join(out_dir, 'edge_metrics.csv'), index=False)
        pd.DataFrame([{'replication': r.replication, 'auroc': r.auroc, 'geweke_p': r.geweke_p,
                       'acceptance_rate': r.acceptance_rate} for r in results]).to_csv(
            os.path.join(out_dir, 'replications.csv'), index=False)
        console.print(f"[green]✓ Saved study tables to {out_dir}[/green]")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description='Repeated GC-GARCH simulation study',
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--graph', choices=['s1', 's2'], default='s1')
    parser.add_argument('--replications', type=int, default=20)
    parser.add_argument('--stocks', type=int, default=20)
    parser.add_argument('--days', type=int, default=1000)
    parser.add_argument('--mcmc-iterations', type=int, default=5000)
    parser.add_argument('--structure-iterations', type=int, default=200)
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--out', help='Directory for CSV tables')
    parser.add_argument('--verbose', '-v', action='store_true')
    args = parser.parse_args(argv)
    logging.basicConfig(level='DEBUG' if args.verbose else os.getenv('GCGARCH_LOG_LEVEL', 'WARNING').upper(),
                        format="%(message)s", handlers=[RichHandler(console=console)])

    model = s1_model(args.stocks, args.seed) if args.graph == 's1' else s2_model(args.stocks, args.seed)
    results = []
    try:
        with Progress(console=console) as progress:
            task = progress.add_task("Replications", total=args.replications)
            for r in range(args.replications):
                results.append(run_replication(model, r, args))
                progress.advance(task)
    except KeyboardInterrupt:
        console.print(f"\n[yellow]⚠ Interrupted after {len(results)} replications[/yellow]")
    if not results:
        return 1
    summarize(model, results, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
