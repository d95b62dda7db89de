#!/usr/bin/env python3
"""
GC-GARCH command line: build return panels, simulate, estimate, learn the
risk-factor network, forecast, optimize and backtest.

Usage:
  python cli.py ingest --prices prices.csv --manifest manifest.csv --out panel.csv
  python cli.py simulate --graph s1 --stocks 20 --days 1000 --seed 1 --out panel.csv
  python cli.py fit-marginals --panel panel.csv --manifest manifest.csv --out marginals.csv
  python cli.py learn-structure --panel panel.csv --manifest manifest.csv --iterations 200
  python cli.py fit-dag --panel panel.csv --manifest manifest.csv --edges "0->1,1->2" --method mcmc
  python cli.py fit-stocks --panel panel.csv --manifest manifest.csv --dag-fit dag_fit.json --out model.json
  python cli.py optimize --model model.json --panel panel.csv --manifest manifest.csv --book mcvar --alpha 0.05
  python cli.py backtest --panel panel.csv --manifest manifest.csv --config backtest.env --out results/
  python cli.py report --results results/ --out tables/
"""
import argparse
import logging
import os
import sys
import traceback

import numpy as np
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from backtest import BacktestConfig, read_report, run_backtest
from data_model import (Dag, FittedModel, GarchParams, GcGarchError, InvalidInputError, load_price_csv,
                        parse_edges, read_panel_csv, write_panel_csv)
from estimation import SequentialDagFitter, estimate_model, fit_dag_mcmc, fit_stocks, write_chain_csv
from marginal_garch import fit_marginals, read_marginals_csv, write_marginals_csv
from model_store import load_dag_fit, load_model, save_dag_fit, save_model
from pcc_engine import dag_loglik_from_u, full_loglik, marginal_pits
from portfolio import (estimate_cvar, model_average, mv_cvars, single_model_forecast, solve_mcvar, solve_mv,
                       write_cvar_csv, write_weights_csv)
from simulate import draw_parameters, s1_model, s2_model, simulate_panel, write_scenarios_csv
from structure_learning import (bic_score, chain_diagnostics, classification_metrics, cpdag, edge_features,
                                structure_mcmc, top_graphs, write_edge_features_csv, write_graph_log_csv)

load_dotenv()

console = Console()


def setup_logging(verbose: bool):
    level = 'DEBUG' if verbose else os.getenv('GCGARCH_LOG_LEVEL', 'WARNING').upper()
    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(console=console, rich_tracebacks=False)])


def progress_bar(description: str):
    return Progress(TextColumn("[cyan]{task.description}"), BarColumn(),
                    TextColumn("{task.completed}/{task.total}"), TimeElapsedColumn(), console=console)


def run_with_progress(description: str, work):
    """Call work(callback) with a rich progress bar bound to callback(i, n)"""
    with progress_bar(description) as progress:
        task = progress.add_task(description, total=None)

        def step(i, n):
            progress.update(task, completed=i, total=n)

        return work(step)


def load_panel(args):
    m = getattr(args, 'factors', None)
    panel = read_panel_csv(args.panel, args.manifest, m)
    console.print(f"[green]✓ Loaded {panel.T} days, {panel.m} factors, {panel.p} stocks from {args.panel}[/green]")
    return panel


def load_marginals(args, panel):
    if getattr(args, 'marginals', None):
        return read_marginals_csv(args.marginals, panel.symbols)
    console.print("[yellow]⚠ No --marginals given, fitting GARCH marginals first[/yellow]")
    return [f.params for f in fit_marginals(panel)]


def parse_dag(m: int, edges: str) -> Dag:
    return Dag.from_edges(m, parse_edges(edges or ''))


def parse_alphas(text: str):
    try:
        return [float(a) for a in text.split(',') if a.strip()]
    except ValueError:
        raise ValueError(f"Bad alpha list: {text!r}")


def display_copulas(title: str, theta2: dict, intervals: dict = None):
    table = Table(title=title, show_lines=False)
    table.add_column("Copula", style="cyan")
    for name in ("phi_bar", "a", "b", "v"):
        table.add_column(name, justify="right")
    if intervals:
        table.add_column("phi_bar 90%", style="magenta", justify="right")
    for key, params in theta2.items():
        row = [key.label(), f"{params.phi_bar:.4f}", f"{params.a:.4f}", f"{params.b:.4f}", f"{params.v:.2f}"]
        if intervals:
            low, high = intervals[key]
            row.append(f"[{low.phi_bar:.3f}, {high.phi_bar:.3f}]")
        table.add_row(*row)
    console.print(table)


def cmd_ingest(args):
    panel = load_price_csv(args.prices, args.manifest)
    write_panel_csv(panel, args.out, args.manifest_out)
    console.print(f"[green]✓ Wrote {panel.T} x {panel.m + panel.p} returns to {args.out}[/green]")


def cmd_simulate(args):
    if args.model:
        model = load_model(args.model)
    elif args.graph == 's1':
        model = s1_model(args.stocks, args.seed)
    elif args.graph == 's2':
        model = s2_model(args.stocks, args.seed)
    else:
        dag = parse_dag(args.factors_count, args.edges)
        model = draw_parameters(dag, args.stocks, args.seed)
    if args.save_model:
        save_model(model, args.save_model)
        console.print(f"[green]✓ Saved generating model to {args.save_model}[/green]")
    panel = simulate_panel(model, args.days, args.seed)
    write_panel_csv(panel, args.out, args.manifest_out)
    console.print(f"[green]✓ Simulated {panel.T} days of {panel.m} factors and {panel.p} stocks to {args.out}[/green]")


def cmd_fit_marginals(args):
    panel = load_panel(args)
    fits = fit_marginals(panel)
    write_marginals_csv(args.out, panel.symbols, fits)
    table = Table(title="GARCH(1,1)-t marginals")
    for column in ("Symbol", "omega", "alpha", "beta", "v", "loglik", "ok"):
        table.add_column(column, justify="right" if column != "Symbol" else "left")
    for symbol, fit in zip(panel.symbols, fits):
        p = fit.params
        table.add_row(symbol, f"{p.omega:.4f}", f"{p.alpha:.4f}", f"{p.beta:.4f}", f"{p.v:.2f}",
                      f"{fit.loglik:.1f}", "✓" if fit.converged else "[yellow]✗[/yellow]")
    console.print(table)
    console.print(f"[green]✓ Saved marginals to {args.out}[/green]")


def cmd_fit_dag(args):
    panel = load_panel(args)
    marginals = load_marginals(args, panel)
    dag = parse_dag(panel.m, args.edges)
    pits = marginal_pits(panel.without_stocks(), marginals[:panel.m])
    fit = SequentialDagFitter(pits.u, args.m_sc).fit(dag)
    posterior = None
    theta2 = fit.theta2
    if args.method == 'mcmc':
        posterior = run_with_progress("RAM sampler", lambda step: fit_dag_mcmc(
            panel, marginals, dag, args.iterations, args.seed, fit, args.m_sc, args.summary, step))
        theta2 = posterior.theta2
        if args.chain_csv:
            write_chain_csv(posterior.chain, args.chain_csv)
        console.print(f"[green]✓ Acceptance rate {posterior.chain.acceptance_rate():.3f}, "
                      f"burn-in {posterior.chain.burn_in}[/green]")
    loglik = dag_loglik_from_u(pits.u, dag, theta2, args.m_sc).loglik
    save_dag_fit(args.out, dag, theta2, loglik, args.method, panel.symbols, posterior, tuple(marginals))
    display_copulas(f"DAG copulas ({args.method})", theta2, posterior.intervals if posterior else None)
    console.print(f"[green]✓ l2 = {loglik:.3f}, saved to {args.out}[/green]")


def cmd_learn_structure(args):
    panel = load_panel(args)
    marginals = load_marginals(args, panel)
    init = parse_dag(panel.m, args.init_edges) if args.init_edges else None
    chain = run_with_progress("Structure MCMC", lambda step: structure_mcmc(
        panel, marginals, init, args.iterations, args.seed, m_sc=args.m_sc, progress=step))
    burn_in = args.burn_in if args.burn_in is not None else chain.N // 2
    features = edge_features(chain.graphs[burn_in + 1:] or chain.graphs[-1:])
    if args.graph_log:
        write_graph_log_csv(chain, args.graph_log)
    if args.features:
        write_edge_features_csv(features, args.features, panel.symbols[:panel.m])

    table = Table(title=f"Top graphs after {burn_in} burn-in iterations")
    table.add_column("Rank", justify="right")
    table.add_column("BIC", justify="right", style="green")
    table.add_column("Edges", style="cyan")
    for rank, graph in enumerate(top_graphs(chain, args.top, burn_in), 1):
        table.add_row(str(rank), f"{graph.bic:.2f}", ", ".join(f"{i}->{j}" for i, j in graph.dag.edges()) or "(none)")
    console.print(table)
    console.print(f"Acceptance rate: {chain.acceptance_rate():.3f}")

    truth = parse_dag(panel.m, args.truth_edges) if args.truth_edges else None
    try:
        geweke = chain_diagnostics(chain, truth)
        console.print(f"Geweke burn-in {geweke.burn_in}, z = {geweke.z:.3f}, p = {geweke.p_value:.3f}")
    except GcGarchError as e:
        console.print(f"[yellow]⚠ No convergence diagnostic: {e}[/yellow]")
    if truth is not None:
        report = classification_metrics(features, cpdag(truth))
        console.print(report.to_frame().to_string(index=False))
        console.print(Panel(f"AUROC vs true CPDAG: {report.auroc}", style="bold"))


def cmd_fit_stocks(args):
    panel = load_panel(args)
    dag, theta2, document = load_dag_fit(args.dag_fit)
    stored = document.get('marginals')
    if not args.marginals and stored and len(stored) == panel.m + panel.p:
        marginals = [GarchParams(e['omega'], e['alpha'], e['beta'], e['v']) for e in stored]
    else:
        marginals = load_marginals(args, panel)
    pits = marginal_pits(panel, marginals)
    lattice = dag_loglik_from_u(pits.u[:, :panel.m], dag, theta2, args.m_sc).lattice
    fits = run_with_progress("Stock copulas", lambda step: fit_stocks(
        panel, marginals, lattice, args.workers, progress=step))
    model = FittedModel(tuple(marginals), dag, theta2, fits.theta3, args.m_sc, panel.symbols)
    save_model(model, args.out)
    if fits.n_failed:
        console.print(f"[yellow]⚠ {fits.n_failed} stock copula fits did not converge[/yellow]")
    parts = full_loglik(panel, model)
    console.print(Panel(f"l1 = {parts.marginal.sum():.2f}\nl2 = {parts.dag.loglik:.2f}\n"
                        f"l3 = {parts.stocks.sum():.2f}\n"
                        f"total = {parts.total:.2f}", title="Log-likelihood", style="bold"))
    console.print(f"[green]✓ Saved model to {args.out}[/green]")


def cmd_estimate(args):
    panel = load_panel(args)
    dag = parse_dag(panel.m, args.edges)

    def work(step):
        return estimate_model(panel, dag, args.method, args.iterations, args.seed, args.m_sc,
                              max_workers=args.workers, progress=lambda stage, i, n: step(i, n))

    result = run_with_progress("Estimating", work)
    save_model(result.model, args.out)
    display_copulas("DAG copulas", result.model.dag_copulas,
                    result.posterior.intervals if result.posterior else None)
    console.print(f"[green]✓ Saved model to {args.out}[/green]")


def cmd_score(args):
    panel = load_panel(args)
    marginals = load_marginals(args, panel)
    dag = parse_dag(panel.m, args.edges)
    scored = bic_score(panel, marginals, dag, m_sc=args.m_sc)
    console.print(Panel(f"edges: {dag.edges()}\nl2 at sequential estimates: {scored.loglik:.3f}\n"
                        f"parameters: {scored.n_params}\nBIC: {scored.bic:.3f}", title="Graph score", style="bold"))


def _forecast(args, panel):
    models = [load_model(path) for path in args.model]
    if len(models) == 1:
        return single_model_forecast(models[0], panel, args.scenarios, args.seed, args.workers)
    scores = [float(s) for s in (args.scores or '').split(',') if s.strip()]
    if len(scores) != len(models):
        raise ValueError(f"--scores needs one BIC per model ({len(models)}), got {len(scores)}")
    return model_average(models, scores, panel, args.scenarios, args.seed, args.workers)


def cmd_forecast(args):
    panel = load_panel(args)
    forecast = _forecast(args, panel)
    alphas = parse_alphas(args.alpha)
    mv = solve_mv(forecast.covariance)
    table = Table(title=f"One-day forecast after {panel.dates[-1]}")
    table.add_column("Symbol", style="cyan")
    table.add_column("sigma^2", justify="right")
    table.add_column("MV weight", justify="right")
    for symbol, var, w in zip(panel.stock_symbols, np.diag(forecast.covariance), mv.weights):
        table.add_row(symbol, f"{var:.4f}", f"{w:.4f}")
    console.print(table)
    for alpha, cvar in zip(alphas, mv_cvars(forecast.scenarios, mv, alphas)):
        console.print(f"CVaR of MV portfolio at alpha={alpha:g}: {cvar:.4f}%")
    if args.scenarios_out:
        write_scenarios_csv(forecast.scenarios, args.scenarios_out)
        console.print(f"[green]✓ Saved {forecast.scenarios.K} scenarios to {args.scenarios_out}[/green]")


def cmd_optimize(args):
    panel = load_panel(args)
    forecast = _forecast(args, panel)
    if args.book == 'mv':
        solution = solve_mv(forecast.covariance, args.long_only)
        summary = f"Predicted variance: {solution.objective:.6f} %^2"
    else:
        alpha = parse_alphas(args.alpha)[0]
        solution = solve_mcvar(forecast.scenarios, alpha, args.long_only)
        check = estimate_cvar(forecast.scenarios.returns @ solution.weights, alpha, solution.var_level)
        summary = f"Predicted CVaR at alpha={alpha:g}: {solution.objective:.6f}% (VaR level {solution.var_level:.4f})"
        if args.cvar_out:
            write_cvar_csv([(panel.dates[-1], alpha, solution.objective)], args.cvar_out)
        logging.getLogger(__name__).debug(f"Scenario objective at the LP VaR level: {check}")
    table = Table(title=f"{args.book.upper()} weights")
    table.add_column("Symbol", style="cyan")
    table.add_column("Weight", justify="right")
    for symbol, w in zip(panel.stock_symbols, solution.weights):
        table.add_row(symbol, f"{w:.6f}")
    console.print(table)
    console.print(Panel(summary, style="bold"))
    if args.out:
        write_weights_csv([(panel.dates[-1], panel.stock_symbols, solution.weights)], args.out)
        console.print(f"[green]✓ Saved weights to {args.out}[/green]")


def cmd_backtest(args):
    panel = load_panel(args)
    overrides = {
        'window': args.window, 'K': args.scenarios, 'strategy': args.strategy, 'ws': args.ws,
        'reserve_weeks': args.reserve_weeks, 'seed': args.seed, 'structure': args.structure,
        'dag_edges': args.edges, 'n_graphs': args.n_graphs, 'workers': args.workers,
        'alphas': tuple(parse_alphas(args.alphas)) if args.alphas else None,
    }
    config = BacktestConfig.load(args.config, overrides)
    console.print(Panel(f"window {config.window} days, K={config.K}, alphas {config.alphas}\n"
                        f"structure: {config.dag_edges or config.structure}, ws={config.ws}, "
                        f"reserve {config.reserve_weeks} weeks", title="Backtest", style="bold"))
    report = run_with_progress("Weekly fits", lambda step: run_backtest(panel, config, step))
    report.write(args.out)
    show_report(report, config.strategy)
    if report.errors:
        console.print(f"[yellow]⚠ {len(report.errors)} weekly fits failed and kept the previous weights[/yellow]")
    console.print(f"[green]✓ Saved weekly results to {args.out}[/green]")


def show_report(report, strategy: int = 1):
    costs = Table(title="Cost function and exceedances")
    for column in ("Book", "alpha", "C(alpha)", "exceedances", "weeks"):
        costs.add_column(column, justify="right")
    for row in report.cost_table().itertuples(index=False):
        cost = "undefined" if row.cost is None or np.isnan(row.cost) else f"{row.cost:.4f}"
        costs.add_row(row.book, f"{row.alpha:g}", cost, str(row.exceedances), str(row.weeks))
    console.print(costs)

    values = report.cumulative_values()
    if len(values):
        suffix = '_s2' if strategy == 2 else ''
        final = Table(title=f"Final value, strategy {strategy}")
        final.add_column("Book", style="cyan")
        final.add_column("Value", justify="right", style="green")
        for column in values.columns:
            if column == 'date' or (suffix and not column.endswith(suffix)) or (not suffix and column.endswith('_s2')):
                continue
            final.add_row(column, f"{values[column].iloc[-1]:,.2f}")
        console.print(final)
    if strategy == 2:
        console.print(report.strategy2_summary().to_string(index=False))


def cmd_report(args):
    report = read_report(args.results, args.capital, args.ws)
    written = report.write_tables(args.out)
    show_report(report, args.strategy)
    for path in written:
        console.print(f"[green]✓ {path}[/green]")


def add_panel_args(parser, marginals=False):
    parser.add_argument('--panel', required=True, help='Wide returns CSV (date,<symbols>)')
    parser.add_argument('--manifest', help='Manifest CSV (symbol,role) fixing factor/stock columns')
    parser.add_argument('--factors', type=int, help='Number of leading factor columns when no manifest is given')
    if marginals:
        parser.add_argument('--marginals', help='Marginals CSV from fit-marginals (refit when omitted)')


def add_forecast_args(parser):
    parser.add_argument('--model', action='append', required=True,
                        help='Model JSON; repeat to average several networks')
    parser.add_argument('--scores', help='Comma-separated BIC scores, one per --model, for averaging')
    parser.add_argument('--scenarios', '-K', type=int, default=int(os.getenv('GCGARCH_K', '20000')),
                        help='Number of one-day scenarios (default: GCGARCH_K or 20000)')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--workers', type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='GC-GARCH: graphical copula GARCH modelling, network learning and CVaR portfolios',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python cli.py ingest --prices prices.csv --manifest manifest.csv --out panel.csv
  python cli.py simulate --graph s1 --stocks 20 --days 1000 --out panel.csv --manifest-out manifest.csv
  python cli.py score --panel panel.csv --manifest manifest.csv --edges "0->1,1->2"
  python cli.py learn-structure --panel panel.csv --manifest manifest.csv --truth-edges "0->1,1->2"
  python cli.py fit-dag --panel panel.csv --manifest manifest.csv --edges "0->1" --method mcmc
  python cli.py forecast --model model.json --panel panel.csv --manifest manifest.csv --alpha 0.01,0.05
  python cli.py optimize --model a.json --model b.json --scores -10.2,-11.0 --panel panel.csv --book mv
  python cli.py backtest --panel panel.csv --manifest manifest.csv --strategy 2 --ws 8 --out results/
        """
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    parser.add_argument('--m-sc', type=int, default=2, help='Sample-correlation window (default: 2)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('ingest', help='Prices CSV + manifest -> returns panel')
    p.add_argument('--prices', required=True, help='Long price file date,symbol,close')
    p.add_argument('--manifest', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--manifest-out')
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser('simulate', help='Simulate a return panel from a model')
    p.add_argument('--model', help='Model JSON to simulate from')
    p.add_argument('--graph', choices=['s1', 's2', 'edges'], default='s1',
                   help='Built-in graph with drawn parameters when no --model is given')
    p.add_argument('--edges', help='Edges i->j for --graph edges')
    p.add_argument('--factors-count', type=int, default=3, help='Factor count for --graph edges')
    p.add_argument('--stocks', type=int, default=20)
    p.add_argument('--days', type=int, default=1000)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.add_argument('--manifest-out')
    p.add_argument('--save-model', help='Also save the generating model JSON')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('fit-marginals', help='GARCH(1,1)-t fit of every column')
    add_panel_args(p)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_fit_marginals)

    p = sub.add_parser('fit-dag', help='Fit the DAG copulas of a given graph')
    add_panel_args(p, marginals=True)
    p.add_argument('--edges', default='', help='Edges i->j, comma separated (0-based)')
    p.add_argument('--method', choices=['sequential', 'mcmc'], default='sequential')
    p.add_argument('--iterations', type=int, default=20000)
    p.add_argument('--summary', choices=['median', 'mean'], default='median')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--chain-csv', help='Write the RAM chain (iter,param,value,accepted)')
    p.add_argument('--out', default='dag_fit.json')
    p.set_defaults(func=cmd_fit_dag)

    p = sub.add_parser('learn-structure', help='Structure MCMC over the reduced DAG space')
    add_panel_args(p, marginals=True)
    p.add_argument('--iterations', type=int, default=200)
    p.add_argument('--burn-in', type=int, help='Default: half the chain')
    p.add_argument('--init-edges', help='Start graph (default: empty)')
    p.add_argument('--truth-edges', help='Known graph for CPDAG metrics and d(G) diagnostics')
    p.add_argument('--top', type=int, default=3)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--graph-log', help='CSV iter,score,adjacency_bits')
    p.add_argument('--features', help='Edge-feature matrix CSV')
    p.set_defaults(func=cmd_learn_structure)

    p = sub.add_parser('fit-stocks', help='Fit stock copulas given a DAG fit and save the full model')
    add_panel_args(p, marginals=True)
    p.add_argument('--dag-fit', required=True)
    p.add_argument('--workers', type=int, default=1)
    p.add_argument('--out', default='model.json')
    p.set_defaults(func=cmd_fit_stocks)

    p = sub.add_parser('estimate', help='All three estimation stages for a given graph')
    add_panel_args(p)
    p.add_argument('--edges', default='')
    p.add_argument('--method', choices=['sequential', 'mcmc'], default='sequential')
    p.add_argument('--iterations', type=int, default=20000)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--workers', type=int, default=1)
    p.add_argument('--out', default='model.json')
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser('score', help='Approximate BIC of a graph')
    add_panel_args(p, marginals=True)
    p.add_argument('--edges', default='')
    p.set_defaults(func=cmd_score)

    p = sub.add_parser('forecast', help='One-day covariance, scenarios and CVaR of the MV portfolio')
    add_panel_args(p)
    add_forecast_args(p)
    p.add_argument('--alpha', default='0.05', help='Comma-separated coverage levels')
    p.add_argument('--scenarios-out', help='Scenario CSV k,symbol,return')
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser('optimize', help='Solve the MV or MCVaR portfolio')
    add_panel_args(p)
    add_forecast_args(p)
    p.add_argument('--book', choices=['mv', 'mcvar'], default='mcvar')
    p.add_argument('--alpha', default='0.05')
    p.add_argument('--long-only', action='store_true')
    p.add_argument('--out', help='Weights CSV date,symbol,weight')
    p.add_argument('--cvar-out', help='CVaR CSV date,alpha,cvar')
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser('backtest', help='Moving-window weekly backtest')
    add_panel_args(p)
    p.add_argument('--config', help='KEY=VALUE file with GCGARCH_* settings')
    p.add_argument('--window', type=int)
    p.add_argument('--scenarios', '-K', type=int)
    p.add_argument('--alphas', help='Comma-separated coverage levels')
    p.add_argument('--strategy', type=int, choices=[1, 2])
    p.add_argument('--ws', type=int, help='Weeks in the strategy 2 CVaR average')
    p.add_argument('--reserve-weeks', type=int)
    p.add_argument('--structure', choices=['fixed', 'refit', 'map+avg'])
    p.add_argument('--n-graphs', type=int)
    p.add_argument('--edges', help='Fix the DAG and skip structure learning')
    p.add_argument('--seed', type=int)
    p.add_argument('--workers', type=int)
    p.add_argument('--out', default='backtest_results')
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser('report', help='Plot-ready CSVs from saved backtest results')
    p.add_argument('--results', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--capital', type=float, default=10000.0)
    p.add_argument('--ws', type=int, default=8)
    p.add_argument('--strategy', type=int, choices=[1, 2], default=1)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        args.func(args)
        return 0
    except KeyboardInterrupt:
        console.print("\n[bold blue]Interrupted.[/bold blue]")
        return 130
    except FileNotFoundError as e:
        console.print(f"[bold red]Setup Error:[/bold red] {e}")
        console.print("\n[yellow]Check the input paths[/yellow]\n")
    except InvalidInputError as e:
        console.print(f"[bold red]Input Error:[/bold red] {e}")
    except GcGarchError as e:
        console.print(f"[bold red]Model Error:[/bold red] {e}")
    except ValueError as e:
        console.print(f"[bold red]Configuration Error:[/bold red] {e}")
        console.print("\n[yellow]Please check your .env / config file[/yellow]\n")
    except Exception as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        console.print(traceback.format_exc())
    return 1


if __name__ == "__main__":
    sys.exit(main())
