"""Command-line interface for running and checking gossip bandit experiments."""

import argparse
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from .config import ExperimentConfig, get_settings, load_experiment_config
from .errors import ConfigError, GossipBanditError, InvariantViolation
from .harness import ExperimentResult, run_experiment, sweep_experiment, validate_experiment
from .linear import ActionSet, compute_spanner, spanner_certificate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVARIANT = 2


class SimpleCLI:
    """Argparse front end with rich output."""

    def __init__(self):
        """Initialize the CLI."""
        self.console = Console()

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="gossip-bandits",
            description="Distributed adversarial bandits over gossip networks",
        )
        commands = parser.add_subparsers(dest="command", required=True)

        run = commands.add_parser("run", help="Run an experiment")
        run.add_argument("config", help="Experiment config file")

        sweep = commands.add_parser("sweep", help="Run one experiment per value of a config key")
        sweep.add_argument("config", help="Experiment config file")
        sweep.add_argument("--vary", required=True, help="Key to vary, as section.key")
        sweep.add_argument("--values", required=True, help="Comma-separated values")

        validate = commands.add_parser("validate", help="Strict dry-run on a short horizon")
        validate.add_argument("config", help="Experiment config file")

        spanner = commands.add_parser("spanner", help="Construct and certify a volumetric spanner")
        spanner.add_argument("action_set", help="CSV with one action vector per row")
        spanner.add_argument("--cap", type=int, default=None, help="Spanner size cap (default 3 x rank)")
        spanner.add_argument("--strict", action="store_true", help="Fail if no certified spanner fits the cap")
        spanner.add_argument("--out", default=None, help="Directory for the index list and lambda CSV")
        return parser

    def display_result(self, result: ExperimentResult, title: str = "Experiment"):
        """Display resolved parameters, regret and diagnostics."""
        p, r, d = result.parameters, result.regret, result.diagnostics

        params = Table(title=f"{title}: parameters", box=box.ROUNDED)
        params.add_column("Quantity", style="cyan")
        params.add_column("Value", style="green")
        for name, value in [
            ("variant", p.variant),
            ("N / K / d", f"{p.n_agents} / {p.n_arms} / {p.dim if p.dim is not None else '-'}"),
            ("T (effective)", f"{p.horizon} ({p.effective_horizon})"),
            ("B / blocks", f"{p.block_len} / {p.n_blocks}"),
            ("sigma2 / kappa", f"{p.sigma2:.6f} / {p.kappa:.6f}"),
            ("eta / gamma / beta", f"{p.eta:.6g} / {p.gamma} / {p.beta}"),
            ("theory-void", str(p.theory_void)),
        ]:
            params.add_row(name, value)
        self.console.print(params)

        regret = Table(title="Regret", box=box.ROUNDED)
        regret.add_column("Agent", style="cyan")
        regret.add_column("Mean", style="green")
        regret.add_column("SE", style="blue")
        for i, (mean, se) in enumerate(zip(r.per_agent_mean, r.per_agent_se)):
            style = "bold" if i == r.worst_agent else None
            regret.add_row(str(i + 1), f"{mean:.4f}", f"{se:.4f}", style=style)
        self.console.print(regret)

        bound = f"{r.theory_bound:.2f} ({r.bound_kind})" if r.theory_bound is not None else "-"
        summary = (
            f"Reg_T = {r.worst_regret:.4f} +/- {r.worst_regret_se:.4f} over {r.num_runs} run(s)\n"
            f"Bound: {bound}, valid={r.bound_valid}, satisfied={r.bound_satisfied}\n"
            f"Consensus: max {d.max_consensus_error:.3e} (bound {d.consensus_bound:.3e}), "
            f"{d.consensus_violations} violation(s)\n"
            f"Ghost ratio: max {d.max_ghost_ratio} (limit {d.ghost_limit}), {d.ghost_violations} violation(s)"
        )
        if d.max_estimate is not None:
            summary += f"\nEstimate magnitude: max {d.max_estimate:.4g} (bound {d.estimate_bound})"
        self.console.print(Panel(summary, title="Summary", border_style="green"))

    def cmd_run(self, args) -> int:
        cfg = load_experiment_config(args.config)
        _, result = run_experiment(cfg)
        self.display_result(result)
        self.console.print(f"[blue]Outputs in {cfg.output.dir or get_settings().output_dir}[/blue]")
        return EXIT_OK

    def cmd_sweep(self, args) -> int:
        cfg = load_experiment_config(args.config)
        values: List[str] = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values needs at least one value")
        results = sweep_experiment(cfg, args.vary, values)

        table = Table(title=f"Sweep over {args.vary}", box=box.ROUNDED)
        table.add_column("Value", style="cyan")
        table.add_column("B", style="magenta")
        table.add_column("Reg_T", style="green")
        table.add_column("SE", style="blue")
        table.add_column("Reg_T / T", style="green")
        table.add_column("Bound", style="yellow")
        for value, result in results:
            r, p = result.regret, result.parameters
            table.add_row(
                str(value),
                str(p.block_len),
                f"{r.worst_regret:.3f}",
                f"{r.worst_regret_se:.3f}",
                f"{r.worst_regret / p.effective_horizon:.5f}",
                f"{r.theory_bound:.2f}" if r.theory_bound is not None else "-",
            )
        self.console.print(table)
        return EXIT_OK

    def cmd_validate(self, args) -> int:
        cfg: ExperimentConfig = load_experiment_config(args.config)
        result = validate_experiment(cfg)
        self.display_result(result, title="Validation")
        if result.diagnostics.theory_checked:
            self.console.print("[green]All runtime checks passed[/green]")
        else:
            self.console.print("[yellow]Theory-void dry-run: bound checks were recorded but not enforced[/yellow]")
        return EXIT_OK

    def cmd_spanner(self, args) -> int:
        omega = ActionSet.from_csv(args.action_set)
        spanner = compute_spanner(omega, size_cap=args.cap, strict=args.strict)
        report = spanner_certificate(spanner, omega)

        table = Table(title=f"Volumetric spanner for {Path(args.action_set).name}", box=box.ROUNDED)
        table.add_column("Quantity", style="cyan")
        table.add_column("Value", style="green")
        table.add_row("K / d / rank", f"{omega.n_arms} / {omega.ambient_dim} / {omega.effective_dim}")
        table.add_row("members (1-based)", ", ".join(str(i + 1) for i in spanner.member_indices))
        table.add_row("size / cap", f"{spanner.size} / {spanner.size_cap}")
        table.add_row("max quadratic form", f"{report.max_quadratic_form:.12f}")
        table.add_row("spanner constant c", f"{report.spanner_constant:.12f}")
        table.add_row("reconstruction residual", f"{report.reconstruction_residual:.3e}")
        table.add_row("certified", str(report.certified))
        self.console.print(table)

        if args.out:
            spanner.export(args.out)
            self.console.print(f"[blue]Spanner written to {args.out}[/blue]")
        return EXIT_OK

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Run the CLI and return the process exit code."""
        args = self.build_parser().parse_args(argv)
        handlers = {
            "run": self.cmd_run,
            "sweep": self.cmd_sweep,
            "validate": self.cmd_validate,
            "spanner": self.cmd_spanner,
        }
        try:
            return handlers[args.command](args)
        except KeyboardInterrupt:
            self.console.print("\n[yellow]Interrupted by user[/yellow]")
            return EXIT_ERROR
        except ConfigError as e:
            logger.error(f"Configuration error: {e}")
            self.console.print(f"[red]Configuration error: {e}[/red]")
            return EXIT_ERROR
        except InvariantViolation as e:
            logger.error(f"Invariant violation: {e}")
            self.console.print(f"[red]Invariant violation: {e}[/red]")
            return EXIT_INVARIANT
        except GossipBanditError as e:
            logger.error(f"Run failed: {e}")
            self.console.print(f"[red]Error: {e}[/red]")
            return EXIT_ERROR
