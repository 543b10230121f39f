"""
➡️ But : assembler toutes les pièces du puzzle.

Construit le parser argparse (fit, adjust, validate, kl, energy).

Configure :

les logs JSON (niveau via --log-level ou settings.LOG_LEVEL)

la config du run (fichier JSON + surcharges --seed / --threads / --mode)

Traduit les erreurs métier en codes de sortie : 0 succès, 2 config, 3 données, 4 numérique.

🔹 Avantages :

Point unique d’exécution : wind-adjust <commande> --config run.json

Les services ne connaissent ni argparse ni sys.exit.
"""

import argparse
import logging
import sys
from typing import Callable, Dict, Optional, Sequence, Tuple, Type

from pydantic import ValidationError

from app import __version__
from app.cli.commands.adjust import cmd_adjust
from app.cli.commands.energy import cmd_energy
from app.cli.commands.fit import cmd_fit
from app.cli.commands.kl import cmd_kl
from app.cli.commands.validate import cmd_validate
from app.cli.dependencies import (
    RunContext,
    get_cluster_repository,
    get_field_repository,
    get_plan_repository,
    load_run_config,
)
from app.cli.schemas import (
    AdjustConfig,
    EnergyConfig,
    FitConfig,
    KlConfig,
    RunConfig,
    ValidateConfig,
)
from app.core.errors import WindAdjustError
from app.core.logs import configure_logging, log_event

LOGGER = logging.getLogger(__name__)


# -----------------------------
# Commandes
# -----------------------------
def _run_fit(ctx: RunContext):
    return cmd_fit(ctx, get_field_repository(ctx), get_cluster_repository(ctx))


def _run_adjust(ctx: RunContext):
    return cmd_adjust(
        ctx, get_field_repository(ctx), get_cluster_repository(ctx), get_plan_repository(ctx)
    )


def _run_kl(ctx: RunContext):
    return cmd_kl(ctx, get_field_repository(ctx))


def _run_energy(ctx: RunContext):
    return cmd_energy(ctx, get_field_repository(ctx))


def _run_validate(ctx: RunContext):
    return cmd_validate(ctx, get_field_repository(ctx), get_cluster_repository(ctx))


COMMANDS: Dict[str, Tuple[Type[RunConfig], Callable[[RunContext], object], str]] = {
    "fit": (FitConfig, _run_fit, "Climatologie, AR, λ, moments et clusters historiques"),
    "adjust": (AdjustConfig, _run_adjust, "Ajuste le champ simulé futur (M, MV, MC, MN, T1, TC)"),
    "validate": (
        ValidateConfig, _run_validate, "Banc skew-t / GLG ou rapports de KL sur données réelles"
    ),
    "kl": (KlConfig, _run_kl, "Divergence KL k-NN entre deux champs"),
    "energy": (EnergyConfig, _run_energy, "Écarts de revenu éolien à hauteur de moyeu"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Fichier de config JSON du run")
    common.add_argument("--seed", type=int, default=None, help="Graine racine (surcharge)")
    common.add_argument("--threads", type=int, default=None, help="Nombre max de threads")
    common.add_argument(
        "--mode", choices=["as-written", "anomaly"], default=None,
        help="Forme de l'ajustement (adjust, validate)",
    )
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING...")

    parser = argparse.ArgumentParser(prog="wind-adjust")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    model, runner, _ = COMMANDS[args.command]
    overrides = {"seed": args.seed, "threads": args.threads, "mode": args.mode}
    try:
        ctx = load_run_config(args.config, model, overrides)
        outputs = runner(ctx)
    except ValidationError as exc:
        log_event(LOGGER, "config_invalid", level=logging.ERROR,
                  command=args.command, errors=exc.errors(include_url=False))
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except WindAdjustError as exc:
        log_event(LOGGER, "command_failed", level=logging.ERROR,
                  command=args.command, code=exc.code, detail=str(exc))
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    log_event(LOGGER, "command_done", command=args.command,
              outputs={k: str(v) for k, v in (outputs or {}).items()})
    return 0


if __name__ == "__main__":
    sys.exit(main())
