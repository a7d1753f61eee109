"""Exception hierarchy. Every error carries a module-qualified ``code`` used by the CLI."""


class DwpomError(Exception):
    code = "dwpom.error"


class SingularDesign(DwpomError):
    code = "model_core.singular_design"


class NonConvergence(DwpomError):
    code = "model_core.non_convergence"


class DegenerateOutcome(DwpomError):
    code = "model_core.degenerate_outcome"


class DegenerateCut(DwpomError):
    code = "model_core.degenerate_cut"


class DomainError(DwpomError, ValueError):
    code = "propensity.domain"


class NoDiscordantPairs(DwpomError):
    code = "propensity.no_discordant_pairs"


class MissingKappas(DwpomError, ValueError):
    code = "balancing.missing_kappas"


class FoldDegenerate(DwpomError):
    code = "estimator.fold_degenerate"


class AllDrawsDegenerate(DwpomError):
    code = "dynamics.all_draws_degenerate"


class BrantFailure(DwpomError):
    code = "dynamics.brant_failure"


class DimensionMismatch(DwpomError, ValueError):
    code = "policy.dimension_mismatch"


class LengthMismatch(DwpomError, ValueError):
    code = "policy.length_mismatch"


class SchemaError(DwpomError):
    code = "data.schema"


class ReplicateBudgetExceeded(DwpomError):
    code = "simulation.failure_budget"


class UsageError(DwpomError):
    code = "cli.usage"
