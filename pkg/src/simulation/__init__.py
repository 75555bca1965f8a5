"""Monte Carlo lab: designs with analytic truths, the replication runner and summaries."""
from src.simulation.designs import (
    DESIGNS,
    DesignConstants,
    SimulationError,
    UnknownDesignError,
    design_constants,
    gen_att_did,
    gen_late,
    gen_plm,
    gen_plm_iv,
    gen_selection,
    get_design,
)
from src.simulation.runner import McDesign, ReplicationFailure, run_monte_carlo, run_replication
from src.simulation.summary import (
    CellStatistics,
    McCell,
    McSummary,
    summarize,
    write_summary_csv,
    write_summary_json,
)

__all__ = [
    "CellStatistics",
    "DESIGNS",
    "DesignConstants",
    "McCell",
    "McDesign",
    "McSummary",
    "ReplicationFailure",
    "SimulationError",
    "UnknownDesignError",
    "design_constants",
    "gen_att_did",
    "gen_late",
    "gen_plm",
    "gen_plm_iv",
    "gen_selection",
    "get_design",
    "run_monte_carlo",
    "run_replication",
    "summarize",
    "write_summary_csv",
    "write_summary_json",
]
