"""Evidence of multiple conversation floors inside F-formations."""

__version__ = "0.1.0"

from .annotations import (FFormation, LintReport, SpeakingMatrix, filter_fformations,
                          lint_turns, parse_fformations_csv, parse_speaking_csv)
from .floors import (Observation, WindowConfig, aggregate_by_cardinality,
                     count_speakers_in_window, max_floors, sweep)
from .glm import (DesignMatrix, GlmFit, build_design, fit_poisson_irls, posthoc_pairwise,
                  wald_inference)
from .sim import SimScenario, recovery_rate, simulate
from .turns import Turn, TransitionEvent, classify_transitions, overlap_stats, segment_turns
