"""Agreement-based ensembling for autoregressive text generators.

Models with different subword vocabularies decode together by agreeing,
byte for byte, on the detokenized string being generated. See README.md
for the algorithm tour and the wire protocol for out-of-process models.
"""

from .agreement import GlobalHypothesis, HypothesisString, agrees, global_hypothesis
from .baseline import InterpolationEnsemble, decode_single, interpolate_step
from .decoder import (
    BeamItem,
    EnsembleConfig,
    Hypothesis,
    StepTrace,
    decode,
    sample_decode,
    update_stall_flags,
)
from .errors import AdapterError, InvalidTokenError, ProtocolError
from .model import (
    EPSILON_ID,
    ByteNgramModel,
    ModelAdapter,
    ModelState,
    ScenarioModel,
    StepResult,
    extend,
    load_scenario,
    save_scenario,
    sequence_score,
    stalled_distribution,
    step,
)
from .oracle import OracleResult, enumerate_joint
from .search import Candidate, Frontier, combined_score, neighbors, next_agreeing, seed
from .vocab import (
    Piece,
    Vocabulary,
    build_vocabulary,
    load_vocabulary,
    save_vocabulary,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "BeamItem",
    "ByteNgramModel",
    "Candidate",
    "EPSILON_ID",
    "EnsembleConfig",
    "Frontier",
    "GlobalHypothesis",
    "Hypothesis",
    "HypothesisString",
    "InterpolationEnsemble",
    "InvalidTokenError",
    "ModelAdapter",
    "ModelState",
    "OracleResult",
    "Piece",
    "ProtocolError",
    "ScenarioModel",
    "StepResult",
    "StepTrace",
    "Vocabulary",
    "agrees",
    "build_vocabulary",
    "combined_score",
    "decode",
    "decode_single",
    "enumerate_joint",
    "extend",
    "global_hypothesis",
    "interpolate_step",
    "load_scenario",
    "load_vocabulary",
    "neighbors",
    "next_agreeing",
    "sample_decode",
    "save_scenario",
    "save_vocabulary",
    "seed",
    "sequence_score",
    "stalled_distribution",
    "step",
    "update_stall_flags",
]
