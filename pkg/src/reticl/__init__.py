"""Sequential in-context example selection trained with PPO.

A corpus of worked examples is treated as the action space of an MDP: an
LSTM-backed policy picks examples one at a time, conditioned on the problem
and on what it already picked, and is trained against an LLM-derived (or
synthetic) reward.
"""

from .corpus import (
    Corpus,
    DatasetSplits,
    Example,
    attach_embeddings,
    load_dataset,
    make_splits,
    subsample_corpus,
)
from .environment import (
    Generation,
    LLMClient,
    LLMEnvironment,
    MockClient,
    RewardBreakdown,
    build_prompt,
    check_correct,
    confidence_reward,
    extract_final_answer,
    goal_reward,
    terminal_reward,
)
from .retriever import (
    LatentState,
    PolicyDistribution,
    PolicyParameters,
    encode_problem,
    greedy_action,
    init_parameters,
    policy,
    sample_action,
    step,
    value_estimate,
)
from .trainer import (
    AdamW,
    EvalReport,
    TrainConfig,
    Trajectory,
    evaluate,
    gae_advantages,
    loss_and_gradients,
    rollout,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
