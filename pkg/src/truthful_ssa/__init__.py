"""Truthful contextual-bandit mechanisms for single-slot sponsored search."""
from .core import (AgentSpec, ClickTape, Context, ContextCorpus, Instance, RoundRecord,
                   generate_agents, generate_click_tape, generate_corpus, load_instance,
                   make_instance, pseudo_regret, pseudo_regret_increment,
                   sample_context_sequence, save_instance)
from .elinucb import ELinUCB, designated_agent, elinucb_s, elinucb_sb
from .linmodel import ConfidenceScore, LearnerState, init_state, score, update
from .mechanism import (charge, explore_separated_baseline, resample, run_allocator,
                        run_mechanism)
from .suplinucb import SupLinUCB, calibrated_alpha, stage_count

__version__ = "0.1.0"
