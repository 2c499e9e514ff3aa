"""Personality- and knowledge-aware matrix factorization for rating prediction."""

from .baselines import fit_baseline, predict_baseline
from .evaluation import dsw_benchmark, lambda_sweep, mae, rmse, run_benchmark
from .ingest import (InteractionMatrix, RatingsDataset, ReviewRecord, build_interaction_matrix,
                     dsw_degree, kfold, make_dsw_subdataset, parse_reviews, split_train_test)
from .knowledge import KnowledgeTable, build_knowledge_table, knowledge_level, review_helpfulness
from .model import (FactorModel, Hyperparams, gradients, init_model, load_model, objective,
                    predict, recommend_top_n, save_model, train)
from .personality import (Lexicon, PersonalityGraph, PersonalityProfile, WeightTable,
                          build_personality_graph, category_frequencies, load_lexicon,
                          load_weights, tokenize, trait_score, user_profiles)
from .pipeline import fit_apar

__version__ = "0.1.0"
