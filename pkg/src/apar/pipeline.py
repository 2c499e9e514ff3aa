"""End-to-end fitting: text -> personality graph, votes -> mixing coefficients, ratings -> factors."""

from __future__ import annotations

from dataclasses import dataclass

from .ingest import InteractionMatrix, RatingsDataset, build_interaction_matrix
from .knowledge import KnowledgeTable, build_knowledge_table
from .model import FactorModel, Hyperparams, train
from .personality import (Lexicon, PersonalityGraph, PersonalityProfile, WeightTable,
                          build_personality_graph, load_lexicon, load_weights, user_profiles)


@dataclass(eq=False)
class FittedAPAR:
    model: FactorModel
    interactions: InteractionMatrix
    profiles: dict[str, PersonalityProfile]
    graph: PersonalityGraph
    knowledge: KnowledgeTable


def fit_apar(ds: RatingsDataset, hp: Hyperparams, lexicon: Lexicon | None = None,
             weights: WeightTable | None = None, domain: str | None = None) -> FittedAPAR:
    """Derive every model input from ``ds`` alone and train.

    Only ``ds`` is read, so passing a training split keeps test reviews
    (their text and votes included) out of the fit.
    """
    lexicon = lexicon or load_lexicon()
    weights = weights or load_weights()
    W = build_interaction_matrix(ds)
    profiles = user_profiles(ds, lexicon, weights)
    graph = build_personality_graph(profiles, ds)
    kt = build_knowledge_table(ds, hp.beta, hp.use_knowledge)
    if domain is None and len(kt.domains) > 1:
        raise ValueError(f"dataset spans domains {kt.domains}; choose one")
    gamma = kt.gamma_vector(domain)
    model = train(W, graph, gamma, hp)
    return FittedAPAR(model, W, profiles, graph, kt)
