"""Microsystem extraction, form-probability models and CEFR association statistics.

A microsystem is a small set of forms competing for one function (it/this/that,
a/the/zero article, ...). The package finds their occurrences in dependency
parsed learner writing, models the choice of form from its context, and relates
the predicted probabilities to proficiency levels.
"""
from .corpus import (CEFR_LEVELS, ConlluParseError, CorpusError, Document, SentenceGraph, Token, corpus_stats,
                     parse_conllu, read_conllu, write_conllu)
from .features import DesignMatrix, FeatureSchema, build_schema, encode, extract_all, select_features
from .microsystems import (MS_NAMES, Occurrence, evaluate_extraction, extract_occurrences, get_microsystem,
                           load_microsystems)
from .model import (ConvergenceWarning, MultinomialModel, TrainConfig, balanced_subsample, classification_report,
                    feature_importance, predict_proba, stratified_split, train_lasso_multinomial,
                    train_multinomial)
from .query import Pattern, compile_pattern, load_patterns, match_corpus, match_sentence
from .stats import (aggregate_text_median, cohen_kappa, fit_ordinal, fleiss_kappa, kruskal_wallis,
                    odds_ratio_report, permutation_test_kappa, pseudo_r2, refit_with_confounder)

__version__ = "0.1.0"
