"""Tree-structured NMT decoding with coupled rule and word RNNs."""
from .builders import TreeVariant, build_targets, dep_to_constituency, make_tree_v1, make_tree_v2, strip_tags
from .config import Config
from .corpus import BpeModel, ParallelCorpus, Vocab, bpe_learn, build_vocab, read_bracketed_trees, read_conll_deps, read_parallel
from .decoder import Seq2SeqModel, TrdecModel, beam_decode, greedy_decode, load_model, save_model, train_step
from .tree import (
    Derivation,
    Grammar,
    Rule,
    Tree,
    canonical_derivation,
    delinearize,
    extract_grammar,
    form_preterminals,
    linearize,
    replay_derivation,
)

__version__ = "0.1.0"
