"""Zero-shot classification from class and attribute names.

Learns a shared non-linear transformation of word embeddings so that a
class name's vector lands near the weighted combination of its attributes'
name vectors; unseen classes are then recognized by cosine similarity using
nothing but their names.
"""

from .embeddings import (
    EmbeddingTable,
    embed_name,
    load_embedding_file,
    parse_embedding_text,
    random_embedding_table,
)
from .errors import CodedError
from .model import (
    AttributeProfile,
    EvaluationReport,
    classify,
    class_embedding,
    cosine,
    evaluate,
    image_embedding,
    nearest_classes,
    predicate_embedding,
)
from .network import (
    IDENTITY,
    AdamState,
    IdentityTransform,
    NetworkParams,
    adam_step,
    backward,
    deserialize_model,
    forward,
    init_adam,
    init_network,
    load_model,
    save_model,
    serialize_model,
)
from .predicates import (
    PredicateMatrix,
    hamming_margin,
    load_predicate_file,
    margin_matrix,
    merge_predicates,
    parse_predicate_csv,
)
from .training import (
    FULL_BATCH,
    TrainingConfig,
    TrainingData,
    TrainingHistory,
    cross_validate,
    finite_diff_check,
    ibt_loss_and_grad,
    pbt_loss_and_grad,
    train,
)

__version__ = "0.1.0"
