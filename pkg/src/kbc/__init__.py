"""kbc: declarative knowledge-base construction over relational tables.

Rules ground into per-sample factor graphs with tied weights; weights are
learned by contrastive-divergence Gibbs sampling (optionally Hogwild
parallel); conjunctive queries are answered by ranked tuple marginals. A
brute-force enumeration oracle verifies everything at desk scale.
"""

from .datastore import (
    Database,
    DataTable,
    Schema,
    TableDef,
    load_data_dir,
    load_table,
    select,
    table_stats,
)
from .factorgraph import (
    exact_log_partition,
    exact_marginals,
    exact_query_marginal,
    exact_world_probability,
    factor_value,
    log_weight,
)
from .grounder import (
    FactorGraph,
    FactorInstance,
    VariableDecl,
    WeightKey,
    WeightStore,
    factor_count_report,
    ground,
    weight_key_of,
)
from .kbio import KnowledgeBase, build_kb, load_kb, save_kb
from .learner import (
    LearnConfig,
    cd1_negative_world,
    cd1_update,
    corpus_from_graphs,
    exact_nll,
    parallel_train,
    train,
)
from .query import (
    ConjunctiveQuery,
    answer,
    bind_candidates,
    classify,
    parse_query,
    tuple_marginal,
)
from .rulelang import RuleAst, parse_rule, parse_rule_file, pretty_print, validate_rules
from .sampler import (
    ChainState,
    SamplerConfig,
    conditional_distribution,
    estimate_marginals,
    gibbs_sweep,
    init_chain,
    parallel_estimate,
    throughput_bench,
)

__version__ = "0.1.0"
