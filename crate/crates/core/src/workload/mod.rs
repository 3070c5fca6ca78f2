//! Domains, cliques, marginal and residual tables, and the maps between them.

mod checks;
mod clique;
mod domain;
mod maps;
mod table;

pub use checks::{
    dense_marginal_query, dense_residual_query, residual_row_space_checks, RowSpaceReport,
};
pub use clique::{all_k_way, downward_closure, Clique};
pub use domain::{Attribute, Domain};
pub use maps::{
    apply_difference_gram, difference_op, marginal_from_residuals, marginal_to_residual_op,
    residual_adjoints, residual_from_marginal, residual_sum, residual_to_marginal_op,
    OperatorCache,
};
pub use table::{MarginalTable, ResidualVector};
