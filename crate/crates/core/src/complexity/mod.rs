//! Average-case information complexity of tensor-product random fields.

pub mod asymptotic;
pub mod catalog;
pub mod enumerate;
pub mod moments;
pub mod oracle;

pub use asymptotic::{
    asymptotic_n, constant_k, convergence_table, lattice_constant, log_rate, nonlattice_constant, normal_quantile_q,
    TableRow,
};
pub use catalog::{catalog, catalog_default, detect_lattice, EigenSequence, Field, Lattice};
pub use enumerate::{exact_count, lower_bound, ComplexityQuery, ComplexityResult, Enumerator, ExactOptions, Split};
pub use moments::{moments, MomentSummary};
pub use oracle::{sort_oracle, DiscreteLaw};
