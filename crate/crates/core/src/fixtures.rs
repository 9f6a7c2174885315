//! The bundled example models.

use crate::dsl::{self, ModelFile};

pub const EX1: &str = include_str!("../fixtures/ex1.dgp");
pub const EX2_TOTAL: &str = include_str!("../fixtures/ex2i.dgp");
pub const EX2_MEDIATION: &str = include_str!("../fixtures/ex2ii.dgp");
pub const EX3_TOTAL: &str = include_str!("../fixtures/ex3i.dgp");
pub const EX3_MEDIATION: &str = include_str!("../fixtures/ex3ii.dgp");
pub const EX4: &str = include_str!("../fixtures/ex4.dgp");
/// Synthetic two-chain model; see the file header.
pub const TWO_CHAIN: &str = include_str!("../fixtures/two_chain.dgp");

/// `(name, source)` for every bundled model.
pub const ALL: &[(&str, &str)] = &[
    ("ex1", EX1),
    ("ex2i", EX2_TOTAL),
    ("ex2ii", EX2_MEDIATION),
    ("ex3i", EX3_TOTAL),
    ("ex3ii", EX3_MEDIATION),
    ("ex4", EX4),
    ("two_chain", TWO_CHAIN),
];

/// Parses a bundled model; they are known to be valid.
pub fn load(source: &str) -> ModelFile {
    dsl::parse(source).expect("bundled model parses")
}
