//! The example programs shipped with the tool.

pub const CORPUS: &[(&str, &str)] = &[
    ("alg1_buggy", include_str!("../../../corpus/alg1_buggy.pfor")),
    ("alg1_safe", include_str!("../../../corpus/alg1_safe.pfor")),
    ("alg2_buggy", include_str!("../../../corpus/alg2_buggy.pfor")),
    ("alg2_safe_top", include_str!("../../../corpus/alg2_safe_top.pfor")),
    ("alg2_safe_noised", include_str!("../../../corpus/alg2_safe_noised.pfor")),
    ("alg3_buggy", include_str!("../../../corpus/alg3_buggy.pfor")),
];

pub fn source(name: &str) -> Option<&'static str> {
    CORPUS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parse a corpus program; panics on a malformed entry.
pub fn program(name: &str) -> crate::lang::Program {
    crate::lang::parse_program(source(name).unwrap_or_else(|| panic!("no corpus program {name}"))).expect("corpus parses")
}
