//! Benchmark inputs shared by the criterion suites.

use markovprune::{parse, ModelFile};

/// A layered DAG of `layers` layers with `width` nodes each, every node
/// feeding all nodes of the next layer; target is the first node of the
/// first layer on the first node of the last.
pub fn layered_model(layers: usize, width: usize) -> ModelFile {
    let name = |l: usize, i: usize| format!("L{l}_{i}");
    let mut text = String::new();
    for l in 0..layers.saturating_sub(1) {
        for i in 0..width {
            for j in 0..width {
                text.push_str(&format!("{} -> {}\n", name(l, i), name(l + 1, j)));
            }
        }
    }
    text.push_str(&format!("target total({}, {})\n", name(0, 0), name(layers - 1, 0)));
    parse(&text).expect("layered model is valid")
}
