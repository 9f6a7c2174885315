mod common;

use markovprune::{parse, parse_bytes, serialize, ModelFile, TargetEffect};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random valid model: random ADMG plus coefficients, noise settings and
/// targets on observed nodes.
pub fn random_model(seed: u64) -> ModelFile {
    let g = common::random_admg(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut m = ModelFile::from_graph(g.clone());
    for (a, b) in g.directed_edges() {
        if rng.random_bool(0.5) {
            let v: f64 = rng.random_range(-2.0..2.0);
            m.coefficients.insert((g.id(a).clone(), g.id(b).clone()), v);
        }
    }
    for v in 0..g.node_count() {
        if rng.random_bool(0.3) {
            m.noise_sd.insert(g.id(v).clone(), rng.random_range(0.01..3.0));
        }
    }
    let obs: Vec<usize> = g.observed_nodes().iter().collect();
    for _ in 0..rng.random_range(0..3) {
        let (c, o) = (obs[rng.random_range(0..obs.len())], obs[rng.random_range(0..obs.len())]);
        if c == o {
            continue;
        }
        let t = match obs.iter().find(|&&v| v != c && v != o) {
            Some(&med) if rng.random_bool(0.5) => {
                TargetEffect::mediation(g.name(c), g.name(o), &[g.name(med)], rng.random_bool(0.5)).unwrap()
            }
            _ => TargetEffect::total(g.name(c), g.name(o)).unwrap(),
        };
        m.targets.push(t);
    }
    m
}

#[test]
fn round_trip_on_a_thousand_models() {
    for seed in 0..1000 {
        let m = random_model(seed);
        let text = serialize(&m);
        let back = parse(&text).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{text}"));
        assert_eq!(back, m, "seed {seed}\n{text}");
        assert_eq!(serialize(&back), text);
    }
}

const ALPHABET: &[&str] = &[
    "A", "B", "C", "->", "<->", "-", ">", "<", "=", "(", ")", ",", "#", " ", "\n", "\r\n", "\t", "node",
    "latent", "coef", "noise", "target", "total", "mediation", "via", "partial", "0.5", "-1", "1e400", "NaN",
    "\u{feff}", "é", "_x", "9",
];

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, ..ProptestConfig::default() })]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = parse_bytes(&bytes);
    }

    #[test]
    fn token_soup_never_panics(tokens in proptest::collection::vec(0..ALPHABET.len(), 0..60)) {
        let text: String = tokens.iter().map(|&i| ALPHABET[i]).collect();
        if let Ok(m) = parse(&text) {
            prop_assert_eq!(parse(&serialize(&m)).unwrap(), m);
        }
    }

    #[test]
    fn mutated_models_never_panic(seed in 0u64..1000, cut in any::<usize>(), byte in any::<u8>()) {
        let mut bytes = serialize(&random_model(seed)).into_bytes();
        if !bytes.is_empty() {
            let i = cut % bytes.len();
            bytes[i] = byte;
        }
        let _ = parse_bytes(&bytes);
    }
}
