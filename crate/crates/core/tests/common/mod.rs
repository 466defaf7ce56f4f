//! Shared fixtures for the integration suites: random tiny models with
//! matching examples and substitution sets.

use num_bigint::BigUint;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use wordcert_core::embed::synthetic_vectors;
use wordcert_core::lexicon::{
    build_substitution_spec, NeighborTable, PreparedExample, SubstitutionSpec, Vocabulary,
};
use wordcert_core::models::{build_model, Architecture, LstmPool, ModelConfig, TextModel};

pub struct Fixture {
    pub model: TextModel,
    pub example: PreparedExample,
    pub spec: SubstitutionSpec,
}

pub const ALL_ARCHS: [Architecture; 4] = [
    Architecture::Bow,
    Architecture::Cnn,
    Architecture::Lstm,
    Architecture::DecompAttn,
];

/// A random tiny model over a random vocabulary, with a random example
/// and a substitution set capped at `max_ball` perturbations.
pub fn random_fixture(
    rng: &mut ChaCha8Rng,
    archs: &[Architecture],
    max_ball: usize,
) -> Fixture {
    let arch = archs[rng.gen_range(0..archs.len())];
    let vocab_size = rng.gen_range(8..=12);
    let dim = rng.gen_range(3..=4);
    let classes = if arch == Architecture::DecompAttn {
        3
    } else {
        [2usize, 3][rng.gen_range(0..2)]
    };
    let config = ModelConfig {
        arch,
        hidden_dim: rng.gen_range(3..=5),
        ff_layers: 2,
        kernel_width: 3,
        dropout: 0.0,
        classes,
        embed_dim: None,
        lstm_bidirectional: rng.gen_bool(0.5),
        lstm_pool: if rng.gen_bool(0.5) {
            LstmPool::Mean
        } else {
            LstmPool::Final
        },
    };
    let vocab =
        Vocabulary::from_words((0..vocab_size).map(|i| format!("w{i}"))).unwrap();
    let vectors = synthetic_vectors(vocab_size, dim, rng);
    let model = build_model(config, vocab, vectors, rng).unwrap();

    let mut table = NeighborTable::empty(vocab_size);
    for w in 0..vocab_size {
        let k = rng.gen_range(0..=3);
        let nbs: Vec<usize> = (0..k).map(|_| rng.gen_range(0..vocab_size)).collect();
        table.set(w, nbs);
    }

    let len = rng.gen_range(2..=4);
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab_size)).collect();
    let premise = if arch == Architecture::DecompAttn {
        let plen = rng.gen_range(1..=3);
        Some((0..plen).map(|_| rng.gen_range(0..vocab_size)).collect())
    } else {
        None
    };
    let label = rng.gen_range(0..classes);
    let example = PreparedExample {
        premise,
        tokens: tokens.clone(),
        label,
    };

    let mut spec = build_substitution_spec(&tokens, &model.vocab, &table, None).unwrap();
    // Trim candidate lists until the ball fits under the cap.
    while spec.perturbation_count() > BigUint::from(max_ball) {
        let widest = (0..spec.len())
            .max_by_key(|&i| spec.candidates[i].len())
            .unwrap();
        spec.candidates[widest].pop();
    }
    Fixture {
        model,
        example,
        spec,
    }
}

/// Relative-with-floor comparison helper.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-9)
}
