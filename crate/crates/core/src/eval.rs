//! Robustness evaluation: certified accuracy (a lower bound on robust
//! accuracy), genetic-attack accuracy (an upper bound), exhaustive
//! enumeration on small instances, and error diagnostics.
//!
//! Every report asserts the ordering
//!     certified accuracy <= attack accuracy <= clean accuracy;
//! a violation means a soundness bug, not a bad model, and is reported
//! as an internal fault.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::lexicon::{PreparedExample, SubstitutionSpec, WordId};
use crate::models::{CertificationResult, TextModel};

/// Genetic attack settings. Defaults: population 60, 40 iterations.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub population: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            population: 60,
            iterations: 40,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("attack population must be >= 2".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("attack iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one attack run on one example.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub success: bool,
    /// The worst perturbation found (the original tokens if none).
    pub perturbed: Vec<WordId>,
    /// Positions where the final perturbation differs from the original.
    pub words_changed: usize,
    /// Model forward passes spent.
    pub queries: usize,
}

/// Per-example evaluation verdict.
#[derive(Debug, Clone)]
pub struct ExampleVerdict {
    pub index: usize,
    pub clean_correct: bool,
    pub certified: bool,
    pub attacked_correct: bool,
    pub words_changed: usize,
    /// Confidence of the prediction on the original input.
    pub confidence: f64,
}

/// Aggregate evaluation report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub clean_accuracy: f64,
    pub certified_accuracy: f64,
    pub attack_accuracy: f64,
    pub verdicts: Vec<ExampleVerdict>,
    pub words_changed_histogram: BTreeMap<usize, usize>,
}

impl EvalReport {
    /// Assemble a report, asserting the bound ordering.
    pub fn from_verdicts(verdicts: Vec<ExampleVerdict>) -> Result<Self> {
        let n = verdicts.len().max(1) as f64;
        let clean = verdicts.iter().filter(|v| v.clean_correct).count() as f64 / n;
        let certified = verdicts.iter().filter(|v| v.certified).count() as f64 / n;
        let attacked = verdicts.iter().filter(|v| v.attacked_correct).count() as f64 / n;
        if certified > attacked + 1e-12 || attacked > clean + 1e-12 {
            return Err(Error::Soundness(format!(
                "accuracy ordering violated: certified {certified} <= attack {attacked} <= clean {clean} must hold"
            )));
        }
        let mut histogram = BTreeMap::new();
        for v in &verdicts {
            if v.clean_correct && !v.attacked_correct {
                *histogram.entry(v.words_changed).or_insert(0usize) += 1;
            }
        }
        Ok(EvalReport {
            clean_accuracy: clean,
            certified_accuracy: certified,
            attack_accuracy: attacked,
            verdicts,
            words_changed_histogram: histogram,
        })
    }

    /// Per-example verdict lines: `index<TAB>clean<TAB>certified<TAB>attacked<TAB>words_changed`.
    pub fn verdict_lines(&self) -> String {
        let mut out = String::from("#index\tclean\tcertified\tattacked\twords_changed\n");
        for v in &self.verdicts {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                v.index,
                u8::from(v.clean_correct),
                u8::from(v.certified),
                u8::from(v.attacked_correct),
                v.words_changed
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("examples            {}\n", self.verdicts.len()));
        out.push_str(&format!("clean accuracy      {:.4}\n", self.clean_accuracy));
        out.push_str(&format!("attack accuracy     {:.4}\n", self.attack_accuracy));
        out.push_str(&format!("certified accuracy  {:.4}\n", self.certified_accuracy));
        if !self.words_changed_histogram.is_empty() {
            out.push_str("words changed histogram:\n");
            for (k, v) in &self.words_changed_histogram {
                out.push_str(&format!("  {k}\t{v}\n"));
            }
        }
        out
    }
}

/// Accuracy on unperturbed inputs.
pub fn clean_accuracy(model: &TextModel, data: &[PreparedExample]) -> Result<f64> {
    let mut correct = 0usize;
    for ex in data {
        if model.predict(ex)?.class == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Fraction of examples carrying a certificate, always evaluated on the
/// full (eps = 1) perturbation boxes.
pub fn certified_accuracy(
    model: &TextModel,
    data: &[PreparedExample],
    specs: &[SubstitutionSpec],
) -> Result<(f64, Vec<CertificationResult>)> {
    let mut results = Vec::with_capacity(data.len());
    let mut certified = 0usize;
    for (ex, spec) in data.iter().zip(specs) {
        let r = model.certify(ex, spec)?;
        certified += usize::from(r.certified);
        results.push(r);
    }
    Ok((certified as f64 / data.len().max(1) as f64, results))
}

/// Accuracy over originals plus `k` uniform perturbation samples each.
pub fn augmented_accuracy(
    model: &TextModel,
    data: &[PreparedExample],
    specs: &[SubstitutionSpec],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (ex, spec) in data.iter().zip(specs) {
        correct += usize::from(model.predict(ex)?.class == ex.label);
        total += 1;
        for _ in 0..k {
            let tokens = spec.sample_uniform(rng);
            let p = model.predict_tokens(&tokens, ex.premise.as_deref())?;
            correct += usize::from(p.class == ex.label);
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Genetic search over B(z) for a misclassified perturbation.
///
/// The population starts from single random substitutions of the
/// original. Each generation keeps the fittest candidate, then refills by
/// crossover (per-position uniform choice between two fitness-softmax
/// parents) followed by one mutation that re-draws a random position
/// uniformly from the *original* S(x, i), so candidates always stay
/// inside B(z). Fitness is the best wrong-class logit margin; the search
/// exits as soon as any candidate is misclassified.
pub fn genetic_attack(
    model: &TextModel,
    ex: &PreparedExample,
    spec: &SubstitutionSpec,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    if spec.tokens != ex.tokens {
        return Err(Error::Precondition(
            "substitution spec does not match example tokens".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut queries = 0usize;

    let predict_margin = |tokens: &[WordId], queries: &mut usize| -> Result<f64> {
        *queries += 1;
        let p = model.predict_tokens(tokens, ex.premise.as_deref())?;
        Ok(model.attack_margin(&p.logits, ex.label))
    };

    // A model wrong on the original is trivially attacked by the original.
    if predict_margin(&ex.tokens, &mut queries)? > 0.0 {
        return Ok(AttackOutcome {
            success: true,
            perturbed: ex.tokens.clone(),
            words_changed: 0,
            queries,
        });
    }

    let options: Vec<usize> = (0..spec.len())
        .filter(|&i| spec.candidates[i].len() > 1)
        .collect();
    if options.is_empty() {
        return Ok(AttackOutcome {
            success: false,
            perturbed: ex.tokens.clone(),
            words_changed: 0,
            queries,
        });
    }

    let single_substitution = |rng: &mut ChaCha8Rng| -> Vec<WordId> {
        let mut cand = ex.tokens.clone();
        let pos = options[rng.gen_range(0..options.len())];
        let set = &spec.candidates[pos];
        // skip index 0, the original word
        cand[pos] = set[rng.gen_range(1..set.len())];
        cand
    };

    let mut population: Vec<Vec<WordId>> = (0..cfg.population)
        .map(|_| single_substitution(&mut rng))
        .collect();

    let words_changed =
        |c: &[WordId]| c.iter().zip(&ex.tokens).filter(|(a, b)| a != b).count();

    for it in 0..=cfg.iterations {
        let mut fitness = Vec::with_capacity(population.len());
        for cand in &population {
            let margin = predict_margin(cand, &mut queries)?;
            if margin > 0.0 {
                return Ok(AttackOutcome {
                    success: true,
                    words_changed: words_changed(cand),
                    perturbed: cand.clone(),
                    queries,
                });
            }
            fitness.push(margin);
        }
        if it == cfg.iterations {
            break;
        }

        let mut best = 0usize;
        for (i, &f) in fitness.iter().enumerate() {
            if f > fitness[best] {
                best = i;
            }
        }

        // Fitness-proportional selection via softmax.
        let mx = fitness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = fitness.iter().map(|f| (f - mx).exp()).collect();
        let total: f64 = weights.iter().sum();
        let sample_parent = |rng: &mut ChaCha8Rng| -> usize {
            let mut t = rng.gen::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                t -= w;
                if t <= 0.0 {
                    return i;
                }
            }
            weights.len() - 1
        };

        let elite = population[best].clone();
        let mut next = Vec::with_capacity(cfg.population);
        next.push(elite);
        while next.len() < cfg.population {
            let p1 = &population[sample_parent(&mut rng)];
            let p2 = &population[sample_parent(&mut rng)];
            let mut child: Vec<WordId> = p1
                .iter()
                .zip(p2)
                .map(|(&a, &b)| if rng.gen_bool(0.5) { a } else { b })
                .collect();
            // Mutation re-draws one position from the original S(x, i).
            let pos = options[rng.gen_range(0..options.len())];
            let set = &spec.candidates[pos];
            child[pos] = set[rng.gen_range(0..set.len())];
            next.push(child);
        }
        population = next;
    }

    Ok(AttackOutcome {
        success: false,
        perturbed: ex.tokens.clone(),
        words_changed: 0,
        queries,
    })
}

/// Exact robustness by enumerating B(z), refused above `cap`.
#[derive(Debug, Clone)]
pub enum ExhaustiveOutcome {
    Evaluated {
        /// True when every perturbation is classified correctly.
        robust: bool,
        /// Smallest true-class margin over the whole set (positive means
        /// correct everywhere).
        min_margin: f64,
        /// The margin-minimizing perturbation.
        worst: Vec<WordId>,
        visited: usize,
    },
    Skipped {
        count: BigUint,
    },
}

pub fn exhaustive_attack(
    model: &TextModel,
    ex: &PreparedExample,
    spec: &SubstitutionSpec,
    cap: usize,
) -> Result<ExhaustiveOutcome> {
    if spec.tokens != ex.tokens {
        return Err(Error::Precondition(
            "substitution spec does not match example tokens".into(),
        ));
    }
    let count = spec.perturbation_count();
    if count > BigUint::from(cap) {
        return Ok(ExhaustiveOutcome::Skipped { count });
    }
    let mut min_margin = f64::INFINITY;
    let mut worst = ex.tokens.clone();
    let mut visited = 0usize;
    let mut failure: Option<Error> = None;
    spec.for_each_perturbation(|tokens| {
        visited += 1;
        match model.predict_tokens(tokens, ex.premise.as_deref()) {
            Err(e) => {
                failure = Some(e);
                false
            }
            Ok(p) => {
                // Robust margin: positive iff classified correctly.
                let margin = -model.attack_margin(&p.logits, ex.label);
                if margin < min_margin {
                    min_margin = margin;
                    worst = tokens.to_vec();
                }
                true
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ExhaustiveOutcome::Evaluated {
        robust: min_margin > 0.0,
        min_margin,
        worst,
        visited,
    })
}

/// Histogram of words changed by successful attacks, with the
/// high-confidence bucket (original prediction confidence above 0.7).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorProfile {
    pub histogram: BTreeMap<usize, usize>,
    pub total_errors: usize,
    pub high_confidence_errors: usize,
}

pub const CONFIDENCE_BUCKET_THRESHOLD: f64 = 0.7;

pub fn robustness_error_profile(verdicts: &[ExampleVerdict]) -> ErrorProfile {
    let mut profile = ErrorProfile::default();
    for v in verdicts {
        if v.clean_correct && !v.attacked_correct {
            *profile.histogram.entry(v.words_changed).or_insert(0) += 1;
            profile.total_errors += 1;
            if v.confidence > CONFIDENCE_BUCKET_THRESHOLD {
                profile.high_confidence_errors += 1;
            }
        }
    }
    profile
}

/// Full evaluation: clean prediction, certificate, and genetic attack per
/// example. `threads` > 1 fans examples out over a local thread pool;
/// results are deterministic either way because each example's attack
/// stream is seeded by its index.
pub fn evaluate(
    model: &TextModel,
    data: &[PreparedExample],
    specs: &[SubstitutionSpec],
    attack: &AttackConfig,
    threads: usize,
) -> Result<EvalReport> {
    attack.validate()?;
    if data.len() != specs.len() {
        return Err(Error::Precondition(
            "evaluate needs one substitution spec per example".into(),
        ));
    }
    let one = |(index, (ex, spec)): (usize, (&PreparedExample, &SubstitutionSpec))|
     -> Result<ExampleVerdict> {
        let pred = model.predict(ex)?;
        let clean_correct = pred.class == ex.label;
        let cert = model.certify(ex, spec)?;
        let per_example = AttackConfig {
            seed: attack
                .seed
                .wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..attack.clone()
        };
        let outcome = genetic_attack(model, ex, spec, &per_example)?;
        Ok(ExampleVerdict {
            index,
            clean_correct,
            certified: cert.certified,
            attacked_correct: clean_correct && !outcome.success,
            words_changed: if outcome.success {
                outcome.words_changed
            } else {
                0
            },
            confidence: pred.confidence,
        })
    };

    let verdicts: Result<Vec<ExampleVerdict>> = if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            data.par_iter()
                .zip(specs.par_iter())
                .enumerate()
                .map(one)
                .collect()
        })
    } else {
        data.iter().zip(specs.iter()).enumerate().map(one).collect()
    };
    EvalReport::from_verdicts(verdicts?)
}
