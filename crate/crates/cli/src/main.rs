//! Command-line interface: train, certify, attack, enumerate, generate
//! the synthetic memory task, and run diagnostics.
//!
//! Every run writes a `manifest.json` into its output directory with the
//! full argument vector, seed, and code version, sufficient to reproduce
//! the run. Exit codes: 0 success, 2 usage/configuration error, 3 data
//! error, 4 internal soundness fault.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wordcert_core::checkpoint;
use wordcert_core::config::KeyValues;
use wordcert_core::embed::{
    bound_width_diagnostic, load_vectors, save_vectors, synthetic_vectors,
};
use wordcert_core::error::Error;
use wordcert_core::eval::{
    evaluate, exhaustive_attack, robustness_error_profile, AttackConfig, ExhaustiveOutcome,
};
use wordcert_core::lexicon::{
    build_substitution_spec, equivalence_classes, generate_memory_task, load_dataset,
    load_lm_scores, load_neighbors, save_dataset, save_neighbors, NeighborFilterConfig,
    NeighborTable, PreparedExample, SubstitutionSpec, Vocabulary,
};
use wordcert_core::models::{build_model, ModelConfig, TextModel};
use wordcert_core::train::{
    history_lines, staged_train_memory_task, train, Regime, StagedConfig, TrainConfig,
};

#[derive(Parser)]
#[command(name = "wordcert", version, about = "Certified robustness to word substitutions")]
struct Cli {
    /// Example-level parallelism for evaluation commands; 1 keeps runs
    /// bitwise reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus metric history.
    Train {
        /// Combined model + training key-value config file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Development set for early stopping (optional).
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        neighbors: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config regime (standard | augment | robust).
        #[arg(long)]
        regime: Option<String>,
    },
    /// Certified accuracy of a checkpoint on a dataset.
    Certify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        neighbors: PathBuf,
        /// LM score file enabling the substitution filter.
        #[arg(long)]
        lm_scores: Option<PathBuf>,
        /// LM filter window radius.
        #[arg(long, default_value_t = 6)]
        lm_window: usize,
        /// LM filter log-probability threshold.
        #[arg(long, default_value_t = 5.0)]
        lm_delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Genetic attack accuracy (with certificates for the ordering check).
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        neighbors: PathBuf,
        #[arg(long, default_value_t = 60)]
        population: usize,
        #[arg(long, default_value_t = 40)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lm_scores: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        lm_window: usize,
        #[arg(long, default_value_t = 5.0)]
        lm_delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact robust accuracy by enumeration, on examples under the cap.
    Enumerate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        neighbors: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the first-equals-last memory task dataset.
    GenMemoryTask {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4000)]
        n_train: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, default_value_t = 500)]
        n_dev: usize,
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        /// Dimension of the synthetic pre-trained vectors.
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        len_min: usize,
        #[arg(long, default_value_t = 10)]
        len_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Bound-width diagnostic and neighbor-graph statistics.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        neighbors: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Precondition(_) | Error::Io(_) | Error::Dimension { .. } => 2,
        Error::Data { .. } | Error::Filtering { .. } => 3,
        Error::Soundness(_) => 4,
        Error::Training { .. } => 1,
    }
}

fn write_manifest(out: &Path, seed: Option<u64>, configs: &[&Path]) -> Result<(), Error> {
    let args: Vec<String> = std::env::args().collect();
    let manifest = serde_json::json!({
        "command": args.get(1).cloned().unwrap_or_default(),
        "argv": args,
        "config_paths": configs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "output_dir": out.display().to_string(),
        "created_utc": chrono::Utc::now().to_rfc3339(),
    });
    fs::create_dir_all(out)?;
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Project raw examples into the vocabulary, dropping the ones that lose
/// every token, with a note on stderr.
fn prepare(
    examples: &[wordcert_core::lexicon::Example],
    vocab: &Vocabulary,
    what: &str,
) -> Vec<PreparedExample> {
    let prepared: Vec<PreparedExample> = examples
        .iter()
        .filter_map(|e| e.project_to_vocab(vocab))
        .collect();
    let dropped = examples.len() - prepared.len();
    if dropped > 0 {
        eprintln!("note: dropped {dropped} {what} example(s) with no in-vocabulary tokens");
    }
    prepared
}

fn specs_for(
    data: &[PreparedExample],
    vocab: &Vocabulary,
    table: &NeighborTable,
    filter: Option<&NeighborFilterConfig>,
) -> Result<Vec<SubstitutionSpec>, Error> {
    data.iter()
        .map(|e| build_substitution_spec(&e.tokens, vocab, table, filter))
        .collect()
}

fn load_eval_inputs(
    checkpoint_path: &Path,
    data_path: &Path,
    neighbors_path: &Path,
    lm: Option<(&Path, usize, f64)>,
) -> Result<(TextModel, Vec<PreparedExample>, Vec<SubstitutionSpec>), Error> {
    let model = checkpoint::load(checkpoint_path)?;
    let examples = load_dataset(data_path)?;
    let table = load_neighbors(neighbors_path, &model.vocab)?;
    let data = prepare(&examples, &model.vocab, "evaluation");
    let filter = match lm {
        None => None,
        Some((path, window, delta)) => {
            let scorer = load_lm_scores(path)?;
            Some(NeighborFilterConfig::new(window, delta, Arc::new(scorer))?)
        }
    };
    let specs = specs_for(&data, &model.vocab, &table, filter.as_ref())?;
    Ok((model, data, specs))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train {
            config,
            data,
            dev,
            neighbors,
            vectors,
            out,
            seed,
            regime,
        } => cmd_train(
            &config, &data, dev.as_deref(), &neighbors, &vectors, &out, seed, regime,
        ),
        Command::Certify {
            checkpoint,
            data,
            neighbors,
            lm_scores,
            lm_window,
            lm_delta,
            out,
        } => cmd_certify(
            &checkpoint,
            &data,
            &neighbors,
            lm_scores.as_deref(),
            lm_window,
            lm_delta,
            &out,
        ),
        Command::Attack {
            checkpoint,
            data,
            neighbors,
            population,
            iters,
            seed,
            lm_scores,
            lm_window,
            lm_delta,
            out,
        } => cmd_attack(
            &checkpoint,
            &data,
            &neighbors,
            AttackConfig {
                population,
                iterations: iters,
                seed,
            },
            lm_scores.as_deref(),
            lm_window,
            lm_delta,
            &out,
            cli.threads,
        ),
        Command::Enumerate {
            checkpoint,
            data,
            neighbors,
            cap,
            out,
        } => cmd_enumerate(&checkpoint, &data, &neighbors, cap, &out),
        Command::GenMemoryTask {
            out,
            n_train,
            n_test,
            n_dev,
            vocab,
            dim,
            len_min,
            len_max,
            seed,
        } => cmd_gen_memory_task(&out, n_train, n_test, n_dev, vocab, dim, len_min, len_max, seed),
        Command::Diagnose {
            checkpoint,
            neighbors,
            vectors,
            out,
        } => cmd_diagnose(&checkpoint, &neighbors, &vectors, &out),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config_path: &Path,
    data_path: &Path,
    dev_path: Option<&Path>,
    neighbors_path: &Path,
    vectors_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    regime_override: Option<String>,
) -> Result<(), Error> {
    let kv = KeyValues::load(config_path)?;
    let model_cfg = ModelConfig::from_kv(&kv)?;
    let mut train_cfg = TrainConfig::from_kv(&kv)?;
    if let Some(seed) = seed_override {
        train_cfg.seed = seed;
    }
    if let Some(regime) = regime_override {
        train_cfg.regime = Regime::parse(&regime)?;
    }

    let (vocab, vectors) = load_vectors(vectors_path)?;
    let table = load_neighbors(neighbors_path, &vocab)?;
    let raw_train = load_dataset(data_path)?;
    let train_data = prepare(&raw_train, &vocab, "training");
    if train_data.is_empty() {
        return Err(Error::data(
            data_path.display().to_string(),
            0,
            "no usable training examples",
        ));
    }
    let (dev_data, dev_specs_src) = match dev_path {
        None => (Vec::new(), Vec::new()),
        Some(p) => {
            let raw = load_dataset(p)?;
            let d = prepare(&raw, &vocab, "dev");
            let s = specs_for(&d, &vocab, &table, None)?;
            (d, s)
        }
    };
    // Training always uses the unfiltered neighbor sets.
    let train_specs = specs_for(&train_data, &vocab, &table, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = build_model(model_cfg, vocab, vectors, &mut rng)?;

    let staged: bool = kv.get_parsed("staged")?.unwrap_or(false);
    let result = if staged {
        let cfg = StagedConfig {
            stage1: kv.get_parsed("stage1_epochs")?.unwrap_or(50),
            stage2: kv.get_parsed("stage2_epochs")?.unwrap_or(50),
            stage3_max: kv.get_parsed("stage3_max_epochs")?.unwrap_or(50),
            base: train_cfg.clone(),
        };
        staged_train_memory_task(
            &mut model,
            &train_data,
            &train_specs,
            &dev_data,
            &dev_specs_src,
            &cfg,
        )?
    } else {
        train(
            &mut model,
            &train_data,
            &train_specs,
            &dev_data,
            &dev_specs_src,
            &train_cfg,
        )?
    };

    write_manifest(out, Some(train_cfg.seed), &[config_path])?;
    checkpoint::save(&out.join("model.ckpt"), &model)?;
    fs::write(out.join("history.tsv"), history_lines(&result.history))?;
    println!(
        "trained {} epochs; best {} = {:.4} at epoch {}",
        result.epochs_run,
        match train_cfg.regime {
            Regime::Standard => "dev_acc",
            Regime::Augment => "dev_aug_acc",
            Regime::Robust => "dev metric",
        },
        result.best_metric,
        result.best_epoch
    );
    println!("checkpoint: {}", out.join("model.ckpt").display());
    Ok(())
}

fn cmd_certify(
    checkpoint_path: &Path,
    data_path: &Path,
    neighbors_path: &Path,
    lm_scores: Option<&Path>,
    lm_window: usize,
    lm_delta: f64,
    out: &Path,
) -> Result<(), Error> {
    let (model, data, specs) = load_eval_inputs(
        checkpoint_path,
        data_path,
        neighbors_path,
        lm_scores.map(|p| (p, lm_window, lm_delta)),
    )?;
    write_manifest(out, None, &[])?;

    let mut lines = String::from("#index\tcorrect\tcertified\tloss_lower\tloss_upper\n");
    let mut certified = 0usize;
    let mut correct = 0usize;
    for (i, (ex, spec)) in data.iter().zip(&specs).enumerate() {
        let r = model.certify(ex, spec)?;
        certified += usize::from(r.certified);
        correct += usize::from(r.correct);
        lines.push_str(&format!(
            "{i}\t{}\t{}\t{}\t{}\n",
            u8::from(r.correct),
            u8::from(r.certified),
            r.loss_bounds.0,
            r.loss_bounds.1
        ));
    }
    fs::write(out.join("certify.tsv"), lines)?;
    let n = data.len().max(1) as f64;
    println!("examples           {}", data.len());
    println!("clean accuracy     {:.4}", correct as f64 / n);
    println!("certified accuracy {:.4}", certified as f64 / n);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack(
    checkpoint_path: &Path,
    data_path: &Path,
    neighbors_path: &Path,
    attack: AttackConfig,
    lm_scores: Option<&Path>,
    lm_window: usize,
    lm_delta: f64,
    out: &Path,
    threads: usize,
) -> Result<(), Error> {
    let (model, data, specs) = load_eval_inputs(
        checkpoint_path,
        data_path,
        neighbors_path,
        lm_scores.map(|p| (p, lm_window, lm_delta)),
    )?;
    write_manifest(out, Some(attack.seed), &[])?;

    let report = evaluate(&model, &data, &specs, &attack, threads)?;
    fs::write(out.join("verdicts.tsv"), report.verdict_lines())?;

    let profile = robustness_error_profile(&report.verdicts);
    let mut profile_lines = String::from("#words_changed\tcount\n");
    for (k, v) in &profile.histogram {
        profile_lines.push_str(&format!("{k}\t{v}\n"));
    }
    profile_lines.push_str(&format!(
        "#high_confidence_errors\t{}\n#total_errors\t{}\n",
        profile.high_confidence_errors, profile.total_errors
    ));
    fs::write(out.join("error_profile.tsv"), profile_lines)?;

    print!("{}", report.summary());
    Ok(())
}

fn cmd_enumerate(
    checkpoint_path: &Path,
    data_path: &Path,
    neighbors_path: &Path,
    cap: usize,
    out: &Path,
) -> Result<(), Error> {
    let (model, data, specs) =
        load_eval_inputs(checkpoint_path, data_path, neighbors_path, None)?;
    write_manifest(out, None, &[])?;

    let mut lines = String::from("#index\tstatus\trobust\tmin_margin\tvisited\tcount\n");
    let mut robust = 0usize;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for (i, (ex, spec)) in data.iter().zip(&specs).enumerate() {
        match exhaustive_attack(&model, ex, spec, cap)? {
            ExhaustiveOutcome::Evaluated {
                robust: r,
                min_margin,
                visited,
                ..
            } => {
                evaluated += 1;
                robust += usize::from(r);
                lines.push_str(&format!(
                    "{i}\tevaluated\t{}\t{min_margin}\t{visited}\t{visited}\n",
                    u8::from(r)
                ));
            }
            ExhaustiveOutcome::Skipped { count } => {
                skipped += 1;
                lines.push_str(&format!("{i}\tskipped\t-\t-\t-\t{count}\n"));
            }
        }
    }
    fs::write(out.join("enumerate.tsv"), lines)?;
    println!("evaluated {evaluated} of {} examples ({skipped} above cap {cap})", data.len());
    if evaluated > 0 {
        println!(
            "exact robust accuracy {:.4}",
            robust as f64 / evaluated as f64
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_memory_task(
    out: &Path,
    n_train: usize,
    n_test: usize,
    n_dev: usize,
    vocab_size: usize,
    dim: usize,
    len_min: usize,
    len_max: usize,
    seed: u64,
) -> Result<(), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = generate_memory_task(n_train, n_test, vocab_size, len_min, len_max, &mut rng)?;
    let dev = {
        let mut dev_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        generate_memory_task(n_dev, 0, vocab_size, len_min, len_max, &mut dev_rng)?.train
    };
    let mut vec_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let vectors = synthetic_vectors(task.vocab.len(), dim, &mut vec_rng);

    write_manifest(out, Some(seed), &[])?;
    save_dataset(&out.join("train.tsv"), &task.train)?;
    save_dataset(&out.join("dev.tsv"), &dev)?;
    save_dataset(&out.join("test.tsv"), &task.test)?;
    save_neighbors(&out.join("neighbors.tsv"), &task.vocab, &task.table)?;
    save_vectors(&out.join("vectors.txt"), &task.vocab, &vectors)?;
    println!(
        "wrote {} train / {} dev / {} test examples over {} words to {}",
        task.train.len(),
        dev.len(),
        task.test.len(),
        task.vocab.len(),
        out.display()
    );
    Ok(())
}

fn cmd_diagnose(
    checkpoint_path: &Path,
    neighbors_path: &Path,
    vectors_path: &Path,
    out: &Path,
) -> Result<(), Error> {
    let model = checkpoint::load(checkpoint_path)?;
    let (vocab, vectors) = load_vectors(vectors_path)?;
    let table = load_neighbors(neighbors_path, &vocab)?;
    let transform = model.transform();
    if transform.weight.cols() != vectors.dim() {
        return Err(Error::Config(format!(
            "checkpoint transform expects {}-dimensional vectors, file has {}",
            transform.weight.cols(),
            vectors.dim()
        )));
    }
    write_manifest(out, None, &[])?;

    let report = bound_width_diagnostic(&vocab, &table, &transform, &vectors)?;
    let mut lines = String::from("#word\tpre_width\tphi_width\n");
    for row in &report.rows {
        lines.push_str(&format!(
            "{}\t{}\t{}\n",
            vocab.word(row.word),
            row.pre_width,
            row.phi_width
        ));
    }
    fs::write(out.join("bound_widths.tsv"), lines)?;
    for (space, coord) in &report.skipped_coordinates {
        eprintln!("warning: zero stddev in {space} space coordinate {coord}; skipped");
    }

    let classes = equivalence_classes(&table);
    let mut stats = String::new();
    stats.push_str(&format!("classes\t{}\n", classes.classes.len()));
    stats.push_str(&format!("largest_class\t{}\n", classes.largest_class_size));
    stats.push_str(&format!("neighborless\t{}\n", classes.neighborless_words));
    fs::write(out.join("neighbor_stats.tsv"), &stats)?;

    println!(
        "bound-width rows: {} (phi tighter on {:.1}%)",
        report.rows.len(),
        100.0 * report.phi_tighter_fraction
    );
    print!("{stats}");
    Ok(())
}
