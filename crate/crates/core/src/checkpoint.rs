//! Self-contained model checkpoints.
//!
//! A checkpoint carries everything needed to rebuild the classifier:
//! the model configuration (with its hash as a manifest), the vocabulary,
//! the frozen pre-trained vectors, and every parameter tensor. All floats
//! are stored as hexadecimal IEEE-754 bit patterns, so save followed by
//! load reproduces the model bitwise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::embed::VectorStore;
use crate::error::{Error, Result};
use crate::lexicon::Vocabulary;
use crate::models::{build_model, ModelConfig, TextModel};
use crate::tensor::Tensor;

const MAGIC: &str = "wordcert-checkpoint v1";

/// Hash of the canonical model-config text.
pub fn config_hash(config: &ModelConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.to_kv().canonical().as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn write_floats(out: &mut String, data: &[f64]) {
    for (i, v) in data.iter().enumerate() {
        if i > 0 {
            out.push(if i % 16 == 0 { '\n' } else { ' ' });
        }
        let _ = write!(out, "{:016x}", v.to_bits());
    }
    out.push('\n');
}

pub fn save(path: &Path, model: &TextModel) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "config_hash {}", config_hash(&model.config));
    out.push_str("[config]\n");
    out.push_str(&model.config.to_kv().canonical());
    let _ = writeln!(out, "[vocab] {}", model.vocab.len());
    for w in model.vocab.words() {
        out.push_str(w);
        out.push('\n');
    }
    let _ = writeln!(out, "[vectors] {}", model.vectors.dim());
    for w in 0..model.vocab.len() {
        write_floats(&mut out, model.vectors.vector(w));
    }
    for (_, p) in model.params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(ToString::to_string).collect();
        let _ = writeln!(
            out,
            "[param] {} {} {} {}",
            p.name,
            usize::from(p.trainable),
            p.value.shape().len(),
            dims.join(" ")
        );
        write_floats(&mut out, p.value.data());
    }
    fs::write(path, out)?;
    Ok(())
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    path: String,
    lineno: usize,
}

impl<'a> LineReader<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.lineno += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::data(&self.path, self.lineno, "unexpected end of file"))
    }

    fn err(&self, msg: impl ToString) -> Error {
        Error::data(&self.path, self.lineno, msg)
    }
}

fn read_floats(r: &mut LineReader, count: usize) -> Result<Vec<f64>> {
    let mut data = Vec::with_capacity(count);
    while data.len() < count {
        let line = r.next()?;
        for tok in line.split_whitespace() {
            let bits = u64::from_str_radix(tok, 16)
                .map_err(|_| r.err(format!("bad float bits '{tok}'")))?;
            data.push(f64::from_bits(bits));
        }
    }
    if data.len() != count {
        return Err(r.err(format!("expected {count} floats, got {}", data.len())));
    }
    Ok(data)
}

pub fn load(path: &Path) -> Result<TextModel> {
    let text = fs::read_to_string(path)?;
    let mut r = LineReader {
        lines: text.lines(),
        path: path.display().to_string(),
        lineno: 0,
    };
    if r.next()? != MAGIC {
        return Err(r.err("not a wordcert checkpoint"));
    }
    let hash_line = r.next()?;
    let stored_hash = hash_line
        .strip_prefix("config_hash ")
        .ok_or_else(|| r.err("missing config_hash"))?
        .to_string();

    if r.next()? != "[config]" {
        return Err(r.err("expected [config]"));
    }
    let mut config_text = String::new();
    let vocab_len;
    loop {
        let line = r.next()?;
        if let Some(rest) = line.strip_prefix("[vocab] ") {
            vocab_len = rest
                .parse::<usize>()
                .map_err(|_| r.err("bad vocab length"))?;
            break;
        }
        config_text.push_str(line);
        config_text.push('\n');
    }
    let kv = KeyValues::parse(&config_text, "checkpoint config")?;
    let config = ModelConfig::from_kv(&kv)?;
    if config_hash(&config) != stored_hash {
        return Err(Error::data(
            path.display().to_string(),
            0,
            "config hash mismatch: checkpoint corrupted or config format changed",
        ));
    }

    let mut vocab = Vocabulary::new();
    for _ in 0..vocab_len {
        let w = r.next()?;
        vocab.add(w).map_err(|e| r.err(e.to_string()))?;
    }

    let dim_line = r.next()?;
    let dim = dim_line
        .strip_prefix("[vectors] ")
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| r.err("expected [vectors] <dim>"))?;
    let mut vectors = VectorStore::new(dim, vocab_len);
    for w in 0..vocab_len {
        let row = read_floats(&mut r, dim)?;
        vectors.set(w, &row);
    }

    // Rebuild the parameter skeleton, then overwrite values.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = build_model(config, vocab, vectors, &mut rng)?;

    let mut remaining: Vec<String> = model
        .params
        .iter()
        .map(|(_, p)| p.name.clone())
        .collect();
    loop {
        r.lineno += 1;
        let Some(line) = r.lines.next() else { break };
        if line.trim().is_empty() {
            continue;
        }
        let rest = line
            .strip_prefix("[param] ")
            .ok_or_else(|| r.err("expected [param]"))?;
        let mut fields = rest.split_whitespace();
        let name = fields.next().ok_or_else(|| r.err("missing name"))?;
        let _trainable = fields.next();
        let rank: usize = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| r.err("missing rank"))?;
        let shape: Vec<usize> = fields
            .map(|d| d.parse::<usize>().map_err(|_| r.err("bad dim")))
            .collect::<Result<_>>()?;
        if shape.len() != rank {
            return Err(r.err("rank does not match dims"));
        }
        let count: usize = shape.iter().product();
        let data = read_floats(&mut r, count)?;

        let id = model
            .params
            .iter()
            .find(|(_, p)| p.name == name)
            .map(|(id, _)| id)
            .ok_or_else(|| r.err(format!("unknown parameter '{name}'")))?;
        if model.params.get(id).value.shape() != shape.as_slice() {
            return Err(r.err(format!(
                "shape mismatch for '{name}': checkpoint {:?}, model {:?}",
                shape,
                model.params.get(id).value.shape()
            )));
        }
        model.params.get_mut(id).value = Tensor::new(data, shape)?;
        remaining.retain(|n| n != name);
    }
    if !remaining.is_empty() {
        return Err(Error::data(
            path.display().to_string(),
            0,
            format!("checkpoint missing parameters: {remaining:?}"),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::synthetic_vectors;
    use crate::models::{Architecture, LstmPool};

    fn model_fixture() -> TextModel {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let vocab = Vocabulary::from_words((0..5).map(|i| format!("w{i}"))).unwrap();
        let vectors = synthetic_vectors(5, 3, &mut rng);
        let config = ModelConfig {
            arch: Architecture::Cnn,
            hidden_dim: 4,
            ff_layers: 2,
            kernel_width: 3,
            dropout: 0.1,
            classes: 2,
            embed_dim: None,
            lstm_bidirectional: false,
            lstm_pool: LstmPool::Mean,
        };
        build_model(config, vocab, vectors, &mut rng).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let model = model_fixture();
        let dir = std::env::temp_dir().join("wordcert_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save(&path, &model).unwrap();
        let loaded = load(&path).unwrap();

        assert_eq!(loaded.vocab.words(), model.vocab.words());
        for w in 0..model.vocab.len() {
            let a = model.vectors.vector(w);
            let b = loaded.vectors.vector(w);
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        for ((_, p), (_, q)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(p.name, q.name);
            assert_eq!(p.value.shape(), q.value.shape());
            let a: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = q.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "parameter {} not bitwise equal", p.name);
        }

        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.join("model2.ckpt");
        save(&path2, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn special_values_survive() {
        let mut model = model_fixture();
        let (id, _) = model.params.iter().next().unwrap();
        model.params.get_mut(id).value.data_mut()[0] = -0.0;
        model.params.get_mut(id).value.data_mut()[1] = 1e-320; // subnormal
        let dir = std::env::temp_dir().join("wordcert_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("special.ckpt");
        save(&path, &model).unwrap();
        let loaded = load(&path).unwrap();
        let v = &loaded.params.get(id).value;
        assert_eq!(v.data()[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(v.data()[1], 1e-320);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = std::env::temp_dir().join("wordcert_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(matches!(load(&path), Err(Error::Data { .. })));

        let model = model_fixture();
        let good = dir.join("good.ckpt");
        save(&good, &model).unwrap();
        let text = fs::read_to_string(&good).unwrap();
        // Flip the stored hash.
        let tampered = text.replace("config_hash ", "config_hash 00");
        fs::write(&path, tampered).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn hash_depends_on_config() {
        let model = model_fixture();
        let mut other = model.config.clone();
        other.hidden_dim += 1;
        assert_ne!(config_hash(&model.config), config_hash(&other));
        assert_eq!(config_hash(&model.config), config_hash(&model.config));
    }
}
