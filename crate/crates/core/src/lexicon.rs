//! Vocabulary, substitution neighborhoods, per-example allowed sets,
//! language-model filtering, neighbor-graph analysis, and datasets.
//!
//! The substitution set S(x, i) at position i always contains the original
//! word x_i; it is built from the word-level neighbor table N(w) relative
//! to the *original* sentence only, never to an already-perturbed one.
//! An optional language-model filter drops neighbors whose window
//! log-probability falls more than delta below the original window's.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type WordId = usize;

/// Dense word list with reverse lookup. Indices run 0..V-1.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary::default()
    }

    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Result<Self> {
        let mut v = Vocabulary::new();
        for w in words {
            v.add(&w)?;
        }
        Ok(v)
    }

    pub fn add(&mut self, word: &str) -> Result<WordId> {
        if self.index.contains_key(word) {
            return Err(Error::Config(format!("duplicate vocabulary word: {word}")));
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Per-word substitution neighbors N(w). The word itself is never stored;
/// reflexivity is added when substitution sets are constructed.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    neighbors: Vec<Vec<WordId>>,
}

impl NeighborTable {
    pub fn empty(vocab_size: usize) -> Self {
        NeighborTable {
            neighbors: vec![Vec::new(); vocab_size],
        }
    }

    pub fn set(&mut self, word: WordId, mut neighbors: Vec<WordId>) {
        neighbors.retain(|&n| n != word);
        neighbors.sort_unstable();
        neighbors.dedup();
        self.neighbors[word] = neighbors;
    }

    pub fn neighbors(&self, word: WordId) -> &[WordId] {
        &self.neighbors[word]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Count of words with no neighbors at all.
    pub fn neighborless(&self) -> usize {
        self.neighbors.iter().filter(|n| n.is_empty()).count()
    }
}

/// One labeled example. Two-sequence tasks put the (unperturbable)
/// premise in `premise` and the hypothesis in `tokens`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub premise: Option<Vec<String>>,
    pub tokens: Vec<String>,
    pub label: usize,
}

impl Example {
    pub fn single(tokens: Vec<String>, label: usize) -> Self {
        Example {
            premise: None,
            tokens,
            label,
        }
    }

    /// Drop out-of-vocabulary tokens, mirroring the deletion strategy the
    /// models use. Returns None when nothing is left to classify.
    pub fn project_to_vocab(&self, vocab: &Vocabulary) -> Option<PreparedExample> {
        let tokens: Vec<WordId> = self.tokens.iter().filter_map(|t| vocab.id(t)).collect();
        if tokens.is_empty() {
            return None;
        }
        let premise = match &self.premise {
            None => None,
            Some(p) => {
                let ids: Vec<WordId> = p.iter().filter_map(|t| vocab.id(t)).collect();
                if ids.is_empty() {
                    return None;
                }
                Some(ids)
            }
        };
        Some(PreparedExample {
            premise,
            tokens,
            label: self.label,
        })
    }
}

/// An example projected into vocabulary ids, ready for modeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedExample {
    pub premise: Option<Vec<WordId>>,
    pub tokens: Vec<WordId>,
    pub label: usize,
}

/// Per-position allowed substitution sets for one tokenized example.
/// `candidates[i][0]` is always the original token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionSpec {
    pub tokens: Vec<WordId>,
    pub candidates: Vec<Vec<WordId>>,
}

impl SubstitutionSpec {
    /// Spec with singleton sets at every position (no perturbation).
    pub fn unperturbed(tokens: &[WordId]) -> Self {
        SubstitutionSpec {
            tokens: tokens.to_vec(),
            candidates: tokens.iter().map(|&t| vec![t]).collect(),
        }
    }

    /// Number of positions.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Exact |B(z)| = Π |S(x, i)| in arbitrary precision.
    pub fn perturbation_count(&self) -> BigUint {
        let mut count = BigUint::from(1u32);
        for c in &self.candidates {
            count *= BigUint::from(c.len());
        }
        count
    }

    /// One uniform sample from B(z): each position drawn independently
    /// and uniformly from its candidate set.
    pub fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> Vec<WordId> {
        self.candidates
            .iter()
            .map(|c| c[rng.gen_range(0..c.len())])
            .collect()
    }

    /// Iterate every perturbation in B(z) in lexicographic candidate
    /// order. The callback returns false to stop early.
    pub fn for_each_perturbation(&self, mut f: impl FnMut(&[WordId]) -> bool) {
        let mut idx = vec![0usize; self.len()];
        let mut current: Vec<WordId> = self.candidates.iter().map(|c| c[0]).collect();
        loop {
            if !f(&current) {
                return;
            }
            let mut pos = 0;
            loop {
                if pos == self.len() {
                    return;
                }
                idx[pos] += 1;
                if idx[pos] < self.candidates[pos].len() {
                    current[pos] = self.candidates[pos][idx[pos]];
                    break;
                }
                idx[pos] = 0;
                current[pos] = self.candidates[pos][0];
                pos += 1;
            }
        }
    }
}

/// Scores a token window with a log-probability. Implementations must be
/// deterministic for a given window.
pub trait LmScorer: Send + Sync {
    fn window_log_prob(&self, window: &[&str]) -> Option<f64>;
}

/// Lookup scorer backed by a window -> log-prob file.
#[derive(Debug, Clone, Default)]
pub struct FileLmScorer {
    scores: HashMap<String, f64>,
}

impl FileLmScorer {
    pub fn new(scores: HashMap<String, f64>) -> Self {
        FileLmScorer { scores }
    }
}

impl LmScorer for FileLmScorer {
    fn window_log_prob(&self, window: &[&str]) -> Option<f64> {
        self.scores.get(&window.join(" ")).copied()
    }
}

/// Scorer that accepts everything (log-prob 0 for any window).
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformLmScorer;

impl LmScorer for UniformLmScorer {
    fn window_log_prob(&self, _window: &[&str]) -> Option<f64> {
        Some(0.0)
    }
}

/// Language-model filter settings: window radius W, threshold delta, and
/// the scorer to consult.
#[derive(Clone)]
pub struct NeighborFilterConfig {
    pub window_radius: usize,
    pub delta: f64,
    pub scorer: Arc<dyn LmScorer>,
}

impl NeighborFilterConfig {
    pub fn new(window_radius: usize, delta: f64, scorer: Arc<dyn LmScorer>) -> Result<Self> {
        if window_radius < 1 {
            return Err(Error::Config("window radius must be >= 1".into()));
        }
        if delta < 0.0 {
            return Err(Error::Config("threshold delta must be >= 0".into()));
        }
        Ok(NeighborFilterConfig {
            window_radius,
            delta,
            scorer,
        })
    }

    /// Defaults matching the evaluation setup: W = 6, delta = 5.
    pub fn default_with(scorer: Arc<dyn LmScorer>) -> Self {
        NeighborFilterConfig {
            window_radius: 6,
            delta: 5.0,
            scorer,
        }
    }
}

impl std::fmt::Debug for NeighborFilterConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeighborFilterConfig")
            .field("window_radius", &self.window_radius)
            .field("delta", &self.delta)
            .finish()
    }
}

/// Build S(x, i) for every position of `tokens`. Without a filter,
/// S(x, i) = {x_i} ∪ N(x_i). With one, a neighbor survives only if
/// swapping it into the window around position i (truncated at sequence
/// boundaries) costs at most delta log-probability relative to the
/// original window. Sets are always computed against the original tokens.
pub fn build_substitution_spec(
    tokens: &[WordId],
    vocab: &Vocabulary,
    table: &NeighborTable,
    filter: Option<&NeighborFilterConfig>,
) -> Result<SubstitutionSpec> {
    if tokens.is_empty() {
        return Err(Error::Precondition("empty token list".into()));
    }
    let mut candidates = Vec::with_capacity(tokens.len());
    for (i, &tok) in tokens.iter().enumerate() {
        let mut set = vec![tok];
        for &nb in table.neighbors(tok) {
            let keep = match filter {
                None => true,
                Some(cfg) => lm_filter_allows(tokens, i, nb, vocab, cfg)
                    .map_err(|msg| Error::Filtering { position: i, msg })?,
            };
            if keep {
                set.push(nb);
            }
        }
        candidates.push(set);
    }
    Ok(SubstitutionSpec {
        tokens: tokens.to_vec(),
        candidates,
    })
}

fn lm_filter_allows(
    tokens: &[WordId],
    i: usize,
    substitute: WordId,
    vocab: &Vocabulary,
    cfg: &NeighborFilterConfig,
) -> std::result::Result<bool, String> {
    let lo = i.saturating_sub(cfg.window_radius);
    let hi = (i + cfg.window_radius + 1).min(tokens.len());
    let orig: Vec<&str> = tokens[lo..hi].iter().map(|&t| vocab.word(t)).collect();
    let mut subst = orig.clone();
    subst[i - lo] = vocab.word(substitute);

    let orig_score = cfg
        .scorer
        .window_log_prob(&orig)
        .ok_or_else(|| format!("no score for window '{}'", orig.join(" ")))?;
    let subst_score = cfg
        .scorer
        .window_log_prob(&subst)
        .ok_or_else(|| format!("no score for window '{}'", subst.join(" ")))?;
    Ok(subst_score >= orig_score - cfg.delta)
}

/// Statistics of the neighbor graph's connected components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceClasses {
    /// Class members, each sorted; classes ordered by smallest member.
    pub classes: Vec<Vec<WordId>>,
    pub largest_class_size: usize,
    pub neighborless_words: usize,
}

/// Connected components of the symmetric closure of the neighbor
/// relation, via union-find.
pub fn equivalence_classes(table: &NeighborTable) -> EquivalenceClasses {
    let n = table.len();
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for w in 0..n {
        for &nb in table.neighbors(w) {
            let (a, b) = (find(&mut parent, w), find(&mut parent, nb));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }

    let mut groups: HashMap<usize, Vec<WordId>> = HashMap::new();
    for w in 0..n {
        let root = find(&mut parent, w);
        groups.entry(root).or_default().push(w);
    }
    let mut classes: Vec<Vec<WordId>> = groups.into_values().collect();
    for c in &mut classes {
        c.sort_unstable();
    }
    classes.sort_by_key(|c| c[0]);
    let largest = classes.iter().map(Vec::len).max().unwrap_or(0);
    EquivalenceClasses {
        classes,
        largest_class_size: largest,
        neighborless_words: table.neighborless(),
    }
}

/// Synthetic first-equals-last memory task.
///
/// Each example is a word sequence whose label is 1 iff the first and
/// last words match. Endpoint words come from one alphabet with no
/// neighbors (so those positions are fixed); every middle word comes from
/// a second alphabet in which all words are mutual neighbors, making
/// middle positions substitutable with the whole middle vocabulary.
#[derive(Debug, Clone)]
pub struct MemoryTask {
    pub vocab: Vocabulary,
    pub table: NeighborTable,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn generate_memory_task(
    n_train: usize,
    n_test: usize,
    vocab_size: usize,
    len_min: usize,
    len_max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MemoryTask> {
    if vocab_size < 2 {
        return Err(Error::Config(format!(
            "memory task needs vocab_size >= 2, got {vocab_size}"
        )));
    }
    if len_min < 3 || len_max < len_min {
        return Err(Error::Config(format!(
            "memory task needs 3 <= len_min <= len_max, got [{len_min}, {len_max}]"
        )));
    }
    let mut vocab = Vocabulary::new();
    let endpoint: Vec<WordId> = (0..vocab_size)
        .map(|i| vocab.add(&format!("e{i}")).unwrap())
        .collect();
    let middle: Vec<WordId> = (0..vocab_size)
        .map(|i| vocab.add(&format!("m{i}")).unwrap())
        .collect();

    let mut table = NeighborTable::empty(vocab.len());
    for &m in &middle {
        table.set(m, middle.iter().copied().filter(|&o| o != m).collect());
    }

    let gen = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Example> {
        (0..n)
            .map(|_| {
                let len = rng.gen_range(len_min..=len_max);
                let first_pos = rng.gen_range(0..endpoint.len());
                let first = endpoint[first_pos];
                // Balanced by construction: match the endpoints with
                // probability one half, otherwise draw a different word.
                let (last, label) = if rng.gen_bool(0.5) {
                    (first, 1)
                } else {
                    let mut other_pos = rng.gen_range(0..endpoint.len() - 1);
                    if other_pos >= first_pos {
                        other_pos += 1;
                    }
                    (endpoint[other_pos], 0)
                };
                let mut tokens = vec![vocab.word(first).to_string()];
                for _ in 0..len - 2 {
                    tokens.push(vocab.word(middle[rng.gen_range(0..middle.len())]).to_string());
                }
                tokens.push(vocab.word(last).to_string());
                Example::single(tokens, label)
            })
            .collect()
    };

    let train = gen(n_train, rng);
    let test = gen(n_test, rng);
    Ok(MemoryTask {
        vocab,
        table,
        train,
        test,
    })
}

// ---- file formats ----

/// Dataset file: one example per line, `label<TAB>token token ...`, or
/// `label<TAB>premise tokens<TAB>hypothesis tokens` for two-sequence
/// tasks.
pub fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn parse_dataset(text: &str, path: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::data(
                path,
                lineno,
                format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(path, lineno, format!("bad label '{}'", fields[0])))?;
        let split_tokens =
            |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_string).collect() };
        let (premise, tokens) = if fields.len() == 3 {
            (Some(split_tokens(fields[1])), split_tokens(fields[2]))
        } else {
            (None, split_tokens(fields[1]))
        };
        if tokens.is_empty() {
            return Err(Error::data(path, lineno, "empty token list"));
        }
        out.push(Example {
            premise,
            tokens,
            label,
        });
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let mut text = String::new();
    for e in examples {
        match &e.premise {
            Some(p) => {
                let _ = writeln!(text, "{}\t{}\t{}", e.label, p.join(" "), e.tokens.join(" "));
            }
            None => {
                let _ = writeln!(text, "{}\t{}", e.label, e.tokens.join(" "));
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Neighbor file: `word<TAB>neighbor neighbor ...`. Words missing from
/// the file have empty neighborhoods. Every word must be in `vocab`.
pub fn load_neighbors(path: &Path, vocab: &Vocabulary) -> Result<NeighborTable> {
    let text = fs::read_to_string(path)?;
    parse_neighbors(&text, &path.display().to_string(), vocab)
}

pub fn parse_neighbors(text: &str, path: &str, vocab: &Vocabulary) -> Result<NeighborTable> {
    let mut table = NeighborTable::empty(vocab.len());
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (word, rest) = match line.split_once('\t') {
            Some(p) => p,
            None => (line.trim(), ""),
        };
        let wid = vocab
            .id(word.trim())
            .ok_or_else(|| Error::data(path, lineno, format!("unknown word '{}'", word.trim())))?;
        let mut ids = Vec::new();
        for nb in rest.split_whitespace() {
            let nid = vocab
                .id(nb)
                .ok_or_else(|| Error::data(path, lineno, format!("unknown neighbor '{nb}'")))?;
            ids.push(nid);
        }
        table.set(wid, ids);
    }
    Ok(table)
}

pub fn save_neighbors(path: &Path, vocab: &Vocabulary, table: &NeighborTable) -> Result<()> {
    let mut text = String::new();
    for w in 0..vocab.len() {
        let nbs: Vec<&str> = table.neighbors(w).iter().map(|&n| vocab.word(n)).collect();
        let _ = writeln!(text, "{}\t{}", vocab.word(w), nbs.join(" "));
    }
    fs::write(path, text)?;
    Ok(())
}

/// LM score file: `token window<TAB>log_prob` with windows joined by
/// single spaces.
pub fn load_lm_scores(path: &Path) -> Result<FileLmScorer> {
    let text = fs::read_to_string(path)?;
    parse_lm_scores(&text, &path.display().to_string())
}

pub fn parse_lm_scores(text: &str, path: &str) -> Result<FileLmScorer> {
    let mut scores = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (window, score) = line
            .split_once('\t')
            .ok_or_else(|| Error::data(path, lineno, "expected `window<TAB>log_prob`"))?;
        let value: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::data(path, lineno, format!("bad log-prob '{score}'")))?;
        scores.insert(window.trim().to_string(), value);
    }
    Ok(FileLmScorer::new(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_words(words.iter().map(|s| s.to_string())).unwrap()
    }

    #[test]
    fn spec_includes_original_and_neighbors() {
        let vocab = small_vocab(&["a", "b", "c", "d"]);
        let mut table = NeighborTable::empty(4);
        table.set(0, vec![1, 2]);
        table.set(1, vec![3]);
        let spec = build_substitution_spec(&[0, 1, 3], &vocab, &table, None).unwrap();
        assert_eq!(spec.candidates[0], vec![0, 1, 2]);
        assert_eq!(spec.candidates[1], vec![1, 3]);
        // word with empty N(w): singleton set
        assert_eq!(spec.candidates[2], vec![3]);
    }

    #[test]
    fn perturbation_count_examples() {
        let vocab = small_vocab(&["a", "b", "c"]);
        let table = NeighborTable::empty(3);
        let spec = build_substitution_spec(&[0, 1, 2], &vocab, &table, None).unwrap();
        assert_eq!(spec.perturbation_count(), BigUint::from(1u32));

        let spec = SubstitutionSpec {
            tokens: vec![0, 1, 2],
            candidates: vec![vec![0, 1], vec![1, 0, 2], vec![2]],
        };
        assert_eq!(spec.perturbation_count(), BigUint::from(6u32));

        // 10 positions with 9 candidates each: 9^10
        let spec = SubstitutionSpec {
            tokens: vec![0; 10],
            candidates: vec![(0..9).collect(); 10],
        };
        assert_eq!(spec.perturbation_count(), BigUint::from(3_486_784_401u64));
    }

    #[test]
    fn enumeration_visits_whole_ball() {
        let spec = SubstitutionSpec {
            tokens: vec![0, 1, 2],
            candidates: vec![vec![0, 1], vec![1, 0, 2], vec![2]],
        };
        let mut seen = Vec::new();
        spec.for_each_perturbation(|p| {
            seen.push(p.to_vec());
            true
        });
        assert_eq!(seen.len(), 6);
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 6);
        assert!(seen.contains(&vec![0, 1, 2]));
    }

    #[test]
    fn filter_boundary_drop_of_zero_is_allowed() {
        let vocab = small_vocab(&["a", "b"]);
        let mut table = NeighborTable::empty(2);
        table.set(0, vec![1]);
        // Uniform scorer assigns equal probability: drop 0 <= delta.
        let cfg = NeighborFilterConfig::new(2, 0.0, Arc::new(UniformLmScorer)).unwrap();
        let spec = build_substitution_spec(&[0], &vocab, &table, Some(&cfg)).unwrap();
        assert_eq!(spec.candidates[0], vec![0, 1]);
    }

    #[test]
    fn filter_rejects_large_drops_and_truncates_windows() {
        let vocab = small_vocab(&["a", "b", "c"]);
        let mut table = NeighborTable::empty(3);
        table.set(1, vec![2]);
        let mut scores = HashMap::new();
        // Window radius 1 truncated at both boundaries for a length-2 input.
        scores.insert("a b".to_string(), -1.0);
        scores.insert("a c".to_string(), -7.5);
        let scorer = Arc::new(FileLmScorer::new(scores));
        let cfg = NeighborFilterConfig::new(1, 5.0, scorer.clone()).unwrap();
        let spec = build_substitution_spec(&[0, 1], &vocab, &table, Some(&cfg)).unwrap();
        // drop of 6.5 > 5: rejected, original kept
        assert_eq!(spec.candidates[1], vec![1]);

        let cfg = NeighborFilterConfig::new(1, 6.5, scorer).unwrap();
        let spec = build_substitution_spec(&[0, 1], &vocab, &table, Some(&cfg)).unwrap();
        assert_eq!(spec.candidates[1], vec![1, 2]);
    }

    #[test]
    fn filter_missing_window_names_position() {
        let vocab = small_vocab(&["a", "b"]);
        let mut table = NeighborTable::empty(2);
        table.set(0, vec![1]);
        let cfg = NeighborFilterConfig::new(1, 5.0, Arc::new(FileLmScorer::default())).unwrap();
        let err = build_substitution_spec(&[0], &vocab, &table, Some(&cfg)).unwrap_err();
        match err {
            Error::Filtering { position, .. } => assert_eq!(position, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn default_filter_settings() {
        let cfg = NeighborFilterConfig::default_with(Arc::new(UniformLmScorer));
        assert_eq!(cfg.window_radius, 6);
        assert_eq!(cfg.delta, 5.0);
    }

    #[test]
    fn classes_trivial_and_transitive() {
        let table = NeighborTable::empty(3);
        let ec = equivalence_classes(&table);
        assert_eq!(ec.classes.len(), 3);
        assert_eq!(ec.largest_class_size, 1);
        assert_eq!(ec.neighborless_words, 3);

        let mut table = NeighborTable::empty(3);
        table.set(0, vec![1]);
        table.set(1, vec![2]);
        let ec = equivalence_classes(&table);
        assert_eq!(ec.classes, vec![vec![0, 1, 2]]);
        assert_eq!(ec.largest_class_size, 3);
    }

    /// BFS oracle for connected components over the symmetric closure.
    fn bfs_components(table: &NeighborTable) -> Vec<Vec<WordId>> {
        let n = table.len();
        let mut adj = vec![Vec::new(); n];
        for w in 0..n {
            for &nb in table.neighbors(w) {
                adj[w].push(nb);
                adj[nb].push(w);
            }
        }
        let mut seen = vec![false; n];
        let mut classes = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut queue = vec![start];
            let mut class = Vec::new();
            seen[start] = true;
            while let Some(w) = queue.pop() {
                class.push(w);
                for &nb in &adj[w] {
                    if !seen[nb] {
                        seen[nb] = true;
                        queue.push(nb);
                    }
                }
            }
            class.sort_unstable();
            classes.push(class);
        }
        classes.sort_by_key(|c| c[0]);
        classes
    }

    #[test]
    fn classes_match_bfs_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = 50;
            let mut table = NeighborTable::empty(n);
            for w in 0..n {
                let k = rng.gen_range(0..3);
                let nbs: Vec<WordId> = (0..k).map(|_| rng.gen_range(0..n)).collect();
                table.set(w, nbs);
            }
            let ec = equivalence_classes(&table);
            assert_eq!(ec.classes, bfs_components(&table));
        }
    }

    #[test]
    fn memory_task_shape_and_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let task = generate_memory_task(200, 50, 10, 3, 10, &mut rng).unwrap();
        assert_eq!(task.train.len(), 200);
        assert_eq!(task.test.len(), 50);
        for e in task.train.iter().chain(&task.test) {
            assert!(e.tokens.len() >= 3 && e.tokens.len() <= 10);
            let first = e.tokens.first().unwrap();
            let last = e.tokens.last().unwrap();
            assert_eq!(e.label, usize::from(first == last));
            assert!(first.starts_with('e') && last.starts_with('e'));
            for mid in &e.tokens[1..e.tokens.len() - 1] {
                assert!(mid.starts_with('m'));
            }
        }
        // Roughly balanced labels.
        let ones: usize = task.train.iter().map(|e| e.label).sum();
        assert!(ones > 60 && ones < 140, "ones = {ones}");
    }

    #[test]
    fn memory_task_perturbation_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let task = generate_memory_task(50, 0, 10, 3, 3, &mut rng).unwrap();
        for e in &task.train {
            let prep = e.project_to_vocab(&task.vocab).unwrap();
            let spec =
                build_substitution_spec(&prep.tokens, &task.vocab, &task.table, None).unwrap();
            // L = 3 over vocab 10: one substitutable middle slot x 10 words.
            assert_eq!(spec.perturbation_count(), BigUint::from(10u32));
            assert_eq!(spec.candidates[0].len(), 1);
            assert_eq!(spec.candidates[2].len(), 1);
        }
    }

    #[test]
    fn memory_task_rejects_tiny_vocab() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(generate_memory_task(1, 1, 1, 3, 10, &mut rng).is_err());
    }

    #[test]
    fn dataset_parse_and_roundtrip() {
        let text = "1\tgood film\n0\tbad film\n1\ta b\tc d\n";
        let examples = parse_dataset(text, "test").unwrap();
        assert_eq!(examples.len(), 3);
        assert_eq!(examples[0].tokens, vec!["good", "film"]);
        assert_eq!(examples[2].premise.as_ref().unwrap(), &vec!["a", "b"]);

        let dir = std::env::temp_dir().join("wordcert_lexicon_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.tsv");
        save_dataset(&path, &examples).unwrap();
        let reread = load_dataset(&path).unwrap();
        assert_eq!(examples, reread);
    }

    #[test]
    fn dataset_errors_carry_line_numbers() {
        let err = parse_dataset("1\tok ok\nbad line without tab\n", "f").unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_dataset("x\ttokens\n", "f").unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn neighbor_file_parse() {
        let vocab = small_vocab(&["a", "b", "c"]);
        // Empty file: all neighborhoods empty.
        let table = parse_neighbors("", "f", &vocab).unwrap();
        assert_eq!(table.neighborless(), 3);

        let table = parse_neighbors("a\tb c\nb\ta\n", "f", &vocab).unwrap();
        assert_eq!(table.neighbors(0), &[1, 2]);
        assert_eq!(table.neighbors(1), &[0]);
        assert_eq!(table.neighbors(2), &[] as &[WordId]);

        let err = parse_neighbors("z\ta\n", "f", &vocab).unwrap_err();
        assert!(matches!(err, Error::Data { line: 1, .. }));
    }

    #[test]
    fn lm_scores_parse() {
        let scorer = parse_lm_scores("the good film\t-12.5\n", "f").unwrap();
        assert_eq!(
            scorer.window_log_prob(&["the", "good", "film"]),
            Some(-12.5)
        );
        assert_eq!(scorer.window_log_prob(&["missing"]), None);
        assert!(parse_lm_scores("no tab here\n", "f").is_err());
    }

    #[test]
    fn oov_projection_deletes_tokens() {
        let vocab = small_vocab(&["a", "b"]);
        let e = Example::single(vec!["a".into(), "zzz".into(), "b".into()], 1);
        let prep = e.project_to_vocab(&vocab).unwrap();
        assert_eq!(prep.tokens, vec![0, 1]);
        let e = Example::single(vec!["zzz".into()], 0);
        assert!(e.project_to_vocab(&vocab).is_none());
    }

    #[test]
    fn uniform_sampling_covers_candidates() {
        let spec = SubstitutionSpec {
            tokens: vec![0, 1],
            candidates: vec![vec![0, 5], vec![1, 6, 7]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            let s = spec.sample_uniform(&mut rng);
            assert!(spec.candidates[0].contains(&s[0]));
            assert!(spec.candidates[1].contains(&s[1]));
            seen.insert(s);
        }
        assert_eq!(seen.len(), 6);
    }
}
