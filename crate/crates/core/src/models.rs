//! Classifier architectures assembled from graph ops, with loss bounds
//! and certification.
//!
//! Four architectures share one input pipeline: every word is embedded as
//! φ(w) = relu(f_input(v_pre(w))), the per-position input box is the
//! smallest axis-aligned box over the φ of all allowed substitutes,
//! optionally shrunk toward φ(x_i) by epsilon. Binary tasks emit a single
//! logit; k-way tasks emit k logits and take cross entropy through the
//! stable log-softmax bounds.
//!
//! A certificate holds when the worst-case logit margin is positive: for
//! the binary case the whole logit interval lies on the label's side; for
//! the multiclass case the true class's lower bound beats every other
//! class's upper bound.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::interval::{sigmoid, Monotonic};
use crate::lexicon::{PreparedExample, SubstitutionSpec, Vocabulary, WordId};
use crate::embed::{InputTransform, VectorStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Bow,
    Cnn,
    Lstm,
    DecompAttn,
}

impl Architecture {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "bow" => Ok(Architecture::Bow),
            "cnn" => Ok(Architecture::Cnn),
            "lstm" => Ok(Architecture::Lstm),
            "attn" => Ok(Architecture::DecompAttn),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Bow => "bow",
            Architecture::Cnn => "cnn",
            Architecture::Lstm => "lstm",
            Architecture::DecompAttn => "attn",
        }
    }
}

/// How the LSTM turns per-step hidden states into a sequence encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LstmPool {
    Mean,
    Final,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub hidden_dim: usize,
    /// Feedforward layers in the classifier head, including the output.
    pub ff_layers: usize,
    pub kernel_width: usize,
    pub dropout: f64,
    pub classes: usize,
    /// Output dimension of f_input; None means the pre-trained dimension.
    pub embed_dim: Option<usize>,
    pub lstm_bidirectional: bool,
    pub lstm_pool: LstmPool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.ff_layers == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be >= 2".into()));
        }
        if self.kernel_width == 0 || self.kernel_width % 2 == 0 {
            return Err(Error::Config("kernel width must be odd and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let arch = Architecture::parse(
            kv.get("arch")
                .ok_or_else(|| Error::Config("missing 'arch'".into()))?,
        )?;
        let cfg = ModelConfig {
            arch,
            hidden_dim: kv.get_parsed("hidden_dim")?.unwrap_or(100),
            ff_layers: kv.get_parsed("ff_layers")?.unwrap_or(2),
            kernel_width: kv.get_parsed("kernel_width")?.unwrap_or(3),
            dropout: kv.get_parsed("dropout")?.unwrap_or(0.0),
            classes: kv.get_parsed("classes")?.unwrap_or(2),
            embed_dim: kv.get_parsed("embed_dim")?,
            lstm_bidirectional: kv.get_parsed("lstm_bidirectional")?.unwrap_or(true),
            lstm_pool: match kv.get("lstm_pool").unwrap_or("mean") {
                "mean" => LstmPool::Mean,
                "final" => LstmPool::Final,
                other => {
                    return Err(Error::Config(format!("unknown lstm_pool '{other}'")));
                }
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical key-value text, used for config hashing.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("arch", self.arch.tag());
        kv.set("hidden_dim", self.hidden_dim);
        kv.set("ff_layers", self.ff_layers);
        kv.set("kernel_width", self.kernel_width);
        kv.set("dropout", self.dropout);
        kv.set("classes", self.classes);
        if let Some(e) = self.embed_dim {
            kv.set("embed_dim", e);
        }
        kv.set("lstm_bidirectional", self.lstm_bidirectional);
        kv.set(
            "lstm_pool",
            match self.lstm_pool {
                LstmPool::Mean => "mean",
                LstmPool::Final => "final",
            },
        );
        kv
    }

    /// Number of logits: binary classification uses a single logit.
    pub fn logit_dim(&self) -> usize {
        if self.classes == 2 {
            1
        } else {
            self.classes
        }
    }
}

#[derive(Debug, Clone)]
struct FfLayer {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct LstmParams {
    /// [4H, e + H]: input, forget, cell, output gate blocks stacked.
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
enum ArchParams {
    Bow {
        ff: Vec<FfLayer>,
    },
    Cnn {
        conv: FfLayer,
        ff: Vec<FfLayer>,
    },
    Lstm {
        fwd: LstmParams,
        bwd: Option<LstmParams>,
        ff: Vec<FfLayer>,
    },
    DecompAttn {
        null: ParamId,
        attend: Vec<FfLayer>,
        compare: Vec<FfLayer>,
        classify: Vec<FfLayer>,
    },
}

/// A classifier: configuration, frozen word vectors, and parameters.
#[derive(Debug, Clone)]
pub struct TextModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub vectors: VectorStore,
    pub params: ParamStore,
    f_input_w: ParamId,
    f_input_b: ParamId,
    arch: ArchParams,
}

/// Xavier-uniform initialization.
fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn add_ff_stack(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    mut in_dim: usize,
    hidden: usize,
    layers: usize,
    out_dim: usize,
) -> Vec<FfLayer> {
    let mut ff = Vec::new();
    for layer in 0..layers {
        let out = if layer + 1 == layers { out_dim } else { hidden };
        let w = store.add(
            format!("{prefix}.ff{layer}.w"),
            init_matrix(rng, out, in_dim),
            true,
        );
        let b = store.add(format!("{prefix}.ff{layer}.b"), Tensor::zeros(&[out]), true);
        ff.push(FfLayer { w, b });
        in_dim = out;
    }
    ff
}

fn add_lstm(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
) -> LstmParams {
    let w = store.add(
        format!("{prefix}.w"),
        init_matrix(rng, 4 * hidden, in_dim + hidden),
        true,
    );
    // Forget-gate bias starts at 1 so freshly initialized cells retain
    // state across steps.
    let mut bias = Tensor::zeros(&[4 * hidden]);
    for j in hidden..2 * hidden {
        bias.data_mut()[j] = 1.0;
    }
    let b = store.add(format!("{prefix}.b"), bias, true);
    LstmParams { w, b }
}

/// Build a model with freshly initialized parameters.
pub fn build_model(
    config: ModelConfig,
    vocab: Vocabulary,
    vectors: VectorStore,
    rng: &mut ChaCha8Rng,
) -> Result<TextModel> {
    config.validate()?;
    if vectors.len() != vocab.len() {
        return Err(Error::Config(format!(
            "vector store has {} rows for a vocabulary of {}",
            vectors.len(),
            vocab.len()
        )));
    }
    let pre_dim = vectors.dim();
    let embed_dim = config.embed_dim.unwrap_or(pre_dim);
    let hidden = config.hidden_dim;
    let out_dim = config.logit_dim();

    let mut store = ParamStore::new();
    let f_input_w = store.add("f_input.w", init_matrix(rng, embed_dim, pre_dim), true);
    let f_input_b = store.add("f_input.b", Tensor::zeros(&[embed_dim]), true);

    let arch = match config.arch {
        Architecture::Bow => {
            // Two-sequence inputs concatenate both pooled encodings.
            let in_dim = embed_dim;
            let ff = add_ff_stack(&mut store, rng, "bow", in_dim, hidden, config.ff_layers, out_dim);
            ArchParams::Bow { ff }
        }
        Architecture::Cnn => {
            let conv_w = store.add(
                "cnn.conv.w",
                init_matrix(rng, hidden, config.kernel_width * embed_dim),
                true,
            );
            let conv_b = store.add("cnn.conv.b", Tensor::zeros(&[hidden]), true);
            let ff = add_ff_stack(&mut store, rng, "cnn", hidden, hidden, config.ff_layers, out_dim);
            ArchParams::Cnn {
                conv: FfLayer {
                    w: conv_w,
                    b: conv_b,
                },
                ff,
            }
        }
        Architecture::Lstm => {
            let fwd = add_lstm(&mut store, rng, "lstm.fwd", embed_dim, hidden);
            let bwd = if config.lstm_bidirectional {
                Some(add_lstm(&mut store, rng, "lstm.bwd", embed_dim, hidden))
            } else {
                None
            };
            let enc_dim = if config.lstm_bidirectional {
                2 * hidden
            } else {
                hidden
            };
            let ff = add_ff_stack(&mut store, rng, "lstm", enc_dim, hidden, config.ff_layers, out_dim);
            ArchParams::Lstm { fwd, bwd, ff }
        }
        Architecture::DecompAttn => {
            let null = store.add(
                "attn.null",
                Tensor::vector((0..pre_dim).map(|_| rng.gen_range(-0.1..0.1)).collect()),
                true,
            );
            let attend = add_ff_stack(&mut store, rng, "attn.f", embed_dim, hidden, 2, hidden);
            let compare = add_ff_stack(&mut store, rng, "attn.g", 2 * embed_dim, hidden, 2, hidden);
            let classify = add_ff_stack(
                &mut store,
                rng,
                "attn.h",
                2 * hidden,
                hidden,
                config.ff_layers,
                out_dim,
            );
            ArchParams::DecompAttn {
                null,
                attend,
                compare,
                classify,
            }
        }
    };

    Ok(TextModel {
        config,
        vocab,
        vectors,
        params: store,
        f_input_w,
        f_input_b,
        arch,
    })
}

/// Per-class logit interval (single entry for binary models).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Verdict and final-layer bounds for one example.
#[derive(Debug, Clone)]
pub struct CertificationResult {
    pub certified: bool,
    /// Whether the unperturbed input is classified correctly.
    pub correct: bool,
    pub predicted: usize,
    /// Probability assigned to the predicted class on the original input.
    pub confidence: f64,
    pub logit_bounds: LogitBounds,
    /// Ordinary loss at the unperturbed input.
    pub loss: f64,
    /// IBP bounds on the worst-case loss over the perturbation set.
    pub loss_bounds: (f64, f64),
}

/// A built per-example graph with handles to its interesting nodes.
pub struct LossGraph {
    pub graph: Graph,
    pub logits: NodeId,
    /// Dual loss node: value is f, bounds are [l_final, u_final].
    pub loss: NodeId,
    /// Scalar (1-kappa) f + kappa u_final when requested.
    pub objective: Option<NodeId>,
}

impl TextModel {
    pub fn transform(&self) -> InputTransform {
        InputTransform {
            weight: self.params.value(self.f_input_w).clone(),
            bias: self.params.value(self.f_input_b).clone(),
        }
    }

    /// φ node for one word: const v_pre -> f_input affine -> relu.
    fn phi_node(&self, g: &mut Graph, word: WordId) -> Result<NodeId> {
        let v = Tensor::vector(self.vectors.vector(word).to_vec());
        let c = g.constant(v);
        let aff = g.affine(&self.params, self.f_input_w, Some(self.f_input_b), c)?;
        Ok(g.monotonic(Monotonic::Relu, aff))
    }

    /// Position input: the φ box over the candidate set, shrunk by eps.
    /// Candidate lists always start with the original word.
    fn position_input(&self, g: &mut Graph, candidates: &[WordId], eps: f64) -> Result<NodeId> {
        if candidates.len() == 1 || eps == 0.0 {
            return self.phi_node(g, candidates[0]);
        }
        let phis: Vec<NodeId> = candidates
            .iter()
            .map(|&w| self.phi_node(g, w))
            .collect::<Result<_>>()?;
        let bx = g.box_over_set(&phis)?;
        g.shrink_box(eps, bx)
    }

    fn ff_head(
        &self,
        g: &mut Graph,
        ff: &[FfLayer],
        mut x: NodeId,
    ) -> Result<NodeId> {
        for (i, layer) in ff.iter().enumerate() {
            x = g.affine(&self.params, layer.w, Some(layer.b), x)?;
            if i + 1 < ff.len() {
                x = g.monotonic(Monotonic::Relu, x);
                if self.config.dropout > 0.0 {
                    x = g.dropout(self.config.dropout, x)?;
                }
            }
        }
        Ok(x)
    }

    fn lstm_encode(
        &self,
        g: &mut Graph,
        params: &LstmParams,
        inputs: &[NodeId],
        hidden: usize,
    ) -> Result<Vec<NodeId>> {
        let zeros = Tensor::zeros(&[hidden]);
        let mut h = g.constant(zeros.clone());
        let mut c = g.constant(zeros);
        let mut states = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let xh = g.concat(&[x, h])?;
            let pre = g.affine(&self.params, params.w, Some(params.b), xh)?;
            let i_gate = {
                let s = g.slice(pre, 0, hidden)?;
                g.monotonic(Monotonic::Sigmoid, s)
            };
            let f_gate = {
                let s = g.slice(pre, hidden, hidden)?;
                g.monotonic(Monotonic::Sigmoid, s)
            };
            let g_cell = {
                let s = g.slice(pre, 2 * hidden, hidden)?;
                g.monotonic(Monotonic::Tanh, s)
            };
            let o_gate = {
                let s = g.slice(pre, 3 * hidden, hidden)?;
                g.monotonic(Monotonic::Sigmoid, s)
            };
            let keep = g.mul(f_gate, c)?;
            let write = g.mul(i_gate, g_cell)?;
            c = g.add_n(&[keep, write])?;
            let ct = g.monotonic(Monotonic::Tanh, c);
            h = g.mul(o_gate, ct)?;
            states.push(h);
        }
        Ok(states)
    }

    /// Attention block: for each query position, softmax over scores
    /// against all key positions, then the probability-weighted sum of
    /// the key-side φ vectors.
    fn attend_side(
        &self,
        g: &mut Graph,
        scores: &[Vec<NodeId>],
        keys: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let mut attended = Vec::with_capacity(scores.len());
        for row in scores {
            let score_vec = g.concat(row)?;
            let probs = g.softmax(score_vec)?;
            let mut terms = Vec::with_capacity(keys.len());
            for (j, &key) in keys.iter().enumerate() {
                let p = g.slice(probs, j, 1)?;
                terms.push(g.mul(p, key)?);
            }
            attended.push(g.add_n(&terms)?);
        }
        Ok(attended)
    }

    fn logits_node(
        &self,
        g: &mut Graph,
        ex: &PreparedExample,
        spec: Option<&SubstitutionSpec>,
        eps: f64,
    ) -> Result<NodeId> {
        // Hypothesis-side (or only-sequence) inputs carry the boxes.
        let inputs: Vec<NodeId> = match spec {
            Some(spec) => spec
                .candidates
                .iter()
                .map(|cands| self.position_input(g, cands, eps))
                .collect::<Result<_>>()?,
            None => ex
                .tokens
                .iter()
                .map(|&t| self.position_input(g, &[t], eps))
                .collect::<Result<_>>()?,
        };

        match (&self.arch, &ex.premise) {
            (ArchParams::Bow { ff }, None) => {
                let pooled = g.mean_of(&inputs)?;
                self.ff_head(g, ff, pooled)
            }
            (ArchParams::Bow { ff }, Some(premise)) => {
                // Two-sequence BoW: sum each side, classify the concat.
                // The head input dimension doubles, so the first layer is
                // sized for it at construction via `two_sequence` models.
                let prem: Vec<NodeId> = premise
                    .iter()
                    .map(|&t| self.phi_node(g, t))
                    .collect::<Result<_>>()?;
                let p_sum = g.add_n(&prem)?;
                let h_sum = g.add_n(&inputs)?;
                let both = g.concat(&[p_sum, h_sum])?;
                self.ff_head(g, ff, both)
            }
            (ArchParams::Cnn { conv, ff }, _) => {
                let embed_dim = self.params.value(self.f_input_w).rows();
                let half = self.config.kernel_width / 2;
                let zero = g.constant(Tensor::zeros(&[embed_dim]));
                let mut hidden_states = Vec::with_capacity(inputs.len());
                for i in 0..inputs.len() {
                    let mut window = Vec::with_capacity(self.config.kernel_width);
                    for o in 0..self.config.kernel_width {
                        let idx = i as isize + o as isize - half as isize;
                        if idx < 0 || idx >= inputs.len() as isize {
                            window.push(zero);
                        } else {
                            window.push(inputs[idx as usize]);
                        }
                    }
                    let cat = g.concat(&window)?;
                    let pre = g.affine(&self.params, conv.w, Some(conv.b), cat)?;
                    hidden_states.push(g.monotonic(Monotonic::Relu, pre));
                }
                let pooled = g.mean_of(&hidden_states)?;
                self.ff_head(g, ff, pooled)
            }
            (ArchParams::Lstm { fwd, bwd, ff }, _) => {
                let hidden = self.config.hidden_dim;
                let fwd_states = self.lstm_encode(g, fwd, &inputs, hidden)?;
                let states: Vec<NodeId> = match bwd {
                    None => fwd_states,
                    Some(bwd_params) => {
                        let rev_inputs: Vec<NodeId> = inputs.iter().rev().copied().collect();
                        let mut bwd_states =
                            self.lstm_encode(g, bwd_params, &rev_inputs, hidden)?;
                        bwd_states.reverse();
                        fwd_states
                            .iter()
                            .zip(&bwd_states)
                            .map(|(&f, &b)| g.concat(&[f, b]))
                            .collect::<Result<_>>()?
                    }
                };
                let pooled = match self.config.lstm_pool {
                    LstmPool::Mean => g.mean_of(&states)?,
                    LstmPool::Final => *states.last().expect("nonempty sequence"),
                };
                self.ff_head(g, ff, pooled)
            }
            (
                ArchParams::DecompAttn {
                    null,
                    attend,
                    compare,
                    classify,
                },
                premise,
            ) => {
                let premise = premise.as_ref().ok_or_else(|| {
                    Error::Config("decomposable attention needs a premise sequence".into())
                })?;
                // Trainable null token, passed through f_input like any
                // word, prepended to both sides.
                let null_phi = {
                    let p = g.param(&self.params, *null);
                    let aff = g.affine(&self.params, self.f_input_w, Some(self.f_input_b), p)?;
                    g.monotonic(Monotonic::Relu, aff)
                };
                let mut prem: Vec<NodeId> = vec![null_phi];
                for &t in premise {
                    prem.push(self.phi_node(g, t)?);
                }
                let mut hyp: Vec<NodeId> = vec![null_phi];
                hyp.extend(&inputs);

                let f_prem: Vec<NodeId> = prem
                    .iter()
                    .map(|&a| self.ff_head(g, attend, a))
                    .collect::<Result<_>>()?;
                let f_hyp: Vec<NodeId> = hyp
                    .iter()
                    .map(|&b| self.ff_head(g, attend, b))
                    .collect::<Result<_>>()?;

                // scores[i][j] = F(a_i) · F(b_j)
                let mut scores = vec![Vec::with_capacity(f_hyp.len()); f_prem.len()];
                for (i, &fa) in f_prem.iter().enumerate() {
                    for &fb in &f_hyp {
                        scores[i].push(g.dot(fa, fb)?);
                    }
                }
                let scores_t: Vec<Vec<NodeId>> = (0..f_hyp.len())
                    .map(|j| (0..f_prem.len()).map(|i| scores[i][j]).collect())
                    .collect();

                let beta = self.attend_side(g, &scores, &hyp)?;
                let alpha = self.attend_side(g, &scores_t, &prem)?;

                let mut v1 = Vec::with_capacity(prem.len());
                for (i, &a) in prem.iter().enumerate() {
                    let cat = g.concat(&[a, beta[i]])?;
                    v1.push(self.ff_head(g, compare, cat)?);
                }
                let mut v2 = Vec::with_capacity(hyp.len());
                for (j, &b) in hyp.iter().enumerate() {
                    let cat = g.concat(&[b, alpha[j]])?;
                    v2.push(self.ff_head(g, compare, cat)?);
                }
                let v1_sum = g.add_n(&v1)?;
                let v2_sum = g.add_n(&v2)?;
                let both = g.concat(&[v1_sum, v2_sum])?;
                self.ff_head(g, classify, both)
            }
        }
    }

    /// Attach the cross-entropy loss to the logits. Binary models use
    /// softplus of the signed logit; multiclass models negate the true
    /// class's log-softmax score, so the loss node's upper bound is the
    /// IBP bound on worst-case loss.
    fn loss_node(&self, g: &mut Graph, logits: NodeId, label: usize) -> Result<NodeId> {
        if label >= self.config.classes {
            return Err(Error::data(
                "<example>",
                0,
                format!("label {label} out of range for {} classes", self.config.classes),
            ));
        }
        if self.config.logit_dim() == 1 {
            // loss = softplus(-s) for label 1, softplus(s) for label 0
            let signed = if label == 1 {
                g.scale(-1.0, logits)
            } else {
                logits
            };
            Ok(g.monotonic(Monotonic::Softplus, signed))
        } else {
            let ls = g.log_softmax(logits)?;
            let picked = g.slice(ls, label, 1)?;
            Ok(g.scale(-1.0, picked))
        }
    }

    /// Build the full per-example graph. `kappa` additionally attaches
    /// the training objective (1-kappa) f + kappa u_final.
    pub fn build_loss_graph(
        &self,
        ex: &PreparedExample,
        spec: Option<&SubstitutionSpec>,
        eps: f64,
        kappa: Option<f64>,
    ) -> Result<LossGraph> {
        if let Some(spec) = spec {
            if spec.tokens != ex.tokens {
                return Err(Error::Precondition(
                    "substitution spec does not match example tokens".into(),
                ));
            }
        }
        let mut g = Graph::new();
        let logits = self.logits_node(&mut g, ex, spec, eps)?;
        let loss = self.loss_node(&mut g, logits, ex.label)?;
        let objective = match kappa {
            None => None,
            Some(k) => {
                if !(0.0..=1.0).contains(&k) {
                    return Err(Error::Config(format!("kappa {k} outside [0, 1]")));
                }
                Some(if k == 0.0 {
                    g.value_of(loss)
                } else if k == 1.0 {
                    g.upper_of(loss)
                } else {
                    let f = g.value_of(loss);
                    let u = g.upper_of(loss);
                    let fs = g.scale(1.0 - k, f);
                    let us = g.scale(k, u);
                    g.add_n(&[fs, us])?
                })
            }
        };
        Ok(LossGraph {
            graph: g,
            logits,
            loss,
            objective,
        })
    }

    /// Ordinary loss plus final-layer bounds at shrink factor `eps`.
    pub fn loss_and_bound(
        &self,
        ex: &PreparedExample,
        spec: &SubstitutionSpec,
        eps: f64,
    ) -> Result<(f64, f64, f64)> {
        let mut lg = self.build_loss_graph(ex, Some(spec), eps, None)?;
        lg.graph.forward(&self.params, crate::graph::Mode::Eval)?;
        let f = lg.graph.value(lg.loss).item();
        let (lo, hi) = lg.graph.bounds(lg.loss).item();
        Ok((f, lo, hi))
    }

    /// Concrete prediction on given tokens (no perturbation).
    pub fn predict_tokens(
        &self,
        tokens: &[WordId],
        premise: Option<&[WordId]>,
    ) -> Result<Prediction> {
        let ex = PreparedExample {
            premise: premise.map(<[WordId]>::to_vec),
            tokens: tokens.to_vec(),
            label: 0,
        };
        let mut lg = self.build_loss_graph(&ex, None, 0.0, None)?;
        lg.graph.forward(&self.params, crate::graph::Mode::Eval)?;
        let logits = lg.graph.value(lg.logits).data().to_vec();
        Ok(Prediction::from_logits(logits))
    }

    pub fn predict(&self, ex: &PreparedExample) -> Result<Prediction> {
        self.predict_tokens(&ex.tokens, ex.premise.as_deref())
    }

    /// Certify one example against its substitution set: evaluates the
    /// full (eps = 1) input boxes, never the shrunk training boxes.
    pub fn certify(&self, ex: &PreparedExample, spec: &SubstitutionSpec) -> Result<CertificationResult> {
        let mut lg = self.build_loss_graph(ex, Some(spec), 1.0, None)?;
        lg.graph.forward(&self.params, crate::graph::Mode::Eval)?;
        let logits = lg.graph.value(lg.logits).data().to_vec();
        let lower = lg.graph.bounds(lg.logits).lower().data().to_vec();
        let upper = lg.graph.bounds(lg.logits).upper().data().to_vec();
        let pred = Prediction::from_logits(logits);

        let certified = if self.config.logit_dim() == 1 {
            if ex.label == 1 {
                lower[0] > 0.0
            } else {
                upper[0] < 0.0
            }
        } else {
            let y = ex.label;
            let worst_other = upper
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != y)
                .map(|(_, &u)| u)
                .fold(f64::NEG_INFINITY, f64::max);
            lower[y] > worst_other
        };

        let loss = lg.graph.value(lg.loss).item();
        let loss_bounds = lg.graph.bounds(lg.loss).item();
        Ok(CertificationResult {
            certified,
            correct: pred.class == ex.label,
            predicted: pred.class,
            confidence: pred.confidence,
            logit_bounds: LogitBounds { lower, upper },
            loss,
            loss_bounds,
        })
    }

    /// Attack fitness: the best wrong-class margin, positive iff the
    /// input is misclassified.
    pub fn attack_margin(&self, logits: &[f64], label: usize) -> f64 {
        if self.config.logit_dim() == 1 {
            if label == 1 {
                -logits[0]
            } else {
                logits[0]
            }
        } else {
            let true_logit = logits[label];
            logits
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != label)
                .map(|(_, &l)| l - true_logit)
                .fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Concrete classification outcome.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
    pub logits: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        if logits.len() == 1 {
            let p = sigmoid(logits[0]);
            let class = usize::from(logits[0] > 0.0);
            Prediction {
                class,
                confidence: p.max(1.0 - p),
                logits,
            }
        } else {
            let mut class = 0;
            for (j, &l) in logits.iter().enumerate() {
                if l > logits[class] {
                    class = j;
                }
            }
            let mx = logits[class];
            let total: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            Prediction {
                class,
                confidence: 1.0 / total,
                logits,
            }
        }
    }
}
