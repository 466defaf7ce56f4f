//! Interval tensors and elementary bound-propagation rules.
//!
//! An [`IntervalTensor`] carries a lower and an upper bound per coordinate.
//! Propagating a box through an operation produces a box guaranteed to
//! contain every output reachable from points of the input box. The rules
//! here cover the layer families the models are assembled from: affine
//! maps, monotonic elementwise functions, elementwise multiplication, dot
//! products, softmax (always routed through log space), and reductions.
//!
//! All arithmetic is plain f64 with no outward rounding; soundness is
//! validated by sampled-point and grid tests rather than formal FP
//! analysis.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Paired elementwise bounds. `lower[j] <= upper[j]` for every coordinate.
///
/// `-inf` is permitted only as a log-space sentinel for log(0); `+inf` and
/// NaN are never legal.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTensor {
    lower: Tensor,
    upper: Tensor,
}

impl IntervalTensor {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(Error::dimension(
                "IntervalTensor::new",
                format!("{:?}", lower.shape()),
                format!("{:?}", upper.shape()),
            ));
        }
        for (i, (&l, &u)) in lower.data().iter().zip(upper.data()).enumerate() {
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::INFINITY {
                return Err(Error::Precondition(format!(
                    "non-finite interval entry at coordinate {i}: [{l}, {u}]"
                )));
            }
            if l > u {
                return Err(Error::Precondition(format!(
                    "inverted interval at coordinate {i}: [{l}, {u}]"
                )));
            }
        }
        Ok(IntervalTensor { lower, upper })
    }

    /// Zero-width box at `value`.
    pub fn point(value: &Tensor) -> Self {
        IntervalTensor {
            lower: value.clone(),
            upper: value.clone(),
        }
    }

    pub fn from_bounds(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::vector(lower), Tensor::vector(upper))
    }

    pub fn lower(&self) -> &Tensor {
        &self.lower
    }

    pub fn upper(&self) -> &Tensor {
        &self.upper
    }

    pub fn shape(&self) -> &[usize] {
        self.lower.shape()
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Scalar interval accessor; panics on non-scalar tensors.
    pub fn item(&self) -> (f64, f64) {
        (self.lower.item(), self.upper.item())
    }

    pub fn width(&self) -> Vec<f64> {
        self.lower
            .data()
            .iter()
            .zip(self.upper.data())
            .map(|(l, u)| u - l)
            .collect()
    }

    /// True when `point` lies inside the box up to `tol` slack per side.
    pub fn contains(&self, point: &Tensor, tol: f64) -> bool {
        if point.shape() != self.shape() {
            return false;
        }
        self.lower
            .data()
            .iter()
            .zip(self.upper.data())
            .zip(point.data())
            .all(|((&l, &u), &v)| {
                let slack = tol * v.abs().max(1.0);
                v >= l - slack && v <= u + slack
            })
    }

    /// True when `self` is contained in `other` coordinatewise (with slack).
    pub fn subset_of(&self, other: &IntervalTensor, tol: f64) -> bool {
        self.shape() == other.shape()
            && self
                .lower
                .data()
                .iter()
                .zip(other.lower.data())
                .all(|(&a, &b)| a >= b - tol)
            && self
                .upper
                .data()
                .iter()
                .zip(other.upper.data())
                .all(|(&a, &b)| a <= b + tol)
    }
}

/// Which of the four endpoint products attained the extreme of an
/// elementwise multiplication, per output coordinate. Corner codes follow
/// the fixed order 0=ll, 1=lu, 2=ul, 3=uu; ties resolve to the lowest
/// code so gradients are deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CornerSelection {
    pub min_corner: Vec<u8>,
    pub max_corner: Vec<u8>,
}

/// Monotonic elementwise function tags accepted by [`monotonic_bounds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonic {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    /// Heaviside step, 1 for x >= 0. Used for zero-one loss bounds only;
    /// its derivative is 0 almost everywhere.
    Step,
    Softplus,
}

impl Monotonic {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Monotonic::Relu => x.max(0.0),
            Monotonic::Sigmoid => sigmoid(x),
            Monotonic::Tanh => x.tanh(),
            Monotonic::Exp => x.exp(),
            Monotonic::Step => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Monotonic::Softplus => softplus(x),
        }
    }

    /// Derivative, with subgradient 0 at the ReLU kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Monotonic::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Monotonic::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Monotonic::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Monotonic::Exp => x.exp(),
            Monotonic::Step => 0.0,
            Monotonic::Softplus => sigmoid(x),
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "relu" => Ok(Monotonic::Relu),
            "sigmoid" => Ok(Monotonic::Sigmoid),
            "tanh" => Ok(Monotonic::Tanh),
            "exp" => Ok(Monotonic::Exp),
            "step" => Ok(Monotonic::Step),
            "softplus" => Ok(Monotonic::Softplus),
            other => Err(Error::Config(format!("unknown monotonic function: {other}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Stable log Σ exp(vᵢ). `-inf` entries act as the identity element;
/// an all-`-inf` input yields `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

/// log(exp(u) − exp(l)) for l <= u, selecting between the log1p and expm1
/// forms at the u − l = ln 2 threshold. Returns `-inf` when u == l.
pub fn log_exp_diff(u: f64, l: f64) -> Result<f64> {
    if l > u {
        return Err(Error::Precondition(format!(
            "log_exp_diff requires l <= u, got l={l}, u={u}"
        )));
    }
    if l == u {
        return Ok(f64::NEG_INFINITY);
    }
    let d = l - u; // strictly negative
    if -d > std::f64::consts::LN_2 {
        Ok(u + (-d.exp()).ln_1p())
    } else {
        Ok(u + (-d.exp_m1()).ln())
    }
}

/// Affine map bounds: out = a·in + b for weight `a` of shape [m, n] and
/// bias `b` of length m. Per output row, out = [μ − r, μ + r] with
/// μ = 0.5·a(l + u) + b and r = 0.5·|a|(u − l): exactly two matrix
/// products, one with `a` and one with `|a|`.
pub fn affine_bounds(a: &Tensor, b: Option<&Tensor>, input: &IntervalTensor) -> Result<IntervalTensor> {
    if a.shape().len() != 2 || a.cols() != input.len() {
        return Err(Error::dimension(
            "affine_bounds",
            format!("[m, {}]", input.len()),
            format!("{:?}", a.shape()),
        ));
    }
    if let Some(b) = b {
        if b.len() != a.rows() {
            return Err(Error::dimension("affine_bounds", a.rows(), b.len()));
        }
    }
    let n = input.len();
    let mut mid = vec![0.0; n];
    let mut rad = vec![0.0; n];
    for j in 0..n {
        let l = input.lower().data()[j];
        let u = input.upper().data()[j];
        mid[j] = (l + u) / 2.0;
        rad[j] = (u - l) / 2.0;
    }
    let mut mu = a.matvec(&mid);
    let r = a.matvec_abs(&rad);
    if let Some(b) = b {
        for (m, &bi) in mu.iter_mut().zip(b.data()) {
            *m += bi;
        }
    }
    let lower: Vec<f64> = mu.iter().zip(&r).map(|(m, r)| m - r).collect();
    let upper: Vec<f64> = mu.iter().zip(&r).map(|(m, r)| m + r).collect();
    IntervalTensor::from_bounds(lower, upper)
}

/// Monotonic elementwise bounds: lower = σ(l), upper = σ(u).
pub fn monotonic_bounds(sigma: Monotonic, input: &IntervalTensor) -> IntervalTensor {
    IntervalTensor {
        lower: input.lower().map(|x| sigma.apply(x)),
        upper: input.upper().map(|x| sigma.apply(x)),
    }
}

/// Corner codes in the fixed tie-break order.
pub const CORNER_LL: u8 = 0;
pub const CORNER_LU: u8 = 1;
pub const CORNER_UL: u8 = 2;
pub const CORNER_UU: u8 = 3;

#[inline]
pub(crate) fn mult_corners(l1: f64, u1: f64, l2: f64, u2: f64) -> [f64; 4] {
    [l1 * l2, l1 * u2, u1 * l2, u1 * u2]
}

/// Elementwise multiplication bounds via the four-corner rule, recording
/// which corner attained each extreme.
pub fn mult_bounds(in1: &IntervalTensor, in2: &IntervalTensor) -> Result<(IntervalTensor, CornerSelection)> {
    if in1.shape() != in2.shape() {
        return Err(Error::dimension(
            "mult_bounds",
            format!("{:?}", in1.shape()),
            format!("{:?}", in2.shape()),
        ));
    }
    let n = in1.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut min_corner = vec![0u8; n];
    let mut max_corner = vec![0u8; n];
    for j in 0..n {
        let corners = mult_corners(
            in1.lower().data()[j],
            in1.upper().data()[j],
            in2.lower().data()[j],
            in2.upper().data()[j],
        );
        let (mut lo, mut lo_c) = (corners[0], 0u8);
        let (mut hi, mut hi_c) = (corners[0], 0u8);
        for (c, &v) in corners.iter().enumerate().skip(1) {
            if v < lo {
                lo = v;
                lo_c = c as u8;
            }
            if v > hi {
                hi = v;
                hi_c = c as u8;
            }
        }
        lower[j] = lo;
        upper[j] = hi;
        min_corner[j] = lo_c;
        max_corner[j] = hi_c;
    }
    Ok((
        IntervalTensor::from_bounds(lower, upper)?,
        CornerSelection {
            min_corner,
            max_corner,
        },
    ))
}

/// Dot-product bounds: the coordinatewise sum of the elementwise
/// multiplication bounds, yielding a scalar interval.
pub fn dot_bounds(in1: &IntervalTensor, in2: &IntervalTensor) -> Result<IntervalTensor> {
    let (prod, _) = mult_bounds(in1, in2)?;
    let lo: f64 = prod.lower().data().iter().sum();
    let hi: f64 = prod.upper().data().iter().sum();
    Ok(IntervalTensor::from_bounds(vec![lo], vec![hi])?)
}

/// Log-softmax bounds for class `c` of an m-vector of logit intervals.
///
/// upper = u_c − logsumexp([log(exp u_c − exp l_c), logsumexp(l)])
/// lower = l_c − logsumexp([l_c, logsumexp(u with c removed)])
///
/// Both sides are finite for finite inputs and stable for logits of any
/// magnitude.
pub fn log_softmax_bounds(input: &IntervalTensor, c: usize) -> Result<(f64, f64)> {
    let m = input.len();
    if c >= m {
        return Err(Error::Precondition(format!(
            "class index {c} out of range for {m} logits"
        )));
    }
    let l = input.lower().data();
    let u = input.upper().data();

    let diff = log_exp_diff(u[c], l[c])?;
    let upper = u[c] - logsumexp(&[diff, logsumexp(l)]);

    let mut others = Vec::with_capacity(m - 1);
    for (j, &uj) in u.iter().enumerate() {
        if j != c {
            others.push(uj);
        }
    }
    let lower = l[c] - logsumexp(&[l[c], logsumexp(&others)]);
    // The two formulas sum in different orders; on zero-width inputs they
    // can cross by an ulp. Reorder so the interval stays well-formed.
    if lower > upper {
        return Ok((upper, lower));
    }
    Ok((lower, upper))
}

/// Softmax probability bounds, computed by exponentiating the log-softmax
/// bounds (never via the naive ratio formula, which overflows).
pub fn softmax_bounds(input: &IntervalTensor) -> Result<IntervalTensor> {
    let m = input.len();
    if m == 0 {
        return Err(Error::Precondition("softmax over empty logits".into()));
    }
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    for c in 0..m {
        let (lo, hi) = log_softmax_bounds(input, c)?;
        lower[c] = lo.exp();
        upper[c] = hi.exp();
    }
    IntervalTensor::from_bounds(lower, upper)
}

/// Reduction kinds accepted by [`reduce_bounds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
    Min,
    Concat,
}

/// Reduce a list of interval tensors coordinatewise (sum, mean, max, min)
/// or concatenate them. Max/min reduce as [max of lowers, max of uppers]
/// and [min of lowers, min of uppers] respectively.
pub fn reduce_bounds(kind: Reduce, inputs: &[&IntervalTensor]) -> Result<IntervalTensor> {
    if inputs.is_empty() {
        return Err(Error::Precondition("reduce_bounds over empty list".into()));
    }
    if kind == Reduce::Concat {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for t in inputs {
            lower.extend_from_slice(t.lower().data());
            upper.extend_from_slice(t.upper().data());
        }
        return IntervalTensor::from_bounds(lower, upper);
    }
    let shape = inputs[0].shape().to_vec();
    for t in inputs {
        if t.shape() != shape.as_slice() {
            return Err(Error::dimension(
                "reduce_bounds",
                format!("{shape:?}"),
                format!("{:?}", t.shape()),
            ));
        }
    }
    let n = inputs[0].len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    match kind {
        Reduce::Sum | Reduce::Mean => {
            for t in inputs {
                for j in 0..n {
                    lower[j] += t.lower().data()[j];
                    upper[j] += t.upper().data()[j];
                }
            }
            if kind == Reduce::Mean {
                let k = inputs.len() as f64;
                lower.iter_mut().for_each(|v| *v /= k);
                upper.iter_mut().for_each(|v| *v /= k);
            }
        }
        Reduce::Max => {
            lower.copy_from_slice(inputs[0].lower().data());
            upper.copy_from_slice(inputs[0].upper().data());
            for t in &inputs[1..] {
                for j in 0..n {
                    lower[j] = lower[j].max(t.lower().data()[j]);
                    upper[j] = upper[j].max(t.upper().data()[j]);
                }
            }
        }
        Reduce::Min => {
            lower.copy_from_slice(inputs[0].lower().data());
            upper.copy_from_slice(inputs[0].upper().data());
            for t in &inputs[1..] {
                for j in 0..n {
                    lower[j] = lower[j].min(t.lower().data()[j]);
                    upper[j] = upper[j].min(t.upper().data()[j]);
                }
            }
        }
        Reduce::Concat => unreachable!(),
    }
    IntervalTensor::from_bounds(lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(l: &[f64], u: &[f64]) -> IntervalTensor {
        IntervalTensor::from_bounds(l.to_vec(), u.to_vec()).unwrap()
    }

    /// Brute-force oracle: min/max of an affine map over all 2^n corners.
    fn affine_corner_oracle(a: &Tensor, b: &[f64], input: &IntervalTensor) -> (Vec<f64>, Vec<f64>) {
        let n = input.len();
        let m = a.rows();
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for mask in 0..(1usize << n) {
            let x: Vec<f64> = (0..n)
                .map(|j| {
                    if mask >> j & 1 == 1 {
                        input.upper().data()[j]
                    } else {
                        input.lower().data()[j]
                    }
                })
                .collect();
            let y = a.matvec(&x);
            for i in 0..m {
                lo[i] = lo[i].min(y[i] + b[i]);
                hi[i] = hi[i].max(y[i] + b[i]);
            }
        }
        (lo, hi)
    }

    #[test]
    fn affine_example_matches_corner_oracle() {
        let a = Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap();
        let b = Tensor::vector(vec![0.5]);
        let input = iv(&[0.0, -1.0], &[2.0, 1.0]);
        let out = affine_bounds(&a, Some(&b), &input).unwrap();
        let (lo, hi) = affine_corner_oracle(&a, &[0.5], &input);
        assert_eq!(out.lower().data(), &[-0.5]);
        assert_eq!(out.upper().data(), &[3.5]);
        assert!((out.lower().data()[0] - lo[0]).abs() < 1e-12);
        assert!((out.upper().data()[0] - hi[0]).abs() < 1e-12);
    }

    #[test]
    fn affine_identity_and_degenerate() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let input = iv(&[-1.0, 0.5], &[2.0, 0.75]);
        let out = affine_bounds(&a, None, &input).unwrap();
        assert_eq!(out, input);

        let a = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let point = iv(&[1.0], &[1.0]);
        let out = affine_bounds(&a, None, &point).unwrap();
        assert_eq!(out.item(), (2.0, 2.0));
    }

    #[test]
    fn affine_shape_mismatch() {
        let a = Tensor::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let input = iv(&[0.0], &[1.0]);
        assert!(affine_bounds(&a, None, &input).is_err());
    }

    #[test]
    fn monotonic_examples() {
        let out = monotonic_bounds(Monotonic::Relu, &iv(&[-1.0], &[2.0]));
        assert_eq!(out.item(), (0.0, 2.0));

        let out = monotonic_bounds(Monotonic::Sigmoid, &iv(&[0.0], &[0.0]));
        assert_eq!(out.item(), (0.5, 0.5));

        // Direct evaluation; the endpoints attain the bounds.
        let out = monotonic_bounds(Monotonic::Tanh, &iv(&[-1.0], &[1.0]));
        let (lo, hi) = out.item();
        assert!((lo - (-1.0f64).tanh()).abs() < 1e-15);
        assert!((hi - 1.0f64.tanh()).abs() < 1e-15);
        assert!((lo + 0.7616).abs() < 1e-4);
        assert!((hi - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn unknown_monotonic_tag_rejected() {
        assert!(Monotonic::parse("log").is_err());
        assert_eq!(Monotonic::parse("relu").unwrap(), Monotonic::Relu);
    }

    #[test]
    fn mult_example_enumerates_corners() {
        // corners of [-1,2] x [-3,1]: {3, -1, -6, 2}
        let (out, sel) = mult_bounds(&iv(&[-1.0], &[2.0]), &iv(&[-3.0], &[1.0])).unwrap();
        assert_eq!(out.item(), (-6.0, 3.0));
        assert_eq!(sel.min_corner, vec![CORNER_UL]);
        assert_eq!(sel.max_corner, vec![CORNER_LL]);
    }

    #[test]
    fn mult_zero_annihilates_and_degenerate() {
        let (out, _) = mult_bounds(&iv(&[0.0], &[0.0]), &iv(&[-5.0], &[7.0])).unwrap();
        assert_eq!(out.item(), (0.0, 0.0));
        let (out, _) = mult_bounds(&iv(&[2.0], &[2.0]), &iv(&[3.0], &[3.0])).unwrap();
        assert_eq!(out.item(), (6.0, 6.0));
    }

    #[test]
    fn mult_tie_break_fixed_order() {
        // [0,1] x [0,0]: every corner is 0, so both extremes pick corner ll.
        let (_, sel) = mult_bounds(&iv(&[0.0], &[1.0]), &iv(&[0.0], &[0.0])).unwrap();
        assert_eq!(sel.min_corner, vec![CORNER_LL]);
        assert_eq!(sel.max_corner, vec![CORNER_LL]);
    }

    #[test]
    fn dot_examples() {
        let ones = iv(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(dot_bounds(&ones, &ones).unwrap().item(), (2.0, 2.0));

        // Two independent coordinates each [-1,2]·[-3,1]: sum of extremes.
        // 16-corner enumeration oracle confirms [-12, 6].
        let a = iv(&[-1.0, -1.0], &[2.0, 2.0]);
        let b = iv(&[-3.0, -3.0], &[1.0, 1.0]);
        let out = dot_bounds(&a, &b).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for mask in 0..16usize {
            let pick = |bit: usize, l: f64, u: f64| if mask >> bit & 1 == 1 { u } else { l };
            let x = [pick(0, -1.0, 2.0), pick(1, -1.0, 2.0)];
            let y = [pick(2, -3.0, 1.0), pick(3, -3.0, 1.0)];
            let d = x[0] * y[0] + x[1] * y[1];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        assert_eq!(out.item(), (lo, hi));
        assert_eq!(out.item(), (-12.0, 6.0));

        let zero = iv(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(dot_bounds(&a, &zero).unwrap().item(), (0.0, 0.0));
    }

    /// Grid-search oracle for softmax bounds over small boxes.
    fn softmax_grid_oracle(input: &IntervalTensor, c: usize, steps: usize) -> (f64, f64) {
        let m = input.len();
        let mut idx = vec![0usize; m];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        loop {
            let z: Vec<f64> = (0..m)
                .map(|j| {
                    let l = input.lower().data()[j];
                    let u = input.upper().data()[j];
                    if steps == 1 {
                        l
                    } else {
                        l + (u - l) * idx[j] as f64 / (steps - 1) as f64
                    }
                })
                .collect();
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|&v| (v - mx).exp()).collect();
            let total: f64 = exps.iter().sum();
            let p = exps[c] / total;
            lo = lo.min(p);
            hi = hi.max(p);
            let mut j = 0;
            loop {
                if j == m {
                    return (lo, hi);
                }
                idx[j] += 1;
                if idx[j] < steps {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    #[test]
    fn softmax_symmetric_point() {
        let out = softmax_bounds(&iv(&[0.0, 0.0], &[0.0, 0.0])).unwrap();
        assert!((out.lower().data()[0] - 0.5).abs() < 1e-15);
        assert!((out.upper().data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_two_class_example() {
        let input = iv(&[0.0, 0.0], &[1.0, 1.0]);
        let out = softmax_bounds(&input).unwrap();
        let e = std::f64::consts::E;
        let expect_lo = 1.0 / (1.0 + e);
        let expect_hi = e / (1.0 + e);
        assert!((out.lower().data()[0] - expect_lo).abs() < 1e-12);
        assert!((out.upper().data()[0] - expect_hi).abs() < 1e-12);
        assert!((expect_lo - 0.2689).abs() < 1e-4);
        assert!((expect_hi - 0.7311).abs() < 1e-4);
        let (glo, ghi) = softmax_grid_oracle(&input, 0, 80);
        assert!((out.lower().data()[0] - glo).abs() < 1e-3);
        assert!((out.upper().data()[0] - ghi).abs() < 1e-3);
    }

    #[test]
    fn softmax_large_logits_no_overflow() {
        // Shift-invariance oracle: same box shifted down by 1000.
        let big = iv(&[1000.0, 999.5, 1000.2], &[1001.0, 1000.5, 1001.2]);
        let small = iv(&[0.0, -0.5, 0.2], &[1.0, 0.5, 1.2]);
        let out_big = softmax_bounds(&big).unwrap();
        let out_small = softmax_bounds(&small).unwrap();
        for j in 0..3 {
            let (bl, bu) = (out_big.lower().data()[j], out_big.upper().data()[j]);
            assert!(bl.is_finite() && bu.is_finite());
            assert!((0.0..=1.0).contains(&bl) && (0.0..=1.0).contains(&bu));
            assert!((bl - out_small.lower().data()[j]).abs() < 1e-9);
            assert!((bu - out_small.upper().data()[j]).abs() < 1e-9);
        }
        let (glo, ghi) = softmax_grid_oracle(&small, 0, 40);
        assert!((out_big.lower().data()[0] - glo).abs() < 1e-3);
        assert!((out_big.upper().data()[0] - ghi).abs() < 1e-3);
    }

    #[test]
    fn log_softmax_examples() {
        let ln2 = std::f64::consts::LN_2;
        let (lo, hi) = log_softmax_bounds(&iv(&[0.0, 0.0], &[0.0, 0.0]), 0).unwrap();
        assert!((lo + ln2).abs() < 1e-12);
        assert!((hi + ln2).abs() < 1e-12);

        let (lo, hi) = log_softmax_bounds(&iv(&[0.0, 0.0], &[1.0, 1.0]), 0).unwrap();
        let e = std::f64::consts::E;
        assert!((lo - (1.0 / (1.0 + e)).ln()).abs() < 1e-12);
        assert!((hi - (e / (1.0 + e)).ln()).abs() < 1e-12);
        assert!((lo + 1.3133).abs() < 1e-4);
        assert!((hi + 0.3133).abs() < 1e-4);

        // Stability at magnitude 1000 (shift-invariance).
        let (lo, hi) = log_softmax_bounds(&iv(&[1000.0, 1000.0], &[1000.0, 1000.0]), 0).unwrap();
        assert!((lo + ln2).abs() < 1e-12);
        assert!((hi + ln2).abs() < 1e-12);
    }

    #[test]
    fn log_exp_diff_cases() {
        // log(e − 1)
        let v = log_exp_diff(1.0, 0.0).unwrap();
        assert!((v - (std::f64::consts::E - 1.0).ln()).abs() < 1e-14);
        assert!((v - 0.5413).abs() < 1e-4);

        assert_eq!(log_exp_diff(2.0, 2.0).unwrap(), f64::NEG_INFINITY);

        // Case-1 path: log(1 − e^{-1000}) ≈ 0.
        let v = log_exp_diff(0.0, -1000.0).unwrap();
        assert!(v.abs() < 1e-300);

        assert!(log_exp_diff(0.0, 1.0).is_err());
    }

    #[test]
    fn reduce_examples() {
        let a = iv(&[0.0, 2.0], &[1.0, 3.0]);
        let b = iv(&[2.0, 0.0], &[3.0, 1.0]);
        let mean = reduce_bounds(Reduce::Mean, &[&a, &b]).unwrap();
        assert_eq!(mean.lower().data(), &[1.0, 1.0]);
        assert_eq!(mean.upper().data(), &[2.0, 2.0]);

        let lo = iv(&[0.0], &[1.0]);
        let hi = iv(&[2.0], &[3.0]);
        let max = reduce_bounds(Reduce::Max, &[&lo, &hi]).unwrap();
        assert_eq!(max.item(), (2.0, 3.0));

        let x = iv(&[-1.0], &[2.0]);
        let sum = reduce_bounds(Reduce::Sum, &[&x, &x, &x]).unwrap();
        assert_eq!(sum.item(), (-3.0, 6.0));

        let cat = reduce_bounds(Reduce::Concat, &[&lo, &hi]).unwrap();
        assert_eq!(cat.lower().data(), &[0.0, 2.0]);
        assert_eq!(cat.upper().data(), &[1.0, 3.0]);
    }

    #[test]
    fn interval_validation() {
        assert!(IntervalTensor::from_bounds(vec![1.0], vec![0.0]).is_err());
        assert!(IntervalTensor::from_bounds(vec![f64::NAN], vec![1.0]).is_err());
        assert!(IntervalTensor::from_bounds(vec![0.0], vec![f64::INFINITY]).is_err());
        // -inf is a legal log-space sentinel.
        assert!(IntervalTensor::from_bounds(vec![f64::NEG_INFINITY], vec![0.0]).is_ok());
    }

    #[test]
    fn logsumexp_neg_inf_identity() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = logsumexp(&[f64::NEG_INFINITY, 0.0]);
        assert_eq!(v, 0.0);
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-9);
    }
}
