//! Property suite for the interval rules and the dual-track graph:
//! sampled-point soundness, corner exactness, monotone nesting,
//! degenerate collapse, and gradient agreement with finite differences.

mod common;

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wordcert_core::graph::{Graph, Mode, NodeId, ParamStore};
use wordcert_core::interval::{
    affine_bounds, dot_bounds, log_softmax_bounds, monotonic_bounds, mult_bounds,
    softmax_bounds, IntervalTensor, Monotonic,
};
use wordcert_core::tensor::Tensor;

fn box_strategy(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    proptest::collection::vec((lo..hi, 0.0..(hi - lo) / 2.0), n).prop_map(|pairs| {
        let lower: Vec<f64> = pairs.iter().map(|(a, _)| *a).collect();
        let upper: Vec<f64> = pairs.iter().map(|(a, w)| a + w).collect();
        (lower, upper)
    })
}

fn sample_in(lower: &[f64], upper: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    lower
        .iter()
        .zip(upper)
        .map(|(&l, &u)| if l == u { l } else { rng.gen_range(l..=u) })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Sampled points inside the box land inside every op's output
    /// interval; corners attain the affine and mult extremes.
    #[test]
    fn affine_sound_and_exact(
        (lower, upper) in box_strategy(3, -2.0, 2.0),
        weights in proptest::collection::vec(-2.0..2.0f64, 6),
        bias in proptest::collection::vec(-1.0..1.0f64, 2),
        seed in 0u64..1000,
    ) {
        let a = Tensor::matrix(2, 3, weights).unwrap();
        let b = Tensor::vector(bias);
        let input = IntervalTensor::from_bounds(lower.clone(), upper.clone()).unwrap();
        let out = affine_bounds(&a, Some(&b), &input).unwrap();

        // corner oracle: the extremes over all 8 corners match exactly
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for mask in 0..8usize {
            let x: Vec<f64> = (0..3)
                .map(|j| if mask >> j & 1 == 1 { upper[j] } else { lower[j] })
                .collect();
            let y = a.matvec(&x);
            for i in 0..2 {
                lo[i] = lo[i].min(y[i] + b.data()[i]);
                hi[i] = hi[i].max(y[i] + b.data()[i]);
            }
        }
        for i in 0..2 {
            prop_assert!((out.lower().data()[i] - lo[i]).abs() < 1e-12);
            prop_assert!((out.upper().data()[i] - hi[i]).abs() < 1e-12);
        }

        // sampled soundness
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x = sample_in(&lower, &upper, &mut rng);
            let y = a.matvec(&x);
            for i in 0..2 {
                let v = y[i] + b.data()[i];
                prop_assert!(v >= out.lower().data()[i] - 1e-9);
                prop_assert!(v <= out.upper().data()[i] + 1e-9);
            }
        }
    }

    #[test]
    fn monotonic_sound_exact_and_nested(
        (lower, upper) in box_strategy(4, -3.0, 3.0),
        which in 0usize..4,
        seed in 0u64..1000,
    ) {
        let sigma = [Monotonic::Relu, Monotonic::Sigmoid, Monotonic::Tanh, Monotonic::Exp][which];
        let input = IntervalTensor::from_bounds(lower.clone(), upper.clone()).unwrap();
        let out = monotonic_bounds(sigma, &input);
        // endpoints attain the bounds exactly
        for j in 0..4 {
            prop_assert_eq!(out.lower().data()[j], sigma.apply(lower[j]));
            prop_assert_eq!(out.upper().data()[j], sigma.apply(upper[j]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x = sample_in(&lower, &upper, &mut rng);
            for j in 0..4 {
                let v = sigma.apply(x[j]);
                prop_assert!(v >= out.lower().data()[j] - 1e-12);
                prop_assert!(v <= out.upper().data()[j] + 1e-12);
            }
        }

        // monotone nesting: shrink the box, output shrinks
        let mid: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| (l + u) / 2.0).collect();
        let inner_lo: Vec<f64> = lower.iter().zip(&mid).map(|(l, m)| (l + m) / 2.0).collect();
        let inner_hi: Vec<f64> = upper.iter().zip(&mid).map(|(u, m)| (u + m) / 2.0).collect();
        let inner = IntervalTensor::from_bounds(inner_lo, inner_hi).unwrap();
        let out_inner = monotonic_bounds(sigma, &inner);
        prop_assert!(out_inner.subset_of(&out, 1e-12));
    }

    #[test]
    fn mult_sound_exact_and_nested(
        (l1, u1) in box_strategy(3, -2.0, 2.0),
        (l2, u2) in box_strategy(3, -2.0, 2.0),
        seed in 0u64..1000,
    ) {
        let a = IntervalTensor::from_bounds(l1.clone(), u1.clone()).unwrap();
        let b = IntervalTensor::from_bounds(l2.clone(), u2.clone()).unwrap();
        let (out, sel) = mult_bounds(&a, &b).unwrap();

        for j in 0..3 {
            // the recorded corner attains the bound exactly
            let corner_val = |code: u8| {
                let x = if code >= 2 { u1[j] } else { l1[j] };
                let y = if code % 2 == 1 { u2[j] } else { l2[j] };
                x * y
            };
            prop_assert_eq!(out.lower().data()[j], corner_val(sel.min_corner[j]));
            prop_assert_eq!(out.upper().data()[j], corner_val(sel.max_corner[j]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x = sample_in(&l1, &u1, &mut rng);
            let y = sample_in(&l2, &u2, &mut rng);
            for j in 0..3 {
                let v = x[j] * y[j];
                prop_assert!(v >= out.lower().data()[j] - 1e-9);
                prop_assert!(v <= out.upper().data()[j] + 1e-9);
            }
        }

        // dot product: sum of per-coordinate products stays inside
        let dot = dot_bounds(&a, &b).unwrap();
        for _ in 0..100 {
            let x = sample_in(&l1, &u1, &mut rng);
            let y = sample_in(&l2, &u2, &mut rng);
            let v: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
            let (lo, hi) = dot.item();
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn softmax_sound_and_attained(
        (lower, upper) in box_strategy(3, -4.0, 4.0),
        seed in 0u64..1000,
    ) {
        let input = IntervalTensor::from_bounds(lower.clone(), upper.clone()).unwrap();
        let out = softmax_bounds(&input).unwrap();
        let stable_softmax = |z: &[f64], c: usize| {
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
            exps[c] / exps.iter().sum::<f64>()
        };

        // per-coordinate attainability at the adversarial corner
        for c in 0..3 {
            let mut at_upper: Vec<f64> = lower.clone();
            at_upper[c] = upper[c];
            prop_assert!((out.upper().data()[c] - stable_softmax(&at_upper, c)).abs() < 1e-12);
            let mut at_lower: Vec<f64> = upper.clone();
            at_lower[c] = lower[c];
            prop_assert!((out.lower().data()[c] - stable_softmax(&at_lower, c)).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let z = sample_in(&lower, &upper, &mut rng);
            for c in 0..3 {
                let p = stable_softmax(&z, c);
                prop_assert!(p >= out.lower().data()[c] - 1e-9);
                prop_assert!(p <= out.upper().data()[c] + 1e-9);
            }
        }
    }

    /// Stable log-softmax bounds equal a naive two-pass computation on
    /// moderate logits.
    #[test]
    fn log_softmax_matches_naive_two_pass(
        (lower, upper) in box_strategy(4, -10.0, 10.0),
        c in 0usize..4,
    ) {
        let input = IntervalTensor::from_bounds(lower.clone(), upper.clone()).unwrap();
        let (lo, hi) = log_softmax_bounds(&input, c).unwrap();
        // naive: softmax at the adversarial corners, then log
        let naive = |z: &[f64], c: usize| {
            let total: f64 = z.iter().map(|v| v.exp()).sum();
            (z[c].exp() / total).ln()
        };
        let mut at_upper = lower.clone();
        at_upper[c] = upper[c];
        let mut at_lower = upper.clone();
        at_lower[c] = lower[c];
        // The naive oracle cancels catastrophically when the log-softmax
        // is near zero, so the 1e-9 relative tolerance gets a unit floor.
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        prop_assert!(close(hi, naive(&at_upper, c)));
        prop_assert!(close(lo, naive(&at_lower, c)));
    }

    /// Degenerate collapse: zero-width boxes through every op reproduce
    /// the forward value (bitwise for affine, monotonic, mult).
    #[test]
    fn degenerate_collapse(
        point in proptest::collection::vec(-2.0..2.0f64, 3),
        weights in proptest::collection::vec(-2.0..2.0f64, 6),
    ) {
        let input = IntervalTensor::point(&Tensor::vector(point.clone()));
        let a = Tensor::matrix(2, 3, weights).unwrap();
        let aff = affine_bounds(&a, None, &input).unwrap();
        let direct = a.matvec(&point);
        for i in 0..2 {
            prop_assert_eq!(aff.lower().data()[i].to_bits(), direct[i].to_bits());
            prop_assert_eq!(aff.upper().data()[i].to_bits(), direct[i].to_bits());
        }

        let mon = monotonic_bounds(Monotonic::Tanh, &input);
        for j in 0..3 {
            prop_assert_eq!(mon.lower().data()[j].to_bits(), point[j].tanh().to_bits());
        }

        let (prod, _) = mult_bounds(&input, &input).unwrap();
        for j in 0..3 {
            prop_assert_eq!(prod.lower().data()[j].to_bits(), (point[j] * point[j]).to_bits());
            prop_assert_eq!(prod.upper().data()[j].to_bits(), (point[j] * point[j]).to_bits());
        }

        // softmax collapses within 1e-12
        let sm = softmax_bounds(&input).unwrap();
        let mx = point.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = point.iter().map(|v| (v - mx).exp()).collect();
        let total: f64 = exps.iter().sum();
        for j in 0..3 {
            let p = exps[j] / total;
            prop_assert!((sm.lower().data()[j] - p).abs() < 1e-12);
            prop_assert!((sm.upper().data()[j] - p).abs() < 1e-12);
        }
    }

    /// Monotone nesting for affine, mult, and softmax.
    #[test]
    fn nesting_for_remaining_ops(
        (lower, upper) in box_strategy(3, -2.0, 2.0),
        weights in proptest::collection::vec(-2.0..2.0f64, 6),
        shrink in 0.1..0.9f64,
    ) {
        let outer = IntervalTensor::from_bounds(lower.clone(), upper.clone()).unwrap();
        let inner_lo: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| l + shrink * (u - l) / 2.0).collect();
        let inner_hi: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| u - shrink * (u - l) / 2.0).collect();
        let inner = IntervalTensor::from_bounds(inner_lo, inner_hi).unwrap();

        let a = Tensor::matrix(2, 3, weights).unwrap();
        prop_assert!(affine_bounds(&a, None, &inner).unwrap()
            .subset_of(&affine_bounds(&a, None, &outer).unwrap(), 1e-12));

        let (in_prod, _) = mult_bounds(&inner, &inner).unwrap();
        let (out_prod, _) = mult_bounds(&outer, &outer).unwrap();
        prop_assert!(in_prod.subset_of(&out_prod, 1e-12));

        prop_assert!(softmax_bounds(&inner).unwrap()
            .subset_of(&softmax_bounds(&outer).unwrap(), 1e-12));
    }
}

/// A random layered dual-track graph; returns the output node.
fn random_layered_graph(
    g: &mut Graph,
    store: &ParamStore,
    input: NodeId,
    rng: &mut ChaCha8Rng,
    affine_params: &[(wordcert_core::graph::ParamId, wordcert_core::graph::ParamId)],
) -> NodeId {
    let mut x = input;
    for (w, b) in affine_params {
        x = g.affine(store, *w, Some(*b), x).unwrap();
        match rng.gen_range(0..4) {
            0 => x = g.monotonic(Monotonic::Relu, x),
            1 => x = g.monotonic(Monotonic::Tanh, x),
            2 => {
                let y = g.monotonic(Monotonic::Sigmoid, x);
                x = g.mul(x, y).unwrap();
            }
            _ => {
                let ls = g.log_softmax(x).unwrap();
                x = g.monotonic(Monotonic::Exp, ls);
            }
        }
    }
    g.sum_elems(x)
}

/// Dual-track containment on random graphs: concrete runs from sampled
/// points inside the input box stay inside the box-run's bounds at the
/// output.
#[test]
fn graph_containment_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..40 {
        let n = rng.gen_range(2..=4);
        let mut store = ParamStore::new();
        let mut params = Vec::new();
        let mut dim = n;
        for layer in 0..rng.gen_range(1..=3usize) {
            let out = rng.gen_range(2..=4);
            let data: Vec<f64> = (0..out * dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let w = store.add(
                format!("w{layer}"),
                Tensor::matrix(out, dim, data).unwrap(),
                true,
            );
            let b = store.add(format!("b{layer}"), Tensor::zeros(&[out]), true);
            params.push((w, b));
            dim = out;
        }
        let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.0..1.0)).collect();
        let center: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| (l + u) / 2.0)
            .collect();

        // The op pattern must match between the box run and point runs.
        let pattern_seed = rng.gen::<u64>();
        let build = |value: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>| {
            let mut g = Graph::new();
            let input = g
                .input(
                    Tensor::vector(value),
                    IntervalTensor::from_bounds(lo, hi).unwrap(),
                )
                .unwrap();
            let mut pattern_rng = ChaCha8Rng::seed_from_u64(pattern_seed);
            let out = random_layered_graph(&mut g, &store, input, &mut pattern_rng, &params);
            g.forward(&store, Mode::Eval).unwrap();
            (g, out)
        };

        let (box_graph, box_out) = build(center.clone(), lower.clone(), upper.clone());
        let (blo, bhi) = box_graph.bounds(box_out).item();

        for _ in 0..60 {
            let x = sample_in(&lower, &upper, &mut rng);
            let (pg, pout) = build(x.clone(), x.clone(), x);
            let v = pg.value(pout).item();
            assert!(
                v >= blo - 1e-9 && v <= bhi + 1e-9,
                "trial {trial}: concrete output {v} escaped [{blo}, {bhi}]"
            );
        }
    }
}

/// Gradients of both the concrete loss and its upper bound agree with
/// central finite differences on random layered graphs.
#[test]
fn graph_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tested = 0;
    'outer: while tested < 25 {
        let n = 3;
        let mut store = ParamStore::new();
        let data: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let w = store.add("w", Tensor::matrix(2, n, data).unwrap(), true);
        let b = store.add("b", Tensor::zeros(&[2]), true);
        let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.1..1.0)).collect();
        let center: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| (l + u) / 2.0)
            .collect();
        let track_upper = rng.gen_bool(0.5);

        let build = |store: &ParamStore| {
            let mut g = Graph::new();
            let input = g
                .input(
                    Tensor::vector(center.clone()),
                    IntervalTensor::from_bounds(lower.clone(), upper.clone()).unwrap(),
                )
                .unwrap();
            let aff = g.affine(store, w, Some(b), input).unwrap();
            let act = g.monotonic(Monotonic::Tanh, aff);
            let prod = g.mul(aff, act).unwrap();
            let ls = g.log_softmax(prod).unwrap();
            let pick = g.slice(ls, 0, 1).unwrap();
            let loss = g.scale(-1.0, pick);
            let out = if track_upper {
                g.upper_of(loss)
            } else {
                g.value_of(loss)
            };
            g.forward(store, Mode::Eval).unwrap();
            (g, out)
        };

        let (mut g, out) = build(&store);
        if g.kink_margin(&store) < 1e-5 {
            continue 'outer;
        }
        store.zero_grad();
        g.backward(out, 1.0, &mut store).unwrap();
        let analytic: Vec<f64> = store.get(w).grad.data().to_vec();

        for coord in 0..analytic.len() {
            let orig = store.get(w).value.data()[coord];
            let h = 1e-6 * orig.abs().max(1.0);
            store.get_mut(w).value.data_mut()[coord] = orig + h;
            let fp = {
                let (g, out) = build(&store);
                g.value(out).item()
            };
            store.get_mut(w).value.data_mut()[coord] = orig - h;
            let fm = {
                let (g, out) = build(&store);
                g.value(out).item()
            };
            store.get_mut(w).value.data_mut()[coord] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                common::rel_err(analytic[coord], fd) < 1e-4,
                "coord {coord} (upper={track_upper}): analytic {} vs fd {fd}",
                analytic[coord],
            );
        }
        tested += 1;
    }
}
