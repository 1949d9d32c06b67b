//! Dense `f64` tensors, a dynamic reverse-mode tape and Adam.

mod checkpoint;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_FORMAT_VERSION};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{lse, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Central finite difference of a scalar function of one parameter entry.
///
/// Used by tests as an oracle independent of the tape's adjoint rules.
pub fn finite_difference(
    store: &mut ParamStore,
    id: ParamId,
    index: usize,
    step: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let orig = store.get(id).data()[index];
    store.get_mut(id).data_mut()[index] = orig + step;
    let plus = f(store);
    store.get_mut(id).data_mut()[index] = orig - step;
    let minus = f(store);
    store.get_mut(id).data_mut()[index] = orig;
    (plus - minus) / (2.0 * step)
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    /// Check every entry of every parameter against central differences.
    fn check_all(store: &mut ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Var, tol: f64) {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        let grads = tape.backward(loss).unwrap().param_grads(store);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for i in 0..store.get(id).numel() {
                let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
                let numeric = finite_difference(store, id, i, 1e-5, |s| {
                    let mut t = Tape::new();
                    let l = f(&mut t, s);
                    t.value(l).data()[0]
                });
                let err = relative_error(analytic, numeric);
                assert!(
                    err < tol,
                    "param {} [{i}]: analytic {analytic} numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let col = tape.constant(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let r = tape.matmul(eye, col).unwrap();
        assert_eq!(tape.value(r).data(), &[3.0, 4.0]);

        let a = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let r = tape.matmul(a, col).unwrap();
        assert_eq!(tape.value(r).shape(), &[1, 1]);
        assert_eq!(tape.value(r).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let a = store.insert("a", random_tensor(&mut rng, &[3, 3])).unwrap();
        let b = store.insert("b", random_tensor(&mut rng, &[3, 3])).unwrap();
        check_all(
            &mut store,
            |t, s| {
                let (va, vb) = (t.param(s, a), t.param(s, b));
                let c = t.matmul(va, vb).unwrap();
                t.sum(c)
            },
            1e-6,
        );
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        let th = tape.tanh(z);
        assert_eq!(tape.value(s).data()[0], 0.5);
        assert_eq!(tape.value(th).data()[0], 0.0);
        let neg = tape.constant(Tensor::row(vec![1.0, -1.0]));
        assert!(matches!(tape.log(neg), Err(Error::Domain { .. })));
        let other = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(neg, other), Err(Error::Shape { .. })));
    }

    #[test]
    fn sigmoid_derivative_at_1_3() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(1.3)).unwrap();
        check_all(
            &mut store,
            |t, s| {
                let v = t.param(s, x);
                let y = t.sigmoid(v);
                t.sum(y)
            },
            1e-6,
        );
    }

    #[test]
    fn reductions_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::row(vec![0.0, 0.0]));
        let l = tape.logsumexp(z, 1).unwrap();
        assert!((tape.value(l).data()[0] - 2f64.ln()).abs() < 1e-15);

        let big = tape.constant(Tensor::row(vec![1000.0, 1000.0]));
        let l = tape.logsumexp(big, 1).unwrap();
        let v = tape.value(l).data()[0];
        assert!(v.is_finite());
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);

        let five = tape.constant(Tensor::row(vec![5.0, 5.0, 5.0]));
        let sm = tape.softmax(five, 1).unwrap();
        for p in tape.value(sm).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(tape.sum_axis(five, 2).is_err());
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![1], vec![3.0]).unwrap());
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let single = tape.concat(&[a], 0).unwrap();
        assert_eq!(tape.value(single).data(), tape.value(a).data());

        let m = tape.constant(Tensor::zeros(&[2, 3]));
        let n = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(tape.concat(&[m, n], 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn concat_backward_is_all_ones() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::zeros(&[2, 3])).unwrap();
        let b = store.insert("b", Tensor::zeros(&[2, 5])).unwrap();
        let mut tape = Tape::new();
        let (va, vb) = (tape.param(&store, a), tape.param(&store, b));
        let c = tape.concat(&[va, vb], 1).unwrap();
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap().param_grads(&store);
        assert_eq!(g.get(a).unwrap(), &Tensor::filled(&[2, 3], 1.0));
        assert_eq!(g.get(b).unwrap(), &Tensor::filled(&[2, 5], 1.0));
    }

    #[test]
    fn backward_examples() {
        let mut store = ParamStore::new();
        let p = store
            .insert("p", Tensor::new(vec![2, 2, 3], vec![0.5; 12]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let loss = tape.sum(v);
        let g = tape.backward(loss).unwrap().param_grads(&store);
        assert_eq!(g.get(p).unwrap(), &Tensor::filled(&[2, 2, 3], 1.0));

        let q = store.insert("q", Tensor::row(vec![1.0, -2.0])).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, q);
        let sq = tape.mul(v, v).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap().param_grads(&store);
        assert_eq!(g.get(q).unwrap().data(), &[2.0, -4.0]);

        let mut tape = Tape::new();
        let v = tape.param(&store, q);
        assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn weight_reuse_accumulates() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(2.0)).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, w);
        let b = tape.param(&store, w);
        assert_eq!(a, b);
        let p = tape.mul(a, b).unwrap();
        let s = tape.add(p, a).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap().param_grads(&store);
        assert_eq!(g.get(w).unwrap().data(), &[5.0]);
    }

    #[test]
    fn every_op_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let a = store.insert("a", random_tensor(&mut rng, &[3, 4])).unwrap();
        let b = store.insert("b", random_tensor(&mut rng, &[3, 4])).unwrap();
        let bias = store
            .insert("bias", random_tensor(&mut rng, &[1, 4]))
            .unwrap();
        let w = store.insert("w", random_tensor(&mut rng, &[4, 2])).unwrap();
        let weights = random_tensor(&mut rng, &[3, 2]);
        check_all(
            &mut store,
            |t, s| {
                let (va, vb, vbias, vw) = (
                    t.param(s, a),
                    t.param(s, b),
                    t.param(s, bias),
                    t.param(s, w),
                );
                let x = t.add_bias(va, vbias).unwrap();
                let y = t.mul(x, vb).unwrap();
                let y = t.sub(y, va).unwrap();
                let s1 = t.sigmoid(y);
                let t1 = t.tanh(vb);
                let m = t.maximum(s1, t1).unwrap();
                let e = t.exp(m);
                let sq = t.square(e);
                let sq = t.shift(sq, 0.5);
                let lg = t.log(sq).unwrap();
                let lg = t.scale(lg, 0.7);
                let mm = t.matmul(lg, vw).unwrap();
                let row0 = t.slice(mm, 0, 1, 1).unwrap();
                let tiled = t.tile_rows(row0, 3).unwrap();
                let cat = t.concat(&[mm, tiled], 1).unwrap();
                let ls = t.log_softmax(cat, 1).unwrap();
                let sm = t.softmax(cat, 0).unwrap();
                let lse = t.logsumexp(cat, 0).unwrap();
                let r = t.reshape(lse, vec![4, 1]).unwrap();
                let sa = t.sum_axis(ls, 1).unwrap();
                let c = t.constant(weights.clone());
                let slice_sm = t.slice(sm, 1, 0, 2).unwrap();
                let wsum = t.mul(slice_sm, c).unwrap();
                let cl = t.clamp(sa, -100.0, -3.0);
                let parts = [t.sum(wsum), t.sum(r), t.sum(cl)];
                let all = t.concat(&parts, 0).unwrap();
                t.sum(all)
            },
            1e-4,
        );
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let a = store.insert("a", random_tensor(&mut rng, &[4, 4])).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, a);
        let m = tape.matmul(v, v).unwrap();
        let s = tape.tanh(m);
        let loss = tape.sum(s);
        let g1 = tape.backward(loss).unwrap().param_grads(&store);
        let g2 = tape.backward(loss).unwrap().param_grads(&store);
        let bits = |g: &ParamGrads| {
            g.get(a)
                .unwrap()
                .data()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&g1), bits(&g2));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(values in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::row(values));
            let s = tape.softmax(x, 1).unwrap();
            let row = tape.value(s).data();
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }

        #[test]
        fn logsumexp_bounds(values in prop::collection::vec(-500.0f64..500.0, 1..12)) {
            let n = values.len() as f64;
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::row(values));
            let l = tape.logsumexp(x, 1).unwrap();
            let v = tape.value(l).data()[0];
            prop_assert!(v >= max);
            prop_assert!(v <= max + n.ln() + 1e-12);
        }

        #[test]
        fn unary_gradients_match(x in -2.0f64..2.0) {
            let mut store = ParamStore::new();
            let p = store.insert("x", Tensor::scalar(x)).unwrap();
            let ops: [fn(&mut Tape, Var) -> Var; 4] = [
                |t, v| t.sigmoid(v),
                |t, v| t.tanh(v),
                |t, v| t.exp(v),
                |t, v| t.square(v),
            ];
            for op in ops {
                let mut tape = Tape::new();
                let v = tape.param(&store, p);
                let y = op(&mut tape, v);
                let loss = tape.sum(y);
                let analytic = tape.backward(loss).unwrap().param_grads(&store).get(p).unwrap().data()[0];
                let numeric = finite_difference(&mut store, p, 0, 1e-5, |s| {
                    let mut t = Tape::new();
                    let v = t.param(s, p);
                    let y = op(&mut t, v);
                    t.value(y).data()[0]
                });
                prop_assert!(relative_error(analytic, numeric) < 1e-4);
            }
        }
    }
}
