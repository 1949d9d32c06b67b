use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_difference, relative_error, Tape};
use crate::dynamics::MAX_SPEED;
use crate::model::tests::{examples, small_config, two_types};
use crate::model::{gmm_log_density, node_key, DecoderVars, Feedback, ModelConfig, WeightRegistry};

fn registry(cfg: ModelConfig, seed: u64) -> WeightRegistry {
    WeightRegistry::new(cfg, two_types(), seed).unwrap()
}

fn zero_params(reg: &mut WeightRegistry, key: &str) {
    for id in reg.params_under(key) {
        reg.store_mut().get_mut(id).data_mut().fill(0.0);
    }
}

#[test]
fn kl_hand_values() {
    let q = CategoricalFactors::from_probs(&[vec![0.5, 0.5]]);
    let p = CategoricalFactors::from_probs(&[vec![0.25, 0.75]]);
    let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((kl_categorical(&q, &p).unwrap() - want).abs() < 1e-15);
    assert!((want - 0.14384).abs() < 1e-5);
    assert_eq!(kl_categorical(&q, &q).unwrap(), 0.0);

    let zero_q = CategoricalFactors::from_probs(&[vec![0.0, 1.0]]);
    assert!((kl_categorical(&zero_q, &p).unwrap() - (1.0f64 / 0.75).ln()).abs() < 1e-15);
    let zero_p = CategoricalFactors::from_probs(&[vec![1.0, 0.0]]);
    assert!(matches!(
        kl_categorical(&q, &zero_p),
        Err(crate::Error::KlOverflow {
            variable: 0,
            category: 1,
            ..
        })
    ));
    let other = CategoricalFactors::from_probs(&[vec![0.2, 0.3, 0.5]]);
    assert!(kl_categorical(&q, &other).is_err());
}

proptest! {
    #[test]
    fn kl_is_nonnegative(a in prop::collection::vec(-4.0f64..4.0, 10), b in prop::collection::vec(-4.0f64..4.0, 10)) {
        let q = CategoricalFactors::from_logits(&[a[..5].to_vec(), a[5..].to_vec()]);
        let p = CategoricalFactors::from_logits(&[b[..5].to_vec(), b[5..].to_vec()]);
        let kl = kl_categorical(&q, &p).unwrap();
        prop_assert!(kl >= -1e-15);
        prop_assert!(kl_categorical(&q, &q).unwrap().abs() <= 1e-12);
        for row in q.probs() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_heads_are_uniform() {
    let mut reg = registry(small_config(), 3);
    let ex = &examples(3, 4, 5, 30.0, 2)[0];
    let id = ex.humans().next().unwrap().id;
    let t = ex.node(id).unwrap().node_type;
    zero_params(&mut reg, &node_key("Prior", t));
    zero_params(&mut reg, &node_key("Posterior", t));
    let (p, q) = latent_factors(ex, &reg, id).unwrap();
    for f in [p, q] {
        assert_eq!(f.log_probs.len(), 2);
        for row in f.probs() {
            assert_eq!(row.len(), 3);
            assert!(row.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        }
    }
}

#[test]
fn posterior_needs_node_future() {
    let reg = registry(small_config(), 3);
    let ex = &examples(3, 4, 5, 30.0, 2)[0];
    let id = ex.humans().next().unwrap().id;
    let mut tape = Tape::new();
    let b = crate::model::encode_node(
        &mut tape,
        &reg,
        ex,
        id,
        crate::model::Mode::Inference,
        &mut Default::default(),
    )
    .unwrap();
    let t = ex.node(id).unwrap().node_type;
    assert!(posterior(&mut tape, &reg, t, &b).is_err());
    assert!(prior(&mut tape, &reg, t, &b).is_ok());
}

#[test]
fn prior_and_posterior_differ_on_generic_weights() {
    let reg = registry(small_config(), 8);
    let ex = &examples(3, 4, 5, 30.0, 2)[0];
    let id = ex.humans().next().unwrap().id;
    let (p, q) = latent_factors(ex, &reg, id).unwrap();
    assert_ne!(p, q);
}

#[test]
fn elbo_reduces_to_plain_likelihood() {
    let mut reg = registry(small_config(), 5);
    let ex = &examples(2, 4, 5, 30.0, 4)[0];
    let node = ex.humans().next().unwrap();
    let t = node.node_type;
    zero_params(&mut reg, &node_key("Prior", t));
    zero_params(&mut reg, &node_key("Posterior", t));
    // Make the decoder ignore z: zero the one-hot rows of its initial projection.
    let cfg = reg.config().clone();
    let w = reg
        .store()
        .id_of(&format!("{}/init/W", node_key("Decoder", t)))
        .unwrap();
    let cols = 2 * cfg.dec_hidden;
    reg.store_mut().get_mut(w).data_mut()[cfg.context_width() * cols..].fill(0.0);

    let e = elbo(ex, &reg, 0.0).unwrap();
    let mut tape = Tape::new();
    let bundle = crate::model::encode_node(
        &mut tape,
        &reg,
        ex,
        node.id,
        crate::model::Mode::Inference,
        &mut Default::default(),
    )
    .unwrap();
    let ctx = bundle.context(&mut tape).unwrap();
    let dec = DecoderVars::bind(&mut tape, &reg, t).unwrap();
    let sel = crate::autodiff::Tensor::row(cfg.latent.one_hot(&[0, 0]).unwrap());
    let future = node.future_actions();
    let (params, _) = dec
        .rollout::<ChaCha8Rng>(
            &mut tape,
            ctx,
            &sel,
            node.current().action,
            5,
            Feedback::Teacher(&future),
        )
        .unwrap();
    let ll: f64 = params[0]
        .iter()
        .zip(&future)
        .map(|(p, u)| gmm_log_density(p, u))
        .sum();
    assert!((e - ll).abs() < 1e-10, "{e} vs {ll}");
    assert!((eval_nll(ex, &reg).unwrap() + ll).abs() < 1e-10);
}

#[test]
fn single_latent_is_plain_decoder_nll() {
    let cfg = ModelConfig {
        latent: LatentSpec::new(1, 1).unwrap(),
        n_gmm: 1,
        ..small_config()
    };
    let reg = registry(cfg, 6);
    let ex = &examples(3, 4, 5, 30.0, 5)[1];
    let nll = eval_nll(ex, &reg).unwrap();
    // One term: ELBO at any β equals −NLL since q = p = 1.
    assert!((elbo(ex, &reg, 1.0).unwrap() + nll).abs() < 1e-10);
    assert!((elbo(ex, &reg, 0.0).unwrap() + nll).abs() < 1e-10);
}

#[test]
fn jensen_bound_and_determinism() {
    for seed in 0..6 {
        let reg = registry(small_config(), seed);
        for ex in examples(3, 4, 5, 4.0, seed + 10).iter().step_by(5) {
            let nll = eval_nll(ex, &reg).unwrap();
            assert_eq!(nll.to_bits(), eval_nll(ex, &reg).unwrap().to_bits());
            let e = elbo(ex, &reg, 1.0).unwrap();
            assert!(-nll >= e - 1e-9, "-nll {} < elbo {e}", -nll);
        }
    }
}

#[test]
fn elbo_gradients_match_finite_differences() {
    let mut reg = registry(small_config(), 12);
    let ex = examples(2, 4, 5, 30.0, 7).remove(3);
    let f = |store: &crate::autodiff::ParamStore| {
        let mut r = registry(small_config(), 12);
        *r.store_mut() = store.clone();
        elbo(&ex, &r, 0.7).unwrap()
    };
    let mut tape = Tape::new();
    let e = elbo_on_tape(&mut tape, &reg, &ex, 0.7).unwrap();
    let grads = tape.backward(e).unwrap().param_grads(reg.store());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let touched: Vec<_> = reg
        .store()
        .ids()
        .filter(|&id| grads.get(id).is_some())
        .collect();
    for _ in 0..12 {
        let id = touched[rng.random_range(0..touched.len())];
        let idx = rng.random_range(0..reg.store().get(id).numel());
        let g = grads.get(id).unwrap().data()[idx];
        let fd = finite_difference(reg.store_mut(), id, idx, 1e-5, f);
        assert!(
            relative_error(g, fd) < 1e-4,
            "{}[{idx}] {g} vs {fd}",
            reg.store().name(id)
        );
    }
}

#[test]
fn kl_term_reaches_node_future_encoder() {
    let reg = registry(small_config(), 2);
    let exs = examples(3, 4, 5, 30.0, 3);
    let batch: Vec<_> = exs.iter().take(3).collect();
    let (g, _) = batch_gradient(&reg, &batch, 1.0).unwrap();
    let t = batch[0].humans().next().unwrap().node_type;
    let norm: f64 = reg
        .params_under(&node_key("NFE", t))
        .into_iter()
        .filter_map(|id| g.get(id))
        .map(|t| t.norm_sq())
        .sum();
    assert!(norm > 0.0);
}

fn quick_train(lr: f64, steps: usize) -> (WeightRegistry, WeightRegistry, TrainReport) {
    let before = registry(small_config(), 4);
    let mut reg = before.clone();
    let data = examples(3, 4, 5, 6.0, 21);
    let (train_set, val) = data.split_at(data.len() - 4);
    let cfg = TrainConfig {
        steps,
        batch_size: 3,
        learning_rate: lr,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let report = train(&mut reg, train_set, val, &cfg, |_| Ok(())).unwrap();
    (before, reg, report)
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let (before, after, _) = quick_train(0.0, 4);
    for ((_, _, a), (_, _, b)) in before.store().iter().zip(after.store().iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn training_is_deterministic_and_improves() {
    let (_, a, ra) = quick_train(1e-2, 40);
    let (_, b, rb) = quick_train(1e-2, 40);
    assert_eq!(ra.records, rb.records);
    assert_eq!(
        a.store().get(a.store().ids().next().unwrap()),
        b.store().get(b.store().ids().next().unwrap())
    );
    assert!(ra.final_val_nll.unwrap() < ra.initial_val_nll.unwrap());
    assert_eq!(ra.records.len(), 41);
    assert_eq!(ra.records[1].beta, 0.0);
    assert!(ra.records.iter().filter(|r| r.val_nll.is_some()).count() >= 9);
}

#[test]
fn sampling_contract() {
    let reg = registry(small_config(), 9);
    let ex = &examples(4, 4, 5, 6.0, 30)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_futures(ex, &reg, 0, &mut rng)
        .unwrap()
        .iter()
        .all(|n| n.samples.is_empty()));
    let out = sample_futures(ex, &reg, 25, &mut rng).unwrap();
    assert_eq!(out.len(), 3);
    for n in &out {
        assert_eq!(n.samples.len(), 25);
        for s in &n.samples {
            assert_eq!(s.actions.len(), 5);
            assert_eq!(s.states.len(), 5);
            assert_eq!(s.z.len(), 2);
            assert!(s.actions.iter().all(|u| u.speed() <= MAX_SPEED));
        }
    }
    let mut r1 = ChaCha8Rng::seed_from_u64(3);
    let mut r2 = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(
        sample_futures(ex, &reg, 5, &mut r1).unwrap(),
        sample_futures(ex, &reg, 5, &mut r2).unwrap()
    );
}

#[test]
fn sampling_never_reads_training_only_weights() {
    let reg = registry(small_config(), 9);
    let ex = &examples(4, 4, 5, 30.0, 30)[0];
    let id = ex.humans().next().unwrap().id;
    let t = ex.node(id).unwrap().node_type;
    let mut tape = Tape::new();
    let b = crate::model::encode_node(
        &mut tape,
        &reg,
        ex,
        id,
        crate::model::Mode::Inference,
        &mut Default::default(),
    )
    .unwrap();
    prior(&mut tape, &reg, t, &b).unwrap();
    let ctx = b.context(&mut tape).unwrap();
    let dec = DecoderVars::bind(&mut tape, &reg, t).unwrap();
    let sel = crate::autodiff::Tensor::row(reg.config().latent.one_hot(&[0, 1]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    dec.rollout(
        &mut tape,
        ctx,
        &sel,
        Default::default(),
        5,
        Feedback::Sample(&mut rng),
    )
    .unwrap();
    let forbidden: Vec<_> = reg
        .params_under(&node_key("NFE", t))
        .into_iter()
        .chain(reg.params_under(&node_key("Posterior", t)))
        .collect();
    let read = tape.accessed_params();
    assert!(!read.is_empty());
    assert!(forbidden.iter().all(|id| !read.contains(id)));
}
