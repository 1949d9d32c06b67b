//! LSTM cells on the tape.
//!
//! Row-vector convention: for a batch `x` of shape `B × in`,
//! `pre = x·W + h·U + b` with the four gates packed along columns.

use super::registry::{BiLstmParams, Dense, LstmParams};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Packed gate weights of one cell, bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input: usize,
    pub hidden: usize,
    /// `in × 4H`
    pub w: Var,
    /// `H × 4H`
    pub u: Var,
    /// `1 × 4H`
    pub b: Var,
}

impl LstmVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, p: &LstmParams) -> Result<Self> {
        let w: Vec<Var> = p.w.iter().map(|&id| tape.param(store, id)).collect();
        let u: Vec<Var> = p.u.iter().map(|&id| tape.param(store, id)).collect();
        let b: Vec<Var> = p.b.iter().map(|&id| tape.param(store, id)).collect();
        Ok(Self {
            input: p.input,
            hidden: p.hidden,
            w: tape.concat(&w, 1)?,
            u: tape.concat(&u, 1)?,
            b: tape.concat(&b, 1)?,
        })
    }

    /// `xs·W + b` for a whole input sequence, one row per step.
    pub fn project_inputs(&self, tape: &mut Tape, xs: Var) -> Result<Var> {
        let xw = tape.matmul(xs, self.w)?;
        tape.add_bias(xw, self.b)
    }

    /// Zero state for a batch of `rows`.
    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(&[rows, self.hidden]));
        let c = tape.constant(Tensor::zeros(&[rows, self.hidden]));
        (h, c)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmVars {
    pub fwd: LstmVars,
    pub bwd: LstmVars,
}

impl BiLstmVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, p: &BiLstmParams) -> Result<Self> {
        Ok(Self {
            fwd: LstmVars::bind(tape, store, &p.fwd)?,
            bwd: LstmVars::bind(tape, store, &p.bwd)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

impl DenseVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, p: &Dense) -> Self {
        Self {
            w: tape.param(store, p.w),
            b: tape.param(store, p.b),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w)?;
        tape.add_bias(xw, self.b)
    }
}

/// Gate nonlinearities and state update from pre-activations `B × 4H`.
fn cell_update(tape: &mut Tape, hidden: usize, pre: Var, c_prev: Var) -> Result<(Var, Var)> {
    let sig_in = tape.slice(pre, 1, 0, 3 * hidden)?;
    let sig = tape.sigmoid(sig_in);
    let i = tape.slice(sig, 1, 0, hidden)?;
    let f = tape.slice(sig, 1, hidden, hidden)?;
    let o = tape.slice(sig, 1, 2 * hidden, hidden)?;
    let g_in = tape.slice(pre, 1, 3 * hidden, hidden)?;
    let g = tape.tanh(g_in);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One step with a raw input batch `x` (`B × in`).
pub fn lstm_step(
    tape: &mut Tape,
    cell: &LstmVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let (rows, width) = tape.value(x).dims2()?;
    if width != cell.input {
        return Err(Error::shape(
            "lstm_step input",
            &[rows, width],
            &[rows, cell.input],
        ));
    }
    let hp = tape.value(h_prev).dims2()?;
    if hp != (rows, cell.hidden) || tape.value(c_prev).dims2()? != hp {
        return Err(Error::shape(
            "lstm_step state",
            tape.shape(h_prev),
            &[rows, cell.hidden],
        ));
    }
    let xw = tape.matmul(x, cell.w)?;
    let hu = tape.matmul(h_prev, cell.u)?;
    let s = tape.add(xw, hu)?;
    let pre = tape.add_bias(s, cell.b)?;
    cell_update(tape, cell.hidden, pre, c_prev)
}

/// One step from an already projected input `x·W + b`, either one row per
/// batch entry or a single row shared by the whole batch.
pub fn lstm_step_projected(
    tape: &mut Tape,
    cell: &LstmVars,
    projected: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hu = tape.matmul(h_prev, cell.u)?;
    let pre = if tape.value(projected).dims2()?.0 == 1 {
        tape.add_bias(hu, projected)?
    } else {
        tape.add(hu, projected)?
    };
    cell_update(tape, cell.hidden, pre, c_prev)
}

/// Run over `xs` (`T × in`, one row per step) from the zero state, in
/// reverse when `reverse`. Returns the final `(h, c)`, each `1 × H`.
pub fn run_lstm(tape: &mut Tape, cell: &LstmVars, xs: Var, reverse: bool) -> Result<(Var, Var)> {
    let (steps, _) = tape.value(xs).dims2()?;
    if steps == 0 {
        return Err(Error::Contract("LSTM over an empty sequence".into()));
    }
    let proj = cell.project_inputs(tape, xs)?;
    let (mut h, mut c) = cell.zero_state(tape, 1);
    for k in 0..steps {
        let t = if reverse { steps - 1 - k } else { k };
        let row = tape.slice(proj, 0, t, 1)?;
        (h, c) = lstm_step_projected(tape, cell, row, h, c)?;
    }
    Ok((h, c))
}

/// Bi-directional summary `[h_fwd ‖ c_fwd ‖ h_bwd ‖ c_bwd]` (`1 × 4H`).
pub fn run_bilstm(tape: &mut Tape, cell: &BiLstmVars, xs: Var) -> Result<Var> {
    let (hf, cf) = run_lstm(tape, &cell.fwd, xs, false)?;
    let (hb, cb) = run_lstm(tape, &cell.bwd, xs, true)?;
    tape.concat(&[hf, cf, hb, cb], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, relative_error, ParamId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell(
        store: &mut ParamStore,
        input: usize,
        hidden: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> LstmParams {
        let mut ids = Vec::new();
        let mut rng = rng;
        for (k, (r, c)) in [(input, hidden), (hidden, hidden), (1, hidden)]
            .into_iter()
            .enumerate()
        {
            for g in 0..4 {
                let data = (0..r * c)
                    .map(|_| rng.as_mut().map_or(0.0, |rng| rng.random_range(-0.6..0.6)))
                    .collect();
                ids.push(
                    store
                        .insert(format!("p{k}{g}"), Tensor::new(vec![r, c], data).unwrap())
                        .unwrap(),
                );
            }
        }
        let arr = |s: &[ParamId]| -> [ParamId; 4] { s.try_into().unwrap() };
        LstmParams {
            input,
            hidden,
            w: arr(&ids[0..4]),
            u: arr(&ids[4..8]),
            b: arr(&ids[8..12]),
        }
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let mut store = ParamStore::new();
        let p = cell(&mut store, 3, 2, None);
        let mut tape = Tape::new();
        let lv = LstmVars::bind(&mut tape, &store, &p).unwrap();
        let x = tape.constant(Tensor::row(vec![0.3, -1.0, 2.0]));
        let h0 = tape.constant(Tensor::row(vec![0.7, -0.2]));
        let c0 = tape.constant(Tensor::row(vec![1.5, -0.8]));
        let (h, c) = lstm_step(&mut tape, &lv, x, h0, c0).unwrap();
        for (k, &c0v) in [1.5, -0.8].iter().enumerate() {
            assert!((tape.value(c).data()[k] - 0.5 * c0v).abs() < 1e-15);
            assert!((tape.value(h).data()[k] - 0.5 * (0.5 * c0v as f64).tanh()).abs() < 1e-15);
        }

        let z = tape.constant(Tensor::zeros(&[1, 3]));
        let (hz, cz) = lv.zero_state(&mut tape, 1);
        let (h, c) = lstm_step(&mut tape, &lv, z, hz, cz).unwrap();
        assert!(tape
            .value(h)
            .data()
            .iter()
            .chain(tape.value(c).data())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn step_matches_hand_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let p = cell(&mut store, 2, 3, Some(&mut rng));
        let x = [0.4, -0.9];
        let h0 = [0.1, 0.2, -0.3];
        let c0 = [0.5, -0.5, 0.25];
        let mut tape = Tape::new();
        let lv = LstmVars::bind(&mut tape, &store, &p).unwrap();
        let xv = tape.constant(Tensor::row(x.to_vec()));
        let hv = tape.constant(Tensor::row(h0.to_vec()));
        let cv = tape.constant(Tensor::row(c0.to_vec()));
        let (h, c) = lstm_step(&mut tape, &lv, xv, hv, cv).unwrap();

        let gate = |g: usize, j: usize| {
            let w = store.get(p.w[g]);
            let u = store.get(p.u[g]);
            let b = store.get(p.b[g]);
            (0..2).map(|k| x[k] * w.at(k, j)).sum::<f64>()
                + (0..3).map(|k| h0[k] * u.at(k, j)).sum::<f64>()
                + b.data()[j]
        };
        let sig = crate::autodiff::sigmoid;
        for j in 0..3 {
            let (i, f, o, g) = (
                sig(gate(0, j)),
                sig(gate(1, j)),
                sig(gate(2, j)),
                gate(3, j).tanh(),
            );
            let cj = f * c0[j] + i * g;
            assert!((tape.value(c).data()[j] - cj).abs() < 1e-14);
            assert!((tape.value(h).data()[j] - o * cj.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn all_twelve_blocks_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let p = cell(&mut store, 3, 4, Some(&mut rng));
        let xs = Tensor::new(
            vec![10, 3],
            (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let loss = |store: &ParamStore| -> (Tape, Var) {
            let mut tape = Tape::new();
            let lv = LstmVars::bind(&mut tape, store, &p).unwrap();
            let x = tape.constant(xs.clone());
            let (h, _) = run_lstm(&mut tape, &lv, x, false).unwrap();
            let s = tape.sum(h);
            (tape, s)
        };
        let (tape, s) = loss(&store);
        let grads = tape.backward(s).unwrap().param_grads(&store);
        let ids: Vec<ParamId> = p.w.iter().chain(&p.u).chain(&p.b).copied().collect();
        assert_eq!(ids.len(), 12);
        for id in ids {
            let g = grads.get(id).unwrap().clone();
            for idx in 0..store.get(id).numel() {
                let fd = finite_difference(&mut store, id, idx, 1e-5, |s| {
                    let (t, v) = loss(s);
                    t.value(v).data()[0]
                });
                let err = relative_error(g.data()[idx], fd);
                assert!(
                    err < 1e-4,
                    "{} [{idx}]: {} vs {fd}",
                    store.name(id),
                    g.data()[idx]
                );
            }
        }
    }

    #[test]
    fn single_step_sequence_is_one_step_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let p = cell(&mut store, 4, 5, Some(&mut rng));
        let mut tape = Tape::new();
        let lv = LstmVars::bind(&mut tape, &store, &p).unwrap();
        let x = tape.constant(Tensor::row(vec![0.1, 0.2, 0.3, 0.4]));
        let (h1, _) = run_lstm(&mut tape, &lv, x, false).unwrap();
        let (hz, cz) = lv.zero_state(&mut tape, 1);
        let (h2, _) = lstm_step(&mut tape, &lv, x, hz, cz).unwrap();
        assert_eq!(tape.value(h1), tape.value(h2));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let p = cell(&mut store, 3, 2, None);
        let mut tape = Tape::new();
        let lv = LstmVars::bind(&mut tape, &store, &p).unwrap();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let (h, c) = lv.zero_state(&mut tape, 1);
        assert!(lstm_step(&mut tape, &lv, x, h, c).is_err());
    }
}
