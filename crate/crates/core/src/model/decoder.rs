//! GMM decoder: an LSTM whose initial state is projected from the node
//! context and the latent one-hot, emitting one mixture per horizon step.

use rand::Rng;

use super::gmm::{gmm_sample, gmm_sequence_log_likelihood, GmmParams};
use super::lstm::{lstm_step_projected, DenseVars, LstmVars};
use super::registry::WeightRegistry;
use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::CourtAction;
use crate::error::{Error, Result};
use crate::graph::NodeType;

#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    init: DenseVars,
    lstm: LstmVars,
    head: DenseVars,
    context: usize,
    latent: usize,
    components: usize,
    vel_scale: f64,
}

/// Source of the decoder input after the first step.
pub enum Feedback<'a, R: Rng + ?Sized> {
    /// Ground-truth future actions.
    Teacher(&'a [CourtAction]),
    /// Previously sampled actions.
    Sample(&'a mut R),
}

impl DecoderVars {
    pub fn bind(tape: &mut Tape, reg: &WeightRegistry, node_type: NodeType) -> Result<Self> {
        let p = &reg.node(node_type)?.decoder;
        let cfg = reg.config();
        Ok(Self {
            init: DenseVars::bind(tape, reg.store(), &p.init),
            lstm: LstmVars::bind(tape, reg.store(), &p.lstm)?,
            head: DenseVars::bind(tape, reg.store(), &p.head),
            context: cfg.context_width(),
            latent: cfg.latent.one_hot_width(),
            components: cfg.n_gmm,
            vel_scale: cfg.vel_scale,
        })
    }

    fn action_row(&self, u: &CourtAction) -> [f64; 2] {
        [u.dl / self.vel_scale, u.dw / self.vel_scale]
    }

    /// `tanh([ctx ‖ z]·W + b)` split into `(h0, c0)`, one row per row of `sel`.
    fn initial_state(&self, tape: &mut Tape, ctx: Var, sel: &Tensor) -> Result<(Var, Var, usize)> {
        let (rows, width) = sel.dims2()?;
        if width != self.latent {
            return Err(Error::shape(
                "decoder latent",
                sel.shape(),
                &[rows, self.latent],
            ));
        }
        if tape.value(ctx).dims2()? != (1, self.context) {
            return Err(Error::shape(
                "decoder context",
                tape.shape(ctx),
                &[1, self.context],
            ));
        }
        let w_ctx = tape.slice(self.init.w, 0, 0, self.context)?;
        let w_z = tape.slice(self.init.w, 0, self.context, self.latent)?;
        let from_ctx = tape.matmul(ctx, w_ctx)?;
        let shared = tape.add(from_ctx, self.init.b)?;
        let z = tape.constant(sel.clone());
        let from_z = tape.matmul(z, w_z)?;
        let pre = tape.add_bias(from_z, shared)?;
        let state = tape.tanh(pre);
        let hd = self.lstm.hidden;
        let h = tape.slice(state, 1, 0, hd)?;
        let c = tape.slice(state, 1, hd, hd)?;
        Ok((h, c, rows))
    }

    /// Teacher-forced log-likelihood of `future` for every latent row of
    /// `sel`, summed over steps. Returns `1 × B`.
    pub fn log_likelihood(
        &self,
        tape: &mut Tape,
        ctx: Var,
        sel: &Tensor,
        last_action: CourtAction,
        future: &[CourtAction],
    ) -> Result<Var> {
        let head = self.teacher_forced_head(tape, ctx, sel, last_action, future)?;
        gmm_sequence_log_likelihood(
            tape,
            head,
            future,
            sel.shape()[0],
            self.components,
            self.vel_scale,
        )
    }

    /// Raw head outputs `(S·B) × 5K`, step-major.
    fn teacher_forced_head(
        &self,
        tape: &mut Tape,
        ctx: Var,
        sel: &Tensor,
        last_action: CourtAction,
        future: &[CourtAction],
    ) -> Result<Var> {
        if future.is_empty() {
            return Err(Error::Contract("decoder horizon must be at least 1".into()));
        }
        let (mut h, mut c, _) = self.initial_state(tape, ctx, sel)?;
        let inputs: Vec<f64> = std::iter::once(&last_action)
            .chain(&future[..future.len() - 1])
            .flat_map(|u| self.action_row(u))
            .collect();
        let xs = tape.constant(Tensor::new(vec![future.len(), 2], inputs)?);
        let proj = self.lstm.project_inputs(tape, xs)?;
        let mut hs = Vec::with_capacity(future.len());
        for k in 0..future.len() {
            let row = tape.slice(proj, 0, k, 1)?;
            (h, c) = lstm_step_projected(tape, &self.lstm, row, h, c)?;
            hs.push(h);
        }
        let stacked = tape.concat(&hs, 0)?;
        self.head.apply(tape, stacked)
    }

    /// Roll out `steps` mixtures per latent row, feeding back either the
    /// ground truth or fresh samples. With sampling, also returns the drawn
    /// actions per row.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        ctx: Var,
        sel: &Tensor,
        last_action: CourtAction,
        steps: usize,
        feedback: Feedback<'_, R>,
    ) -> Result<(Vec<Vec<GmmParams>>, Vec<Vec<CourtAction>>)> {
        let (mut h, mut c, rows) = self.initial_state(tape, ctx, sel)?;
        let mut params = vec![Vec::with_capacity(steps); rows];
        let mut drawn = vec![Vec::with_capacity(steps); rows];
        let mut prev = vec![last_action; rows];
        let mut feedback = feedback;
        if let Feedback::Teacher(t) = &feedback {
            if t.len() + 1 < steps {
                return Err(Error::Contract(format!(
                    "{} teacher actions for {steps} steps",
                    t.len()
                )));
            }
        }
        for k in 0..steps {
            let x = tape.constant(Tensor::new(
                vec![rows, 2],
                prev.iter().flat_map(|u| self.action_row(u)).collect(),
            )?);
            let xw = tape.matmul(x, self.lstm.w)?;
            let proj = tape.add_bias(xw, self.lstm.b)?;
            (h, c) = lstm_step_projected(tape, &self.lstm, proj, h, c)?;
            let out = self.head.apply(tape, h)?;
            for (r, slot) in params.iter_mut().enumerate() {
                slot.push(GmmParams::from_head_row(
                    tape.value(out).row_slice(r),
                    self.components,
                    self.vel_scale,
                ));
            }
            match &mut feedback {
                Feedback::Teacher(t) => {
                    if k < t.len() {
                        prev.fill(t[k]);
                    }
                }
                Feedback::Sample(rng) => {
                    for r in 0..rows {
                        let u = gmm_sample(&params[r][k], *rng);
                        drawn[r].push(u);
                        prev[r] = u;
                    }
                }
            }
        }
        Ok((params, drawn))
    }
}

/// Per-step mixtures for one latent assignment `z`.
pub fn decode_gmm<R: Rng + ?Sized>(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node_type: NodeType,
    ctx: Var,
    z: &[usize],
    last_action: CourtAction,
    steps: usize,
    feedback: Feedback<'_, R>,
) -> Result<Vec<GmmParams>> {
    let sel = Tensor::row(reg.config().latent.one_hot(z)?);
    let dec = DecoderVars::bind(tape, reg, node_type)?;
    let (mut params, _) = dec.rollout(tape, ctx, &sel, last_action, steps, feedback)?;
    Ok(params.remove(0))
}
