//! Diagonal Gaussian mixtures over 2-D actions.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{lse, Tape, Tensor, Var};
use crate::dynamics::{clamp_speed, CourtAction};
use crate::error::Result;

pub const LOG_SCALE_MIN: f64 = -5.0;
pub const LOG_SCALE_MAX: f64 = 2.0;

/// Mixture for one horizon step. Means and scales are in m/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub log_weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub log_scales: Vec<[f64; 2]>,
}

impl GmmParams {
    pub fn components(&self) -> usize {
        self.log_weights.len()
    }

    /// From one row of the decoder head `[logits ‖ μ_l ‖ μ_w ‖ s_l ‖ s_w]`.
    pub fn from_head_row(row: &[f64], k: usize, vel_scale: f64) -> Self {
        let logits = &row[..k];
        let norm = lse(logits.iter().copied());
        Self {
            log_weights: logits.iter().map(|x| x - norm).collect(),
            means: (0..k)
                .map(|j| [vel_scale * row[k + j], vel_scale * row[2 * k + j]])
                .collect(),
            log_scales: (0..k)
                .map(|j| {
                    [
                        row[3 * k + j].clamp(LOG_SCALE_MIN, LOG_SCALE_MAX),
                        row[4 * k + j].clamp(LOG_SCALE_MIN, LOG_SCALE_MAX),
                    ]
                })
                .collect(),
        }
    }

    /// Most likely component's mean.
    pub fn mode_mean(&self) -> [f64; 2] {
        let best = (0..self.components())
            .max_by(|&a, &b| self.log_weights[a].total_cmp(&self.log_weights[b]))
            .unwrap_or(0);
        self.means[best]
    }
}

fn component_log_density(p: &GmmParams, j: usize, u: &CourtAction) -> f64 {
    let [ml, mw] = p.means[j];
    let [sl, sw] = p.log_scales[j];
    let zl = (u.dl - ml) * (-sl).exp();
    let zw = (u.dw - mw) * (-sw).exp();
    p.log_weights[j] - sl - sw - 0.5 * (zl * zl + zw * zw) - (2.0 * PI).ln()
}

pub fn gmm_log_density(p: &GmmParams, u: &CourtAction) -> f64 {
    lse((0..p.components()).map(|j| component_log_density(p, j, u)))
}

/// Draw a component by weight, then an action from it; the result obeys the
/// speed cap.
pub fn gmm_sample<R: Rng + ?Sized>(p: &GmmParams, rng: &mut R) -> CourtAction {
    let (j, _) = sample_component(p, rng);
    let [ml, mw] = p.means[j];
    let [sl, sw] = p.log_scales[j];
    let nl: f64 = StandardNormal.sample(rng);
    let nw: f64 = StandardNormal.sample(rng);
    clamp_speed(CourtAction::new(ml + sl.exp() * nl, mw + sw.exp() * nw))
}

/// Component index drawn by weight, with the uniform used.
pub fn sample_component<R: Rng + ?Sized>(p: &GmmParams, rng: &mut R) -> (usize, f64) {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (j, lw) in p.log_weights.iter().enumerate() {
        acc += lw.exp();
        if r < acc {
            return (j, r);
        }
    }
    (p.components() - 1, r)
}

/// Sum over steps of the mixture log-likelihood of `targets`.
///
/// `head` is `(S·B) × 5K` with rows ordered step-major (`k·B + b`); every
/// batch row at step `k` is scored against `targets[k]`. Returns `1 × B`.
pub fn gmm_sequence_log_likelihood(
    tape: &mut Tape,
    head: Var,
    targets: &[CourtAction],
    batch: usize,
    k: usize,
    vel_scale: f64,
) -> Result<Var> {
    let steps = targets.len();
    let rows = steps * batch;
    let logits = tape.slice(head, 1, 0, k)?;
    let log_w = tape.log_softmax(logits, 1)?;
    let raw_ml = tape.slice(head, 1, k, k)?;
    let raw_mw = tape.slice(head, 1, 2 * k, k)?;
    let ml = tape.scale(raw_ml, vel_scale);
    let mw = tape.scale(raw_mw, vel_scale);
    let raw_sl = tape.slice(head, 1, 3 * k, k)?;
    let raw_sw = tape.slice(head, 1, 4 * k, k)?;
    let sl = tape.clamp(raw_sl, LOG_SCALE_MIN, LOG_SCALE_MAX);
    let sw = tape.clamp(raw_sw, LOG_SCALE_MIN, LOG_SCALE_MAX);

    let target = |f: fn(&CourtAction) -> f64| {
        let mut data = Vec::with_capacity(rows * k);
        for u in targets {
            data.extend(std::iter::repeat_n(f(u), batch * k));
        }
        Tensor::new(vec![rows, k], data)
    };
    let tl = tape.constant(target(|u| u.dl)?);
    let tw = tape.constant(target(|u| u.dw)?);

    let standardized = |tape: &mut Tape, t: Var, m: Var, s: Var| -> Result<Var> {
        let d = tape.sub(t, m)?;
        let ns = tape.neg(s);
        let inv = tape.exp(ns);
        let z = tape.mul(d, inv)?;
        Ok(tape.square(z))
    };
    let zl2 = standardized(tape, tl, ml, sl)?;
    let zw2 = standardized(tape, tw, mw, sw)?;
    let quad = tape.add(zl2, zw2)?;
    let half = tape.scale(quad, -0.5);
    let logdet = tape.add(sl, sw)?;
    let a = tape.sub(log_w, logdet)?;
    let b = tape.add(a, half)?;
    let comp = tape.shift(b, -(2.0 * PI).ln());
    let per_row = tape.logsumexp(comp, 1)?;
    let grid = tape.reshape(per_row, vec![steps, batch])?;
    tape.sum_axis(grid, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MAX_SPEED;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(mu: [f64; 2], ls: [f64; 2]) -> GmmParams {
        GmmParams {
            log_weights: vec![0.0],
            means: vec![mu],
            log_scales: vec![ls],
        }
    }

    #[test]
    fn standard_normal_peak() {
        let p = single([0.0, 0.0], [0.0, 0.0]);
        let v = gmm_log_density(&p, &CourtAction::new(0.0, 0.0));
        assert!((v - -(2.0 * PI).ln()).abs() < 1e-12);
        assert!((v - -1.83788).abs() < 1e-5);
    }

    #[test]
    fn two_component_hand_value() {
        let p = GmmParams {
            log_weights: vec![0.5f64.ln(); 2],
            means: vec![[1.0, 0.0], [-1.0, 0.0]],
            log_scales: vec![[0.0, 0.0]; 2],
        };
        let v = gmm_log_density(&p, &CourtAction::new(0.0, 0.0));
        let want = (f64::exp(-0.5) / (2.0 * PI)).ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v - -2.33788).abs() < 1e-5);
    }

    #[test]
    fn integrates_to_one() {
        let p = GmmParams {
            log_weights: vec![0.3f64.ln(), 0.7f64.ln()],
            means: vec![[1.0, -0.5], [-1.5, 1.0]],
            log_scales: vec![[0.2f64.ln() + 1.0, -0.3], [0.0, 0.1]],
        };
        let n = 800;
        let h = 16.0 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = CourtAction::new(-8.0 + (i as f64 + 0.5) * h, -8.0 + (j as f64 + 0.5) * h);
                total += gmm_log_density(&p, &u).exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn degenerate_sample_collapses() {
        let p = single([2.0, 3.0], [1e-9f64.ln(); 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = gmm_sample(&p, &mut rng);
        assert!((u.dl - 2.0).abs() < 1e-6 && (u.dw - 3.0).abs() < 1e-6);
    }

    #[test]
    fn component_frequencies_match_weights() {
        let w = [0.1, 0.25, 0.4, 0.25];
        let p = GmmParams {
            log_weights: w.iter().map(|x: &f64| x.ln()).collect(),
            means: vec![[0.0, 0.0]; 4],
            log_scales: vec![[0.0, 0.0]; 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_component(&p, &mut rng).0] += 1;
        }
        for (c, w) in counts.iter().zip(w) {
            assert!((*c as f64 / n as f64 - w).abs() < 0.01);
        }
    }

    #[test]
    fn samples_obey_speed_cap() {
        let p = single([11.0, 6.0], [1.5, 1.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            assert!(gmm_sample(&p, &mut rng).speed() <= MAX_SPEED);
        }
    }

    #[test]
    fn tape_likelihood_matches_plain_density() {
        let k = 3;
        let (steps, batch) = (2, 2);
        let rows: Vec<Vec<f64>> = (0..steps * batch)
            .map(|r| {
                (0..5 * k)
                    .map(|c| ((r * 7 + c * 3) % 11) as f64 / 11.0 - 0.4)
                    .collect()
            })
            .collect();
        let targets = [CourtAction::new(0.5, -1.0), CourtAction::new(2.0, 0.3)];
        let mut tape = Tape::new();
        let head = tape.constant(Tensor::from_rows(&rows).unwrap());
        let ll = gmm_sequence_log_likelihood(&mut tape, head, &targets, batch, k, 5.0).unwrap();
        for b in 0..batch {
            let want: f64 = (0..steps)
                .map(|s| {
                    gmm_log_density(
                        &GmmParams::from_head_row(&rows[s * batch + b], k, 5.0),
                        &targets[s],
                    )
                })
                .sum();
            assert!((tape.value(ll).data()[b] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn head_weights_normalize() {
        let row: Vec<f64> = (0..5 * 16).map(|i| (i as f64 * 0.37).sin() * 4.0).collect();
        let p = GmmParams::from_head_row(&row, 16, 5.0);
        let s: f64 = p.log_weights.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(p.log_scales.iter().flatten().all(|x| x.exp() > 0.0));
    }
}
