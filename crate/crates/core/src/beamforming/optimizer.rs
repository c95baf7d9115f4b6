//! Local max-min solver: L-BFGS ascent on a log-sum-exp soft minimum,
//! sharpened in stages.
//!
//! The sharpness is relative to the current minimum, so the smoothing gap
//! `ln(m) / μ` shrinks geometrically in relative terms. The best exact
//! minimum seen at any evaluated point is kept, which makes the returned
//! value monotone in the work done.

use std::collections::VecDeque;

use super::formulation::Formulation;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Schedule {
    /// Relative sharpness of the first stage.
    pub initial: f64,
    /// Multiplier between stages.
    pub growth: f64,
    pub stages: usize,
    /// Iteration cap per stage.
    pub stage_iterations: usize,
    /// Iteration cap over all stages.
    pub max_iterations: usize,
    /// Relative change of the smooth objective treated as converged.
    pub tolerance: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            initial: 10.0,
            growth: 4.0,
            stages: 7,
            stage_iterations: 80,
            max_iterations: 500,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Run {
    pub x: Vec<f64>,
    pub best: f64,
    pub best_x: Vec<f64>,
    pub iterations: usize,
    pub stage: usize,
}

impl Run {
    pub fn new(formulation: &mut Formulation, x: Vec<f64>) -> Self {
        let best = formulation.evaluate(&x, None, &mut []).min;
        Run { best_x: x.clone(), x, best, iterations: 0, stage: 0 }
    }
}

impl Run {
    fn consider(&mut self, x: &[f64], value: f64) {
        if value > self.best {
            self.best = value;
            self.best_x.copy_from_slice(x);
        }
    }
}

const MEMORY: usize = 8;

/// Advances `run` through stages `run.stage..until` of `schedule`.
pub(crate) fn advance(formulation: &mut Formulation, run: &mut Run, schedule: &Schedule, until: usize) {
    let n = formulation.dim();
    let mut grad = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut direction = vec![0.0; n];
    let mut trial = vec![0.0; n];

    while run.stage < until.min(schedule.stages) && run.iterations < schedule.max_iterations {
        run.x.copy_from_slice(&run.best_x);
        renormalize(formulation, &mut run.x);
        let reference = run.best.max(1e-9);
        let mu = schedule.initial * schedule.growth.powi(run.stage as i32) / reference;
        let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);

        let eval = formulation.evaluate(&run.x, Some(mu), &mut grad);
        run.consider(&run.x.clone(), eval.min);
        // minimize -smooth
        let mut value = -eval.smooth;
        grad.iter_mut().for_each(|g| *g = -*g);

        for _ in 0..schedule.stage_iterations {
            if run.iterations >= schedule.max_iterations || !value.is_finite() {
                break;
            }
            run.iterations += 1;
            two_loop(&grad, &history, &mut direction);
            let mut slope: f64 = direction.iter().zip(&grad).map(|(d, g)| d * g).sum();
            if !(slope < 0.0) {
                // not a descent direction: restart from steepest descent
                history.clear();
                direction.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
                slope = -grad.iter().map(|g| g * g).sum::<f64>();
                if slope == 0.0 {
                    break;
                }
            }
            let mut step = if history.is_empty() {
                let norm = run.x.iter().map(|a| a * a).sum::<f64>().sqrt();
                let gnorm = (-slope).sqrt();
                (0.1 * norm / gnorm).min(1.0)
            } else {
                1.0
            };

            let mut accepted = None;
            for _ in 0..30 {
                for ((t, x), d) in trial.iter_mut().zip(&run.x).zip(&direction) {
                    *t = x + step * d;
                }
                let e = formulation.evaluate(&trial, Some(mu), &mut trial_grad);
                run.consider(&trial, e.min);
                if e.min.is_finite() && -e.smooth <= value + 1e-4 * step * slope {
                    accepted = Some(e);
                    break;
                }
                step *= 0.5;
            }
            let Some(e) = accepted else { break };
            let new_value = -e.smooth;
            trial_grad.iter_mut().for_each(|g| *g = -*g);

            let s: Vec<f64> = trial.iter().zip(&run.x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            if sy > 1e-12 * s.iter().map(|a| a * a).sum::<f64>().sqrt() * y.iter().map(|a| a * a).sum::<f64>().sqrt() {
                if history.len() == MEMORY {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / sy));
            }

            let improvement = value - new_value;
            run.x.copy_from_slice(&trial);
            std::mem::swap(&mut grad, &mut trial_grad);
            value = new_value;
            if improvement.abs() <= schedule.tolerance * value.abs().max(1e-12) {
                break;
            }
        }
        run.stage += 1;
    }
}

/// Keeps the beam block at unit norm; the objective is invariant to it.
fn renormalize(formulation: &Formulation, x: &mut [f64]) {
    let beams = formulation.beam_len();
    let norm = x[..beams].iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        x[..beams].iter_mut().for_each(|a| *a /= norm);
    }
}

fn two_loop(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, out: &mut [f64]) {
    out.iter_mut().zip(grad).for_each(|(o, g)| *o = -g);
    let mut alphas = [0.0; MEMORY];
    for (i, (s, y, rho)) in history.iter().enumerate().rev() {
        let a = rho * s.iter().zip(out.iter()).map(|(s, q)| s * q).sum::<f64>();
        alphas[i] = a;
        out.iter_mut().zip(y).for_each(|(q, y)| *q -= a * y);
    }
    if let Some((s, y, _)) = history.back() {
        let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        let h0 = sy / yy;
        out.iter_mut().for_each(|q| *q *= h0);
    }
    for (i, (s, y, rho)) in history.iter().enumerate() {
        let b = rho * y.iter().zip(out.iter()).map(|(y, r)| y * r).sum::<f64>();
        out.iter_mut().zip(s).for_each(|(r, s)| *r += (alphas[i] - b) * s);
    }
}
