use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{SolverReport, SolverStatus};
use crate::model::ParamBox;
use crate::{Error, Result};

/// Cooling schedule and proposal settings for [`simulated_annealing`].
///
/// `None` fields are filled from the problem dimension `d`: `200 d` moves per
/// temperature and a budget of `10^4 d` objective evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    pub cooling: f64,
    pub moves_per_temp: Option<usize>,
    pub max_evals: Option<usize>,
    pub initial_temp: Option<f64>,
    pub temp_samples: usize,
    /// Per-coordinate proposal scale at the initial temperature.
    pub step: Option<Vec<f64>>,
    pub record_path: bool,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            cooling: 0.95,
            moves_per_temp: None,
            max_evals: None,
            initial_temp: None,
            temp_samples: 50,
            step: None,
            record_path: false,
        }
    }
}

impl AnnealSchedule {
    pub fn with_budget(mut self, max_evals: usize) -> Self {
        self.max_evals = Some(max_evals);
        self
    }

    pub fn with_step(mut self, step: Vec<f64>) -> Self {
        self.step = Some(step);
        self
    }
}

/// Minimise `objective` over `bounds` by simulated annealing.
///
/// Proposals are Gaussian around the current point with scale
/// `step * sqrt(T / T0)`, projected into the box, accepted by the Metropolis
/// rule. The best point visited is returned; ties keep the earliest visit.
/// Non-finite objective values are treated as rejections. Deterministic given
/// `seed`.
pub fn simulated_annealing<F>(
    mut objective: F,
    bounds: &ParamBox,
    x0: &[f64],
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<(Vec<f64>, SolverReport)>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = bounds.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch { context: "annealing start", expected: d, got: x0.len() });
    }
    if !bounds.contains(x0) {
        return Err(Error::invalid("annealing start lies outside the parameter box"));
    }
    if !(schedule.cooling > 0.0 && schedule.cooling < 1.0) {
        return Err(Error::invalid("cooling factor must lie in (0, 1)"));
    }
    let f0 = objective(x0);
    if !f0.is_finite() {
        return Err(Error::invalid("objective is not finite at the annealing start"));
    }
    let budget = schedule.max_evals.unwrap_or(10_000 * d);
    let moves = schedule.moves_per_temp.unwrap_or(200 * d).max(1);
    let step = match &schedule.step {
        Some(s) if s.len() == d => s.clone(),
        Some(s) => return Err(Error::DimensionMismatch { context: "annealing step", expected: d, got: s.len() }),
        None => (0..d).map(|j| (0.1 * x0[j].abs().max(1.0)).min(0.5 * bounds.width(j))).collect(),
    };

    let mut best = x0.to_vec();
    let mut f_best = f0;
    let mut evals = 0usize;
    let mut path = schedule.record_path.then(|| vec![f0]);
    if budget == 0 {
        let mut rep = SolverReport::new(SolverStatus::BudgetExhausted, 0, 0, f0);
        rep.path = path;
        return Ok((best, rep));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let propose = |centre: &[f64], scale: f64, rng: &mut ChaCha20Rng| -> Vec<f64> {
        let mut c: Vec<f64> = centre
            .iter()
            .zip(&step)
            .map(|(x, s)| {
                let z: f64 = StandardNormal.sample(rng);
                x + s * scale * z
            })
            .collect();
        bounds.project(&mut c);
        c
    };

    let t0 = match schedule.initial_temp {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(_) => return Err(Error::invalid("initial temperature must be positive")),
        None => {
            let mut vals = Vec::with_capacity(schedule.temp_samples);
            for _ in 0..schedule.temp_samples.min(budget) {
                let c = propose(x0, 1.0, &mut rng);
                let v = objective(&c);
                evals += 1;
                if v.is_finite() {
                    vals.push(v);
                    if v < f_best {
                        f_best = v;
                        best = c;
                    }
                }
            }
            let sd = std_dev(&vals);
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                f0.abs().max(1e-12)
            }
        }
    };

    let mut x = best.clone();
    let mut fx = f_best;
    let mut temp = t0;
    let mut levels = 0;
    while evals < budget {
        let scale = (temp / t0).sqrt().max(1e-6);
        for _ in 0..moves {
            if evals >= budget {
                break;
            }
            let c = propose(&x, scale, &mut rng);
            let fc = objective(&c);
            evals += 1;
            if !fc.is_finite() {
                continue;
            }
            let delta = fc - fx;
            let accept = delta <= 0.0 || {
                let u: f64 = rand::Rng::random(&mut rng);
                u < (-delta / temp).exp()
            };
            if accept {
                if fc < f_best {
                    f_best = fc;
                    best.clone_from(&c);
                }
                x = c;
                fx = fc;
            }
        }
        levels += 1;
        if let Some(p) = path.as_mut() {
            p.push(f_best);
        }
        temp *= schedule.cooling;
    }
    log::debug!("annealing finished after {levels} temperatures, {evals} evaluations, best {f_best:.6e}");
    let mut rep = SolverReport::new(SolverStatus::BudgetExhausted, levels, evals + 1, f_best);
    rep.path = path;
    Ok((best, rep))
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
