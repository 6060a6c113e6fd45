//! Hamiltonian Monte Carlo with dual-averaging step-size adaptation.
//!
//! Plain HMC with a jittered leapfrog count and a diagonal mass matrix. The
//! targets here are smooth and low-dimensional, where tuned HMC mixes as
//! well as tree-building samplers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BdfError, Result};
use crate::rng::substream_rng;

/// A differentiable unnormalized log-density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Log-density and gradient at `x`, or `None` when not finite.
    fn logp_grad(&self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
    /// Center of the initialization jitter.
    fn init_mean(&self) -> Vec<f64>;
    /// Scale of the initialization jitter and the initial mass guess.
    fn init_sd(&self) -> Vec<f64>;
}

/// Sampler configuration. Defaults mirror 3 chains of 2,000 iterations with
/// the first 1,000 discarded as warmup.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Fixed step size; disables dual averaging when set.
    pub step_size: Option<f64>,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 3,
            iters: 2000,
            warmup: 1000,
            seed: 0,
            step_size: None,
            leapfrog_steps: 32,
            target_accept: 0.8,
        }
    }
}

/// Raw per-chain output.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub draws: Vec<Vec<f64>>,
    pub accept_rate: f64,
    pub divergences: usize,
    pub step_size: f64,
}

struct DualAverage {
    mu: f64,
    log_step: f64,
    log_step_avg: f64,
    hbar: f64,
    count: u64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(initial_step: f64) -> Self {
        DualAverage {
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_avg: initial_step.ln(),
            hbar: 0.0,
            count: 1,
        }
    }

    fn advance(&mut self, accept_prob: f64, target: f64) {
        let count = self.count as f64;
        let w = 1.0 / (count + Self::T0);
        self.hbar = (1.0 - w) * self.hbar + w * (target - accept_prob);
        self.log_step = self.mu - self.hbar * count.sqrt() / Self::GAMMA;
        let eta = count.powf(-Self::KAPPA);
        self.log_step_avg = eta * self.log_step + (1.0 - eta) * self.log_step_avg;
        self.count += 1;
    }

    fn current(&self) -> f64 {
        self.log_step.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_step_avg.exp()
    }
}

fn leapfrog<T: LogDensity>(
    target: &T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut Vec<f64>,
    logp: &mut f64,
    step: f64,
    n_steps: usize,
    inv_mass: &[f64],
) -> bool {
    let d = q.len();
    for _ in 0..n_steps {
        for j in 0..d {
            p[j] += 0.5 * step * grad[j];
        }
        for j in 0..d {
            q[j] += step * inv_mass[j] * p[j];
        }
        match target.logp_grad(q) {
            Some((lp, g)) => {
                *logp = lp;
                *grad = g;
            }
            None => return false,
        }
        for j in 0..d {
            p[j] += 0.5 * step * grad[j];
        }
    }
    true
}

fn variances(window: &[Vec<f64>], d: usize) -> Option<Vec<f64>> {
    if window.len() < 10 {
        return None;
    }
    let n = window.len() as f64;
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mean: f64 = window.iter().map(|w| w[j]).sum::<f64>() / n;
        let var: f64 = window.iter().map(|w| (w[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        out.push(var);
    }
    Some(out)
}

fn run_chain<T: LogDensity>(target: &T, cfg: &SamplerConfig, chain: usize) -> Result<ChainRun> {
    let d = target.dim();
    let mut rng = substream_rng(cfg.seed, &[0x4843, chain as u64]);
    let mean = target.init_mean();
    let sd = target.init_sd();

    // initialize at the jittered center
    let mut q: Vec<f64> = (0..d)
        .map(|j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean[j] + 0.1 * sd[j] * z
        })
        .collect();
    let (mut logp, mut grad) = target
        .logp_grad(&q)
        .ok_or_else(|| BdfError::Sampler("log-density not finite at initialization".into()))?;

    // diagonal mass matrix; starts from the init scale, re-estimated twice
    // during warmup (the final metric comes from second-half warmup draws)
    let mut inv_mass: Vec<f64> = sd.iter().map(|s| (s * s).max(1e-12)).collect();
    let mut mass: Vec<f64> = inv_mass.iter().map(|v| 1.0 / v).collect();

    let init_step = cfg.step_size.unwrap_or(0.1 / (d as f64).powf(0.25));
    let mut dual = DualAverage::new(init_step);
    let adapt = cfg.step_size.is_none();
    let mut step = init_step;

    let kept = cfg.iters - cfg.warmup;
    let mut draws = Vec::with_capacity(kept);
    let mut accepted = 0usize;
    let mut divergences = 0usize;
    let mut finite_energy = 0usize;

    // mass updates at warmup/2 (from the [w/4, w/2) window) and at 3*warmup/4
    // (from the [w/2, 3w/4) window)
    let w = cfg.warmup;
    let updates = [(w / 4, w / 2), (w / 2, 3 * w / 4)];
    let mut window: Vec<Vec<f64>> = Vec::new();

    for iter in 0..cfg.iters {
        let in_warmup = iter < cfg.warmup;
        let mut p: Vec<f64> = mass
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * m.sqrt()
            })
            .collect();
        let kinetic0: f64 = p
            .iter()
            .zip(&inv_mass)
            .map(|(&pj, &im)| 0.5 * pj * pj * im)
            .sum();
        let h0 = -logp + kinetic0;

        let mut q_new = q.clone();
        let mut grad_new = grad.clone();
        let mut logp_new = logp;
        // jitter the path length to avoid resonances
        let lo = ((cfg.leapfrog_steps as f64) * 0.8).ceil() as usize;
        let hi = ((cfg.leapfrog_steps as f64) * 1.2).floor() as usize;
        let n_steps = rng.gen_range(lo..=hi.max(lo));
        let ok = leapfrog(
            target,
            &mut q_new,
            &mut p,
            &mut grad_new,
            &mut logp_new,
            step,
            n_steps,
            &inv_mass,
        );
        let (accept_prob, divergent) = if ok {
            let kinetic1: f64 = p
                .iter()
                .zip(&inv_mass)
                .map(|(&pj, &im)| 0.5 * pj * pj * im)
                .sum();
            let delta = h0 - (-logp_new + kinetic1);
            if !delta.is_finite() || delta < -1000.0 {
                (0.0, true)
            } else {
                finite_energy += 1;
                (delta.exp().min(1.0), false)
            }
        } else {
            (0.0, true)
        };
        let accept = !divergent && rng.gen::<f64>() < accept_prob;
        if accept {
            q = q_new;
            grad = grad_new;
            logp = logp_new;
        }

        if in_warmup {
            if adapt {
                dual.advance(accept_prob, cfg.target_accept);
                step = dual.current();
            }
            for &(start, end) in &updates {
                if iter >= start && iter < end {
                    if iter == start {
                        window.clear();
                    }
                    window.push(q.clone());
                }
                if iter + 1 == end {
                    if let Some(vars) = variances(&window, d) {
                        let n = window.len() as f64;
                        for j in 0..d {
                            // shrink slightly toward the previous estimate
                            let v = vars[j] * n / (n + 5.0) + inv_mass[j] * 5.0 / (n + 5.0);
                            if v.is_finite() && v > 1e-12 {
                                inv_mass[j] = v;
                                mass[j] = 1.0 / v;
                            }
                        }
                        if adapt {
                            dual = DualAverage::new(dual.adapted());
                            step = dual.current();
                        }
                    }
                }
            }
            if iter + 1 == cfg.warmup && adapt {
                step = dual.adapted();
            }
        } else {
            if divergent {
                divergences += 1;
            }
            if accept {
                accepted += 1;
            }
            draws.push(q.clone());
        }
    }
    if kept > 0 && finite_energy == 0 {
        return Err(BdfError::Sampler("all trajectory energies were non-finite".into()));
    }
    Ok(ChainRun {
        draws,
        accept_rate: accepted as f64 / kept.max(1) as f64,
        divergences,
        step_size: step,
    })
}

/// Run `cfg.chains` independent HMC chains. Chains derive independent RNG
/// substreams from `(seed, chain_id)` and are deterministic.
pub fn run_hmc<T: LogDensity>(target: &T, cfg: &SamplerConfig) -> Result<Vec<ChainRun>> {
    if cfg.iters <= cfg.warmup || cfg.warmup == 0 {
        return Err(BdfError::Config("require iters > warmup >= 1".into()));
    }
    if cfg.chains == 0 {
        return Err(BdfError::Config("require at least one chain".into()));
    }
    (0..cfg.chains).map(|c| run_chain(target, cfg, c)).collect()
}
