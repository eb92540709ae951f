//! Batch policy-gradient estimation, GRPO reward normalization, the ascent
//! step and the adaptive learning rate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::env::{PositionWeights, World};
use crate::error::{Error, Result};
use crate::lsr::{LsrMode, LsrPolicy};
use crate::policy::{CandidateDraw, MoePolicy, Params, UserView};
use crate::scalar::{cast, Scalar};
use crate::table::{axpy, Table};

pub const DEFAULT_OVERFLOW_THRESHOLD: f64 = 1e6;
pub const GRPO_STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Vpg,
    VpgSwr,
    Capg,
    CapgSwr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [EstimatorKind::Vpg, EstimatorKind::VpgSwr, EstimatorKind::Capg, EstimatorKind::CapgSwr];

    pub fn is_capg(self) -> bool {
        matches!(self, EstimatorKind::Capg | EstimatorKind::CapgSwr)
    }

    /// Default learning rate: 1e-2 for the credit-assigned estimators, 1e-1 otherwise.
    pub fn default_lr(self) -> f64 {
        if self.is_capg() {
            1e-2
        } else {
            1e-1
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Vpg => "vpg",
            EstimatorKind::VpgSwr => "vpg_swr",
            EstimatorKind::Capg => "capg",
            EstimatorKind::CapgSwr => "capg_swr",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "vpg" => Ok(EstimatorKind::Vpg),
            "vpg_swr" => Ok(EstimatorKind::VpgSwr),
            "capg" => Ok(EstimatorKind::Capg),
            "capg_swr" | "top1" | "top1_pg" => Ok(EstimatorKind::CapgSwr),
            other => Err(format!("unknown estimator `{other}` (expected vpg, vpg_swr, capg or capg_swr)")),
        }
    }
}

/// One logged interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSample<T> {
    pub x: usize,
    pub draw: CandidateDraw,
    pub ranking: Vec<usize>,
    pub rewards: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate<T> {
    pub grads: Params<T>,
    pub grad_norm: T,
    pub overflow: bool,
    pub n_samples: usize,
    /// Number of CA-PG-SwR scores whose value exceeded zero.
    pub above_unit: usize,
}

/// Logit gradient of one sample's estimator term for the given rewards.
///
/// V-PG variants scale the ordered score by `sum_l alpha_l r_l`; CA-PG
/// variants sum `alpha_l r_l * score(ranking[l])` over positions.
pub fn sample_logit_gradient<T: Scalar>(
    kind: EstimatorKind,
    view: &UserView<'_, T>,
    draw: &CandidateDraw,
    ranking: &[usize],
    rewards: &[T],
    alpha: &[T],
) -> (Table<T>, bool, usize) {
    match kind {
        EstimatorKind::Vpg | EstimatorKind::VpgSwr => {
            let weight: T = alpha.iter().zip(rewards).map(|(&a, &r)| a * r).sum();
            let s = if kind == EstimatorKind::Vpg { view.vpg(&draw.ordered) } else { view.vpg_swr(&draw.ordered) };
            let mut g = s.grad;
            for v in g.as_mut_slice() {
                *v = *v * weight;
            }
            let bad = s.overflow || !weight.is_finite();
            (g, bad, 0)
        }
        EstimatorKind::Capg | EstimatorKind::CapgSwr => {
            let mut g = Table::zeros(view.s.rows(), view.s.cols());
            let mut bad = false;
            let mut above = 0;
            for ((&a, &r), &al) in ranking.iter().zip(rewards).zip(alpha) {
                let s = if kind == EstimatorKind::Capg { view.capg(a) } else { view.capg_swr(a) };
                bad |= s.overflow;
                above += usize::from(s.above_unit);
                axpy(al * r, s.grad.as_slice(), g.as_mut_slice());
            }
            (g, bad, above)
        }
    }
}

/// Batch-mean ascent direction. Samples are reduced in batch order.
pub fn estimate_batch_gradient<T: Scalar>(
    kind: EstimatorKind,
    policy: &MoePolicy<T>,
    batch: &[BatchSample<T>],
    alpha: &PositionWeights<T>,
    overflow_threshold: T,
) -> Result<GradientEstimate<T>> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    let l = first.ranking.len();
    if alpha.len() != l {
        return Err(Error::InconsistentLength { expected: alpha.len(), found: l });
    }
    for s in batch {
        if s.ranking.len() != l {
            return Err(Error::InconsistentLength { expected: l, found: s.ranking.len() });
        }
        if s.rewards.len() != l {
            return Err(Error::InconsistentLength { expected: l, found: s.rewards.len() });
        }
        if s.draw.ordered.len() != policy.k() {
            return Err(Error::InconsistentLength { expected: policy.k(), found: s.draw.ordered.len() });
        }
        if let Some(&a) = s.ranking.iter().find(|&&a| !s.draw.contains(a)) {
            return Err(Error::InvalidArgument(format!("ranked item {a} is not among the candidates")));
        }
    }
    let inv_n = T::one() / cast::<T>(batch.len() as f64);
    let mut acc = GradientAccumulator::new(policy);
    for s in batch {
        let view = policy.user_view(s.x)?;
        acc.add(kind, &view, s, &alpha.alpha, inv_n);
    }
    Ok(acc.finish(overflow_threshold))
}

/// Running sum of weighted per-sample gradients in parameter space.
pub(crate) struct GradientAccumulator<'p, T> {
    policy: &'p MoePolicy<T>,
    grads: Params<T>,
    overflow: bool,
    above_unit: usize,
    n_samples: usize,
}

impl<'p, T: Scalar> GradientAccumulator<'p, T> {
    pub(crate) fn new(policy: &'p MoePolicy<T>) -> Self {
        Self { policy, grads: policy.params.zeros_like(), overflow: false, above_unit: 0, n_samples: 0 }
    }

    pub(crate) fn add(&mut self, kind: EstimatorKind, view: &UserView<'_, T>, s: &BatchSample<T>, alpha: &[T], weight: T) {
        let (g, bad, above) = sample_logit_gradient(kind, view, &s.draw, &s.ranking, &s.rewards, alpha);
        self.overflow |= bad;
        self.above_unit += above;
        self.n_samples += 1;
        self.policy.backprop(s.x, &g, weight, &mut self.grads);
    }

    pub(crate) fn finish(self, overflow_threshold: T) -> GradientEstimate<T> {
        let grad_norm = self.grads.norm();
        let overflow =
            self.overflow || !self.grads.is_finite() || !grad_norm.is_finite() || grad_norm > overflow_threshold;
        GradientEstimate {
            grads: self.grads,
            grad_norm,
            overflow,
            n_samples: self.n_samples,
            above_unit: self.above_unit,
        }
    }
}

/// Standardizes each group to zero mean and unit population std, then adds `shift`.
pub fn grpo_normalize<T: Scalar>(groups: &[Vec<T>], shift: T) -> Result<Vec<Vec<T>>> {
    groups
        .iter()
        .map(|g| {
            if g.len() < 2 {
                return Err(Error::GroupTooSmall(g.len()));
            }
            let n = cast::<T>(g.len() as f64);
            let mean = g.iter().copied().sum::<T>() / n;
            let var = g.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / n;
            let std = var.sqrt().max(cast(GRPO_STD_FLOOR));
            Ok(g.iter().map(|&r| (r - mean) / std + shift).collect())
        })
        .collect()
}

/// `params += lr * grads`. Refuses overflow-flagged gradients.
pub fn sgd_step<T: Scalar>(policy: &mut MoePolicy<T>, grad: &GradientEstimate<T>, lr: T) -> Result<()> {
    if grad.overflow {
        return Err(Error::Overflow);
    }
    policy.apply_update(&grad.grads, lr);
    Ok(())
}

/// Base learning rate divided by the expected LSR propensity of its own choice.
///
/// Uniform and deterministic rankers have a context-free propensity (`1/K`
/// and `1`), so only the noisy ranker is estimated, by one candidate draw for
/// each of `mc_contexts` uniformly drawn users.
pub fn adaptive_lr<T: Scalar, R: Rng + ?Sized>(
    base_lr: T,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    policy: &MoePolicy<T>,
    mc_contexts: usize,
    rng: &mut R,
) -> Result<T> {
    let propensity = match lsr.mode {
        LsrMode::Optimal | LsrMode::Anti => T::one(),
        LsrMode::Uniform => T::one() / cast::<T>(policy.k() as f64),
        LsrMode::Noisy => {
            if mc_contexts == 0 {
                return Err(Error::InvalidArgument("adaptive learning rate needs at least one context".into()));
            }
            let mut total = T::zero();
            for _ in 0..mc_contexts {
                let x = rng.random_range(0..world.n_users());
                let draw = policy.sample_candidates(x, rng)?;
                total = total + lsr.self_propensity(world, x, &draw.set)?;
            }
            total / cast::<T>(mc_contexts as f64)
        }
    };
    Ok(base_lr * (T::one() / propensity))
}
