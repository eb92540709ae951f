//! Training loop: sample a batch, estimate, step, evaluate.

use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use serde_json::json;

use crate::config::{Precision, TrainConfig, WorldSource};
use crate::env::{load_dense_matrix, PositionWeights, SyntheticParams, World};
use crate::error::{Error, Result};
use crate::lsr::{LsrMode, LsrPolicy, EXACT_MAX_CANDIDATES, EXACT_MAX_POSITION};
use crate::pg::{adaptive_lr, grpo_normalize, BatchSample, GradientAccumulator, GradientEstimate};
use crate::policy::{top_k_desc, MoePolicy, UserView};
use crate::rng::{self, Stream};
use crate::scalar::{cast, to_f64, Scalar};

/// Evaluation uses every user up to this many, otherwise a fixed subset.
pub const EVAL_ALL_USERS_MAX: usize = 2000;
pub const EVAL_SUBSET: usize = 1000;
/// Rollouts per user when a noisy ranker's marginals are too deep to enumerate.
pub const EVAL_ROLLOUTS: usize = 2000;
/// Step at which the headline value is reported.
pub const HEADLINE_STEP: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Completed,
    /// Gradient overflow at this (1-based) step; that update was discarded.
    Overflow { step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub policy_value: f64,
    pub grad_norm: f64,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EvalRecord>,
    pub termination: Termination,
    pub steps_applied: usize,
    pub seed: u64,
    pub config_hash: String,
    pub lr: f64,
}

impl TrainLog {
    pub fn final_value(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.policy_value)
    }

    /// Value at the last evaluation at or before `step`.
    pub fn value_at(&self, step: usize) -> Option<f64> {
        self.records.iter().rev().find(|r| r.step <= step).map(|r| r.policy_value)
    }

    /// Value at step 50k, or at the point training stopped before it.
    pub fn headline_value(&self) -> f64 {
        self.value_at(HEADLINE_STEP).unwrap_or(f64::NAN)
    }

    pub fn overflowed(&self) -> bool {
        matches!(self.termination, Termination::Overflow { .. })
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,policy_value,grad_norm,wallclock_s\n");
        for r in &self.records {
            s.push_str(&format!("{},{:?},{:?},{:.6}\n", r.step, r.policy_value, r.grad_norm, r.wallclock_s));
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let finite = |v: f64| if v.is_finite() { json!(v) } else { serde_json::Value::Null };
        json!({
            "termination": if self.overflowed() { "overflow" } else { "completed" },
            "overflow_at_step": match self.termination {
                Termination::Overflow { step } => json!(step),
                Termination::Completed => serde_json::Value::Null,
            },
            "final_value": finite(self.final_value()),
            "value_at_50k": finite(self.headline_value()),
            "steps_applied": self.steps_applied,
            "learning_rate": self.lr,
            "seed": self.seed,
            "config_hash": self.config_hash,
        })
    }

    /// Writes `learning_curve.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("learning_curve.csv"), self.curve_csv())?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary_json())? + "\n")?;
        Ok(())
    }
}

/// Expected weighted reward of the LSR's ranking of `candidates` for user `x`.
pub fn expected_ranking_value<T: Scalar>(
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    alpha: &[T],
    x: usize,
    candidates: &[usize],
) -> T {
    let q = world.q_row(x);
    let exact = lsr.mode != LsrMode::Noisy
        || (lsr.length <= EXACT_MAX_POSITION && candidates.len() <= EXACT_MAX_CANDIDATES);
    if exact {
        let marg = lsr.marginals_up_to(world, x, candidates, lsr.length);
        return marg
            .iter()
            .zip(alpha)
            .map(|(m, &al)| al * m.probs.iter().zip(candidates).map(|(&p, &a)| p * q[a]).sum::<T>())
            .sum();
    }
    // Deep noisy rankings: fixed-seed rollouts, so evaluation stays deterministic.
    let mut rng = rng::stream(x as u64, rng::ids::LSR_MARGINAL_MC);
    let z: Vec<T> = candidates.iter().map(|&a| q[a] / lsr.tau).collect();
    let mut total = T::zero();
    for _ in 0..EVAL_ROLLOUTS {
        let pert: Vec<T> = z.iter().map(|&v| v + cast::<T>(rng::gumbel(&mut rng))).collect();
        for (i, &al) in top_k_desc(&pert, lsr.length).into_iter().zip(alpha) {
            total = total + al * q[candidates[i]];
        }
    }
    total / cast::<T>(EVAL_ROLLOUTS as f64)
}

/// Mean over `users` of the two-stage value with the ESR acting greedily.
pub fn evaluate_greedy<T: Scalar>(
    policy: &MoePolicy<T>,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    alpha: &PositionWeights<T>,
    users: &[usize],
) -> Result<T> {
    if users.is_empty() {
        return Err(Error::InvalidArgument("no evaluation users".into()));
    }
    if alpha.len() != lsr.length {
        return Err(Error::InconsistentLength { expected: lsr.length, found: alpha.len() });
    }
    let mut total = T::zero();
    for &x in users {
        let draw = policy.greedy_candidates(x)?;
        if draw.len() < lsr.length {
            return Err(Error::InvalidArgument("ranking longer than the candidate set".into()));
        }
        total = total + expected_ranking_value(lsr, world, &alpha.alpha, x, &draw.set);
    }
    Ok(total / cast::<T>(users.len() as f64))
}

/// Users evaluated for a world of `n_users`: all of them, or a seeded subset.
pub fn evaluation_users(n_users: usize, seed: u64) -> Vec<usize> {
    if n_users <= EVAL_ALL_USERS_MAX {
        return (0..n_users).collect();
    }
    let mut rng = rng::stream(seed, rng::ids::EVAL_USERS);
    let mut users = index::sample(&mut rng, n_users, EVAL_SUBSET).into_vec();
    users.sort_unstable();
    users
}

pub fn build_world<T: Scalar>(cfg: &TrainConfig) -> Result<World<T>> {
    match &cfg.world_source {
        WorldSource::Synthetic => World::synthetic(&SyntheticParams {
            seed: cfg.world_seed(),
            n_users: cfg.n_users,
            n_items: cfg.n_items,
            d_x: cfg.d_x,
            d_a: cfg.d_a,
            d_h: cfg.d_h,
            c: cfg.reward_offset,
            sigma: cfg.sigma,
        }),
        WorldSource::Dense(path) => {
            let world = load_dense_matrix::<T>(path)?;
            Ok(world.with_noise(crate::env::Noise::Scalar(cast(cfg.sigma))))
        }
    }
}

/// Outcome of one attempted update.
#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    pub estimate: GradientEstimate<T>,
    pub applied: bool,
}

/// A live experiment: world, policies and the training stream.
pub struct Experiment<T> {
    pub cfg: TrainConfig,
    pub world: World<T>,
    pub policy: MoePolicy<T>,
    pub lsr: LsrPolicy<T>,
    pub alpha: PositionWeights<T>,
    pub eval_users: Vec<usize>,
    pub lr: T,
    rng: Stream,
}

impl<T: Scalar> Experiment<T> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let world = build_world::<T>(cfg)?;
        Self::with_world(cfg, world)
    }

    pub fn with_world(cfg: &TrainConfig, world: World<T>) -> Result<Self> {
        cfg.validate()?;
        if cfg.k > world.n_items() {
            return Err(Error::ConfigConstraint(format!(
                "esr.k ({}) must not exceed the number of items ({})",
                cfg.k,
                world.n_items()
            )));
        }
        let policy = MoePolicy::init(
            cfg.seed,
            world.n_users(),
            world.n_items(),
            cfg.embed_dim,
            cfg.n_experts,
            cfg.k,
            cfg.assignment,
            cfg.tau,
            cfg.init_std,
        )?;
        let lsr = LsrPolicy::new(cfg.lsr_mode, cast(cfg.lsr_tau), cfg.lsr_length)?;
        let alpha = PositionWeights::new(cfg.position_scheme, cfg.lsr_length);
        let base: T = cast(cfg.learning_rate());
        let lr = if cfg.adaptive_lr {
            let mut r = rng::stream(cfg.seed, rng::ids::ADAPTIVE_LR);
            adaptive_lr(base, &lsr, &world, &policy, cfg.adaptive_lr_contexts, &mut r)?
        } else {
            base
        };
        let eval_users = evaluation_users(world.n_users(), cfg.seed);
        Ok(Self { cfg: cfg.clone(), world, policy, lsr, alpha, eval_users, lr, rng: rng::stream(cfg.seed, rng::ids::TRAIN) })
    }

    /// One batch of interactions. With GRPO, `batch_size / m` contexts get
    /// `m` samples each, and rewards are standardized per position within
    /// each context's group.
    pub fn sample_batch(&mut self) -> Result<Vec<BatchSample<T>>> {
        let (_, samples) = draw_batch(&self.cfg, &self.policy, &self.lsr, &self.world, &mut self.rng)?;
        Ok(samples.into_iter().map(|(_, s)| s).collect())
    }

    /// Samples a batch and applies the update unless it overflowed.
    pub fn step(&mut self) -> Result<StepOutcome<T>> {
        let estimate = {
            let (views, samples) = draw_batch(&self.cfg, &self.policy, &self.lsr, &self.world, &mut self.rng)?;
            let inv_n = T::one() / cast::<T>(samples.len() as f64);
            let mut acc = GradientAccumulator::new(&self.policy);
            for (v, s) in &samples {
                acc.add(self.cfg.kind, &views[*v], s, &self.alpha.alpha, inv_n);
            }
            acc.finish(cast(self.cfg.overflow_threshold))
        };
        let applied = !estimate.overflow;
        if applied {
            self.policy.apply_update(&estimate.grads, self.lr);
        }
        Ok(StepOutcome { estimate, applied })
    }

    pub fn evaluate(&self) -> Result<T> {
        evaluate_greedy(&self.policy, &self.lsr, &self.world, &self.alpha, &self.eval_users)
    }

    /// Runs `cfg.total_steps` updates, stopping at the first overflow.
    pub fn run(&mut self) -> Result<TrainLog> {
        let start = Instant::now();
        let mut records = vec![EvalRecord {
            step: 0,
            policy_value: to_f64(self.evaluate()?),
            grad_norm: 0.0,
            wallclock_s: start.elapsed().as_secs_f64(),
        }];
        let mut termination = Termination::Completed;
        let mut applied = 0;
        for s in 1..=self.cfg.total_steps {
            let out = self.step()?;
            let grad_norm = to_f64(out.estimate.grad_norm);
            if !out.applied {
                termination = Termination::Overflow { step: s };
                if records.last().is_none_or(|r| r.step != applied) {
                    records.push(EvalRecord {
                        step: applied,
                        policy_value: to_f64(self.evaluate()?),
                        grad_norm,
                        wallclock_s: start.elapsed().as_secs_f64(),
                    });
                }
                break;
            }
            applied = s;
            if s % self.cfg.eval_every == 0 || s == self.cfg.total_steps {
                records.push(EvalRecord {
                    step: s,
                    policy_value: to_f64(self.evaluate()?),
                    grad_norm,
                    wallclock_s: start.elapsed().as_secs_f64(),
                });
            }
        }
        Ok(TrainLog {
            records,
            termination,
            steps_applied: applied,
            seed: self.cfg.seed,
            config_hash: self.cfg.hash(),
            lr: to_f64(self.lr),
        })
    }
}

type Drawn<'p, T> = (Vec<UserView<'p, T>>, Vec<(usize, BatchSample<T>)>);

/// Draws a batch, returning each sample with the index of its user's view.
fn draw_batch<'p, T: Scalar>(
    cfg: &TrainConfig,
    policy: &'p MoePolicy<T>,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    rng: &mut Stream,
) -> Result<Drawn<'p, T>> {
    let n_users = world.n_users();
    let interact = |view: &UserView<'p, T>, rng: &mut Stream| {
        let draw = view.sample(rng);
        let ranking = lsr.sample_ranking_unchecked(world, view.x, &draw.ordered, rng);
        let rewards = world.sample_rewards_unchecked(view.x, &ranking, rng);
        BatchSample { x: view.x, draw, ranking, rewards }
    };
    let mut views = Vec::new();
    let mut samples = Vec::with_capacity(cfg.batch_size);
    if !cfg.grpo_enabled {
        for i in 0..cfg.batch_size {
            views.push(policy.user_view(rng.random_range(0..n_users))?);
            samples.push((i, interact(&views[i], rng)));
        }
        return Ok((views, samples));
    }
    let m = cfg.grpo_group_size;
    let shift: T = cast(cfg.grpo_shift_c);
    for g in 0..cfg.batch_size / m {
        views.push(policy.user_view(rng.random_range(0..n_users))?);
        let mut group: Vec<BatchSample<T>> = (0..m).map(|_| interact(&views[g], rng)).collect();
        let per_position: Vec<Vec<T>> =
            (0..lsr.length).map(|l| group.iter().map(|s| s.rewards[l]).collect()).collect();
        for (l, col) in grpo_normalize(&per_position, shift)?.iter().enumerate() {
            for (s, &r) in group.iter_mut().zip(col) {
                s.rewards[l] = r;
            }
        }
        samples.extend(group.into_iter().map(|s| (g, s)));
    }
    Ok((views, samples))
}

pub fn run_typed<T: Scalar>(cfg: &TrainConfig) -> Result<TrainLog> {
    let mut exp = Experiment::<T>::new(cfg)?;
    let log = exp.run()?;
    if cfg.write_checkpoint {
        std::fs::create_dir_all(&cfg.output_dir)?;
        exp.policy.save_checkpoint(cfg.output_dir.join("policy.ckpt"))?;
    }
    Ok(log)
}

/// Runs an experiment at the configured precision. Outputs are not written.
pub fn run_experiment(cfg: &TrainConfig) -> Result<TrainLog> {
    match cfg.precision {
        Precision::F64 => run_typed::<f64>(cfg),
        Precision::F32 => run_typed::<f32>(cfg),
    }
}
