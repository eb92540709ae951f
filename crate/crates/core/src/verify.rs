//! Invariant suite: finite-difference gradient checks, decomposition
//! identities, marginal identities and sampler frequencies on small
//! enumerable instances. Every check is also usable on its own.

use std::collections::HashMap;

use serde_json::json;

use crate::approx::{approx_error_table, ApproxRow, DEFAULT_ITEMS, DEFAULT_TRIALS};
use crate::config::TrainConfig;
use crate::env::{PositionWeights, SyntheticParams, WeightScheme, World};
use crate::error::Result;
use crate::lsr::{LsrMode, LsrPolicy};
use crate::oracle::{
    check_theorem2_condition, compare_gradients, exact_expected_gradient, exact_marginals, exact_policy_value,
    finite_difference_gradient, marginal_form_gradient, residual_gradient, ScoreRoute,
};
use crate::pg::{adaptive_lr, grpo_normalize, EstimatorKind};
use crate::policy::{AssignmentScheme, CandidateDraw, MoePolicy, Params, ScoreEval};
use crate::rng;

/// Deliberate defects used to confirm the suite catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs every analytic score gradient before comparison.
    CorruptGradient,
}

impl std::str::FromStr for Fault {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "corrupt_gradient" => Ok(Fault::CorruptGradient),
            _ => Err(format!("unknown fault `{s}` (expected corrupt_gradient)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn below(name: &'static str, metric: f64, threshold: f64, detail: String) -> Self {
        Self { name, passed: metric < threshold, metric, threshold, detail }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let num = |v: f64| if v.is_finite() { json!(v) } else { json!(v.to_string()) };
        json!({
            "name": self.name,
            "passed": self.passed,
            "metric": num(self.metric),
            "threshold": num(self.threshold),
            "detail": self.detail,
        })
    }
}

/// A small world with matching policy, ranker and position weights.
pub struct Instance {
    pub world: World<f64>,
    pub policy: MoePolicy<f64>,
    pub lsr: LsrPolicy<f64>,
    pub alpha: PositionWeights<f64>,
    pub users: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct InstanceParams {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub k: usize,
    pub n_experts: usize,
    pub length: usize,
    pub mode: LsrMode,
    pub tau: f64,
    pub init_std: f64,
    pub dim: usize,
}

impl InstanceParams {
    pub fn new(seed: u64, n_items: usize, k: usize, n_experts: usize) -> Self {
        Self {
            seed,
            n_users: 2,
            n_items,
            k,
            n_experts,
            length: 1,
            mode: LsrMode::Optimal,
            tau: 1.0,
            init_std: 0.7,
            dim: 3,
        }
    }

    pub fn build(&self) -> Result<Instance> {
        let world = World::synthetic(&SyntheticParams {
            seed: self.seed,
            n_users: self.n_users,
            n_items: self.n_items,
            d_x: 3,
            d_a: 3,
            d_h: 3,
            c: 1.0,
            sigma: 0.5,
        })?;
        let policy = MoePolicy::init(
            self.seed,
            self.n_users,
            self.n_items,
            self.dim,
            self.n_experts,
            self.k,
            AssignmentScheme::Contiguous,
            self.tau,
            self.init_std,
        )?;
        let lsr = LsrPolicy::new(self.mode, 1.0, self.length)?;
        let alpha = PositionWeights::new(WeightScheme::Uniform, self.length);
        Ok(Instance { world, policy, lsr, alpha, users: (0..self.n_users).collect() })
    }
}

fn rebuilt(policy: &MoePolicy<f64>, params: &Params<f64>) -> MoePolicy<f64> {
    MoePolicy { params: params.clone(), assignment: policy.assignment.clone(), tau: policy.tau }
}

fn corrupt(grad: &mut Params<f64>) {
    let n = grad.len();
    for i in 0..n {
        let v = grad.get_flat(i);
        grad.set_flat(i, v * 1.01 + 1e-3);
    }
}

/// Analytic score gradients of every estimator against central differences.
///
/// Instance `i` uses `|A| = 4 + i % 5`, `K = 2 + i % 2` and `M = 1 + (i / 2) % 2`.
pub fn gradient_fd_check(n_instances: usize, seed: u64, fault: Option<Fault>) -> Result<CheckResult> {
    const SMALL: f64 = 1e-6;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut small_ok = true;
    for i in 0..n_instances {
        let params = InstanceParams::new(seed + i as u64, 4 + i % 5, 2 + i % 2, 1 + (i / 2) % 2);
        let inst = params.build()?;
        let p = &inst.policy;
        let mut rng = rng::stream(seed + i as u64, rng::ids::TRAIN);
        let x = i % params.n_users;
        let draw = p.sample_candidates(x, &mut rng)?;
        let outside = (0..params.n_items).find(|a| !draw.contains(*a)).expect("K < |A|");
        let mut targets = draw.ordered.clone();
        targets.push(outside);

        type ScoreFn = Box<dyn Fn(&MoePolicy<f64>) -> Result<ScoreEval<f64>>>;
        let mut scores: Vec<(String, ScoreFn)> = Vec::new();
        let d1 = draw.clone();
        scores.push(("vpg".into(), Box::new(move |q: &MoePolicy<f64>| q.score_vpg(x, &d1))));
        let d2: CandidateDraw = draw.clone();
        scores.push(("vpg_swr".into(), Box::new(move |q: &MoePolicy<f64>| q.score_vpg_swr(x, &d2))));
        for &a in &targets {
            scores.push((format!("capg[{a}]"), Box::new(move |q: &MoePolicy<f64>| q.score_capg(x, a))));
            scores.push((format!("capg_swr[{a}]"), Box::new(move |q: &MoePolicy<f64>| q.score_capg_swr(x, a))));
            scores.push((format!("exact_capg[{a}]"), Box::new(move |q: &MoePolicy<f64>| q.exact_score_capg(x, a))));
        }
        for (name, f) in &scores {
            let mut analytic = f(p)?.grad;
            if fault == Some(Fault::CorruptGradient) {
                corrupt(&mut analytic);
            }
            let numeric = finite_difference_gradient(
                |params| f(&rebuilt(p, params)).map(|s| s.value).unwrap_or(f64::NAN),
                &p.params,
                1e-5,
            );
            let cmp = compare_gradients(&analytic.to_vec(), &numeric.to_vec(), SMALL);
            small_ok &= cmp.max_abs_small < SMALL;
            if cmp.max_rel > worst || cmp.max_rel.is_nan() {
                worst = if cmp.max_rel.is_nan() { f64::INFINITY } else { cmp.max_rel };
                worst_at = format!("instance {i} {name}");
            }
        }
    }
    let mut r = CheckResult::below("score_gradient_fd", worst, 1e-4, format!("worst at {worst_at}"));
    if !small_ok {
        r.passed = false;
        r.detail.push_str("; near-zero entries disagree");
    }
    Ok(r)
}

fn enumerable_instances(n_instances: usize, seed: u64) -> Vec<InstanceParams> {
    (0..n_instances)
        .map(|i| {
            let mut s = InstanceParams::new(seed + i as u64, 5, 2, 1);
            s.mode = if i % 2 == 0 { LsrMode::Optimal } else { LsrMode::Noisy };
            s
        })
        .collect()
}

/// `E[V-PG] - E[CA-PG] - residual`, max abs component over instances.
pub fn capg_exactness_check(n_instances: usize, seed: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for params in enumerable_instances(n_instances, seed) {
        let inst = params.build()?;
        let args = (&inst.policy, &inst.lsr, &inst.world, &inst.alpha, &inst.users[..]);
        let vpg = exact_expected_gradient(ScoreRoute::Estimator(EstimatorKind::Vpg), args.0, args.1, args.2, args.3, args.4)?;
        let capg = exact_expected_gradient(ScoreRoute::ExactMarginal, args.0, args.1, args.2, args.3, args.4)?;
        let res = residual_gradient(args.0, args.1, args.2, args.3, args.4)?;
        for i in 0..vpg.len() {
            worst = worst.max((vpg.get_flat(i) - capg.get_flat(i) - res.get_flat(i)).abs());
        }
    }
    Ok(CheckResult::below("vpg_decomposition", worst, 1e-9, format!("{n_instances} instances, |A|=5, K=2, L=1")))
}

/// Exact CA-PG expectation against its expected-reward form.
pub fn marginal_form_check(n_instances: usize, seed: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for params in enumerable_instances(n_instances, seed) {
        let inst = params.build()?;
        let capg = exact_expected_gradient(ScoreRoute::ExactMarginal, &inst.policy, &inst.lsr, &inst.world, &inst.alpha, &inst.users)?;
        let marginal = marginal_form_gradient(&inst.policy, &inst.lsr, &inst.world, &inst.alpha, &inst.users)?;
        worst = worst.max(capg.max_abs_diff(&marginal));
    }
    Ok(CheckResult::below("capg_expected_reward_form", worst, 1e-9, format!("{n_instances} instances")))
}

/// Exact `E[V-PG]` against central differences of the exact policy value.
pub fn vpg_unbiased_check(n_instances: usize, seed: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    let mut small_ok = true;
    for params in enumerable_instances(n_instances, seed) {
        let inst = params.build()?;
        let vpg = exact_expected_gradient(ScoreRoute::Estimator(EstimatorKind::Vpg), &inst.policy, &inst.lsr, &inst.world, &inst.alpha, &inst.users)?;
        let numeric = finite_difference_gradient(
            |params| {
                exact_policy_value(&rebuilt(&inst.policy, params), &inst.lsr, &inst.world, &inst.alpha, &inst.users).unwrap_or(f64::NAN)
            },
            &inst.policy.params,
            1e-5,
        );
        let cmp = compare_gradients(&vpg.to_vec(), &numeric.to_vec(), 1e-7);
        worst = worst.max(cmp.max_rel);
        small_ok &= cmp.max_abs_small < 1e-7;
    }
    let mut r = CheckResult::below("vpg_unbiased", worst, 1e-6, format!("{n_instances} instances"));
    if !small_ok {
        r.passed = false;
        r.detail.push_str("; near-zero entries disagree");
    }
    Ok(r)
}

/// Inclusion probabilities sum to K; the approximate CA-PG marginal is exact
/// under uniform logits.
pub fn marginal_identity_checks(seed: u64) -> Result<[CheckResult; 2]> {
    let mut sum_err = 0.0f64;
    let mut uniform_err = 0.0f64;
    for n in 4..=8 {
        for k in [2, 3] {
            for m in [1, 2] {
                let inst = InstanceParams::new(seed + (n * 10 + k) as u64, n, k, m).build()?;
                let total: f64 = exact_marginals(&inst.policy, 0)?.iter().sum();
                sum_err = sum_err.max((total - k as f64).abs());

                let flat = rebuilt(&inst.policy, &inst.policy.params.zeros_like());
                let exact = exact_marginals(&flat, 0)?;
                for (a, &e) in exact.iter().enumerate() {
                    let approx = flat.score_capg(0, a)?.value.exp();
                    uniform_err = uniform_err.max((approx - e).abs());
                }
            }
        }
    }
    Ok([
        CheckResult::below("marginals_sum_to_k", sum_err, 1e-10, "|A| in 4..=8, K in {2,3}, M in {1,2}".into()),
        CheckResult::below("capg_exact_under_uniform_logits", uniform_err, 1e-6, "|A| in 4..=8".into()),
    ])
}

/// Total-variation distance between Gumbel top-K frequencies and exact
/// Plackett-Luce tuple probabilities, worst over `M in {1, 2}`.
pub fn sampler_fidelity_check(draws: usize, seed: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for m in [1, 2] {
        let inst = InstanceParams::new(seed + m as u64, 5, 2, m).build()?;
        let view = inst.policy.user_view(0)?;
        let mut rng = rng::stream(seed, rng::ids::TRAIN);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(view.sample(&mut rng).ordered).or_default() += 1;
        }
        let mut tv = 0.0;
        for t in crate::oracle::enumerate_ordered_candidates(5, 2)? {
            let p = view.vpg(&t).value.exp();
            let f = counts.get(&t).copied().unwrap_or(0) as f64 / draws as f64;
            tv += (p - f).abs();
        }
        worst = worst.max(tv / 2.0);
    }
    Ok(CheckResult::below("gumbel_top_k_frequencies", worst, 0.02, format!("{draws} draws, |A|=5, K=2")))
}

/// Anti-optimal LSR violates the sufficient condition; uniform LSR satisfies it.
pub fn ranker_condition_checks(seed: u64) -> Result<[CheckResult; 2]> {
    let mut params = InstanceParams::new(seed, 8, 3, 1);
    params.n_users = 3;
    let mut anti_violations = 0usize;
    let mut uniform_violations = 0usize;
    for (mode, slot) in [(LsrMode::Anti, &mut anti_violations), (LsrMode::Uniform, &mut uniform_violations)] {
        params.mode = mode;
        let inst = params.build()?;
        for x in 0..params.n_users {
            *slot += check_theorem2_condition(&inst.policy, &inst.lsr, &inst.world, &inst.alpha, x)?.violating_pairs.len();
        }
    }
    Ok([
        CheckResult {
            name: "sufficient_condition_fails_for_anti_ranker",
            passed: anti_violations > 0,
            metric: anti_violations as f64,
            threshold: 1.0,
            detail: "violating pairs, expected at least one".into(),
        },
        CheckResult::below(
            "sufficient_condition_holds_for_uniform_ranker",
            uniform_violations as f64,
            1.0,
            "violating pairs, expected none".into(),
        ),
    ])
}

pub fn grpo_check() -> Result<CheckResult> {
    let mut rng = rng::stream(7, rng::ids::TRAIN);
    let mut worst = 0.0f64;
    for n in 2..10 {
        let g: Vec<f64> = (0..n).map(|_| 3.0 * rng::standard_normal(&mut rng) + 1.0).collect();
        let out = grpo_normalize(&[g], 1.0)?.pop().expect("one group");
        let mean = out.iter().sum::<f64>() / n as f64;
        let std = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        worst = worst.max((mean - 1.0).abs()).max((std - 1.0).abs());
    }
    Ok(CheckResult::below("grpo_moments", worst, 1e-10, "mean c, population std 1".into()))
}

pub fn adaptive_lr_check() -> Result<CheckResult> {
    let inst = {
        let mut s = InstanceParams::new(3, 30, 10, 1);
        s.mode = LsrMode::Uniform;
        s.build()?
    };
    let mut rng = rng::stream(0, rng::ids::ADAPTIVE_LR);
    let uniform = adaptive_lr(0.01, &inst.lsr, &inst.world, &inst.policy, 10, &mut rng)?;
    let optimal = LsrPolicy::new(LsrMode::Optimal, 1.0, 1)?;
    let opt = adaptive_lr(0.01, &optimal, &inst.world, &inst.policy, 10, &mut rng)?;
    let err = (uniform - 0.1).abs().max((opt - 0.01).abs());
    Ok(CheckResult {
        name: "adaptive_lr_scaling",
        passed: uniform == 10.0 * 0.01 && opt == 0.01,
        metric: err,
        threshold: 0.0,
        detail: format!("uniform {uniform:e}, optimal {opt:e}"),
    })
}

pub fn config_round_trip_check() -> Result<CheckResult> {
    let mut cfg = TrainConfig::default();
    cfg.seed = 17;
    cfg.kind = EstimatorKind::CapgSwr;
    cfg.lr = Some(0.025);
    cfg.grpo_enabled = true;
    let back = TrainConfig::parse(&cfg.serialize())?;
    let ok = back == cfg;
    Ok(CheckResult { name: "config_round_trip", passed: ok, metric: f64::from(u8::from(!ok)), threshold: 1.0, detail: String::new() })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    /// Adds the approximation-error table reproduction.
    pub full_scale: bool,
    pub fault: Option<Fault>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub approx_table: Option<Vec<ApproxRow>>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "all_passed": self.all_passed(),
            "failing": self.failing(),
            "checks": self.checks.iter().map(CheckResult::to_json).collect::<Vec<_>>(),
            "approx_table": self.approx_table.as_ref().map(|rows| rows.iter().map(|r| json!({
                "tau": r.tau, "k": r.k, "rel_abs_err": r.rel_abs_err, "mean_logit_gap": r.mean_logit_gap,
            })).collect::<Vec<_>>()),
        })
    }
}

/// Approximation-error reproduction: the `(tau=1, K=10)` cell within
/// `[5e-4, 1e-2]` and `(tau=1/5, K=10)` at most `1e-5`.
pub fn approx_table_checks(rows: &[ApproxRow]) -> Vec<CheckResult> {
    let find = |tau: f64, k: usize| rows.iter().find(|r| r.tau == tau && r.k == k).map_or(f64::NAN, |r| r.rel_abs_err);
    let warm = find(1.0, 10);
    let cold = find(0.2, 10);
    vec![
        CheckResult {
            name: "approx_error_tau1_k10",
            passed: (5e-4..=1e-2).contains(&warm),
            metric: warm,
            threshold: 1e-2,
            detail: "accepted range [5e-4, 1e-2]".into(),
        },
        CheckResult {
            name: "approx_error_tau0.2_k10",
            passed: cold <= 1e-5,
            metric: cold,
            threshold: 1e-5,
            detail: "must not exceed 1e-5".into(),
        },
    ]
}

pub fn run_suite(opts: VerifyOptions) -> Result<VerifyReport> {
    let s = opts.seed;
    let mut checks = vec![
        gradient_fd_check(20, s, opts.fault)?,
        capg_exactness_check(10, s)?,
        marginal_form_check(4, s)?,
        vpg_unbiased_check(10, s)?,
    ];
    checks.extend(marginal_identity_checks(s)?);
    checks.push(sampler_fidelity_check(1_000_000, s)?);
    checks.extend(ranker_condition_checks(s)?);
    checks.push(grpo_check()?);
    checks.push(adaptive_lr_check()?);
    checks.push(config_round_trip_check()?);
    let approx_table = if opts.full_scale {
        let rows = approx_error_table(DEFAULT_ITEMS, &[1.0, 0.5, 0.2], &[10, 20, 50, 100], DEFAULT_TRIALS, s);
        checks.extend(approx_table_checks(&rows));
        Some(rows)
    } else {
        None
    };
    Ok(VerifyReport { checks, approx_table })
}
