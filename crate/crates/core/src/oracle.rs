//! Brute-force ground truth for small instances.
//!
//! Every quantity here is computed by enumerating ordered candidate tuples
//! (and, where needed, LSR rankings) exactly. Guards are hard errors: an
//! oracle never silently truncates or falls back to sampling.

use crate::env::{PositionWeights, World};
use crate::error::{Error, Result};
use crate::lsr::LsrPolicy;
use crate::pg::EstimatorKind;
use crate::policy::{LogitScore, MoePolicy, Params, UserView};
use crate::scalar::{cast, Scalar};
use crate::table::{axpy, dot, Table};

/// Maximum `n^K` accepted by [`enumerate_ordered_candidates`].
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// Lexicographic iterator over ordered `k`-tuples of distinct items in `0..n`.
#[derive(Clone, Debug)]
pub struct OrderedTuples {
    n: usize,
    k: usize,
    cur: Vec<usize>,
    started: bool,
    done: bool,
}

impl OrderedTuples {
    pub(crate) fn unchecked(n: usize, k: usize) -> Self {
        Self { n, k, cur: Vec::new(), started: false, done: false }
    }
}

impl Iterator for OrderedTuples {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            if self.k > self.n {
                self.done = true;
                return None;
            }
            self.cur = (0..self.k).collect();
            return Some(self.cur.clone());
        }
        let (n, k) = (self.n, self.k);
        for i in (0..k).rev() {
            let mut v = self.cur[i] + 1;
            while v < n && self.cur[..i].contains(&v) {
                v += 1;
            }
            if v < n {
                self.cur[i] = v;
                for j in i + 1..k {
                    self.cur[j] = (0..n).find(|c| !self.cur[..j].contains(c)).expect("k <= n");
                }
                return Some(self.cur.clone());
            }
        }
        self.done = true;
        None
    }
}

pub fn enumerate_ordered_candidates(n_items: usize, k: usize) -> Result<OrderedTuples> {
    if k == 0 || k > n_items {
        return Err(Error::InvalidArgument(format!("candidate size {k} must be in 1..={n_items}")));
    }
    let count = (n_items as f64).powi(k as i32);
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLarge { count, limit: ENUMERATION_LIMIT });
    }
    Ok(OrderedTuples::unchecked(n_items, k))
}

/// One ordered candidate tuple with its probability, ordered score and the
/// LSR position marginals of its items (`marg[l][i]` for item `items[i]`).
struct TupleRecord<T> {
    items: Vec<usize>,
    prob: T,
    vpg: LogitScore<T>,
    marg: Vec<Vec<T>>,
}

/// Which per-sample score the expectation is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreRoute {
    Estimator(EstimatorKind),
    /// CA-PG with the exact (enumerated) marginal score.
    ExactMarginal,
}

/// Validated inputs shared by every oracle entry point.
struct Ctx<'a, T> {
    policy: &'a MoePolicy<T>,
    lsr: &'a LsrPolicy<T>,
    world: &'a World<T>,
    alpha: &'a [T],
    users: &'a [usize],
}

impl<'a, T: Scalar> Ctx<'a, T> {
    fn new(
        policy: &'a MoePolicy<T>,
        lsr: &'a LsrPolicy<T>,
        world: &'a World<T>,
        alpha: &'a PositionWeights<T>,
        users: &'a [usize],
    ) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::InvalidArgument("user subset is empty".into()));
        }
        if policy.n_items() != world.n_items() || policy.n_users() != world.n_users() {
            return Err(Error::InvalidArgument("policy and world sizes differ".into()));
        }
        if alpha.len() != lsr.length {
            return Err(Error::InconsistentLength { expected: lsr.length, found: alpha.len() });
        }
        if lsr.length > policy.k() {
            return Err(Error::InvalidArgument(format!("LSR length {} exceeds K={}", lsr.length, policy.k())));
        }
        for &x in users {
            world.check_user(x)?;
        }
        let count = (policy.n_items() as f64).powi(policy.k() as i32);
        if count > ENUMERATION_LIMIT {
            return Err(Error::TooLarge { count, limit: ENUMERATION_LIMIT });
        }
        Ok(Self { policy, lsr, world, alpha: &alpha.alpha, users })
    }

    fn inv_users(&self) -> T {
        T::one() / cast::<T>(self.users.len() as f64)
    }

    fn records(&self, view: &UserView<'_, T>) -> Result<Vec<TupleRecord<T>>> {
        let mut out = Vec::new();
        for items in OrderedTuples::unchecked(self.policy.n_items(), self.policy.k()) {
            let vpg = view.vpg(&items);
            let marg = self.lsr.all_position_marginals(self.world, view.x, &items)?;
            if marg.iter().any(|m| m.monte_carlo) {
                return Err(Error::InvalidArgument("LSR marginals are not exactly enumerable for this instance".into()));
            }
            out.push(TupleRecord { items, prob: vpg.value.exp(), vpg, marg: marg.into_iter().map(|m| m.probs).collect() });
        }
        Ok(out)
    }

    /// `sum_l alpha_l sum_i marg[l][i] q(x, items[i])`.
    fn tuple_reward(&self, x: usize, r: &TupleRecord<T>) -> T {
        let q = self.world.q_row(x);
        self.alpha
            .iter()
            .zip(&r.marg)
            .map(|(&al, m)| al * r.items.iter().zip(m).map(|(&a, &p)| p * q[a]).sum::<T>())
            .sum()
    }

    /// Set-level quantities for every item: `pi(S(a))` and the conditional
    /// LSR propensity `pi_l(a | x, S(a))` per position.
    fn marginal_stats(&self, records: &[TupleRecord<T>]) -> (Vec<T>, Vec<Vec<T>>) {
        let n = self.policy.n_items();
        let mut pi_s = vec![T::zero(); n];
        let mut pi_l = vec![vec![T::zero(); n]; self.alpha.len()];
        for r in records {
            for (i, &a) in r.items.iter().enumerate() {
                pi_s[a] = pi_s[a] + r.prob;
                for l in 0..self.alpha.len() {
                    pi_l[l][a] = pi_l[l][a] + r.prob * r.marg[l][i];
                }
            }
        }
        for row in &mut pi_l {
            for (a, v) in row.iter_mut().enumerate() {
                *v = if pi_s[a] > T::zero() { *v / pi_s[a] } else { T::zero() };
            }
        }
        (pi_s, pi_l)
    }
}

/// Exact value `V = E_x sum_l alpha_l E[q(x, a_l)]` under the joint policy.
pub fn exact_policy_value<T: Scalar>(
    policy: &MoePolicy<T>,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    alpha: &PositionWeights<T>,
    users: &[usize],
) -> Result<T> {
    let ctx = Ctx::new(policy, lsr, world, alpha, users)?;
    let mut total = T::zero();
    for &x in users {
        let view = policy.user_view(x)?;
        for r in ctx.records(&view)? {
            total = total + r.prob * ctx.tuple_reward(x, &r);
        }
    }
    Ok(total * ctx.inv_users())
}

/// Exact expectation of the per-sample estimator with `q` in place of `r`.
pub fn exact_expected_gradient<T: Scalar>(
    route: ScoreRoute,
    policy: &MoePolicy<T>,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    alpha: &PositionWeights<T>,
    users: &[usize],
) -> Result<Params<T>> {
    let ctx = Ctx::new(policy, lsr, world, alpha, users)?;
    let mut out = policy.params.zeros_like();
    for &x in users {
        let view = policy.user_view(x)?;
        let records = ctx.records(&view)?;
        let mut g = Table::zeros(view.s.rows(), view.s.cols());
        match route {
            ScoreRoute::Estimator(kind @ (EstimatorKind::Vpg | EstimatorKind::VpgSwr)) => {
                for r in &records {
                    let w = r.prob * ctx.tuple_reward(x, r);
                    let score = if kind == EstimatorKind::Vpg { &r.vpg.grad } else { &view.vpg_swr(&r.items).grad };
                    axpy(w, score.as_slice(), g.as_mut_slice());
                }
            }
            _ => {
                let coef = shown_reward_mass(&ctx, x, &records);
                for (a, &c) in coef.iter().enumerate() {
                    if c == T::zero() {
                        continue;
                    }
                    let s = match route {
                        ScoreRoute::Estimator(EstimatorKind::Capg) => view.capg(a),
                        ScoreRoute::Estimator(_) => view.capg_swr(a),
                        ScoreRoute::ExactMarginal => view.exact_capg(a)?,
                    };
                    axpy(c, s.grad.as_slice(), g.as_mut_slice());
                }
            }
        }
        policy.backprop(x, &g, ctx.inv_users(), &mut out);
    }
    Ok(out)
}

/// `sum_t P(t) sum_l alpha_l pi_l(a | t) q(x, a)` per item.
fn shown_reward_mass<T: Scalar>(ctx: &Ctx<'_, T>, x: usize, records: &[TupleRecord<T>]) -> Vec<T> {
    let q = ctx.world.q_row(x);
    let mut coef = vec![T::zero(); ctx.policy.n_items()];
    for r in records {
        for (i, &a) in r.items.iter().enumerate() {
            let shown: T = ctx.alpha.iter().zip(&r.marg).map(|(&al, m)| al * m[i]).sum();
            coef[a] = coef[a] + r.prob * shown * q[a];
        }
    }
    coef
}

/// The residual `V-PG - CA-PG` term written with the normalized importance
/// weight `pi_LSR(a | t) / pi_l(a | x, S(a))` and the conditional score
/// `grad log P(t | S(a))`.
pub fn residual_gradient<T: Scalar>(
    policy: &MoePolicy<T>,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    alpha: &PositionWeights<T>,
    users: &[usize],
) -> Result<Params<T>> {
    let ctx = Ctx::new(policy, lsr, world, alpha, users)?;
    let n = policy.n_items();
    let mut out = policy.params.zeros_like();
    for &x in users {
        let view = policy.user_view(x)?;
        let records = ctx.records(&view)?;
        let (pi_s, pi_cond) = ctx.marginal_stats(&records);
        let q = world.q_row(x);
        let set_scores: Vec<Table<T>> = (0..n).map(|a| view.exact_capg(a).map(|s| s.grad)).collect::<Result<_>>()?;
        let mut g = Table::zeros(view.s.rows(), n);
        let mut diff = Table::zeros(view.s.rows(), n);
        for (l, &al) in ctx.alpha.iter().enumerate() {
            for r in &records {
                for (i, &a) in r.items.iter().enumerate() {
                    let cond = pi_cond[l][a];
                    if cond == T::zero() || pi_s[a] == T::zero() {
                        continue;
                    }
                    let shown = pi_s[a] * cond;
                    let spade = r.marg[l][i] / cond;
                    let w = al * shown * q[a] * (r.prob / pi_s[a]) * spade;
                    if w == T::zero() {
                        continue;
                    }
                    diff.as_mut_slice().copy_from_slice(r.vpg.grad.as_slice());
                    axpy(-T::one(), set_scores[a].as_slice(), diff.as_mut_slice());
                    axpy(w, diff.as_slice(), g.as_mut_slice());
                }
            }
        }
        policy.backprop(x, &g, ctx.inv_users(), &mut out);
    }
    Ok(out)
}

/// CA-PG expectation in its expected-reward form:
/// `sum_l alpha_l sum_a grad pi(S(a)) * pi_l(a | x, S(a)) * q(x, a)`.
pub fn marginal_form_gradient<T: Scalar>(
    policy: &MoePolicy<T>,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    alpha: &PositionWeights<T>,
    users: &[usize],
) -> Result<Params<T>> {
    let ctx = Ctx::new(policy, lsr, world, alpha, users)?;
    let mut out = policy.params.zeros_like();
    for &x in users {
        let view = policy.user_view(x)?;
        let records = ctx.records(&view)?;
        let (pi_s, pi_cond) = ctx.marginal_stats(&records);
        let q = world.q_row(x);
        let mut g = Table::zeros(view.s.rows(), view.s.cols());
        for a in 0..policy.n_items() {
            let discounted: T = ctx.alpha.iter().zip(&pi_cond).map(|(&al, c)| al * c[a]).sum::<T>() * q[a];
            if discounted == T::zero() {
                continue;
            }
            let s = view.exact_capg(a)?;
            axpy(pi_s[a] * discounted, s.grad.as_slice(), g.as_mut_slice());
        }
        policy.backprop(x, &g, ctx.inv_users(), &mut out);
    }
    Ok(out)
}

/// Per-item pieces of the sufficient condition for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport<T> {
    pub holds: bool,
    /// 1-based true ranks `(k, j)` with `k <= K < j` where the condition fails.
    pub violating_pairs: Vec<(usize, usize)>,
    /// Items by true reward, best first.
    pub true_order: Vec<usize>,
    /// `sum_l alpha_l pi_l(a | x, S(a))` per item.
    pub propensity: Vec<T>,
}

/// Checks `g(a*_j) / g(a*_k) < q(a*_k) / q(a*_j)` for every top-K item `a*_k`
/// against every tail item `a*_j`.
pub fn check_theorem2_condition<T: Scalar>(
    policy: &MoePolicy<T>,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    alpha: &PositionWeights<T>,
    x: usize,
) -> Result<ConditionReport<T>> {
    let users = [x];
    let ctx = Ctx::new(policy, lsr, world, alpha, &users)?;
    let view = policy.user_view(x)?;
    let records = ctx.records(&view)?;
    let (_, pi_cond) = ctx.marginal_stats(&records);
    let n = policy.n_items();
    let propensity: Vec<T> =
        (0..n).map(|a| ctx.alpha.iter().zip(&pi_cond).map(|(&al, c)| al * c[a]).sum()).collect();
    let q = world.q_row(x);
    let true_order = crate::scalar::argsort_desc(q);
    let k = policy.k();
    let mut violating_pairs = Vec::new();
    for kk in 0..k {
        for j in k..n {
            let (top, tail) = (true_order[kk], true_order[j]);
            let lhs = propensity[tail] / propensity[top];
            let rhs = q[top] / q[tail];
            if !(lhs < rhs) {
                violating_pairs.push((kk + 1, j + 1));
            }
        }
    }
    Ok(ConditionReport { holds: violating_pairs.is_empty(), violating_pairs, true_order, propensity })
}

/// Exact first and second moments of a per-sample estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorMoments<T> {
    pub mean: Params<T>,
    /// `E||g||^2 - ||E g||^2` over users, candidates, rankings and reward noise.
    pub trace_cov: T,
}

/// Moments of the per-sample estimator `kind`, enumerating candidate tuples,
/// LSR rankings and integrating Gaussian reward noise analytically.
pub fn exact_estimator_moments<T: Scalar>(
    kind: EstimatorKind,
    policy: &MoePolicy<T>,
    lsr: &LsrPolicy<T>,
    world: &World<T>,
    alpha: &PositionWeights<T>,
    users: &[usize],
) -> Result<EstimatorMoments<T>> {
    let ctx = Ctx::new(policy, lsr, world, alpha, users)?;
    let inv_u = ctx.inv_users();
    let mut mean = policy.params.zeros_like();
    let mut second = T::zero();
    for &x in users {
        let view = policy.user_view(x)?;
        let q = world.q_row(x);
        for items in OrderedTuples::unchecked(policy.n_items(), policy.k()) {
            let ordered = view.vpg(&items);
            let p_t = ordered.value.exp();
            let set_grad = match kind {
                EstimatorKind::Vpg => Some(ordered.grad),
                EstimatorKind::VpgSwr => Some(view.vpg_swr(&items).grad),
                _ => None,
            };
            for (ranking, p_r) in lsr.ranking_distribution(world, x, &items)? {
                let w = p_t * p_r * inv_u;
                if w == T::zero() {
                    continue;
                }
                // Per-position score directions in parameter space.
                let dirs: Vec<Params<T>> = ranking
                    .iter()
                    .map(|&a| {
                        let g = match (&set_grad, kind) {
                            (Some(g), _) => g.clone(),
                            (None, EstimatorKind::Capg) => view.capg(a).grad,
                            (None, _) => view.capg_swr(a).grad,
                        };
                        let mut p = policy.params.zeros_like();
                        policy.backprop(x, &g, T::one(), &mut p);
                        p
                    })
                    .collect();
                let mut g_mean = policy.params.zeros_like();
                let mut noise = T::zero();
                for (l, (&a, d)) in ranking.iter().zip(&dirs).enumerate() {
                    g_mean.axpy(ctx.alpha[l] * q[a], d);
                    let sigma = world.noise.sigma(a);
                    let sq = d.iter().map(|&v| v * v).sum::<T>();
                    noise = noise + ctx.alpha[l] * ctx.alpha[l] * sigma * sigma * sq;
                }
                let sq_mean = g_mean.iter().map(|&v| v * v).sum::<T>();
                second = second + w * (sq_mean + noise);
                mean.axpy(w, &g_mean);
            }
        }
    }
    let mean_sq = mean.iter().map(|&v| v * v).sum::<T>();
    Ok(EstimatorMoments { trace_cov: second - mean_sq, mean })
}

/// Central differences of `f` at `params`, one entry at a time.
pub fn finite_difference_gradient<T: Scalar>(
    mut f: impl FnMut(&Params<T>) -> T,
    params: &Params<T>,
    eps: T,
) -> Params<T> {
    let mut work = params.clone();
    let mut out = params.zeros_like();
    let two = cast::<T>(2.0);
    for i in 0..params.len() {
        let orig = params.get_flat(i);
        work.set_flat(i, orig + eps);
        let hi = f(&work);
        work.set_flat(i, orig - eps);
        let lo = f(&work);
        work.set_flat(i, orig);
        out.set_flat(i, (hi - lo) / (two * eps));
    }
    out
}

/// Central differences of a function of a plain vector.
pub fn finite_difference_slice<T: Scalar>(mut f: impl FnMut(&[T]) -> T, x: &[T], eps: T) -> Vec<T> {
    let mut work = x.to_vec();
    let two = cast::<T>(2.0);
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            work[i] = orig + eps;
            let hi = f(&work);
            work[i] = orig - eps;
            let lo = f(&work);
            work[i] = orig;
            (hi - lo) / (two * eps)
        })
        .collect()
}

/// Worst-case agreement between an analytic and a numeric gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientComparison {
    /// Largest `|a - n| / |a|` over entries with `|a| >= small`.
    pub max_rel: f64,
    /// Largest `|a - n|` over entries with `|a| < small`.
    pub max_abs_small: f64,
}

impl GradientComparison {
    pub fn passes(&self, rel_tol: f64, small: f64) -> bool {
        self.max_rel < rel_tol && self.max_abs_small < small
    }
}

pub fn compare_gradients<T: Scalar>(analytic: &[T], numeric: &[T], small: f64) -> GradientComparison {
    let mut out = GradientComparison { max_rel: 0.0, max_abs_small: 0.0 };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let (a, n) = (crate::scalar::to_f64(a), crate::scalar::to_f64(n));
        let err = (a - n).abs();
        if !err.is_finite() {
            out.max_rel = f64::INFINITY;
        } else if a.abs() < small {
            out.max_abs_small = out.max_abs_small.max(err);
        } else {
            out.max_rel = out.max_rel.max(err / a.abs());
        }
    }
    out
}

/// Exact `log P(a in candidates)` for every item; used by identity checks.
pub fn exact_marginals<T: Scalar>(policy: &MoePolicy<T>, x: usize) -> Result<Vec<T>> {
    let view = policy.user_view(x)?;
    (0..policy.n_items()).map(|a| view.exact_capg(a).map(|s| s.value.exp())).collect()
}

/// Directional derivative helper: `<grad, direction>` in parameter space.
pub fn params_dot<T: Scalar>(a: &Params<T>, b: &Params<T>) -> T {
    a.experts
        .iter()
        .zip(&b.experts)
        .map(|(x, y)| dot(x.user_table.as_slice(), y.user_table.as_slice()) + dot(x.item_table.as_slice(), y.item_table.as_slice()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuple_counts() {
        assert_eq!(enumerate_ordered_candidates(3, 2).unwrap().count(), 6);
        assert_eq!(enumerate_ordered_candidates(4, 4).unwrap().count(), 24);
        assert_eq!(enumerate_ordered_candidates(6, 3).unwrap().count(), 120);
        assert!(enumerate_ordered_candidates(100, 4).is_err());
        assert!(enumerate_ordered_candidates(3, 4).is_err());
    }

    #[test]
    fn tuples_are_lexicographic_and_distinct() {
        let all: Vec<Vec<usize>> = enumerate_ordered_candidates(4, 2).unwrap().collect();
        assert_eq!(all[0], vec![0, 1]);
        assert_eq!(all[1], vec![0, 2]);
        assert_eq!(all[3], vec![1, 0]);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert!(all.iter().all(|t| t[0] != t[1]));
    }

    #[test]
    fn fd_quadratic_and_constant() {
        let g = finite_difference_slice(|w: &[f64]| w[0] * w[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let z = finite_difference_slice(|_: &[f64]| 4.2, &[1.0, -2.0], 1e-5);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn comparison_splits_small_entries() {
        let c = compare_gradients(&[1.0f64, 1e-10], &[1.00001, 2e-10], 1e-8);
        assert!((c.max_rel - 1e-5).abs() < 1e-9);
        assert!(c.max_abs_small < 1e-9);
        assert!(c.passes(1e-4, 1e-8));
    }
}
