//! Mixture-of-experts Plackett-Luce ESR over two-tower embeddings.
//!
//! Each score function is computed from the scaled logits `s_m(a) =
//! <u_m[x], v_m[a]> / tau` of one user. It yields its value together with the
//! derivative with respect to every `s_m(a)`; [`MoePolicy::backprop`] maps that
//! logit gradient onto the embedding tables.

use std::cell::OnceCell;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::oracle::OrderedTuples;
use crate::rng;
use crate::scalar::{argsort_desc, cast, log1mexp, log_add_exp, logsumexp, to_f64, Scalar};
use crate::table::{axpy, dot, Table};

/// Upper clamp on a log-probability fed into `log(1 - p)`.
pub const MAX_LOG_PROB: f64 = -1e-12;

/// Guard on the number of ordered tuples summed by [`MoePolicy::exact_score_capg`].
pub const EXACT_TUPLE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct TwoTowerExpert<T> {
    pub user_table: Table<T>,
    pub item_table: Table<T>,
}

/// Embedding tables of every expert. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub experts: Vec<TwoTowerExpert<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(n_experts: usize, n_users: usize, n_items: usize, dim: usize) -> Self {
        let experts = (0..n_experts)
            .map(|_| TwoTowerExpert { user_table: Table::zeros(n_users, dim), item_table: Table::zeros(n_items, dim) })
            .collect();
        Self { experts }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_experts(), self.n_users(), self.n_items(), self.dim())
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn n_users(&self) -> usize {
        self.experts[0].user_table.rows()
    }

    pub fn n_items(&self) -> usize {
        self.experts[0].item_table.rows()
    }

    pub fn dim(&self) -> usize {
        self.experts[0].user_table.cols()
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.experts.iter().map(|e| e.user_table.as_slice().len() + e.item_table.as_slice().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.experts.iter().flat_map(|e| e.user_table.as_slice().iter().chain(e.item_table.as_slice()))
    }

    fn slot(&mut self, mut i: usize) -> &mut T {
        for e in &mut self.experts {
            let nu = e.user_table.as_slice().len();
            if i < nu {
                return &mut e.user_table.as_mut_slice()[i];
            }
            i -= nu;
            let ni = e.item_table.as_slice().len();
            if i < ni {
                return &mut e.item_table.as_mut_slice()[i];
            }
            i -= ni;
        }
        panic!("parameter index out of range");
    }

    pub fn get_flat(&self, i: usize) -> T {
        *self.iter().nth(i).expect("parameter index out of range")
    }

    pub fn set_flat(&mut self, i: usize, v: T) {
        *self.slot(i) = v;
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.iter().copied().collect()
    }

    pub fn norm(&self) -> T {
        self.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (e, o) in self.experts.iter_mut().zip(&other.experts) {
            axpy(alpha, o.user_table.as_slice(), e.user_table.as_mut_slice());
            axpy(alpha, o.item_table.as_slice(), e.item_table.as_mut_slice());
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for e in &mut self.experts {
            for v in e.user_table.as_mut_slice().iter_mut().chain(e.item_table.as_mut_slice()) {
                *v = *v * alpha;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.iter().zip(other.iter()).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.experts.len() == other.experts.len()
            && self.experts.iter().zip(&other.experts).all(|(a, b)| {
                a.user_table.rows() == b.user_table.rows()
                    && a.user_table.cols() == b.user_table.cols()
                    && a.item_table.rows() == b.item_table.rows()
                    && a.item_table.cols() == b.item_table.cols()
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignmentScheme {
    /// Position `k` (0-based) uses expert `floor(k * M / K)`.
    Contiguous,
    /// Position `k` uses expert `k mod M`.
    RoundRobin,
}

pub fn expert_assignment(scheme: AssignmentScheme, k: usize, n_experts: usize) -> Vec<usize> {
    (0..k)
        .map(|pos| match scheme {
            AssignmentScheme::Contiguous => pos * n_experts / k,
            AssignmentScheme::RoundRobin => pos % n_experts,
        })
        .collect()
}

/// A candidate set in sampling order, plus its sorted set view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateDraw {
    pub ordered: Vec<usize>,
    pub set: Vec<usize>,
}

impl CandidateDraw {
    pub fn new(ordered: Vec<usize>) -> Self {
        let mut set = ordered.clone();
        set.sort_unstable();
        Self { ordered, set }
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    pub fn contains(&self, a: usize) -> bool {
        self.set.binary_search(&a).is_ok()
    }
}

/// Score value with its gradient over every embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEval<T> {
    pub value: T,
    pub grad: Params<T>,
    pub overflow: bool,
}

/// Score value with its gradient over the scaled logits `s_m(a)` (`M x |A|`).
#[derive(Clone, Debug, PartialEq)]
pub struct LogitScore<T> {
    pub value: T,
    pub grad: Table<T>,
    pub overflow: bool,
    /// Set when a CA-PG-SwR value exceeds zero (summed probabilities above one).
    pub above_unit: bool,
}

impl<T: Scalar> LogitScore<T> {
    fn finish(value: T, grad: Table<T>) -> Self {
        let overflow = !value.is_finite() && value != T::neg_infinity() || grad.as_slice().iter().any(|g| !g.is_finite());
        Self { value, grad, overflow, above_unit: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoePolicy<T> {
    pub params: Params<T>,
    pub assignment: Vec<usize>,
    pub tau: T,
}

impl<T: Scalar> MoePolicy<T> {
    pub fn new(params: Params<T>, assignment: Vec<usize>, tau: T) -> Result<Self> {
        if params.experts.is_empty() {
            return Err(Error::InvalidArgument("policy needs at least one expert".into()));
        }
        let (users, items, dim) = (params.n_users(), params.n_items(), params.dim());
        for e in &params.experts {
            if e.user_table.rows() != users || e.item_table.rows() != items || e.user_table.cols() != dim || e.item_table.cols() != dim {
                return Err(Error::InvalidArgument("expert tables have inconsistent shapes".into()));
            }
        }
        let k = assignment.len();
        if k == 0 || k > items {
            return Err(Error::InvalidArgument(format!("candidate size {k} must be in 1..={items}")));
        }
        if let Some(&m) = assignment.iter().find(|&&m| m >= params.n_experts()) {
            return Err(Error::IdOutOfRange { what: "expert", id: m, size: params.n_experts() });
        }
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::InvalidArgument("temperature must be positive and finite".into()));
        }
        Ok(Self { params, assignment, tau })
    }

    /// Random policy with entries i.i.d. `Normal(0, init_std^2)`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        seed: u64,
        n_users: usize,
        n_items: usize,
        dim: usize,
        n_experts: usize,
        k: usize,
        scheme: AssignmentScheme,
        tau: f64,
        init_std: f64,
    ) -> Result<Self> {
        if n_experts == 0 || n_users == 0 || n_items == 0 || dim == 0 {
            return Err(Error::InvalidArgument("policy dimensions must be at least 1".into()));
        }
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = rng::stream(seed, rng::ids::POLICY_INIT);
        let mut params = Params::zeros(n_experts, n_users, n_items, dim);
        for e in &mut params.experts {
            for v in e.user_table.as_mut_slice().iter_mut().chain(e.item_table.as_mut_slice()) {
                *v = cast(normal.sample(&mut rng));
            }
        }
        Self::new(params, expert_assignment(scheme, k, n_experts), cast(tau))
    }

    pub fn k(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_experts(&self) -> usize {
        self.params.n_experts()
    }

    pub fn n_users(&self) -> usize {
        self.params.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.params.n_items()
    }

    fn check_user(&self, x: usize) -> Result<()> {
        if x >= self.n_users() {
            return Err(Error::IdOutOfRange { what: "user", id: x, size: self.n_users() });
        }
        Ok(())
    }

    fn check_item(&self, a: usize) -> Result<()> {
        if a >= self.n_items() {
            return Err(Error::IdOutOfRange { what: "item", id: a, size: self.n_items() });
        }
        Ok(())
    }

    fn check_draw(&self, draw: &CandidateDraw) -> Result<()> {
        if draw.ordered.len() != self.k() {
            return Err(Error::InconsistentLength { expected: self.k(), found: draw.ordered.len() });
        }
        let mut seen = HashSet::with_capacity(draw.ordered.len());
        for &a in &draw.ordered {
            self.check_item(a)?;
            if !seen.insert(a) {
                return Err(Error::DuplicateItem(a));
            }
        }
        Ok(())
    }

    /// Raw inner products `<u_m[x], v_m[a]>` for every item; no temperature.
    pub fn logits(&self, m: usize, x: usize) -> Result<Vec<T>> {
        if m >= self.n_experts() {
            return Err(Error::IdOutOfRange { what: "expert", id: m, size: self.n_experts() });
        }
        self.check_user(x)?;
        let e = &self.params.experts[m];
        Ok(e.item_table.mat_vec(e.user_table.row(x)))
    }

    /// Scaled logits and per-expert normalizers for user `x`.
    pub fn user_view(&self, x: usize) -> Result<UserView<'_, T>> {
        self.check_user(x)?;
        Ok(UserView::new(self, x))
    }

    pub fn sample_candidates<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Result<CandidateDraw> {
        Ok(self.user_view(x)?.sample(rng))
    }

    /// Sequential argmax over remaining items of each position's raw logits.
    pub fn greedy_candidates(&self, x: usize) -> Result<CandidateDraw> {
        self.check_user(x)?;
        let raw: Vec<Vec<T>> = (0..self.n_experts()).map(|m| self.logits(m, x)).collect::<Result<_>>()?;
        let orders: Vec<Vec<usize>> = raw.iter().map(|r| argsort_desc(r)).collect();
        Ok(CandidateDraw::new(sequential_argmax(&orders, &self.assignment, None, self.k())))
    }

    pub fn score_vpg(&self, x: usize, draw: &CandidateDraw) -> Result<ScoreEval<T>> {
        self.check_draw(draw)?;
        let s = self.user_view(x)?.vpg(&draw.ordered);
        Ok(self.to_eval(x, s))
    }

    pub fn score_vpg_swr(&self, x: usize, draw: &CandidateDraw) -> Result<ScoreEval<T>> {
        self.check_draw(draw)?;
        let s = self.user_view(x)?.vpg_swr(&draw.ordered);
        Ok(self.to_eval(x, s))
    }

    pub fn score_capg(&self, x: usize, a: usize) -> Result<ScoreEval<T>> {
        self.check_item(a)?;
        let s = self.user_view(x)?.capg(a);
        Ok(self.to_eval(x, s))
    }

    pub fn score_capg_swr(&self, x: usize, a: usize) -> Result<ScoreEval<T>> {
        self.check_item(a)?;
        let s = self.user_view(x)?.capg_swr(a);
        Ok(self.to_eval(x, s))
    }

    /// Exact log-marginal `log P(a in candidate set)` by summing ordered tuples.
    pub fn exact_score_capg(&self, x: usize, a: usize) -> Result<ScoreEval<T>> {
        self.check_item(a)?;
        let s = self.user_view(x)?.exact_capg(a)?;
        Ok(self.to_eval(x, s))
    }

    fn to_eval(&self, x: usize, s: LogitScore<T>) -> ScoreEval<T> {
        let mut grad = self.params.zeros_like();
        self.backprop(x, &s.grad, T::one(), &mut grad);
        let overflow = s.overflow || !grad.is_finite();
        ScoreEval { value: s.value, grad, overflow }
    }

    /// `out += weight * d(score)/d(params)` given the score's logit gradient.
    pub fn backprop(&self, x: usize, logit_grad: &Table<T>, weight: T, out: &mut Params<T>) {
        let scale = weight / self.tau;
        for (m, (e, g)) in self.params.experts.iter().zip(out.experts.iter_mut()).enumerate() {
            let u = e.user_table.row(x);
            let mut gu = vec![T::zero(); u.len()];
            for (b, &gb) in logit_grad.row(m).iter().enumerate() {
                if gb == T::zero() {
                    continue;
                }
                let c = gb * scale;
                axpy(c, u, g.item_table.row_mut(b));
                axpy(c, e.item_table.row(b), &mut gu);
            }
            axpy(T::one(), &gu, g.user_table.row_mut(x));
        }
    }

    /// `params += lr * grad`.
    pub fn apply_update(&mut self, grad: &Params<T>, lr: T) {
        self.params.axpy(lr, grad);
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }

    /// Portable text checkpoint; numbers are written with 17 significant digits.
    pub fn to_checkpoint_string(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "tspg-checkpoint 1");
        let _ = writeln!(out, "experts {} users {} items {} dim {}", p.n_experts(), p.n_users(), p.n_items(), p.dim());
        let _ = writeln!(out, "k {} tau {:.16e}", self.k(), to_f64(self.tau));
        let assignment: Vec<String> = self.assignment.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(out, "assignment {}", assignment.join(" "));
        for (m, e) in p.experts.iter().enumerate() {
            for (name, table) in [("user", &e.user_table), ("item", &e.item_table)] {
                let _ = writeln!(out, "table {m} {name} {} {}", table.rows(), table.cols());
                for r in 0..table.rows() {
                    let row: Vec<String> = table.row(r).iter().map(|&v| format!("{:.16e}", to_f64(v))).collect();
                    let _ = writeln!(out, "{}", row.join(" "));
                }
            }
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        let mut next = || lines.next().ok_or_else(|| bad("unexpected end of file"));
        if next()?.trim() != "tspg-checkpoint 1" {
            return Err(bad("missing header"));
        }
        let nums = |line: &str, keys: &[&str]| -> Result<Vec<String>> {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != keys.len() * 2 || keys.iter().enumerate().any(|(i, k)| toks[2 * i] != *k) {
                return Err(Error::Checkpoint(format!("expected keys {keys:?} in `{line}`")));
            }
            Ok(toks.iter().skip(1).step_by(2).map(|s| s.to_string()).collect())
        };
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad integer `{s}`")));
        let parse_real = |s: &str| {
            s.parse::<f64>().map(cast::<T>).map_err(|_| Error::Checkpoint(format!("bad number `{s}`")))
        };
        let shape = nums(next()?, &["experts", "users", "items", "dim"])?;
        let (n_exp, n_users, n_items, dim) =
            (parse_usize(&shape[0])?, parse_usize(&shape[1])?, parse_usize(&shape[2])?, parse_usize(&shape[3])?);
        let kt = nums(next()?, &["k", "tau"])?;
        let k = parse_usize(&kt[0])?;
        let tau = parse_real(&kt[1])?;
        let line = next()?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some("assignment") {
            return Err(bad("missing assignment"));
        }
        let assignment: Vec<usize> = toks.map(parse_usize).collect::<Result<_>>()?;
        if assignment.len() != k {
            return Err(bad("assignment length differs from k"));
        }
        let mut params = Params::zeros(n_exp, n_users, n_items, dim);
        for m in 0..n_exp {
            for name in ["user", "item"] {
                let header = next()?;
                let expect_rows = if name == "user" { n_users } else { n_items };
                if header.split_whitespace().collect::<Vec<_>>()
                    != ["table", &m.to_string(), name, &expect_rows.to_string(), &dim.to_string()]
                {
                    return Err(Error::Checkpoint(format!("unexpected table header `{header}`")));
                }
                let table = if name == "user" { &mut params.experts[m].user_table } else { &mut params.experts[m].item_table };
                for r in 0..expect_rows {
                    let row: Vec<T> = next()?.split_whitespace().map(parse_real).collect::<Result<_>>()?;
                    if row.len() != dim {
                        return Err(bad("row length differs from dim"));
                    }
                    table.row_mut(r).copy_from_slice(&row);
                }
            }
        }
        Self::new(params, assignment, tau)
    }
}

/// Positions `0..count` each take the best remaining item of their expert's
/// descending order, skipping `exclude`.
fn sequential_argmax(orders: &[Vec<usize>], assignment: &[usize], exclude: Option<usize>, count: usize) -> Vec<usize> {
    let n = orders[0].len();
    let mut taken = vec![false; n];
    if let Some(a) = exclude {
        taken[a] = true;
    }
    let mut ptr = vec![0usize; orders.len()];
    let mut out = Vec::with_capacity(count);
    for &m in assignment.iter().take(count) {
        while taken[orders[m][ptr[m]]] {
            ptr[m] += 1;
        }
        let b = orders[m][ptr[m]];
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Indices of the `k` largest values, descending, ties by lowest index.
pub(crate) fn top_k_desc<T: Scalar>(values: &[T], k: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| {
        values[*b].partial_cmp(&values[*a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Adds `-sum_k w_k exp(s_{m_k}(b) - d_k)` to `out[m_k][b]` for every item `b`
/// still available at position `k`, where position `k` excludes
/// `removed[..k]`. This is the softmax part of the gradient of
/// `sum_k w_k * (s_{m_k}(target_k) - d_k)`.
fn removal_softmax_backward<T: Scalar>(
    s: &Table<T>,
    experts: &[usize],
    w: &[T],
    d: &[T],
    removed: &[usize],
    out: &mut Table<T>,
) {
    let n_exp = s.rows();
    let term = |k: usize| if w[k] > T::zero() { w[k].ln() - d[k] } else { T::neg_infinity() };
    let mut total = vec![T::neg_infinity(); n_exp];
    for k in 0..experts.len() {
        total[experts[k]] = log_add_exp(total[experts[k]], term(k));
    }
    let mut is_removed = vec![false; s.cols()];
    for &p in removed {
        is_removed[p] = true;
    }
    for m in 0..n_exp {
        if total[m] == T::neg_infinity() {
            continue;
        }
        let t = total[m];
        let (srow, orow) = (s.row(m), out.row_mut(m));
        for b in 0..srow.len() {
            if !is_removed[b] {
                orow[b] = orow[b] - (srow[b] + t).exp();
            }
        }
    }
    let mut prefix = vec![T::neg_infinity(); n_exp];
    for (j, &p) in removed.iter().enumerate() {
        if j < experts.len() {
            prefix[experts[j]] = log_add_exp(prefix[experts[j]], term(j));
        }
        for m in 0..n_exp {
            if prefix[m] > T::neg_infinity() {
                let v = out.get(m, p) - (s.get(m, p) + prefix[m]).exp();
                out.set(m, p, v);
            }
        }
    }
}

/// Per-user cache: scaled logits, log normalizers, and lazily sorted orders.
pub struct UserView<'a, T> {
    policy: &'a MoePolicy<T>,
    pub x: usize,
    /// `s_m(a)` as an `M x |A|` table.
    pub s: Table<T>,
    /// `log sum_a exp s_m(a)` per expert.
    pub lse: Vec<T>,
    orders: OnceCell<Vec<Vec<usize>>>,
}

impl<'a, T: Scalar> UserView<'a, T> {
    fn new(policy: &'a MoePolicy<T>, x: usize) -> Self {
        let p = &policy.params;
        let inv_tau = T::one() / policy.tau;
        let s = Table::from_fn(p.n_experts(), p.n_items(), |m, a| {
            let e = &p.experts[m];
            dot(e.user_table.row(x), e.item_table.row(a)) * inv_tau
        });
        let lse = (0..s.rows()).map(|m| logsumexp(s.row(m))).collect();
        Self { policy, x, s, lse, orders: OnceCell::new() }
    }

    pub fn policy(&self) -> &'a MoePolicy<T> {
        self.policy
    }

    fn assignment(&self) -> &[usize] {
        &self.policy.assignment
    }

    fn orders(&self) -> &Vec<Vec<usize>> {
        self.orders.get_or_init(|| (0..self.s.rows()).map(|m| argsort_desc(self.s.row(m))).collect())
    }

    fn single_expert(&self) -> bool {
        let first = self.assignment()[0];
        self.assignment().iter().all(|&m| m == first)
    }

    /// Gumbel top-K draw. With one active expert this is the arg-top-K of the
    /// perturbed logits. Otherwise positions are filled in runs of equal
    /// expert, each run taking the top of its expert's logits over remaining
    /// items under a fresh noise vector; sharing one vector across experts
    /// would not reproduce the sequential softmax.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CandidateDraw {
        let n = self.s.cols();
        let k = self.assignment().len();
        if self.single_expert() {
            let m = self.assignment()[0];
            let z: Vec<T> = self.s.row(m).iter().map(|&s| s + cast::<T>(rng::gumbel(rng))).collect();
            return CandidateDraw::new(top_k_desc(&z, k));
        }
        let mut taken = vec![false; n];
        let mut out = Vec::with_capacity(k);
        let asg = self.assignment();
        let mut start = 0;
        while start < k {
            let m = asg[start];
            let len = asg[start..].iter().take_while(|&&e| e == m).count();
            let row = self.s.row(m);
            let remaining: Vec<usize> = (0..n).filter(|&b| !taken[b]).collect();
            let z: Vec<T> = remaining.iter().map(|&b| row[b] + cast::<T>(rng::gumbel(rng))).collect();
            for i in top_k_desc(&z, len) {
                taken[remaining[i]] = true;
                out.push(remaining[i]);
            }
            start += len;
        }
        CandidateDraw::new(out)
    }

    /// Ordered Plackett-Luce log-probability of `ordered` with its logit gradient.
    pub fn vpg(&self, ordered: &[usize]) -> LogitScore<T> {
        let (n_exp, n) = (self.s.rows(), self.s.cols());
        let asg = self.assignment();
        let k = ordered.len();
        let mut drawn = vec![false; n];
        for &a in ordered {
            drawn[a] = true;
        }
        // Log-mass of never-drawn items per expert, then suffix sums over the draw.
        let mut d = vec![T::zero(); k];
        for m in 0..n_exp {
            if !asg[..k].contains(&m) {
                continue;
            }
            let row = self.s.row(m);
            let mut acc = logsumexp_filtered(row, |b| !drawn[b]);
            for j in (0..k).rev() {
                acc = log_add_exp(acc, row[ordered[j]]);
                if asg[j] == m {
                    d[j] = acc;
                }
            }
        }
        let mut grad = Table::zeros(n_exp, n);
        let mut value = T::zero();
        for j in 0..k {
            value = value + self.s.get(asg[j], ordered[j]) - d[j];
            grad.set(asg[j], ordered[j], grad.get(asg[j], ordered[j]) + T::one());
        }
        removal_softmax_backward(&self.s, &asg[..k], &vec![T::one(); k], &d, ordered, &mut grad);
        LogitScore::finish(value, grad)
    }

    /// With-replacement variant: every denominator runs over all items.
    pub fn vpg_swr(&self, ordered: &[usize]) -> LogitScore<T> {
        let asg = self.assignment();
        let k = ordered.len();
        let d: Vec<T> = asg[..k].iter().map(|&m| self.lse[m]).collect();
        let mut grad = Table::zeros(self.s.rows(), self.s.cols());
        let mut value = T::zero();
        for j in 0..k {
            value = value + self.s.get(asg[j], ordered[j]) - d[j];
            grad.set(asg[j], ordered[j], grad.get(asg[j], ordered[j]) + T::one());
        }
        removal_softmax_backward(&self.s, &asg[..k], &vec![T::one(); k], &d, &[], &mut grad);
        LogitScore::finish(value, grad)
    }

    /// Approximating prefix for target `a`: position `j` takes the best item of
    /// expert `m(j)` outside `a` and the items already taken.
    pub fn capg_prefix(&self, a: usize) -> Vec<usize> {
        let k = self.assignment().len();
        sequential_argmax(self.orders(), self.assignment(), Some(a), k - 1)
    }

    /// Per-position log choice probabilities `log p_k(a)` of the approximate
    /// marginal, together with the normalizers `D_k` and the prefix.
    fn capg_terms(&self, a: usize) -> (Vec<T>, Vec<T>, Vec<usize>) {
        let asg = self.assignment();
        let prefix = self.capg_prefix(a);
        let mut logp = Vec::with_capacity(asg.len());
        let mut d = Vec::with_capacity(asg.len());
        for (k, &m) in asg.iter().enumerate() {
            let row = self.s.row(m);
            let big_a = self.lse[m];
            let big_b = logsumexp_filtered_iter(prefix[..k].iter().map(|&p| row[p]));
            let dk = if big_b == T::neg_infinity() { big_a } else { big_a + log1mexp((big_b - big_a).min(T::zero())) };
            d.push(dk);
            logp.push(row[a] - dk);
        }
        (logp, d, prefix)
    }

    /// Approximate per-position choice probabilities of `a`.
    pub fn capg_choice_probs(&self, a: usize) -> Vec<T> {
        self.capg_terms(a).0.into_iter().map(|l| l.exp()).collect()
    }

    /// `log(1 - prod_k (1 - p_k(a)))` with the arg-top-(k-1) prefix approximation.
    pub fn capg(&self, a: usize) -> LogitScore<T> {
        let asg = self.assignment();
        let (mut logp, d, prefix) = self.capg_terms(a);
        let cap: T = cast(MAX_LOG_PROB);
        let mut clamped = vec![false; logp.len()];
        for (lp, c) in logp.iter_mut().zip(clamped.iter_mut()) {
            if *lp > cap {
                *lp = cap;
                *c = true;
            }
        }
        let c: Vec<T> = logp.iter().map(|&l| log1mexp(l)).collect();
        let sum: T = c.iter().copied().sum();
        let value = log1mexp(sum);
        let mut grad = Table::zeros(self.s.rows(), self.s.cols());
        if value == T::neg_infinity() {
            return LogitScore::finish(value, grad);
        }
        let w: Vec<T> = (0..asg.len())
            .map(|k| if clamped[k] { T::zero() } else { (sum - value + logp[k] - c[k]).exp() })
            .collect();
        for (k, &m) in asg.iter().enumerate() {
            grad.set(m, a, grad.get(m, a) + w[k]);
        }
        removal_softmax_backward(&self.s, asg, &w, &d, &prefix, &mut grad);
        LogitScore::finish(value, grad)
    }

    /// `logsumexp_k (s_{m(k)}(a) - A_{m(k)})`.
    pub fn capg_swr(&self, a: usize) -> LogitScore<T> {
        let asg = self.assignment();
        let z: Vec<T> = asg.iter().map(|&m| self.s.get(m, a) - self.lse[m]).collect();
        let value = logsumexp(&z);
        let w: Vec<T> = z.iter().map(|&zk| (zk - value).exp()).collect();
        let d: Vec<T> = asg.iter().map(|&m| self.lse[m]).collect();
        let mut grad = Table::zeros(self.s.rows(), self.s.cols());
        for (k, &m) in asg.iter().enumerate() {
            grad.set(m, a, grad.get(m, a) + w[k]);
        }
        removal_softmax_backward(&self.s, asg, &w, &d, &[], &mut grad);
        let mut out = LogitScore::finish(value, grad);
        out.above_unit = value > T::zero();
        out
    }

    /// Exact marginal by enumerating every ordered tuple that contains `a`.
    pub fn exact_capg(&self, a: usize) -> Result<LogitScore<T>> {
        let (n, k) = (self.s.cols(), self.assignment().len());
        let count = ordered_tuple_count(n, k);
        if count > EXACT_TUPLE_LIMIT {
            return Err(Error::TooLarge { count, limit: EXACT_TUPLE_LIMIT });
        }
        let mut lse = T::neg_infinity();
        for t in OrderedTuples::unchecked(n, k) {
            if t.contains(&a) {
                lse = log_add_exp(lse, self.vpg(&t).value);
            }
        }
        let mut grad = Table::zeros(self.s.rows(), n);
        for t in OrderedTuples::unchecked(n, k) {
            if t.contains(&a) {
                let sc = self.vpg(&t);
                let w = (sc.value - lse).exp();
                axpy(w, sc.grad.as_slice(), grad.as_mut_slice());
            }
        }
        Ok(LogitScore::finish(lse, grad))
    }
}

/// `n! / (n - k)!` as a float.
pub fn ordered_tuple_count(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).map(|i| (n - i) as f64).product()
}

fn logsumexp_filtered<T: Scalar>(row: &[T], keep: impl Fn(usize) -> bool) -> T {
    logsumexp_filtered_iter(row.iter().enumerate().filter(|(b, _)| keep(*b)).map(|(_, &v)| v))
}

fn logsumexp_filtered_iter<T: Scalar>(vals: impl Iterator<Item = T> + Clone) -> T {
    let max = vals.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || !max.is_finite() {
        return max;
    }
    max + vals.map(|v| (v - max).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Single-expert policy with `d_h = 1`, user embedding 1 and the given item
    /// values, so the raw logits equal `items`.
    fn scalar_policy(items: &[f64], k: usize, tau: f64) -> MoePolicy<f64> {
        let mut params = Params::zeros(1, 1, items.len(), 1);
        params.experts[0].user_table.set(0, 0, 1.0);
        for (a, &v) in items.iter().enumerate() {
            params.experts[0].item_table.set(a, 0, v);
        }
        MoePolicy::new(params, vec![0; k], tau).unwrap()
    }

    #[test]
    fn logits_scalar_product() {
        let mut p = scalar_policy(&[1.0, -1.0, 0.0], 1, 1.0);
        p.params.experts[0].user_table.set(0, 0, 2.0);
        assert_eq!(p.logits(0, 0).unwrap(), vec![2.0, -2.0, 0.0]);
        p.params.experts[0].user_table.set(0, 0, 0.0);
        assert_eq!(p.logits(0, 0).unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(p.logits(1, 0).is_err());
    }

    #[test]
    fn greedy_picks_and_ties() {
        let p = scalar_policy(&[3.0, 1.0, 2.0], 2, 1.0);
        assert_eq!(p.greedy_candidates(0).unwrap().ordered, vec![0, 2]);
        let p = scalar_policy(&[1.0, 1.0, 1.0], 2, 1.0);
        assert_eq!(p.greedy_candidates(0).unwrap().ordered, vec![0, 1]);
    }

    #[test]
    fn greedy_moe_excludes_taken() {
        let mut params = Params::zeros(2, 1, 8, 1);
        for m in 0..2 {
            params.experts[m].user_table.set(0, 0, 1.0);
        }
        params.experts[0].item_table.set(5, 0, 3.0);
        params.experts[1].item_table.set(5, 0, 3.0);
        params.experts[1].item_table.set(7, 0, 2.0);
        let p = MoePolicy::new(params, vec![0, 1], 1.0).unwrap();
        assert_eq!(p.greedy_candidates(0).unwrap().ordered, vec![5, 7]);
    }

    #[test]
    fn vpg_uniform_values() {
        let p = scalar_policy(&[0.0; 3], 2, 1.0);
        let d = CandidateDraw::new(vec![2, 0]);
        assert!((p.score_vpg(0, &d).unwrap().value - (1.0f64 / 6.0).ln()).abs() < 1e-14);
        assert!((p.score_vpg_swr(0, &d).unwrap().value - 2.0 * (1.0f64 / 3.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn vpg_gradient_signs_under_uniform_logits() {
        let p = scalar_policy(&[0.0; 4], 2, 1.0);
        let s = p.user_view(0).unwrap().vpg(&[1, 3]);
        assert!(s.grad.get(0, 1) > 0.0 && s.grad.get(0, 3) > 0.0);
        assert!(s.grad.get(0, 0) < 0.0 && s.grad.get(0, 2) < 0.0);
    }

    #[test]
    fn vpg_full_permutation_matches_direct_formula() {
        let items = [0.3, -1.1, 0.7, 2.0];
        let p = scalar_policy(&items, 4, 0.7);
        let perm = [2, 0, 3, 1];
        let s: Vec<f64> = items.iter().map(|v| v / 0.7).collect();
        let mut direct = 0.0;
        for k in 0..4 {
            let denom: f64 = perm[k..].iter().map(|&b| s[b].exp()).sum();
            direct += s[perm[k]] - denom.ln();
        }
        let got = p.score_vpg(0, &CandidateDraw::new(perm.to_vec())).unwrap();
        assert!((got.value - direct).abs() < 1e-13);
        assert!(got.grad.is_finite());
    }

    #[test]
    fn capg_exact_under_uniform_logits() {
        let p = scalar_policy(&[0.0; 3], 2, 1.0);
        let v = p.score_capg(0, 1).unwrap().value;
        assert!((v.exp() - 2.0 / 3.0).abs() < 1e-14);
        let e = p.exact_score_capg(0, 1).unwrap().value;
        assert!((e.exp() - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn capg_full_candidate_set_has_probability_one() {
        let p = scalar_policy(&[0.1, 1.5, -0.3, 0.8], 4, 1.0);
        for a in 0..4 {
            assert!(p.score_capg(0, a).unwrap().value.abs() < 1e-9);
            assert!(p.exact_score_capg(0, a).unwrap().value.abs() < 1e-12);
        }
    }

    #[test]
    fn capg_swr_constant_shift() {
        let p = scalar_policy(&[0.0, 0.0], 1, 1.0);
        assert!((p.score_capg_swr(0, 0).unwrap().value - 0.5f64.ln()).abs() < 1e-15);
        let items = [0.4, -0.2, 1.0, 0.0, 0.5, -1.0];
        let p5 = scalar_policy(&items, 5, 1.0);
        let p1 = scalar_policy(&items, 1, 1.0);
        let a = 2;
        let v5 = p5.score_capg_swr(0, a).unwrap();
        let v1 = p1.score_capg_swr(0, a).unwrap();
        assert!((v5.value - (5f64.ln() + v1.value)).abs() < 1e-13);
        assert!(v5.grad.max_abs_diff(&v1.grad) < 1e-14);
    }

    #[test]
    fn capg_swr_identical_experts() {
        let mut params = Params::zeros(2, 1, 3, 1);
        for m in 0..2 {
            params.experts[m].user_table.set(0, 0, 1.0);
            params.experts[m].item_table.set(0, 0, 0.5);
            params.experts[m].item_table.set(2, 0, -0.4);
        }
        let p = MoePolicy::new(params, vec![0, 1], 1.0).unwrap();
        let v = p.score_capg_swr(0, 0).unwrap().value;
        let s = [0.5f64, 0.0, -0.4];
        let soft = s[0].exp() / s.iter().map(|v| v.exp()).sum::<f64>();
        assert!((v - (2.0 * soft).ln()).abs() < 1e-14);
    }

    #[test]
    fn sample_is_permutation_when_k_equals_items() {
        let p = scalar_policy(&[0.2, -0.5, 1.0], 3, 1.0);
        let mut rng = rng::stream(0, 99);
        for _ in 0..100 {
            assert_eq!(p.sample_candidates(0, &mut rng).unwrap().set, vec![0, 1, 2]);
        }
    }

    #[test]
    fn top_k_desc_breaks_ties_low() {
        assert_eq!(top_k_desc(&[1.0f64, 5.0, 5.0, 0.0, 3.0], 3), vec![1, 2, 4]);
        assert_eq!(top_k_desc(&[1.0f64, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn assignment_schemes() {
        assert_eq!(expert_assignment(AssignmentScheme::Contiguous, 4, 2), vec![0, 0, 1, 1]);
        assert_eq!(expert_assignment(AssignmentScheme::RoundRobin, 4, 2), vec![0, 1, 0, 1]);
        assert_eq!(expert_assignment(AssignmentScheme::Contiguous, 3, 1), vec![0, 0, 0]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = MoePolicy::<f64>::init(3, 4, 5, 3, 2, 3, AssignmentScheme::RoundRobin, 0.7, 0.1).unwrap();
        let back = MoePolicy::<f64>::from_checkpoint_str(&p.to_checkpoint_string()).unwrap();
        assert_eq!(p, back);
        let p32 = MoePolicy::<f32>::init(3, 4, 5, 3, 2, 3, AssignmentScheme::Contiguous, 1.0, 0.1).unwrap();
        assert_eq!(p32, MoePolicy::<f32>::from_checkpoint_str(&p32.to_checkpoint_string()).unwrap());
        assert!(MoePolicy::<f64>::from_checkpoint_str("nope").is_err());
    }

    #[test]
    fn new_rejects_bad_shapes() {
        let params = Params::<f64>::zeros(1, 1, 3, 1);
        assert!(MoePolicy::new(params.clone(), vec![0; 4], 1.0).is_err());
        assert!(MoePolicy::new(params.clone(), vec![1], 1.0).is_err());
        assert!(MoePolicy::new(params, vec![0], 0.0).is_err());
    }

    #[test]
    fn draw_validation() {
        let p = scalar_policy(&[0.0; 4], 2, 1.0);
        assert!(matches!(p.score_vpg(0, &CandidateDraw::new(vec![1, 1])), Err(Error::DuplicateItem(1))));
        assert!(p.score_vpg(0, &CandidateDraw::new(vec![1])).is_err());
        assert!(p.score_capg(0, 9).is_err());
    }
}
