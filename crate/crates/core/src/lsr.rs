//! Oracle late-stage rankers over the true expected rewards.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::World;
use crate::error::{Error, Result};
use crate::oracle::OrderedTuples;
use crate::policy::{ordered_tuple_count, top_k_desc};
use crate::rng;
use crate::scalar::{cast, logsumexp, Scalar};

/// Exact position marginals are enumerated up to this position and candidate size.
pub const EXACT_MAX_POSITION: usize = 6;
pub const EXACT_MAX_CANDIDATES: usize = 20;
pub const MC_SAMPLES: usize = 100_000;
pub const RANKING_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LsrMode {
    Optimal,
    Noisy,
    Uniform,
    Anti,
}

impl LsrMode {
    pub fn is_deterministic(self) -> bool {
        matches!(self, LsrMode::Optimal | LsrMode::Anti)
    }
}

impl fmt::Display for LsrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LsrMode::Optimal => "optimal",
            LsrMode::Noisy => "noisy",
            LsrMode::Uniform => "uniform",
            LsrMode::Anti => "anti",
        })
    }
}

impl FromStr for LsrMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "optimal" => Ok(LsrMode::Optimal),
            "noisy" | "noisy_optimal" => Ok(LsrMode::Noisy),
            "uniform" => Ok(LsrMode::Uniform),
            "anti" | "anti_optimal" => Ok(LsrMode::Anti),
            other => Err(format!("unknown LSR mode `{other}` (expected optimal, noisy, uniform or anti)")),
        }
    }
}

/// Marginal choice probabilities at one position, aligned with the candidate
/// slice they were computed for.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMarginals<T> {
    pub probs: Vec<T>,
    pub monte_carlo: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsrPolicy<T> {
    pub mode: LsrMode,
    /// Temperature of the noisy mode; ignored otherwise.
    pub tau: T,
    pub length: usize,
}

impl<T: Scalar> LsrPolicy<T> {
    pub fn new(mode: LsrMode, tau: T, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidArgument("LSR length must be at least 1".into()));
        }
        if mode == LsrMode::Noisy && !(tau > T::zero()) {
            return Err(Error::InvalidArgument("noisy LSR temperature must be positive".into()));
        }
        Ok(Self { mode, tau, length })
    }

    fn check(&self, world: &World<T>, x: usize, candidates: &[usize]) -> Result<()> {
        world.check_user(x)?;
        if self.length > candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "LSR length {} exceeds candidate size {}",
                self.length,
                candidates.len()
            )));
        }
        for &a in candidates {
            world.check_item(a)?;
        }
        Ok(())
    }

    /// Candidates sorted by `q` (descending for optimal, ascending for anti),
    /// ties by item id.
    fn sorted(&self, world: &World<T>, x: usize, candidates: &[usize]) -> Vec<usize> {
        let q = world.q_row(x);
        let mut c = candidates.to_vec();
        match self.mode {
            LsrMode::Anti => c.sort_by(|&a, &b| q[a].partial_cmp(&q[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))),
            _ => c.sort_by(|&a, &b| q[b].partial_cmp(&q[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))),
        }
        c
    }

    fn scaled(&self, world: &World<T>, x: usize, candidates: &[usize]) -> Vec<T> {
        let q = world.q_row(x);
        candidates.iter().map(|&a| q[a] / self.tau).collect()
    }

    pub fn sample_ranking<R: Rng + ?Sized>(
        &self,
        world: &World<T>,
        x: usize,
        candidates: &[usize],
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        self.check(world, x, candidates)?;
        Ok(self.sample_ranking_unchecked(world, x, candidates, rng))
    }

    pub(crate) fn sample_ranking_unchecked<R: Rng + ?Sized>(
        &self,
        world: &World<T>,
        x: usize,
        candidates: &[usize],
        rng: &mut R,
    ) -> Vec<usize> {
        let l = self.length;
        match self.mode {
            LsrMode::Optimal | LsrMode::Anti => {
                let mut s = self.sorted(world, x, candidates);
                s.truncate(l);
                s
            }
            LsrMode::Uniform => {
                let mut c = candidates.to_vec();
                let (head, _) = c.partial_shuffle(rng, l);
                head.to_vec()
            }
            LsrMode::Noisy => {
                let z: Vec<T> =
                    self.scaled(world, x, candidates).into_iter().map(|v| v + cast::<T>(rng::gumbel(rng))).collect();
                top_k_desc(&z, l).into_iter().map(|i| candidates[i]).collect()
            }
        }
    }

    /// Marginals at every position `1..=length`.
    pub fn all_position_marginals(&self, world: &World<T>, x: usize, candidates: &[usize]) -> Result<Vec<PositionMarginals<T>>> {
        self.check(world, x, candidates)?;
        Ok(self.marginals_up_to(world, x, candidates, self.length))
    }

    /// Marginals at the 1-based position `l`.
    pub fn position_marginals(&self, world: &World<T>, x: usize, candidates: &[usize], l: usize) -> Result<PositionMarginals<T>> {
        self.check(world, x, candidates)?;
        if l == 0 || l > self.length {
            return Err(Error::InvalidArgument(format!("position {l} outside 1..={}", self.length)));
        }
        Ok(self.marginals_up_to(world, x, candidates, l).pop().expect("l >= 1"))
    }

    /// Marginal probability that `a` is placed at the 1-based position `l`.
    pub fn position_marginal(&self, world: &World<T>, x: usize, candidates: &[usize], a: usize, l: usize) -> Result<T> {
        let idx = candidates
            .iter()
            .position(|&c| c == a)
            .ok_or_else(|| Error::InvalidArgument(format!("item {a} is not among the candidates")))?;
        Ok(self.position_marginals(world, x, candidates, l)?.probs[idx])
    }

    pub(crate) fn marginals_up_to(&self, world: &World<T>, x: usize, candidates: &[usize], depth: usize) -> Vec<PositionMarginals<T>> {
        let k = candidates.len();
        let exact = |probs| PositionMarginals { probs, monte_carlo: false };
        match self.mode {
            LsrMode::Uniform => {
                (0..depth).map(|_| exact(vec![T::one() / cast::<T>(k as f64); k])).collect()
            }
            LsrMode::Optimal | LsrMode::Anti => {
                let sorted = self.sorted(world, x, candidates);
                (0..depth)
                    .map(|l| exact(candidates.iter().map(|&a| if a == sorted[l] { T::one() } else { T::zero() }).collect()))
                    .collect()
            }
            LsrMode::Noisy => {
                let z = self.scaled(world, x, candidates);
                if depth <= EXACT_MAX_POSITION && k <= EXACT_MAX_CANDIDATES {
                    noisy_exact(&z, depth).into_iter().map(exact).collect()
                } else {
                    let seed = (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ depth as u64;
                    noisy_monte_carlo(&z, depth, seed)
                        .into_iter()
                        .map(|probs| PositionMarginals { probs, monte_carlo: true })
                        .collect()
                }
            }
        }
    }

    /// Every possible ranking with its probability. Guarded to at most
    /// [`RANKING_LIMIT`] rankings.
    pub fn ranking_distribution(&self, world: &World<T>, x: usize, candidates: &[usize]) -> Result<Vec<(Vec<usize>, T)>> {
        self.check(world, x, candidates)?;
        let l = self.length;
        if self.mode.is_deterministic() {
            let mut s = self.sorted(world, x, candidates);
            s.truncate(l);
            return Ok(vec![(s, T::one())]);
        }
        let count = ordered_tuple_count(candidates.len(), l);
        if count > RANKING_LIMIT {
            return Err(Error::TooLarge { count, limit: RANKING_LIMIT });
        }
        let z = self.scaled(world, x, candidates);
        let uniform = T::one() / cast::<T>(count);
        Ok(OrderedTuples::unchecked(candidates.len(), l)
            .map(|idx| {
                let p = match self.mode {
                    LsrMode::Uniform => uniform,
                    _ => {
                        let mut used = vec![false; z.len()];
                        let mut lp = T::zero();
                        for &i in &idx {
                            let rem: Vec<T> = (0..z.len()).filter(|&b| !used[b]).map(|b| z[b]).collect();
                            lp = lp + z[i] - logsumexp(&rem);
                            used[i] = true;
                        }
                        lp.exp()
                    }
                };
                (idx.into_iter().map(|i| candidates[i]).collect(), p)
            })
            .collect())
    }

    /// Average over positions of `sum_a pi_l(a)^2`, the LSR propensity of its
    /// own choice.
    pub fn self_propensity(&self, world: &World<T>, x: usize, candidates: &[usize]) -> Result<T> {
        let marg = self.all_position_marginals(world, x, candidates)?;
        let total: T = marg.iter().map(|m| m.probs.iter().map(|&p| p * p).sum::<T>()).sum();
        Ok(total / cast::<T>(marg.len() as f64))
    }
}

/// Plackett-Luce marginals over `z` for positions `0..depth`, by depth-first
/// enumeration of ordered prefixes.
fn noisy_exact<T: Scalar>(z: &[T], depth: usize) -> Vec<Vec<T>> {
    let k = z.len();
    let mut out = vec![vec![T::zero(); k]; depth];
    let mut used = vec![false; k];
    fn visit<T: Scalar>(z: &[T], used: &mut [bool], d: usize, logp: T, out: &mut [Vec<T>]) {
        let rem: Vec<T> = (0..z.len()).filter(|&b| !used[b]).map(|b| z[b]).collect();
        let lse = logsumexp(&rem);
        for b in 0..z.len() {
            if used[b] {
                continue;
            }
            let lp = logp + z[b] - lse;
            out[d][b] = out[d][b] + lp.exp();
            if d + 1 < out.len() {
                used[b] = true;
                visit(z, used, d + 1, lp, out);
                used[b] = false;
            }
        }
    }
    visit(z, &mut used, 0, T::zero(), &mut out);
    out
}

fn noisy_monte_carlo<T: Scalar>(z: &[T], depth: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = rng::stream(seed, rng::ids::LSR_MARGINAL_MC);
    let mut counts = vec![vec![0u64; z.len()]; depth];
    for _ in 0..MC_SAMPLES {
        let pert: Vec<T> = z.iter().map(|&v| v + cast::<T>(rng::gumbel(&mut rng))).collect();
        for (l, i) in top_k_desc(&pert, depth).into_iter().enumerate() {
            counts[l][i] += 1;
        }
    }
    let n: T = cast(MC_SAMPLES as f64);
    counts.into_iter().map(|row| row.into_iter().map(|c| cast::<T>(c as f64) / n).collect()).collect()
}
