//! Accuracy of the arg-top-(k-1) prefix approximation behind the CA-PG score.
//!
//! For every item `a` and position `k`, the approximation replaces the random
//! prefix of `k` previously drawn items with the `k` most likely items other
//! than `a`. Ground truth averages the exact conditional choice probability
//! over Monte-Carlo Plackett-Luce rollouts, skipping `a` in each prefix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::policy::top_k_desc;
use crate::rng::gumbel;
use crate::scalar::argsort_desc;

pub const DEFAULT_ITEMS: usize = 1000;
pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_TAUS: [f64; 3] = [1.0, 0.5, 0.2];
pub const DEFAULT_KS: [usize; 4] = [10, 20, 50, 100];

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxRow {
    pub tau: f64,
    pub k: usize,
    /// `sum |approx - truth| / sum truth` over all items and positions.
    pub rel_abs_err: f64,
    /// Mean scaled logit of the top `k` items minus the mean over all items.
    pub mean_logit_gap: f64,
}

/// One cell of the table on standard-normal logits drawn from `seed`.
pub fn approx_error_cell(n_items: usize, tau: f64, k: usize, n_trials: usize, seed: u64) -> ApproxRow {
    assert!(k >= 1 && k < n_items, "need 1 <= k < n_items");
    assert!(n_trials > 0 && tau > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n_items).map(|_| StandardNormal.sample(&mut rng)).collect();
    let s: Vec<f64> = z.iter().map(|v| v / tau).collect();
    let order = argsort_desc(&s);
    let max = s[order[0]];
    let w: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();

    let truth = {
        // inv[j] sums 1 / (mass left after the first j draws) over rollouts
        // that do not contain a; rollouts containing a are corrected per item.
        let mut inv = vec![0.0; k];
        let mut fix: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_items];
        for _ in 0..n_trials {
            let pert: Vec<f64> = s.iter().map(|&v| v + gumbel(&mut rng)).collect();
            let prefix = top_k_desc(&pert, k + 1);
            let rem = Remaining::new(&w, &prefix);
            for (j, v) in inv.iter_mut().enumerate() {
                *v += 1.0 / rem.after(j, None);
            }
            for &a in &prefix {
                for j in 0..k {
                    let delta = 1.0 / rem.after(j, Some(a)) - 1.0 / rem.after(j, None);
                    fix[a].push((j, delta));
                }
            }
        }
        let mut truth = vec![vec![0.0; k]; n_items];
        for (a, row) in truth.iter_mut().enumerate() {
            row.copy_from_slice(&inv);
            for &(j, d) in &fix[a] {
                row[j] += d;
            }
            for v in row.iter_mut() {
                *v *= w[a] / n_trials as f64;
            }
        }
        truth
    };

    let greedy = Remaining::new(&w, &order[..k + 1]);
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, t) in truth.iter().enumerate() {
        for (j, &tj) in t.iter().enumerate() {
            let ap = w[a] / greedy.after(j, Some(a));
            num += (ap - tj).abs();
            den += tj;
        }
    }

    let mean_all = s.iter().sum::<f64>() / n_items as f64;
    let mean_top = order[..k].iter().map(|&i| s[i]).sum::<f64>() / k as f64;
    ApproxRow { tau, k, rel_abs_err: num / den, mean_logit_gap: mean_top - mean_all }
}

/// Mass left after removing prefix items, with the tail outside the prefix
/// summed directly so small remainders keep full precision.
struct Remaining<'a> {
    w: &'a [f64],
    prefix: &'a [usize],
    /// suffix[i] = tail + sum of w over prefix[i..]
    suffix: Vec<f64>,
}

impl<'a> Remaining<'a> {
    fn new(w: &'a [f64], prefix: &'a [usize]) -> Self {
        let mut in_prefix = vec![false; w.len()];
        for &i in prefix {
            in_prefix[i] = true;
        }
        let tail: f64 = w.iter().zip(&in_prefix).filter(|(_, &p)| !p).map(|(v, _)| v).sum();
        let mut suffix = vec![tail; prefix.len() + 1];
        for i in (0..prefix.len()).rev() {
            suffix[i] = suffix[i + 1] + w[prefix[i]];
        }
        Self { w, prefix, suffix }
    }

    /// Mass left after the first `j` prefix items, skipping `skip` if given.
    fn after(&self, j: usize, skip: Option<usize>) -> f64 {
        match skip.and_then(|a| self.prefix.iter().position(|&i| i == a)) {
            Some(p) if p < j => self.suffix[j + 1] + self.w[self.prefix[p]],
            _ => self.suffix[j],
        }
    }
}

/// The full grid, one row per `(tau, k)` in the given order.
pub fn approx_error_table(n_items: usize, taus: &[f64], ks: &[usize], n_trials: usize, seed: u64) -> Vec<ApproxRow> {
    let mut rows = Vec::new();
    for &tau in taus {
        for &k in ks {
            rows.push(approx_error_cell(n_items, tau, k, n_trials, seed));
        }
    }
    rows
}

pub fn rows_to_csv(rows: &[ApproxRow]) -> String {
    let mut out = String::from("tau,k,rel_abs_err,mean_logit_gap\n");
    for r in rows {
        out.push_str(&format!("{:?},{},{:e},{:.4}\n", r.tau, r.k, r.rel_abs_err, r.mean_logit_gap));
    }
    out
}
