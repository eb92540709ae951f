//! Ground-truth environment: synthetic or empirical expected rewards, reward
//! noise, and position weights.

use std::collections::HashMap;
use std::collections::HashSet;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::{cast, softplus, Scalar};
use crate::table::{dot, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorldMode {
    Synthetic,
    Empirical,
}

/// Reward noise level. Scalar by default; a per-item vector is accepted.
#[derive(Clone, Debug, PartialEq)]
pub enum Noise<T> {
    Scalar(T),
    PerItem(Vec<T>),
}

impl<T: Scalar> Noise<T> {
    #[inline]
    pub fn sigma(&self, item: usize) -> T {
        match self {
            Noise::Scalar(s) => *s,
            Noise::PerItem(v) => v[item],
        }
    }
}

/// Parameters of the synthetic world generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParams {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub d_x: usize,
    pub d_a: usize,
    pub d_h: usize,
    pub c: f64,
    pub sigma: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self { seed: 0, n_users: 1000, n_items: 1000, d_x: 10, d_a: 10, d_h: 10, c: 1.0, sigma: 0.5 }
    }
}

/// Immutable ground-truth environment.
///
/// Expected rewards are materialized once at construction, so `expected_reward`
/// is a table lookup in both modes.
#[derive(Clone, Debug, PartialEq)]
pub struct World<T> {
    pub mode: WorldMode,
    pub user_features: Table<T>,
    pub item_features: Table<T>,
    pub proj_user: Table<T>,
    pub proj_item: Table<T>,
    pub reward_offset: T,
    pub noise: Noise<T>,
    q: Table<T>,
}

impl<T: Scalar> World<T> {
    pub fn n_users(&self) -> usize {
        self.q.rows()
    }

    pub fn n_items(&self) -> usize {
        self.q.cols()
    }

    /// Synthetic world: features and projections i.i.d. uniform on [-1, 1],
    /// drawn in the order user features, item features, user projection, item
    /// projection, all from one seeded stream.
    pub fn synthetic(params: &SyntheticParams) -> Result<Self> {
        if params.n_users == 0 || params.n_items == 0 || params.d_x == 0 || params.d_a == 0 || params.d_h == 0 {
            return Err(Error::InvalidArgument("world dimensions must be at least 1".into()));
        }
        if !(params.c >= 0.0) || !(params.sigma >= 0.0) {
            return Err(Error::InvalidArgument("reward offset and noise must be non-negative".into()));
        }
        let mut rng = rng::stream(params.seed, rng::ids::WORLD);
        let draw = |rows, cols, rng: &mut Stream| {
            Table::from_fn(rows, cols, |_, _| cast::<T>(rng::uniform_pm1(rng)))
        };
        let user_features = draw(params.n_users, params.d_x, &mut rng);
        let item_features = draw(params.n_items, params.d_a, &mut rng);
        let proj_user = draw(params.d_h, params.d_x, &mut rng);
        let proj_item = draw(params.d_h, params.d_a, &mut rng);
        Ok(Self::from_parts(
            user_features,
            item_features,
            proj_user,
            proj_item,
            cast(params.c),
            Noise::Scalar(cast(params.sigma)),
        ))
    }

    /// Synthetic world from explicit matrices.
    pub fn from_parts(
        user_features: Table<T>,
        item_features: Table<T>,
        proj_user: Table<T>,
        proj_item: Table<T>,
        reward_offset: T,
        noise: Noise<T>,
    ) -> Self {
        let hx: Vec<Vec<T>> =
            (0..user_features.rows()).map(|x| proj_user.mat_vec(user_features.row(x))).collect();
        let ha: Vec<Vec<T>> =
            (0..item_features.rows()).map(|a| proj_item.mat_vec(item_features.row(a))).collect();
        let q = Table::from_fn(hx.len(), ha.len(), |x, a| softplus(dot(&ha[a], &hx[x])) + reward_offset);
        Self {
            mode: WorldMode::Synthetic,
            user_features,
            item_features,
            proj_user,
            proj_item,
            reward_offset,
            noise,
            q,
        }
    }

    /// Empirical world over a dense expected-reward matrix. Noise defaults to 0.
    pub fn empirical(q: Table<T>) -> Result<Self> {
        if q.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("empirical rewards must be finite".into()));
        }
        Ok(Self {
            mode: WorldMode::Empirical,
            user_features: Table::zeros(q.rows(), 0),
            item_features: Table::zeros(q.cols(), 0),
            proj_user: Table::zeros(0, 0),
            proj_item: Table::zeros(0, 0),
            reward_offset: T::zero(),
            noise: Noise::Scalar(T::zero()),
            q,
        })
    }

    pub fn with_noise(mut self, noise: Noise<T>) -> Self {
        self.noise = noise;
        self
    }

    #[inline]
    pub fn q(&self, x: usize, a: usize) -> T {
        self.q.get(x, a)
    }

    /// Row of expected rewards for user `x`.
    #[inline]
    pub fn q_row(&self, x: usize) -> &[T] {
        self.q.row(x)
    }

    pub fn expected_reward(&self, x: usize, a: usize) -> Result<T> {
        self.check_user(x)?;
        self.check_item(a)?;
        Ok(self.q(x, a))
    }

    pub fn check_user(&self, x: usize) -> Result<()> {
        if x >= self.n_users() {
            return Err(Error::IdOutOfRange { what: "user", id: x, size: self.n_users() });
        }
        Ok(())
    }

    pub fn check_item(&self, a: usize) -> Result<()> {
        if a >= self.n_items() {
            return Err(Error::IdOutOfRange { what: "item", id: a, size: self.n_items() });
        }
        Ok(())
    }

    /// Draws `r_l ~ N(q(x, a_l), sigma^2)` independently per position.
    pub fn sample_rewards<R: Rng + ?Sized>(&self, x: usize, ranking: &[usize], rng: &mut R) -> Result<Vec<T>> {
        self.check_user(x)?;
        let mut seen = HashSet::with_capacity(ranking.len());
        for &a in ranking {
            self.check_item(a)?;
            if !seen.insert(a) {
                return Err(Error::DuplicateItem(a));
            }
        }
        Ok(self.sample_rewards_unchecked(x, ranking, rng))
    }

    pub(crate) fn sample_rewards_unchecked<R: Rng + ?Sized>(&self, x: usize, ranking: &[usize], rng: &mut R) -> Vec<T> {
        ranking
            .iter()
            .map(|&a| {
                let sigma = self.noise.sigma(a);
                let q = self.q(x, a);
                if sigma == T::zero() {
                    q
                } else {
                    q + sigma * cast::<T>(rng::standard_normal(rng))
                }
            })
            .collect()
    }

    pub fn min_expected_reward(&self) -> T {
        self.q.as_slice().iter().copied().fold(T::infinity(), T::min)
    }
}

/// Dense rating matrix read from `user_id,item_id,value` CSV, with ids
/// remapped to 0-based indices in first-appearance order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub values: Table<T>,
}

pub fn read_dense_matrix<T: Scalar>(path: impl AsRef<Path>) -> Result<DenseMatrix<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    {
        let headers = reader.headers()?;
        let cols: Vec<&str> = headers.iter().collect();
        if cols != ["user_id", "item_id", "value"] {
            return Err(Error::Parse { line: 1, msg: format!("expected header `user_id,item_id,value`, found `{}`", cols.join(",")) });
        }
    }
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut cells: HashMap<(usize, usize), (T, u64)> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::Parse { line, msg: format!("expected 3 fields, found {}", record.len()) });
        }
        let (u, i, v) = (&record[0], &record[1], &record[2]);
        let value: f64 = v
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("value `{v}` is not a number") })?;
        if !value.is_finite() {
            return Err(Error::Parse { line, msg: format!("non-finite value `{v}`") });
        }
        let next_u = user_index.len();
        let ui = *user_index.entry(u.to_string()).or_insert_with(|| {
            user_ids.push(u.to_string());
            next_u
        });
        let next_i = item_index.len();
        let ii = *item_index.entry(i.to_string()).or_insert_with(|| {
            item_ids.push(i.to_string());
            next_i
        });
        if cells.insert((ui, ii), (cast(value), line)).is_some() {
            return Err(Error::DuplicateCell { line, user: u.to_string(), item: i.to_string() });
        }
    }
    let (n_users, n_items) = (user_ids.len(), item_ids.len());
    if n_users == 0 {
        return Err(Error::Parse { line: 1, msg: "no rows".into() });
    }
    let mut values = Table::zeros(n_users, n_items);
    for x in 0..n_users {
        for a in 0..n_items {
            match cells.get(&(x, a)) {
                Some(&(v, _)) => values.set(x, a, v),
                None => {
                    return Err(Error::MissingCell { user: user_ids[x].clone(), item: item_ids[a].clone() })
                }
            }
        }
    }
    Ok(DenseMatrix { user_ids, item_ids, values })
}

/// Loads a dense rating matrix as an empirical-mode world.
pub fn load_dense_matrix<T: Scalar>(path: impl AsRef<Path>) -> Result<World<T>> {
    World::empirical(read_dense_matrix(path)?.values)
}

/// Writes a dense matrix in the `user_id,item_id,value` layout with 0-based
/// integer ids and round-trippable values.
pub fn write_dense_matrix<T: Scalar>(path: impl AsRef<Path>, values: &Table<T>) -> Result<()> {
    let mut out = String::from("user_id,item_id,value\n");
    for x in 0..values.rows() {
        for a in 0..values.cols() {
            out.push_str(&format!("{x},{a},{:?}\n", values.get(x, a).to_f64().unwrap_or(f64::NAN)));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScheme {
    Uniform,
    Dcg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositionWeights<T> {
    pub scheme: WeightScheme,
    pub alpha: Vec<T>,
}

impl<T: Scalar> PositionWeights<T> {
    pub fn new(scheme: WeightScheme, len: usize) -> Self {
        let alpha = (1..=len)
            .map(|l| match scheme {
                WeightScheme::Uniform => T::one(),
                WeightScheme::Dcg => cast::<T>(1.0 / ((l + 1) as f64).log2()),
            })
            .collect();
        Self { scheme, alpha }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn total(&self) -> T {
        self.alpha.iter().copied().sum()
    }
}

pub fn position_weights<T: Scalar>(scheme: WeightScheme, len: usize) -> PositionWeights<T> {
    PositionWeights::new(scheme, len)
}
