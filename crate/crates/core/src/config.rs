//! Flat `key=value` experiment configuration.
//!
//! Lines are `dotted.key = value`; `#` starts a comment. Unknown keys,
//! malformed values and repeated keys are rejected with the offending line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::env::WeightScheme;
use crate::error::{Error, Result};
use crate::lsr::LsrMode;
use crate::pg::{EstimatorKind, DEFAULT_OVERFLOW_THRESHOLD};
use crate::policy::AssignmentScheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WorldSource {
    Synthetic,
    /// Dense `user_id,item_id,value` rating file.
    Dense(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub precision: Precision,

    pub world_source: WorldSource,
    /// Seed of the synthetic world; the run seed when unset.
    pub world_seed: Option<u64>,
    pub n_users: usize,
    pub n_items: usize,
    pub d_x: usize,
    pub d_a: usize,
    pub d_h: usize,
    pub reward_offset: f64,
    pub sigma: f64,

    pub k: usize,
    pub n_experts: usize,
    pub assignment: AssignmentScheme,
    pub tau: f64,
    pub init_std: f64,
    pub embed_dim: usize,

    pub lsr_mode: LsrMode,
    pub lsr_tau: f64,
    pub lsr_length: usize,
    pub position_scheme: WeightScheme,

    pub kind: EstimatorKind,
    /// Learning rate; the estimator's default when unset.
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub grpo_enabled: bool,
    pub grpo_group_size: usize,
    pub grpo_shift_c: f64,
    pub adaptive_lr: bool,
    pub adaptive_lr_contexts: usize,
    pub overflow_threshold: f64,

    pub total_steps: usize,
    pub eval_every: usize,

    pub output_dir: PathBuf,
    pub write_checkpoint: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            world_source: WorldSource::Synthetic,
            world_seed: None,
            n_users: 1000,
            n_items: 1000,
            d_x: 10,
            d_a: 10,
            d_h: 10,
            reward_offset: 1.0,
            sigma: 0.5,
            k: 10,
            n_experts: 1,
            assignment: AssignmentScheme::Contiguous,
            tau: 1.0,
            init_std: 0.1,
            embed_dim: 10,
            lsr_mode: LsrMode::Optimal,
            lsr_tau: 1.0,
            lsr_length: 10,
            position_scheme: WeightScheme::Uniform,
            kind: EstimatorKind::Capg,
            lr: None,
            batch_size: 128,
            grpo_enabled: false,
            grpo_group_size: 4,
            grpo_shift_c: 1.0,
            adaptive_lr: false,
            adaptive_lr_contexts: 1000,
            overflow_threshold: DEFAULT_OVERFLOW_THRESHOLD,
            total_steps: 50_000,
            eval_every: 500,
            output_dir: PathBuf::from("runs/default"),
            write_checkpoint: false,
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected a boolean, found `{v}`")),
    }
}

fn parse_num<N: std::str::FromStr>(v: &str) -> std::result::Result<N, String> {
    v.parse().map_err(|_| format!("expected a number, found `{v}`"))
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "precision",
        "world.source",
        "world.path",
        "world.seed",
        "world.n_users",
        "world.n_items",
        "world.d_x",
        "world.d_a",
        "world.d_h",
        "world.c",
        "world.sigma",
        "esr.k",
        "esr.experts",
        "esr.assignment",
        "esr.tau",
        "esr.init_std",
        "esr.dim",
        "lsr.mode",
        "lsr.tau",
        "lsr.length",
        "position.scheme",
        "pg.kind",
        "pg.lr",
        "pg.batch_size",
        "pg.grpo.enabled",
        "pg.grpo.group_size",
        "pg.grpo.shift_c",
        "pg.adaptive_lr",
        "pg.adaptive_lr_contexts",
        "pg.overflow_threshold",
        "train.total_steps",
        "train.eval_every",
        "output.dir",
        "output.checkpoint",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(v)?,
            "precision" => {
                self.precision = match v {
                    "f64" => Precision::F64,
                    "f32" => Precision::F32,
                    _ => return Err(format!("precision must be f64 or f32, found `{v}`")),
                }
            }
            "world.source" => {
                self.world_source = match v {
                    "synthetic" => WorldSource::Synthetic,
                    "dense" => WorldSource::Dense(match &self.world_source {
                        WorldSource::Dense(p) => p.clone(),
                        WorldSource::Synthetic => PathBuf::new(),
                    }),
                    _ => return Err(format!("world.source must be synthetic or dense, found `{v}`")),
                }
            }
            "world.path" => self.world_source = WorldSource::Dense(PathBuf::from(v)),
            "world.seed" => self.world_seed = Some(parse_num(v)?),
            "world.n_users" => self.n_users = parse_num(v)?,
            "world.n_items" => self.n_items = parse_num(v)?,
            "world.d_x" => self.d_x = parse_num(v)?,
            "world.d_a" => self.d_a = parse_num(v)?,
            "world.d_h" => self.d_h = parse_num(v)?,
            "world.c" => self.reward_offset = parse_num(v)?,
            "world.sigma" => self.sigma = parse_num(v)?,
            "esr.k" => self.k = parse_num(v)?,
            "esr.experts" => self.n_experts = parse_num(v)?,
            "esr.assignment" => {
                self.assignment = match v {
                    "contiguous" => AssignmentScheme::Contiguous,
                    "round_robin" => AssignmentScheme::RoundRobin,
                    _ => return Err(format!("esr.assignment must be contiguous or round_robin, found `{v}`")),
                }
            }
            "esr.tau" => self.tau = parse_num(v)?,
            "esr.init_std" => self.init_std = parse_num(v)?,
            "esr.dim" => self.embed_dim = parse_num(v)?,
            "lsr.mode" => self.lsr_mode = v.parse()?,
            "lsr.tau" => self.lsr_tau = parse_num(v)?,
            "lsr.length" => self.lsr_length = parse_num(v)?,
            "position.scheme" => {
                self.position_scheme = match v {
                    "uniform" => WeightScheme::Uniform,
                    "dcg" => WeightScheme::Dcg,
                    _ => return Err(format!("position.scheme must be uniform or dcg, found `{v}`")),
                }
            }
            "pg.kind" => self.kind = v.parse()?,
            "pg.lr" => self.lr = if v == "default" { None } else { Some(parse_num(v)?) },
            "pg.batch_size" => self.batch_size = parse_num(v)?,
            "pg.grpo.enabled" => self.grpo_enabled = parse_bool(v)?,
            "pg.grpo.group_size" => self.grpo_group_size = parse_num(v)?,
            "pg.grpo.shift_c" => self.grpo_shift_c = parse_num(v)?,
            "pg.adaptive_lr" => self.adaptive_lr = parse_bool(v)?,
            "pg.adaptive_lr_contexts" => self.adaptive_lr_contexts = parse_num(v)?,
            "pg.overflow_threshold" => self.overflow_threshold = parse_num(v)?,
            "train.total_steps" => self.total_steps = parse_num(v)?,
            "train.eval_every" => self.eval_every = parse_num(v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "output.checkpoint" => self.write_checkpoint = parse_bool(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { line: line_no, msg: format!("expected `key=value`, found `{line}`") })?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(Error::Config { line: line_no, msg: format!("key `{key}` already set on line {prev}") });
            }
            cfg.set(key, value).map_err(|msg| Error::Config { line: line_no, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigConstraint(msg));
        if self.lsr_length > self.k {
            return fail(format!("lsr.length ({}) must not exceed esr.k ({})", self.lsr_length, self.k));
        }
        if self.lsr_length == 0 || self.k == 0 {
            return fail("esr.k and lsr.length must be at least 1".into());
        }
        if matches!(self.world_source, WorldSource::Synthetic) && self.k > self.n_items {
            return fail(format!("esr.k ({}) must not exceed world.n_items ({})", self.k, self.n_items));
        }
        if let WorldSource::Dense(p) = &self.world_source {
            if p.as_os_str().is_empty() {
                return fail("world.source=dense requires world.path".into());
            }
        }
        if self.total_steps == 0 {
            return fail("train.total_steps must be at least 1".into());
        }
        if self.eval_every == 0 {
            return fail("train.eval_every must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("pg.batch_size must be at least 1".into());
        }
        if self.n_experts == 0 || self.embed_dim == 0 {
            return fail("esr.experts and esr.dim must be at least 1".into());
        }
        if [self.n_users, self.n_items, self.d_x, self.d_a, self.d_h].contains(&0) {
            return fail("world dimensions must be at least 1".into());
        }
        if !(self.tau > 0.0) || !(self.lsr_tau > 0.0) {
            return fail("esr.tau and lsr.tau must be positive".into());
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0) || !lr.is_finite() {
                return fail("pg.lr must be positive and finite".into());
            }
        }
        if !(self.reward_offset >= 0.0) || !(self.sigma >= 0.0) || !(self.init_std >= 0.0) {
            return fail("world.c, world.sigma and esr.init_std must be non-negative".into());
        }
        if !(self.overflow_threshold > 0.0) {
            return fail("pg.overflow_threshold must be positive".into());
        }
        if self.grpo_enabled {
            if self.grpo_group_size < 2 {
                return fail("pg.grpo.group_size must be at least 2".into());
            }
            if self.batch_size % self.grpo_group_size != 0 {
                return fail(format!(
                    "pg.batch_size ({}) must be a multiple of pg.grpo.group_size ({})",
                    self.batch_size, self.grpo_group_size
                ));
            }
        }
        if self.adaptive_lr && self.adaptive_lr_contexts == 0 {
            return fail("pg.adaptive_lr_contexts must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        put("seed", self.seed.to_string());
        put("precision", match self.precision { Precision::F64 => "f64", Precision::F32 => "f32" }.into());
        match &self.world_source {
            WorldSource::Synthetic => put("world.source", "synthetic".into()),
            WorldSource::Dense(p) => {
                put("world.source", "dense".into());
                put("world.path", p.display().to_string());
            }
        }
        if let Some(s) = self.world_seed {
            put("world.seed", s.to_string());
        }
        put("world.n_users", self.n_users.to_string());
        put("world.n_items", self.n_items.to_string());
        put("world.d_x", self.d_x.to_string());
        put("world.d_a", self.d_a.to_string());
        put("world.d_h", self.d_h.to_string());
        put("world.c", format!("{:?}", self.reward_offset));
        put("world.sigma", format!("{:?}", self.sigma));
        put("esr.k", self.k.to_string());
        put("esr.experts", self.n_experts.to_string());
        put(
            "esr.assignment",
            match self.assignment { AssignmentScheme::Contiguous => "contiguous", AssignmentScheme::RoundRobin => "round_robin" }.into(),
        );
        put("esr.tau", format!("{:?}", self.tau));
        put("esr.init_std", format!("{:?}", self.init_std));
        put("esr.dim", self.embed_dim.to_string());
        put("lsr.mode", self.lsr_mode.to_string());
        put("lsr.tau", format!("{:?}", self.lsr_tau));
        put("lsr.length", self.lsr_length.to_string());
        put("position.scheme", match self.position_scheme { WeightScheme::Uniform => "uniform", WeightScheme::Dcg => "dcg" }.into());
        put("pg.kind", self.kind.to_string());
        put("pg.lr", self.lr.map_or("default".to_string(), |v| format!("{v:?}")));
        put("pg.batch_size", self.batch_size.to_string());
        put("pg.grpo.enabled", self.grpo_enabled.to_string());
        put("pg.grpo.group_size", self.grpo_group_size.to_string());
        put("pg.grpo.shift_c", format!("{:?}", self.grpo_shift_c));
        put("pg.adaptive_lr", self.adaptive_lr.to_string());
        put("pg.adaptive_lr_contexts", self.adaptive_lr_contexts.to_string());
        put("pg.overflow_threshold", format!("{:?}", self.overflow_threshold));
        put("train.total_steps", self.total_steps.to_string());
        put("train.eval_every", self.eval_every.to_string());
        put("output.dir", self.output_dir.display().to_string());
        put("output.checkpoint", self.write_checkpoint.to_string());
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.kind.default_lr())
    }

    pub fn world_seed(&self) -> u64 {
        self.world_seed.unwrap_or(self.seed)
    }
}
