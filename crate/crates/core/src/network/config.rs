//! `key=value` architecture description.
//!
//! ```text
//! # generalized CNN
//! layers=gconv,pool,dense
//! feature_maps=20
//! hidden=500
//! p=2
//! q=2
//! mu=1
//! pool_side=2
//! width=28
//! height=28
//! channels=1
//! classes=10
//! seed=42
//! ```
//!
//! `gconv` layers take their widths from `feature_maps` in order and always
//! apply the fused bias + ReLU; every `dense` token is a hidden layer (with
//! ReLU) sized from `hidden`. The softmax output layer of `classes` units is
//! implicit. `p`, `q`, `mu` and `pool_side` are expressed in units of the
//! current lattice pitch, which grows by `pool_side` after every pool.

use std::fmt;
use std::str::FromStr;

use crate::error::{GconvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    GConv,
    Pool,
    Dense,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::GConv => "gconv",
            LayerKind::Pool => "pool",
            LayerKind::Dense => "dense",
        })
    }
}

impl FromStr for LayerKind {
    type Err = GconvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gconv" => Ok(LayerKind::GConv),
            "pool" => Ok(LayerKind::Pool),
            "dense" => Ok(LayerKind::Dense),
            other => Err(GconvError::InvalidParameter(format!("unknown layer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub layers: Vec<LayerKind>,
    pub feature_maps: Vec<usize>,
    pub hidden: Vec<usize>,
    pub p: usize,
    pub q: usize,
    pub mu: f64,
    pub pool_side: f64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub classes: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// One generalized conv layer (20 maps, 5x5 window), 2x2 max-pool,
    /// 500 hidden units, 10-way softmax, on 28x28 inputs.
    pub fn gcnn() -> Self {
        Self {
            layers: vec![LayerKind::GConv, LayerKind::Pool, LayerKind::Dense],
            feature_maps: vec![20],
            hidden: vec![500],
            p: 2,
            q: 2,
            mu: 1.0,
            pool_side: 2.0,
            width: 28,
            height: 28,
            channels: 1,
            classes: 10,
            seed: 42,
        }
    }

    /// Two hidden layers of 500 units.
    pub fn mlp() -> Self {
        Self::mlp_with_hidden(500)
    }

    pub fn mlp_with_hidden(units: usize) -> Self {
        Self {
            layers: vec![LayerKind::Dense, LayerKind::Dense],
            feature_maps: vec![],
            hidden: vec![units, units],
            ..Self::gcnn()
        }
    }

    /// Two-hidden-layer MLP on the same inputs as `base` whose width `h`
    /// brings its parameter count as close as possible to `target`.
    pub fn mlp_matching(target: usize, base: &NetworkConfig) -> Self {
        let inputs = base.width * base.height * base.channels;
        let classes = base.classes;
        // count(h) = (inputs+1)h + (h+1)h + (h+1)classes
        let count = |h: usize| (inputs + 1) * h + (h + 1) * h + (h + 1) * classes;
        let b = (inputs + 2 + classes) as f64;
        let c = classes as f64 - target as f64;
        let approx = ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).max(1.0) as usize;
        let best = (approx.saturating_sub(1).max(1)..=approx + 1)
            .min_by_key(|&h| count(h).abs_diff(target))
            .expect("non-empty range");
        Self {
            layers: vec![LayerKind::Dense, LayerKind::Dense],
            feature_maps: vec![],
            hidden: vec![best, best],
            ..base.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let convs = self.layers.iter().filter(|&&l| l == LayerKind::GConv).count();
        let denses = self.layers.iter().filter(|&&l| l == LayerKind::Dense).count();
        if convs != self.feature_maps.len() {
            return Err(GconvError::InvalidParameter(format!(
                "{convs} gconv layers but {} feature_maps values",
                self.feature_maps.len()
            )));
        }
        if denses != self.hidden.len() {
            return Err(GconvError::InvalidParameter(format!(
                "{denses} dense layers but {} hidden values",
                self.hidden.len()
            )));
        }
        if let Some(pos) = self.layers.iter().position(|&l| l == LayerKind::Dense) {
            if self.layers[pos..].iter().any(|&l| l != LayerKind::Dense) {
                return Err(GconvError::InvalidParameter(
                    "spatial layers cannot follow a dense layer".into(),
                ));
            }
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(GconvError::InvalidParameter(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.pool_side.is_finite() && self.pool_side > 0.0) {
            return Err(GconvError::InvalidParameter(format!(
                "pool_side must be positive, got {}",
                self.pool_side
            )));
        }
        if self.classes == 0 || self.channels == 0 {
            return Err(GconvError::InvalidParameter("classes and channels must be >= 1".into()));
        }
        if self.feature_maps.contains(&0) || self.hidden.contains(&0) {
            return Err(GconvError::InvalidParameter("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::gcnn();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| GconvError::Parse { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64> { v.parse().map_err(|_| err(format!("bad number `{v}`"))) };
            let int = |v: &str| -> Result<usize> { v.parse().map_err(|_| err(format!("bad integer `{v}`"))) };
            let list = |v: &str| -> Result<Vec<usize>> {
                v.split(',').filter(|s| !s.trim().is_empty()).map(|s| int(s.trim())).collect()
            };
            match key {
                "layers" => {
                    cfg.layers = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(str::parse)
                        .collect::<Result<_>>()?
                }
                "feature_maps" => cfg.feature_maps = list(value)?,
                "hidden" => cfg.hidden = list(value)?,
                "p" => cfg.p = int(value)?,
                "q" => cfg.q = int(value)?,
                "mu" => cfg.mu = num(value)?,
                "pool_side" => cfg.pool_side = num(value)?,
                "width" => cfg.width = int(value)?,
                "height" => cfg.height = int(value)?,
                "channels" => cfg.channels = int(value)?,
                "classes" => cfg.classes = int(value)?,
                "seed" => cfg.seed = value.parse().map_err(|_| err(format!("bad seed `{value}`")))?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layers={}", join(&self.layers))?;
        writeln!(f, "feature_maps={}", join(&self.feature_maps))?;
        writeln!(f, "hidden={}", join(&self.hidden))?;
        writeln!(f, "p={}", self.p)?;
        writeln!(f, "q={}", self.q)?;
        writeln!(f, "mu={}", self.mu)?;
        writeln!(f, "pool_side={}", self.pool_side)?;
        writeln!(f, "width={}", self.width)?;
        writeln!(f, "height={}", self.height)?;
        writeln!(f, "channels={}", self.channels)?;
        writeln!(f, "classes={}", self.classes)?;
        writeln!(f, "seed={}", self.seed)
    }
}
