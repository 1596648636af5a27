//! Distorted-MNIST experiment harness and the regular-grid equivalence check.
//!
//! Pixels are placed at integer coordinates `(col, row)` and then displaced
//! by Gaussian noise. In [`DistortionMode::Shared`] every image (train and
//! test) lives on one displaced domain, so a single receptive graph serves
//! the whole run. [`DistortionMode::PerEntry`] draws a fresh domain per image.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::domain::{regular_grid_points, Entry, Point, PointSet};
use crate::error::{GconvError, Result};
use crate::gconv::{conv_forward, Kernel};
use crate::mnist::MnistSet;
use crate::network::{Layer, Network, NetworkConfig};
use crate::optim::{metrics_csv, train_with_callback, Dataset, EpochMetrics, SgdConfig};
use crate::receptive::{build_rect_graph, RectWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistortionMode {
    #[default]
    Shared,
    PerEntry,
}

impl fmt::Display for DistortionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistortionMode::Shared => "shared",
            DistortionMode::PerEntry => "per-entry",
        })
    }
}

impl FromStr for DistortionMode {
    type Err = GconvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(DistortionMode::Shared),
            "per-entry" => Ok(DistortionMode::PerEntry),
            other => Err(GconvError::InvalidParameter(format!(
                "unknown distortion mode `{other}` (expected shared or per-entry)"
            ))),
        }
    }
}

/// Gaussian displacement of every point, `sigma` in units of the pixel pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub sigma: f64,
    pub seed: u64,
    pub mode: DistortionMode,
}

impl DistortionSpec {
    pub fn new(sigma: f64, seed: u64, mode: DistortionMode) -> Result<Self> {
        let spec = Self { sigma, seed, mode };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(GconvError::InvalidParameter(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Adds independent `N(0, sigma^2)` offsets to both coordinates.
pub fn displace<R: Rng + ?Sized>(points: &[Point], sigma: f64, rng: &mut R) -> Result<Vec<Point>> {
    if sigma == 0.0 {
        return Ok(points.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| GconvError::InvalidParameter(e.to_string()))?;
    Ok(points
        .iter()
        .map(|p| {
            let dx = normal.sample(rng);
            let dy = normal.sample(rng);
            Point::new(p.x + dx, p.y + dy)
        })
        .collect())
}

/// The displaced domain drawn from `spec.seed`.
pub fn distort_domain(points: &[Point], spec: &DistortionSpec) -> Result<Vec<Point>> {
    spec.validate()?;
    displace(points, spec.sigma, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gcnn,
    Mlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gcnn => "gcnn",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = GconvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcnn" => Ok(ModelKind::Gcnn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(GconvError::InvalidParameter(format!(
                "unknown model `{other}` (expected gcnn or mlp)"
            ))),
        }
    }
}

/// Train and test sets on (possibly displaced) pixel domains.
#[derive(Debug, Clone)]
pub struct DistortedData {
    pub train: Dataset,
    pub test: Dataset,
}

fn to_dataset<F>(set: &MnistSet, limit: usize, mut domain: F) -> Result<Dataset>
where
    F: FnMut() -> Result<Arc<PointSet>>,
{
    let n = limit.min(set.len());
    let pixels = set.rows * set.cols;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let values = Array2::from_shape_vec((pixels, 1), set.image(i).to_vec()).expect("image length");
        entries.push(Entry::new(domain()?, values)?);
    }
    let labels = set.labels[..n].iter().map(|&l| usize::from(l)).collect();
    Dataset::new(entries, labels)
}

/// Places the first `train_size` / `test_size` images on displaced domains.
pub fn distorted_datasets(
    train: &MnistSet,
    test: &MnistSet,
    train_size: usize,
    test_size: usize,
    spec: &DistortionSpec,
) -> Result<DistortedData> {
    spec.validate()?;
    if train.rows != test.rows || train.cols != test.cols {
        return Err(GconvError::Shape("train and test images differ in size".into()));
    }
    let grid = regular_grid_points(train.cols, train.rows);
    match spec.mode {
        DistortionMode::Shared => {
            let shared = Arc::new(PointSet::sequential(distort_domain(&grid, spec)?)?);
            Ok(DistortedData {
                train: to_dataset(train, train_size, || Ok(Arc::clone(&shared)))?,
                test: to_dataset(test, test_size, || Ok(Arc::clone(&shared)))?,
            })
        }
        DistortionMode::PerEntry => {
            let draw = |stream: u64| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(stream);
                let grid = &grid;
                move || Ok(Arc::new(PointSet::sequential(displace(grid, spec.sigma, &mut rng)?)?))
            };
            Ok(DistortedData {
                train: to_dataset(train, train_size, draw(0))?,
                test: to_dataset(test, test_size, draw(1))?,
            })
        }
    }
}

/// One `(distortion, model)` training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub network: NetworkConfig,
    pub distortion: DistortionSpec,
    pub sgd: SgdConfig,
    pub train_size: usize,
    pub test_size: usize,
}

impl ExperimentConfig {
    /// Default architecture for `model` at distortion `sigma`, all seeds set
    /// to `seed`.
    pub fn new(model: ModelKind, sigma: f64, seed: u64) -> Self {
        let network = match model {
            ModelKind::Gcnn => NetworkConfig::gcnn(),
            ModelKind::Mlp => NetworkConfig::mlp(),
        };
        Self {
            model,
            network: NetworkConfig { seed, ..network },
            distortion: DistortionSpec {
                sigma,
                seed,
                mode: DistortionMode::Shared,
            },
            sgd: SgdConfig {
                seed,
                ..SgdConfig::default()
            },
            train_size: 5_000,
            test_size: 1_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.distortion.validate()?;
        self.sgd.validate()?;
        if self.train_size == 0 || self.test_size == 0 {
            return Err(GconvError::InvalidParameter("subset sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}-sigma{}-{}-seed{}",
            self.model, self.distortion.sigma, self.distortion.mode, self.sgd.seed
        )
    }

    /// Every knob of the run as `key=value` lines.
    pub fn describe(&self, params: usize) -> String {
        let mut s = format!("model={}\n", self.model);
        s.push_str(&self.network.to_string());
        let d = &self.distortion;
        let g = &self.sgd;
        let _ = writeln!(s, "sigma={}\nmode={}\ndistortion_seed={}", d.sigma, d.mode, d.seed);
        let _ = writeln!(
            s,
            "learning_rate={}\nmomentum={}\nl2={}\nbatch_size={}\nepochs={}\nsgd_seed={}",
            g.learning_rate, g.momentum, g.l2, g.batch_size, g.epochs, g.seed
        );
        let _ = writeln!(s, "train_size={}\ntest_size={}\nparams={}", self.train_size, self.test_size, params);
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub run_id: String,
    pub params: usize,
    pub metrics: Vec<EpochMetrics>,
    pub network: Network,
    pub dir: Option<PathBuf>,
}

impl ExperimentOutcome {
    pub fn final_test_error(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.test_error)
    }
}

/// Trains on prepared data; with `out` set, writes `metrics.csv`,
/// `config.txt` and one checkpoint per conv layer under `out/<run-id>/`.
pub fn run_on(
    cfg: &ExperimentConfig,
    data: &DistortedData,
    out: Option<&Path>,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut net = Network::from_config(&cfg.network)?;
    let params = net.count_params();
    let metrics = train_with_callback(&mut net, &data.train, &data.test, &cfg.sgd, on_epoch)?;
    let run_id = cfg.run_id();
    let dir = match out {
        Some(root) => {
            let dir = root.join(&run_id);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("metrics.csv"), metrics_csv(&metrics))?;
            std::fs::write(dir.join("config.txt"), cfg.describe(params))?;
            let convs = net.layers().iter().filter_map(|l| match l {
                Layer::GConv(g) => Some(&g.kernel),
                _ => None,
            });
            for (i, kernel) in convs.enumerate() {
                let file = std::fs::File::create(dir.join(format!("conv{i}.gck")))?;
                kernel.write_checkpoint(std::io::BufWriter::new(file))?;
            }
            Some(dir)
        }
        None => None,
    };
    Ok(ExperimentOutcome {
        run_id,
        params,
        metrics,
        network: net,
        dir,
    })
}

/// Builds the distorted subsets and runs [`run_on`].
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &MnistSet,
    test: &MnistSet,
    out: Option<&Path>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = distorted_datasets(train, test, cfg.train_size, cfg.test_size, &cfg.distortion)?;
    run_on(cfg, &data, out, |_| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sigma: f64,
    pub model: ModelKind,
    pub params: usize,
    pub final_test_error: f64,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("sigma,model,params,final_test_error\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.sigma, r.model, r.params, r.final_test_error);
    }
    s
}

/// States how far apart the parameter budgets of the compared models are.
pub fn parity_report(rows: &[SummaryRow]) -> String {
    let count = |m: ModelKind| rows.iter().find(|r| r.model == m).map(|r| r.params);
    match (count(ModelKind::Gcnn), count(ModelKind::Mlp)) {
        (Some(g), Some(m)) if g == m => format!("parameter counts match: gcnn {g}, mlp {m}\n"),
        (Some(g), Some(m)) => format!(
            "parameter counts differ: gcnn {g}, mlp {m} (ratio {:.3}); the models are not an equal-budget pair\n",
            g as f64 / m as f64
        ),
        _ => String::new(),
    }
}

/// Every `(sigma, model)` combination; `jobs` runs execute concurrently.
/// Rows come back in `sigmas x models` order regardless of `jobs`.
pub fn run_sweep(
    base: &[ExperimentConfig],
    sigmas: &[f64],
    train: &MnistSet,
    test: &MnistSet,
    out: Option<&Path>,
    jobs: usize,
) -> Result<Vec<SummaryRow>> {
    let mut plan = Vec::new();
    for &sigma in sigmas {
        for cfg in base {
            let mut c = cfg.clone();
            c.distortion.sigma = sigma;
            c.validate()?;
            plan.push(c);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| GconvError::InvalidParameter(e.to_string()))?;
    let rows = pool.install(|| {
        plan.par_iter()
            .map(|cfg| {
                let outcome = run_experiment(cfg, train, test, out)?;
                Ok(SummaryRow {
                    sigma: cfg.distortion.sigma,
                    model: cfg.model,
                    params: outcome.params,
                    final_test_error: outcome.final_test_error(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if let Some(root) = out {
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join("summary.csv"), summary_csv(&rows))?;
        std::fs::write(root.join("parameters.txt"), parity_report(&rows))?;
    }
    Ok(rows)
}

/// Zero-padded 2-D cross-correlation of a row-major `height x width` image
/// with a `(2q+1) x (2p+1)` kernel stored row-major.
pub fn dense_correlate(image: &[f64], width: usize, height: usize, kernel: &[f64], p: usize, q: usize) -> Vec<f64> {
    let kw = 2 * p + 1;
    let mut out = vec![0.0; width * height];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            for kr in 0..2 * q + 1 {
                for kc in 0..kw {
                    let (sr, sc) = (r + kr, c + kc);
                    if sr < q || sc < p || sr - q >= height || sc - p >= width {
                        continue;
                    }
                    acc += image[(sr - q) * width + (sc - p)] * kernel[kr * kw + kc];
                }
            }
            out[r * width + c] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub max_abs_diff: f64,
}

/// Generalized conv on the undisplaced `width x height` grid against
/// [`dense_correlate`], for random images and kernels.
pub fn check_equivalence_with(
    seed: u64,
    trials: usize,
    width: usize,
    height: usize,
    p: usize,
    q: usize,
) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = RectWindow::new(p, q, 1.0)?;
    let graph = build_rect_graph(&regular_grid_points(width, height), &window);
    let n = window.slot_count();
    let mut max_abs_diff: f64 = 0.0;
    for _ in 0..trials {
        let image: Vec<f64> = (0..width * height).map(|_| rng.random_range(0.0..1.0)).collect();
        let taps: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel = Kernel::new(
            Array3::from_shape_vec((1, 1, n), taps.clone()).expect("n taps"),
            Array1::zeros(1),
        )?;
        let input = Array3::from_shape_vec((1, width * height, 1), image.clone()).expect("pixels");
        let got = conv_forward(input.view(), &graph, &kernel)?;
        let want = dense_correlate(&image, width, height, &taps, p, q);
        for (g, w) in got.iter().zip(&want) {
            max_abs_diff = max_abs_diff.max((g - w).abs());
        }
    }
    Ok(EquivalenceReport { trials, max_abs_diff })
}

/// Ten random 28x28 images with 5x5 kernels.
pub fn check_standard_equivalence(seed: u64) -> Result<EquivalenceReport> {
    check_equivalence_with(seed, 10, 28, 28, 2, 2)
}
