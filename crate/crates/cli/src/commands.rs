use std::fmt;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gconv::domain::{regular_grid_points, Point};
use gconv::experiment::{
    check_equivalence_with, distort_domain, parity_report, run_experiment, run_sweep, summary_csv,
    DistortionMode, DistortionSpec, ExperimentConfig, ModelKind,
};
use gconv::gradcheck;
use gconv::mnist::{load_mnist, resolve_dir, MnistSet};
use gconv::network::{LayerKind, Network, NetworkConfig};
use gconv::{build_rect_graph, GconvError, RectWindow, SgdConfig};

use crate::{
    ArchArgs, Cli, Command, DataArgs, DistortArgs, EquivalenceArgs, GradcheckArgs, InspectArgs, OptimArgs,
    SweepArgs, TrainArgs,
};

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn invalid(e: impl fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::CheckEquivalence(a) => equivalence(a),
        Command::Distort(a) => distort(a),
        Command::InspectGraph(a) => inspect(a),
    }
}

fn sgd_config(o: &OptimArgs) -> CliResult<SgdConfig> {
    let cfg = SgdConfig {
        learning_rate: o.lr,
        momentum: o.momentum,
        l2: o.l2,
        batch_size: o.batch,
        epochs: o.epochs,
        seed: o.seed,
    };
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

fn apply_arch(mut cfg: NetworkConfig, arch: &ArchArgs) -> NetworkConfig {
    cfg.p = arch.p.unwrap_or(cfg.p);
    cfg.q = arch.q.unwrap_or(cfg.q);
    cfg.mu = arch.mu.unwrap_or(cfg.mu);
    if cfg.layers.contains(&LayerKind::GConv) {
        if let Some(maps) = &arch.feature_maps {
            cfg.feature_maps = maps.clone();
        }
    }
    if let Some(h) = arch.hidden {
        cfg.hidden.iter_mut().for_each(|w| *w = h);
    }
    cfg
}

fn network_config(
    model: ModelKind,
    arch: &ArchArgs,
    file: Option<&NetworkConfig>,
    seed: u64,
) -> CliResult<NetworkConfig> {
    let base = match (file, model) {
        (Some(cfg), _) => cfg.clone(),
        (None, ModelKind::Gcnn) => NetworkConfig::gcnn(),
        (None, ModelKind::Mlp) => NetworkConfig::mlp(),
    };
    let mut cfg = apply_arch(NetworkConfig { seed, ..base }, arch);
    if arch.match_params && model == ModelKind::Mlp {
        let reference = apply_arch(NetworkConfig { seed, ..NetworkConfig::gcnn() }, arch);
        let target = Network::from_config(&reference).map_err(invalid)?.count_params();
        cfg = NetworkConfig::mlp_matching(target, &cfg);
    }
    cfg.validate().map_err(invalid)?;
    let has_conv = cfg.layers.contains(&LayerKind::GConv);
    if has_conv != (model == ModelKind::Gcnn) {
        return Err(invalid(format!("architecture does not describe a {model}")));
    }
    Ok(cfg)
}

fn experiment_config(
    model: ModelKind,
    sigma: f64,
    data: &DataArgs,
    optim: &OptimArgs,
    arch: &ArchArgs,
    file: Option<&NetworkConfig>,
) -> CliResult<ExperimentConfig> {
    let mode: DistortionMode = data.mode.parse().map_err(invalid)?;
    let cfg = ExperimentConfig {
        model,
        network: network_config(model, arch, file, optim.seed)?,
        distortion: DistortionSpec::new(sigma, optim.seed, mode).map_err(invalid)?,
        sgd: sgd_config(optim)?,
        train_size: data.train_size,
        test_size: data.test_size,
    };
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

fn mnist_dir(data: &DataArgs) -> CliResult<PathBuf> {
    resolve_dir(data.mnist.as_deref())
        .ok_or_else(|| invalid("no MNIST directory: pass --mnist or set GCONV_MNIST_DIR"))
}

fn load(dir: &Path, data: &DataArgs) -> CliResult<(MnistSet, MnistSet)> {
    let (train, test) = load_mnist(dir).map_err(|e| runtime(format!("loading MNIST from {}: {e}", dir.display())))?;
    Ok((train.truncated(data.train_size), test.truncated(data.test_size)))
}

fn train(a: TrainArgs) -> CliResult<()> {
    let model: ModelKind = a.model.parse().map_err(invalid)?;
    let file = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            Some(NetworkConfig::parse(&text).map_err(invalid)?)
        }
        None => None,
    };
    let cfg = experiment_config(model, a.sigma, &a.data, &a.optim, &a.arch, file.as_ref())?;
    let dir = mnist_dir(&a.data)?;
    let (train, test) = load(&dir, &a.data)?;
    let outcome = run_experiment(&cfg, &train, &test, Some(&a.out)).map_err(runtime)?;
    println!("run {} ({} parameters)", outcome.run_id, outcome.params);
    println!("epoch,train_loss,test_error");
    for m in &outcome.metrics {
        println!("{},{},{}", m.epoch, m.train_loss, m.test_error);
    }
    if let Some(d) = &outcome.dir {
        println!("wrote {}", d.display());
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    if a.sigmas.is_empty() || a.models.is_empty() {
        return Err(invalid("--sigmas and --models must not be empty"));
    }
    if a.jobs == 0 {
        return Err(invalid("--jobs must be >= 1"));
    }
    let mut base = Vec::new();
    for name in &a.models {
        let model: ModelKind = name.parse().map_err(invalid)?;
        for &sigma in &a.sigmas {
            experiment_config(model, sigma, &a.data, &a.optim, &a.arch, None)?;
        }
        base.push(experiment_config(model, a.sigmas[0], &a.data, &a.optim, &a.arch, None)?);
    }
    let dir = mnist_dir(&a.data)?;
    let (train, test) = load(&dir, &a.data)?;
    let rows = run_sweep(&base, &a.sigmas, &train, &test, Some(&a.out), a.jobs).map_err(runtime)?;
    print!("{}", summary_csv(&rows));
    print!("{}", parity_report(&rows));
    println!("wrote {}", a.out.join("summary.csv").display());
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> CliResult<()> {
    if a.instances == 0 {
        return Err(invalid("--instances must be >= 1"));
    }
    let reports = gradcheck::run_all(a.seed, a.instances).map_err(runtime)?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{}: instances={} rejected={} checked={} max_rel_error={:e} tolerance={:e} {}",
            r.name,
            r.instances,
            r.rejected,
            r.checked,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    if ok {
        Ok(())
    } else {
        Err(runtime("gradient check failed"))
    }
}

fn equivalence(a: EquivalenceArgs) -> CliResult<()> {
    if a.trials == 0 || a.width == 0 || a.height == 0 {
        return Err(invalid("--trials, --width and --height must be >= 1"));
    }
    let r = check_equivalence_with(a.seed, a.trials, a.width, a.height, a.p, a.q).map_err(runtime)?;
    println!("trials={} max_abs_diff={:e}", r.trials, r.max_abs_diff);
    if r.max_abs_diff < 1e-12 {
        Ok(())
    } else {
        Err(runtime("generalized and dense convolutions disagree"))
    }
}

fn open_out(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(std::fs::File::create(p).map_err(runtime)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn distorted_grid(sigma: f64, seed: u64, width: usize, height: usize) -> CliResult<Vec<Point>> {
    let spec = DistortionSpec::new(sigma, seed, DistortionMode::Shared).map_err(invalid)?;
    distort_domain(&regular_grid_points(width, height), &spec).map_err(invalid)
}

fn distort(a: DistortArgs) -> CliResult<()> {
    let points = distorted_grid(a.sigma, a.seed, a.width, a.height)?;
    let mut out = open_out(a.out.as_deref())?;
    writeln!(out, "id,x,y").map_err(runtime)?;
    for (i, p) in points.iter().enumerate() {
        writeln!(out, "{i},{},{}", p.x, p.y).map_err(runtime)?;
    }
    out.flush().map_err(runtime)
}

fn read_points(path: &Path) -> CliResult<Vec<Point>> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || invalid(format!("{}:{}: expected id,x,y", path.display(), i + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [_, x, y] = fields.as_slice() else {
            return Err(bad());
        };
        let p = Point::new(x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?);
        if !p.is_finite() {
            return Err(bad());
        }
        points.push(p);
    }
    Ok(points)
}

fn inspect(a: InspectArgs) -> CliResult<()> {
    let window = RectWindow::new(a.p, a.q, a.mu).map_err(invalid)?;
    let points = match &a.points {
        Some(path) => read_points(path)?,
        None => distorted_grid(a.sigma, a.seed, a.width, a.height)?,
    };
    let graph = build_rect_graph(&points, &window);
    let degrees: Vec<usize> = (0..graph.point_count())
        .map(|v| graph.in_edges(v).map(<[_]>::len))
        .collect::<Result<_, GconvError>>()
        .map_err(runtime)?;
    eprintln!(
        "points={} edges={} slots={} in_degree_min={} in_degree_max={}",
        graph.point_count(),
        graph.edge_count(),
        graph.slot_count(),
        degrees.iter().min().copied().unwrap_or(0),
        degrees.iter().max().copied().unwrap_or(0)
    );
    let mut out = open_out(a.out.as_deref())?;
    graph.write_dump(&mut out).map_err(runtime)?;
    out.flush().map_err(runtime)
}
