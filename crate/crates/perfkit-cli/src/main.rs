//! Command-line front end composing phantom generation, MCMC fitting and
//! posterior summarisation into reproducible runs.
//!
//! Exit status: 0 success, 1 runtime failure, 2 usage or configuration
//! error. Machine-readable output goes to files or stdout; diagnostics to
//! stderr. `PERFKIT_THREADS` caps the number of concurrently running chains.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use perfkit::diagnostics::summarize_fit;
use perfkit::io::{
    map_path, read_blocks, read_config, read_dataset, read_map, write_dataset, write_maps,
    write_samples, write_truth_maps, MapGrid, RunConfig, MAP_QUANTITIES,
};
use perfkit::phantom::generate_phantom;
use perfkit::sampler::{run_chain, ModelKind, SampleStore, SamplerConfig};

#[derive(Parser)]
#[command(name = "perfkit", version, about = "Bayesian compartment-model fitting for DCE-MRI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic phantom dataset and its ground truth
    Simulate {
        /// Run-configuration JSON (use `{}` for all defaults)
        #[arg(long)]
        config: PathBuf,
        /// Existing output directory
        #[arg(long)]
        out: PathBuf,
        /// Overrides the phantom seed from the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a compartment model to a dataset with MCMC
    Fit {
        /// Dataset directory (dataset.csv + dataset.json)
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, value_enum)]
        prior: PriorArg,
        #[arg(long)]
        config: PathBuf,
        /// Existing output directory
        #[arg(long)]
        out: PathBuf,
        /// Overrides the sampler seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Independent chains with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Print per-block and global medians of a fit's maps as CSV
    Summarize {
        /// Fit output directory
        #[arg(long)]
        fit: PathBuf,
        /// Directory holding truth_*.csv maps for relative errors
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print per-voxel and block-level SSE/DIC deltas between two fits
    Compare {
        #[arg(long = "fit-a")]
        fit_a: PathBuf,
        #[arg(long = "fit-b")]
        fit_b: PathBuf,
        /// Directory holding truth_blocks.csv for block-level rows
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "1comp")]
    OneComp,
    #[value(name = "2comp")]
    TwoComp,
    #[value(name = "exttofts")]
    ExtTofts,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::OneComp => ModelKind::OneComp,
            ModelArg::TwoComp => ModelKind::TwoComp,
            ModelArg::ExtTofts => ModelKind::ExtTofts,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Voxelwise,
    Spatial,
}

enum CliError {
    /// Usage or configuration problems; exit status 2.
    Config(String),
    /// Failures while running; exit status 1.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, out, seed } => simulate(&config, &out, seed),
        Command::Fit { data, model, prior, config, out, seed, chains } => {
            fit(&data, model, prior, &config, &out, seed, chains)
        }
        Command::Summarize { fit, truth } => summarize(&fit, truth.as_deref()),
        Command::Compare { fit_a, fit_b, truth } => compare(&fit_a, &fit_b, truth.as_deref()),
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_dir() {
        return Err(CliError::Config(format!(
            "{what} directory `{}` does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    read_config(path).map_err(|e| CliError::Config(e.to_string()))
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Writes CSV lines to stdout; a closed pipe ends the command successfully.
struct CsvOut {
    out: std::io::BufWriter<std::io::Stdout>,
    closed: bool,
}

impl CsvOut {
    fn new() -> Self {
        CsvOut { out: std::io::BufWriter::new(std::io::stdout()), closed: false }
    }

    fn line(&mut self, args: std::fmt::Arguments<'_>) -> Result<(), CliError> {
        use std::io::Write as _;
        if self.closed {
            return Ok(());
        }
        match self.out.write_fmt(args).and_then(|()| self.out.write_all(b"\n")) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {
                self.closed = true;
                Ok(())
            }
            Err(e) => Err(runtime(e)),
        }
    }
}

macro_rules! csv_line {
    ($out:expr, $($arg:tt)*) => { $out.line(format_args!($($arg)*)) };
}

fn simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    require_dir(out, "output")?;
    let mut config = load_config(config_path)?;
    if let Some(seed) = seed {
        config.phantom.0.seed = seed;
    }
    let (dataset, truth) = generate_phantom(&config.phantom.0).map_err(runtime)?;
    write_dataset(&dataset, out).map_err(runtime)?;
    write_truth_maps(&truth, out).map_err(runtime)?;
    let resolved = serde_json::to_string_pretty(&config).expect("config serialises");
    std::fs::write(out.join("config.json"), resolved).map_err(runtime)?;
    eprintln!(
        "[perfkit] wrote {}x{} phantom ({} times, seed {}) to {}",
        dataset.nx(),
        dataset.ny(),
        dataset.n_times(),
        config.phantom.0.seed,
        out.display()
    );
    Ok(())
}

fn chain_cap() -> Result<usize, CliError> {
    match std::env::var("PERFKIT_THREADS") {
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Config(format!("PERFKIT_THREADS must be a positive integer, got `{v}`"))),
    }
}

/// Runs `configs` chains concurrently, at most `cap` at a time.
fn run_chains(
    dataset: &perfkit::Dataset,
    configs: &[SamplerConfig],
    cap: usize,
) -> Result<Vec<SampleStore>, CliError> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SampleStore, String>>>> =
        Mutex::new(vec![None; configs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..cap.min(configs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= configs.len() {
                    break;
                }
                let result = run_chain(dataset, &configs[k]).map_err(|e| e.to_string());
                results.lock().unwrap()[k] = Some(result);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every chain ran").map_err(CliError::Runtime))
        .collect()
}

#[derive(Serialize)]
struct RunSummary<'a> {
    command: &'static str,
    dataset: String,
    model: String,
    prior: &'static str,
    chains: usize,
    chain_seeds: Vec<u64>,
    wall_seconds: f64,
    stored_draws_per_chain: usize,
    global_sse: f64,
    global_pd: f64,
    global_dic: f64,
    median_tau_eps: f64,
    mean_acceptance: f64,
    acceptance_in_band: f64,
    /// Fully resolved run configuration; rerunning with it and the seeds
    /// above reproduces this fit bit-exactly.
    config: &'a RunConfig,
    sampler: &'a SamplerConfig,
}

fn fit(
    data: &Path,
    model: ModelArg,
    prior: PriorArg,
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    chains: usize,
) -> Result<(), CliError> {
    require_dir(data, "data")?;
    require_dir(out, "output")?;
    if chains == 0 {
        return Err(CliError::Config("--chains must be at least 1".into()));
    }
    let config = load_config(config_path)?;
    let dataset = read_dataset(data).map_err(runtime)?;
    let model: ModelKind = model.into();
    let spatial = matches!(prior, PriorArg::Spatial);
    let base = config
        .sampler_config(model, spatial, seed, dataset.n_masked())
        .map_err(|e| CliError::Config(e.to_string()))?;

    let start = Instant::now();
    let configs: Vec<SamplerConfig> = (0..chains)
        .map(|k| {
            let mut c = base.clone();
            c.seed = base.seed + k as u64;
            c
        })
        .collect();
    let stores = run_chains(&dataset, &configs, chain_cap()?)?;

    for (k, store) in stores.iter().enumerate() {
        let chain_dir = out.join(format!("chain_{k}"));
        std::fs::create_dir_all(&chain_dir).map_err(runtime)?;
        write_samples(store, &chain_dir).map_err(runtime)?;
    }
    let stored_draws = stores[0].n_draws();
    let merged = SampleStore::merge(stores).map_err(runtime)?;
    let summary = summarize_fit(&merged, &dataset).map_err(runtime)?;
    write_maps(&summary, None, out).map_err(runtime)?;
    let wall = start.elapsed().as_secs_f64();

    let rates: Vec<f64> =
        summary.accept_rate.iter().flat_map(|per| per.iter().copied()).collect();
    let in_band =
        rates.iter().filter(|r| (0.10..=0.35).contains(*r)).count() as f64 / rates.len() as f64;
    let doc = RunSummary {
        command: "fit",
        dataset: data.display().to_string(),
        model: model.to_string(),
        prior: if spatial { "spatial" } else { "voxelwise" },
        chains,
        chain_seeds: configs.iter().map(|c| c.seed).collect(),
        wall_seconds: wall,
        stored_draws_per_chain: stored_draws,
        global_sse: summary.global_sse,
        global_pd: summary.global_pd,
        global_dic: summary.global_dic,
        median_tau_eps: summary.median_tau_eps,
        mean_acceptance: rates.iter().sum::<f64>() / rates.len() as f64,
        acceptance_in_band: in_band,
        config: &config,
        sampler: &base,
    };
    let json = serde_json::to_string_pretty(&doc).expect("summary serialises");
    std::fs::write(out.join("summary.json"), json).map_err(runtime)?;
    eprintln!(
        "[perfkit] fit {model} ({}) on {}x{}: {chains} chain(s), {:.1}s, global SSE {:.3}, pD {:.1}, DIC {:.1}",
        doc.prior,
        dataset.nx(),
        dataset.ny(),
        wall,
        summary.global_sse,
        summary.global_pd,
        summary.global_dic,
    );
    Ok(())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("no NaN in maps"));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

struct LoadedFit {
    nx: usize,
    ny: usize,
    mask: Vec<bool>,
    maps: Vec<(String, MapGrid)>,
}

fn load_fit(dir: &Path) -> Result<LoadedFit, CliError> {
    require_dir(dir, "fit")?;
    let mask_grid = read_map(&map_path(dir, "mask")).map_err(runtime)?;
    let mask: Vec<bool> = mask_grid.values.iter().map(|&v| v != 0.0).collect();
    let mut maps = Vec::new();
    for &q in MAP_QUANTITIES {
        if q == "mask" {
            continue;
        }
        let path = map_path(dir, q);
        if path.exists() {
            let grid = read_map(&path).map_err(runtime)?;
            if grid.nx != mask_grid.nx || grid.ny != mask_grid.ny {
                return Err(CliError::Runtime(format!(
                    "map {q} is {}x{} but mask is {}x{}",
                    grid.nx, grid.ny, mask_grid.nx, mask_grid.ny
                )));
            }
            maps.push((q.to_string(), grid));
        }
    }
    Ok(LoadedFit { nx: mask_grid.nx, ny: mask_grid.ny, mask, maps })
}

fn load_blocks(dir: &Path, nx: usize, ny: usize) -> Result<Vec<String>, CliError> {
    let (bx, by, labels) = read_blocks(&dir.join("truth_blocks.csv")).map_err(runtime)?;
    if bx != nx || by != ny {
        return Err(CliError::Runtime(format!(
            "truth grid {bx}x{by} does not match fit grid {nx}x{ny}"
        )));
    }
    Ok(labels)
}

fn block_labels_sorted(labels: &[String], mask: &[bool]) -> Vec<String> {
    let mut unique: Vec<String> = Vec::new();
    for (label, &m) in labels.iter().zip(mask) {
        if m && !unique.contains(label) {
            unique.push(label.clone());
        }
    }
    unique.sort();
    unique
}

fn summarize(fit_dir: &Path, truth_dir: Option<&Path>) -> Result<(), CliError> {
    let fit = load_fit(fit_dir)?;
    let truth = match truth_dir {
        None => None,
        Some(dir) => {
            require_dir(dir, "truth")?;
            let labels = load_blocks(dir, fit.nx, fit.ny)?;
            let mut truth_maps = Vec::new();
            for (q, _) in &fit.maps {
                let path = dir.join(format!("truth_{q}.csv"));
                if path.exists() {
                    let grid = read_map(&path).map_err(runtime)?;
                    truth_maps.push((q.clone(), grid));
                }
            }
            Some((labels, truth_maps))
        }
    };

    let masked: Vec<usize> = (0..fit.mask.len()).filter(|&i| fit.mask[i]).collect();
    let mut out = CsvOut::new();
    csv_line!(out, "scope,block,quantity,median,median_rel_err")?;
    let print_scope = |out: &mut CsvOut, scope: &str, block: &str, voxels: &[usize]| {
        for (q, grid) in &fit.maps {
            let med = median(voxels.iter().map(|&i| grid.values[i]).collect());
            let rel = truth.as_ref().and_then(|(_, tmaps)| {
                let (_, tgrid) = tmaps.iter().find(|(tq, _)| tq == q)?;
                median(
                    voxels
                        .iter()
                        .filter(|&&i| tgrid.values[i] != 0.0)
                        .map(|&i| (grid.values[i] - tgrid.values[i]).abs() / tgrid.values[i])
                        .collect(),
                )
            });
            match (med, rel) {
                (Some(m), Some(r)) => csv_line!(out, "{scope},{block},{q},{m},{r}")?,
                (Some(m), None) => csv_line!(out, "{scope},{block},{q},{m},")?,
                _ => {}
            }
        }
        Ok::<(), CliError>(())
    };
    print_scope(&mut out, "global", "", &masked)?;
    if let Some((labels, _)) = &truth {
        for block in block_labels_sorted(labels, &fit.mask) {
            let voxels: Vec<usize> =
                masked.iter().copied().filter(|&i| labels[i] == block).collect();
            print_scope(&mut out, "block", &block, &voxels)?;
        }
    }
    Ok(())
}

fn compare(fit_a: &Path, fit_b: &Path, truth_dir: Option<&Path>) -> Result<(), CliError> {
    let a = load_fit(fit_a)?;
    let b = load_fit(fit_b)?;
    if a.nx != b.nx || a.ny != b.ny || a.mask != b.mask {
        return Err(CliError::Runtime(format!(
            "fits have mismatched grids: {}x{} vs {}x{}",
            a.nx, a.ny, b.nx, b.ny
        )));
    }
    let pick = |fit: &LoadedFit, q: &str| -> Result<MapGrid, CliError> {
        fit.maps
            .iter()
            .find(|(name, _)| name == q)
            .map(|(_, g)| g.clone())
            .ok_or_else(|| CliError::Runtime(format!("fit is missing the {q} map")))
    };
    let (sse_a, sse_b) = (pick(&a, "sse")?, pick(&b, "sse")?);
    let (dic_a, dic_b) = (pick(&a, "dic")?, pick(&b, "dic")?);
    let labels = match truth_dir {
        None => None,
        Some(dir) => {
            require_dir(dir, "truth")?;
            Some(load_blocks(dir, a.nx, a.ny)?)
        }
    };

    let mut out = CsvOut::new();
    csv_line!(out, "scope,block,row,col,sse_a,sse_b,sse_delta,dic_a,dic_b,dic_delta")?;
    let masked: Vec<usize> = (0..a.mask.len()).filter(|&i| a.mask[i]).collect();
    for &i in &masked {
        let (row, col) = (i / a.nx + 1, i % a.nx + 1);
        let block = labels.as_ref().map(|l| l[i].as_str()).unwrap_or("");
        csv_line!(
            out,
            "voxel,{block},{row},{col},{},{},{},{},{},{}",
            sse_a.values[i],
            sse_b.values[i],
            sse_b.values[i] - sse_a.values[i],
            dic_a.values[i],
            dic_b.values[i],
            dic_b.values[i] - dic_a.values[i],
        )?;
    }
    let print_group = |out: &mut CsvOut, scope: &str, block: &str, voxels: &[usize]| {
        let med = |grid: &MapGrid| median(voxels.iter().map(|&i| grid.values[i]).collect()).unwrap();
        csv_line!(
            out,
            "{scope},{block},,,{},{},{},{},{},{}",
            med(&sse_a),
            med(&sse_b),
            med(&sse_b) - med(&sse_a),
            med(&dic_a),
            med(&dic_b),
            med(&dic_b) - med(&dic_a),
        )
    };
    if let Some(labels) = &labels {
        for block in block_labels_sorted(labels, &a.mask) {
            let voxels: Vec<usize> =
                masked.iter().copied().filter(|&i| labels[i] == block).collect();
            print_group(&mut out, "block", &block, &voxels)?;
        }
    }
    print_group(&mut out, "global", "", &masked)?;
    Ok(())
}
