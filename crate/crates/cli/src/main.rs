//! `hsiga`: synthesize suites, preprocess them, run evaluation scenarios and
//! print reports.

mod config;
mod suite;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use hsi_core::classifiers::{model_io, Family};
use hsi_core::data::{extract_labeled, ClassId, LabeledDataset, DEFAULT_CLASSES, DEFAULT_EXCLUDED};
use hsi_core::preprocess::{
    default_removed_bands, preprocess_cube, preprocess_images, FeatureMap, PreprocessConfig, DEFAULT_REMOVED_RANGES,
};
use hsi_core::scenarios::{
    run_scenario, with_workers, PlanConfig, RunConfig, Scenario, ScenarioError, Selector, REPORT_HEADER,
};
use hsi_core::selection::ga::write_history_csv;
use hsi_core::selection::{GaConfig, GridSpec};
use hsi_core::synth::{generate_suite, SceneRecipe};

use suite::{ImageSidecar, Outputs, Suite, SuiteImage};

#[derive(Parser, Debug)]
#[command(name = "hsiga", version, about = "Genetic band and model selection for hyperspectral pixel classification")]
struct Cli {
    /// Worker threads; results do not depend on the count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic suite of four Frame and three Comparison images.
    Synth(SynthArgs),
    /// Run the preprocessing chain on every image of a suite.
    Preprocess(PreprocessArgs),
    /// Run one evaluation scenario end to end.
    Run(RunArgs),
    /// Print report CSV files as a table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SceneRecipe::default().rows)]
    rows: usize,
    #[arg(long, default_value_t = SceneRecipe::default().cols)]
    cols: usize,
    #[arg(long, default_value_t = SceneRecipe::default().bands)]
    bands: usize,
    /// Scale of the structured part of Comparison backgrounds.
    #[arg(long, default_value_t = SceneRecipe::default().background_contrast)]
    background_contrast: f64,
    #[arg(long, default_value_t = SceneRecipe::default().noise_std)]
    noise_std: f64,
    /// Signature shift in bands per elapsed day.
    #[arg(long, default_value_t = SceneRecipe::default().drift)]
    drift: f64,
    /// Write one CSV per image instead of binary cube and label files.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct ChainArgs {
    /// Half-width of the spatial median window; 0 disables smoothing.
    #[arg(long, default_value_t = 1)]
    median_radius: usize,
    /// Bands to drop, as comma-separated indices or inclusive ranges; "none" keeps all.
    #[arg(long, default_value_t = default_removed_spec())]
    removed_bands: String,
    #[arg(long)]
    skip_normalization: bool,
    #[arg(long)]
    skip_derivative: bool,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Directory of a raw suite.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory; must differ from the input.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory of a raw or preprocessed suite.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for report.csv, model.bin, model.bands and history.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// htc, hic, hicvs-small (or hicvs) or hicvs-large.
    #[arg(long, default_value = "htc")]
    scenario: Scenario,
    /// ga or gs.
    #[arg(long, default_value = "ga")]
    selector: Selector,
    /// nu-svm, svc, lsvc, knn or mlp.
    #[arg(long, default_value = "nu-svm")]
    classifier: Family,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Full-size quotas, GA and grids instead of desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// HTC training pixels per class per image.
    #[arg(long)]
    htc_quota: Option<usize>,
    /// HIC and small-HICVS pool pixels per class per Frame image.
    #[arg(long)]
    hic_quota: Option<usize>,
    /// Large-HICVS pool pixels per class per Frame image.
    #[arg(long)]
    hicvs_large_quota: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Per-class training sample used in each HIC optimization fold.
    #[arg(long)]
    subsample: Option<usize>,
    /// Ordinary k-fold cross-validation during HIC optimization.
    #[arg(long)]
    conventional_cv: bool,
    /// Classes to evaluate, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CLASSES)]
    classes: Vec<ClassId>,
    /// Classes to drop, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EXCLUDED)]
    exclude: Vec<ClassId>,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report CSV files written by `run`.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

fn default_removed_spec() -> String {
    DEFAULT_REMOVED_RANGES
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") })
        .collect::<Vec<_>>()
        .join(",")
}

/// Exit code 1 for usage errors, 2 for data errors.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    path.clone().ok_or_else(|| usage(format!("--{flag} is required")))
}

fn parse_band_list(spec: &str) -> Result<Vec<usize>, Failure> {
    let spec = spec.trim();
    if spec.is_empty() || spec.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut bands = Vec::new();
    for part in spec.split(',') {
        let bad = || usage(format!("invalid band list entry '{part}'"));
        match part.trim().split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi): (usize, usize) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
                if lo > hi {
                    return Err(bad());
                }
                bands.extend(lo..=hi);
            }
            None => bands.push(part.trim().parse().map_err(|_| bad())?),
        }
    }
    bands.sort_unstable();
    bands.dedup();
    Ok(bands)
}

impl ChainArgs {
    fn resolve(&self) -> Result<PreprocessConfig, Failure> {
        let removed_bands = if self.removed_bands == default_removed_spec() {
            default_removed_bands()
        } else {
            parse_band_list(&self.removed_bands)?
        };
        Ok(PreprocessConfig {
            median_radius: self.median_radius,
            removed_bands,
            apply_normalization: !self.skip_normalization,
            apply_derivative: !self.skip_derivative,
        })
    }
}

/// Writes to standard output; a closed pipe is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure::Data(e.into())),
        _ => Ok(()),
    }
}

/// Parses `argv`, folding in the `--config` file of the chosen subcommand.
fn parse_args(argv: Vec<OsString>) -> Result<(Cli, ArgMatches), clap::Error> {
    let mut cmd = Cli::command();
    cmd.build();
    let first = cmd.clone().try_get_matches_from(&argv)?;
    let Some((name, sub_matches)) = first.subcommand() else {
        return Ok((Cli::from_arg_matches(&first)?, first));
    };
    let path = sub_matches.try_get_one::<PathBuf>("config").ok().flatten().cloned();
    let Some(path) = path else {
        return Ok((Cli::from_arg_matches(&first)?, first));
    };
    let sub = cmd.find_subcommand(name).expect("matched subcommand").clone();
    let text = fs::read_to_string(&path).map_err(|e| {
        cmd.error(clap::error::ErrorKind::Io, format!("cannot read config file {}: {e}", path.display()))
    })?;
    let extra = config::parse(&text)
        .and_then(|entries| config::as_args(&sub, sub_matches, &entries))
        .map_err(|msg| cmd.error(clap::error::ErrorKind::ValueValidation, msg))?;
    let mut full = argv;
    full.extend(extra);
    let matches = cmd.try_get_matches_from_mut(full)?;
    Ok((Cli::from_arg_matches(&matches)?, matches))
}

fn print_config(matches: &ArgMatches, resolved: &impl serde::Serialize) -> Result<(), Failure> {
    let mut cmd = Cli::command();
    cmd.build();
    let (name, sub_matches) = matches.subcommand().expect("subcommand present");
    let sub = cmd.find_subcommand(name).expect("known subcommand");
    let mut text = config::render(sub, sub_matches);
    let json = serde_json::to_string_pretty(resolved).map_err(anyhow::Error::from)?;
    for line in json.lines() {
        text.push_str(&format!("# {line}\n"));
    }
    emit(&text)
}

fn synth(args: &SynthArgs, matches: &ArgMatches) -> Result<(), Failure> {
    let recipe = SceneRecipe {
        rows: args.rows,
        cols: args.cols,
        bands: args.bands,
        background_contrast: args.background_contrast,
        noise_std: args.noise_std,
        drift: args.drift,
        ..SceneRecipe::default()
    };
    recipe.validate().map_err(|e| usage(e.to_string()))?;
    if args.config.print_config {
        return print_config(matches, &recipe);
    }
    let out = required(&args.out, "out")?;
    let images = generate_suite(&recipe, args.seed).map_err(|e| usage(e.to_string()))?;
    let mut outputs = Outputs::default();
    for img in images {
        let image = SuiteImage {
            sidecar: ImageSidecar { image: img.sidecar(), features: None },
            cube: img.cube,
            labels: img.labels,
        };
        outputs.extend(image.files(args.csv)?);
    }
    let written = outputs.commit(&out)?;
    log::info!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn ensure_distinct(input: &Path, out: &Path) -> Result<(), Failure> {
    let same = match (input.canonicalize(), out.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(usage("--out must differ from --input"));
    }
    Ok(())
}

fn preprocess(args: &PreprocessArgs, matches: &ArgMatches) -> Result<(), Failure> {
    let chain = args.chain.resolve()?;
    if args.config.print_config {
        return print_config(matches, &format!("{chain:?}"));
    }
    let input = required(&args.input, "input")?;
    let out = required(&args.out, "out")?;
    ensure_distinct(&input, &out)?;
    let suite = Suite::load(&input)?;
    if suite.is_preprocessed() {
        return Err(Failure::Data(anyhow!("{} is already preprocessed", input.display())));
    }
    let mut outputs = Outputs::default();
    for img in &suite.images {
        let (cube, map) = preprocess_cube(&img.cube, &chain)
            .with_context(|| format!("preprocessing image '{}'", img.sidecar.image.image_id))?;
        let mut sidecar = img.sidecar.clone();
        sidecar.image.bands = cube.bands();
        sidecar.features = Some((0..map.len()).map(|f| map.original(f)).collect());
        let processed = SuiteImage { sidecar, cube, labels: img.labels.clone() };
        outputs.extend(processed.files(false)?);
    }
    outputs.commit(&out)?;
    Ok(())
}

fn run_config(args: &RunArgs) -> RunConfig {
    let mut rc = RunConfig::new(args.scenario, args.selector, args.classifier);
    if args.paper_scale {
        rc.plan = PlanConfig::paper();
        rc.ga = GaConfig::default();
        rc.grid = GridSpec::paper(args.classifier);
    }
    rc.seed = args.seed;
    rc.repetitions = args.repetitions;
    let plan = &mut rc.plan;
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut plan.htc_quota, args.htc_quota);
    set(&mut plan.hic_quota, args.hic_quota);
    set(&mut plan.hicvs_large_quota, args.hicvs_large_quota);
    set(&mut plan.folds, args.folds);
    set(&mut plan.subsample, args.subsample);
    plan.conventional_cv = args.conventional_cv;
    set(&mut rc.ga.population, args.population);
    set(&mut rc.ga.epochs, args.epochs);
    rc
}

fn load_dataset(suite: &Suite, args: &RunArgs, chain: &PreprocessConfig) -> anyhow::Result<(LabeledDataset, FeatureMap)> {
    let Some(map) = suite.feature_map()? else {
        let metas: Vec<_> = suite.images.iter().map(SuiteImage::meta).collect();
        let images = suite.images.iter().zip(&metas).map(|(i, m)| (&i.cube, &i.labels, m));
        return Ok(preprocess_images(images, &args.classes, &args.exclude, chain)?);
    };
    log::info!("input is preprocessed; preprocessing flags are ignored");
    let kept: Vec<ClassId> = args.classes.iter().copied().filter(|c| !args.exclude.contains(c)).collect();
    let mut ds = LabeledDataset::new(&kept);
    for img in &suite.images {
        let one = extract_labeled(&img.cube, &img.labels, &img.meta(), &args.classes, &args.exclude)?;
        ds.extend(one)?;
    }
    Ok((ds, map))
}

fn run(args: &RunArgs, workers: Option<usize>, matches: &ArgMatches) -> Result<(), Failure> {
    let chain = args.chain.resolve()?;
    let rc = run_config(args);
    rc.validate().map_err(|e| usage(e.to_string()))?;
    if args.config.print_config {
        return print_config(matches, &rc);
    }
    let input = required(&args.input, "input")?;
    let out = required(&args.out, "out")?;
    let suite = Suite::load(&input)?;
    let (ds, map) = load_dataset(&suite, args, &chain)?;
    log::info!("{} labeled pixels, {} features", ds.len(), map.len());
    let report = with_workers(workers, || run_scenario(&ds, &map, &rc)).map_err(|e| match e {
        ScenarioError::InvalidConfig(m) | ScenarioError::Incompatible(m) => usage(m),
        other => Failure::Data(other.into()),
    })?;

    let mut outputs = Outputs::default();
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(anyhow::Error::from)?;
    outputs.add("report.csv", csv);
    let best = report.best_repetition();
    outputs.add("model.bin", model_io::encode(&best.fitted));
    let bands: Vec<String> = best.original_bands.iter().map(usize::to_string).collect();
    outputs.add("model.bands", format!("{}\n", bands.join(",")).into_bytes());
    if let Some(history) = &best.history {
        let mut h = Vec::new();
        write_history_csv(history, &mut h).map_err(anyhow::Error::from)?;
        outputs.add("history.csv", h);
    }
    outputs.commit(&out)?;
    emit(&report.table())
}

fn report(args: &ReportArgs) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in &args.files {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        let header = reader.headers().with_context(|| format!("cannot read {}", path.display()))?.clone();
        if header.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
            return Err(Failure::Data(anyhow!("{} is not a report file (header mismatch)", path.display())));
        }
        for record in reader.records() {
            let record = record.with_context(|| format!("malformed row in {}", path.display()))?;
            rows.push(record);
        }
    }
    let mut text = format!(
        "{:<12} {:<8} {:<10} {:<4} {:>18} {:>7}\n",
        "scenario", "selector", "classifier", "day", "accuracy [%]", "bands"
    );
    for r in rows {
        let acc = format!("{} ± {}", &r[4], &r[5]);
        text.push_str(&format!("{:<12} {:<8} {:<10} {:<4} {:>18} {:>7}\n", &r[0], &r[1], &r[2], &r[3], acc, &r[6]));
    }
    emit(&text)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (cli, matches) = match parse_args(std::env::args_os().collect()) {
        Ok(parsed) => parsed,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a, &matches),
        Command::Preprocess(a) => with_workers(cli.workers, || preprocess(a, &matches)),
        Command::Run(a) => run(a, cli.workers, &matches),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_lists() {
        assert_eq!(parse_band_list("none").unwrap(), Vec::<usize>::new());
        assert_eq!(parse_band_list("5, 1-3,2").unwrap(), vec![1, 2, 3, 5]);
        assert!(parse_band_list("3-1").is_err());
        assert!(parse_band_list("x").is_err());
        assert_eq!(parse_band_list(&default_removed_spec()).unwrap(), default_removed_bands());
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "seed = 9\nscenario = hic\npaper-scale = true\nrepetitions=2\n").unwrap();
        let argv: Vec<OsString> = ["hsiga", "run", "--config", cfg.to_str().unwrap(), "--seed", "3"]
            .iter()
            .map(Into::into)
            .collect();
        let (cli, _) = parse_args(argv).unwrap();
        let Command::Run(args) = cli.command else { panic!("expected run") };
        assert_eq!(args.seed, 3);
        assert_eq!(args.scenario, Scenario::Hic);
        assert!(args.paper_scale);
        assert_eq!(args.repetitions, 2);
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, "colour = red\n").unwrap();
        let argv: Vec<OsString> = ["hsiga", "run", "--config", cfg.to_str().unwrap()].iter().map(Into::into).collect();
        let err = parse_args(argv).unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn paper_scale_switches_every_block() {
        let argv: Vec<OsString> = ["hsiga", "run", "--paper-scale", "--folds", "4"].iter().map(Into::into).collect();
        let (cli, _) = parse_args(argv).unwrap();
        let Command::Run(args) = cli.command else { panic!("expected run") };
        let rc = run_config(&args);
        assert_eq!(rc.plan.htc_quota, 989);
        assert_eq!(rc.plan.folds, 4);
        assert_eq!(rc.ga.population, 200);
    }
}
