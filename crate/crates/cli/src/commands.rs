use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mconflict::attention::{
    attention_diff, detection_groups, head_set_overlap, peak_layer_ordering, resolution_groups,
    top_k_heads, write_heads_csv, Channel, HeadId, PeakOrdering, DEFAULT_TOP_K,
};
use mconflict::dataset::{generate_dataset, read_manifest, write_dataset, DatasetManifest, GenerationConfig};
use mconflict::fixtures::{build_fixtures, read_planted_csv, write_fixtures, LogitModel, PlantedSignalConfig, PLANTED_FILE};
use mconflict::plot::plot_csv;
use mconflict::probe::{layerwise_sweep, LambdaChoice, LambdaSelection, ProbeModel, SweepCell, SweepConfig};
use mconflict::resolution::{
    alignment_tally, binned_relationship, build_records_with, build_resolution_records,
    extreme_vs_middle, rank_correlation_abs_confidence, write_records_csv, AlignmentTally,
    ExtremeVsMiddle, ResolutionRecord,
};
use mconflict::store::{read_dump, validate_dump, Dump};
use mconflict::ProbeModelF32;

#[derive(Debug, Parser)]
#[command(name = "mconflict", version, about = "Modality-conflict analysis toolkit")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic colored-shape dataset.
    GenDataset(GenDatasetArgs),
    /// Generate planted-signal dumps for a manifest.
    GenFixtures(GenFixturesArgs),
    /// Check a dump directory for structural and content problems.
    ValidateDump(ValidateArgs),
    /// Train one lasso-logistic probe per (layer, activation kind).
    TrainProbes(TrainArgs),
    /// Binned strength/confidence table, rank correlation and alignment tallies.
    ResolutionReport(ReportArgs),
    /// Group-based attention differencing.
    AttnDiff(AttnArgs),
    /// Render SVG charts from emitted CSV tables.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// JSON generation config; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the manifest only.
    #[arg(long)]
    no_images: bool,
}

#[derive(Debug, Args)]
pub struct GenFixturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Remove every planted signal.
    #[arg(long)]
    null: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Penalty as a number, or `auto` for holdout selection.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthSource {
    /// Probe probability of conflict.
    Probe,
    /// Strength planted by the fixture generator.
    Planted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReportConfig {
    bins: usize,
    renormalize: bool,
    strength_source: StrengthSource,
    probe: Option<PathBuf>,
    planted: Option<PathBuf>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            bins: 20,
            renormalize: false,
            strength_source: StrengthSource::Probe,
            probe: None,
            planted: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Probe model JSON used to score conflict strength.
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long, value_enum)]
    strength_source: Option<StrengthSource>,
    /// Planted strength CSV; defaults to the one next to the manifest.
    #[arg(long)]
    planted: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    /// Divide the confidence by `p_image + p_text`.
    #[arg(long)]
    renormalize: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Text,
    Image,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AttnConfig {
    top_k: usize,
    channel: Channel,
}

impl Default for AttnConfig {
    fn default() -> Self {
        AttnConfig {
            top_k: DEFAULT_TOP_K,
            channel: Channel::Text,
        }
    }
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    top_k: Option<usize>,
    /// Channel used for head ranking and peak ordering.
    #[arg(long, value_enum)]
    channel: Option<ChannelArg>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// CSV files emitted by other subcommands.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for the SVG files; next to each CSV by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<mconflict::Error>() {
            Some(mconflict::Error::Config(_) | mconflict::Error::Argument(_)) => Failure::Usage(format!("{e:#}")),
            _ => Failure::Other(e),
        }
    }
}

impl From<mconflict::Error> for Failure {
    fn from(e: mconflict::Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn existing_file(p: &Path, what: &str) -> Outcome<PathBuf> {
    if p.is_file() {
        Ok(p.to_path_buf())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", p.display())))
    }
}

fn existing_dir(p: &Path, what: &str) -> Outcome<PathBuf> {
    if p.is_dir() {
        Ok(p.to_path_buf())
    } else {
        Err(Failure::Usage(format!("{what} directory not found: {}", p.display())))
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let path = existing_file(path, "config file")?;
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn out_dir(p: &Path) -> Outcome<PathBuf> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    Ok(p.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_with(path: &Path, f: impl FnOnce(BufWriter<File>) -> mconflict::Result<()>) -> Outcome {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f(BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_manifest(path: &Path) -> Outcome<DatasetManifest> {
    let path = existing_file(path, "manifest")?;
    Ok(read_manifest(&path).with_context(|| format!("reading manifest {}", path.display()))?)
}

fn load_dump(path: &Path) -> Outcome<Dump> {
    let path = existing_dir(path, "dump")?;
    Ok(read_dump(&path).with_context(|| format!("opening dump {}", path.display()))?)
}

pub fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Other(anyhow!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenDataset(a) => gen_dataset(a),
        Command::GenFixtures(a) => gen_fixtures(a),
        Command::ValidateDump(a) => validate(a),
        Command::TrainProbes(a) => train_probes(a),
        Command::ResolutionReport(a) => resolution_report(a),
        Command::AttnDiff(a) => attn_diff(a),
        Command::Plot(a) => plot(a),
    }
}

fn gen_dataset(a: GenDatasetArgs) -> Outcome {
    let mut cfg: GenerationConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.global_seed = seed;
    }
    let start = Instant::now();
    let manifest = generate_dataset(&cfg)?;
    let out = out_dir(&a.out)?;
    write_dataset(&out, &manifest, !a.no_images)?;
    log::info!("dataset written in {:.1?}", start.elapsed());
    println!(
        "wrote {} samples ({} conflict) to {}",
        manifest.samples.len(),
        manifest.n_conflict(),
        out.display()
    );
    Ok(())
}

fn gen_fixtures(a: GenFixturesArgs) -> Outcome {
    let manifest = load_manifest(&a.manifest)?;
    let mut cfg: PlantedSignalConfig = load_config(a.config.as_deref())?;
    if a.null {
        cfg.signal_strength = 0.0;
        cfg.detection.heads.clear();
        cfg.resolution.heads.clear();
        cfg.logit_model = LogitModel::flat();
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let fixtures = build_fixtures(&manifest, &cfg)?;
    let out = out_dir(&a.out)?;
    write_fixtures(&out, &fixtures, &cfg)?;
    println!(
        "wrote fixtures for {} samples to {} ({:.3}% of offset attention weights clipped)",
        fixtures.manifest.samples.len(),
        out.display(),
        100.0 * fixtures.clip.fraction()
    );
    Ok(())
}

fn validate(a: ValidateArgs) -> Outcome {
    let dump = existing_dir(&a.dump, "dump")?;
    let manifest = a.manifest.as_deref().map(load_manifest).transpose()?;
    let report = validate_dump(&dump, manifest.as_ref());
    if report.passed() {
        println!("ok: {}", dump.display());
        Ok(())
    } else {
        Err(Failure::Validation(format!("{}: validation failed\n{report}", dump.display())))
    }
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    n_cells: usize,
    best: Option<&'a SweepCell>,
    best_probe: Option<String>,
}

fn train_probes(a: TrainArgs) -> Outcome {
    let manifest = load_manifest(&a.manifest)?;
    let dump = load_dump(&a.dump)?;
    let mut cfg: SweepConfig<f32> = load_config(a.config.as_deref())?;
    match a.lambda.as_deref() {
        None => {}
        Some("auto") => {
            if !matches!(cfg.lambda, LambdaChoice::Auto(_)) {
                cfg.lambda = LambdaChoice::Auto(LambdaSelection::default());
            }
        }
        Some(v) => {
            let l: f32 = v
                .parse()
                .map_err(|_| Failure::Usage(format!("--lambda expects a number or `auto`, got `{v}`")))?;
            cfg.lambda = LambdaChoice::Fixed(l);
        }
    }
    if let LambdaChoice::Fixed(l) = cfg.lambda {
        cfg.train.lambda = l;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let start = Instant::now();
    let (result, models) = layerwise_sweep(&dump, &manifest, &cfg)?;
    log::info!("sweep of {} cells took {:.1?}", result.cells.len(), start.elapsed());
    let out = out_dir(&a.out)?;
    write_with(&out.join("sweep.csv"), |w| result.write_csv(w))?;
    let probes = out_dir(&out.join("probes"))?;
    for m in &models {
        m.save(&probes)?;
    }
    let best = result.best();
    write_json(
        &out.join("sweep_summary.json"),
        &SweepSummary {
            n_cells: result.cells.len(),
            best,
            best_probe: best.map(|c| format!("probes/{}", ProbeModelF32::file_name(c.layer, c.kind))),
        },
    )?;
    if let Some(b) = best {
        println!(
            "{} cells; best accuracy {:.3} at layer {} ({})",
            result.cells.len(),
            b.accuracy,
            b.layer,
            b.kind
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ResolutionSummary {
    n_records: usize,
    strength_source: StrengthSource,
    bins: usize,
    spearman_abs_confidence: Option<f64>,
    spearman_note: Option<String>,
    extreme_vs_middle: Option<ExtremeVsMiddle<f64>>,
    alignment: AlignmentTally,
}

fn resolution_report(a: ReportArgs) -> Outcome {
    let mut cfg: ReportConfig = load_config(a.config.as_deref())?;
    if let Some(b) = a.bins {
        cfg.bins = b;
    }
    if let Some(s) = a.strength_source {
        cfg.strength_source = s;
    }
    cfg.renormalize |= a.renormalize;
    cfg.probe = a.probe.or(cfg.probe);
    cfg.planted = a.planted.or(cfg.planted);

    let manifest = load_manifest(&a.manifest)?;
    let dump = load_dump(&a.dump)?;
    let records: Vec<ResolutionRecord<f64>> = match cfg.strength_source {
        StrengthSource::Probe => {
            let path = cfg
                .probe
                .as_deref()
                .ok_or_else(|| Failure::Usage("--probe is required with --strength-source probe".into()))?;
            let path = existing_file(path, "probe")?;
            let probe = ProbeModel::<f32>::load(&path)
                .with_context(|| format!("loading probe {}", path.display()))?
                .cast::<f64>();
            build_resolution_records(&dump, &manifest, &probe, cfg.renormalize)?
        }
        StrengthSource::Planted => {
            let path = match &cfg.planted {
                Some(p) => p.clone(),
                None => a.manifest.with_file_name(PLANTED_FILE),
            };
            let path = existing_file(&path, "planted strength file")?;
            let planted = read_planted_csv(&path).with_context(|| format!("reading {}", path.display()))?;
            build_records_with(&dump, &manifest, cfg.renormalize, |id| {
                planted.get(id).copied().ok_or_else(|| {
                    mconflict::Error::Data(format!("{}: no planted strength for sample {id}", path.display()))
                })
            })?
        }
    };
    let binned = binned_relationship(&records, cfg.bins)?;
    let ev = (cfg.bins >= 3).then(|| extreme_vs_middle(&records, cfg.bins)).transpose()?;
    let (rho, note) = match rank_correlation_abs_confidence(&records) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let tally = alignment_tally(&dump, &manifest)?;
    let out = out_dir(&a.out)?;
    write_with(&out.join("resolution_records.csv"), |w| write_records_csv(&records, w))?;
    write_with(&out.join("resolution_bins.csv"), |w| binned.write_csv(w))?;
    write_json(
        &out.join("resolution_summary.json"),
        &ResolutionSummary {
            n_records: records.len(),
            strength_source: cfg.strength_source,
            bins: cfg.bins,
            spearman_abs_confidence: rho,
            spearman_note: note,
            extreme_vs_middle: ev,
            alignment: tally,
        },
    )?;
    let rho_text = rho.map_or("undefined".to_string(), |r| format!("{r:.3}"));
    println!(
        "{} conflict samples; Spearman rho(|confidence|, strength) = {rho_text}; aligned image {} / text {} / other {}",
        records.len(),
        tally.image,
        tally.text,
        tally.other
    );
    Ok(())
}

#[derive(Serialize)]
struct AttentionSummary {
    channel: Channel,
    top_k: usize,
    detection_heads: Vec<HeadId>,
    resolution_heads: Vec<HeadId>,
    overlap: f64,
    peaks: PeakOrdering,
    detection_groups: (usize, usize),
    resolution_groups: (usize, usize),
}

fn attn_diff(a: AttnArgs) -> Outcome {
    let mut cfg: AttnConfig = load_config(a.config.as_deref())?;
    if let Some(k) = a.top_k {
        cfg.top_k = k;
    }
    if let Some(c) = a.channel {
        cfg.channel = match c {
            ChannelArg::Text => Channel::Text,
            ChannelArg::Image => Channel::Image,
        };
    }
    let manifest = load_manifest(&a.manifest)?;
    let dump = load_dump(&a.dump)?;
    let det_group = detection_groups(&manifest)?;
    let res_group = resolution_groups(&dump, &manifest)?;
    res_group.check_against(&manifest)?;
    let det = attention_diff::<f64>(&dump, &det_group)?;
    let res = attention_diff::<f64>(&dump, &res_group)?;
    let det_heads = top_k_heads(&det.delta, cfg.top_k, cfg.channel)?;
    let res_heads = top_k_heads(&res.delta, cfg.top_k, cfg.channel)?;
    let overlap = head_set_overlap(&det_heads, &res_heads)?;
    let peaks = peak_layer_ordering(&det.profile(cfg.channel)?.values, &res.profile(cfg.channel)?.values)?;

    let out = out_dir(&a.out)?;
    for (name, diff, heads) in [("detection", &det, &det_heads), ("resolution", &res, &res_heads)] {
        write_with(&out.join(format!("{name}_profile.csv")), |w| diff.write_profile_csv(w))?;
        write_with(&out.join(format!("{name}_deltas.csv")), |w| diff.delta.write_csv(w))?;
        write_with(&out.join(format!("{name}_heads.csv")), |w| {
            write_heads_csv(heads, &diff.delta, cfg.channel, w)
        })?;
    }
    write_json(
        &out.join("attention_summary.json"),
        &AttentionSummary {
            channel: cfg.channel,
            top_k: cfg.top_k,
            detection_heads: det_heads,
            resolution_heads: res_heads,
            overlap,
            peaks,
            detection_groups: (det_group.a.len(), det_group.b.len()),
            resolution_groups: (res_group.a.len(), res_group.b.len()),
        },
    )?;
    println!(
        "detection peak layer {}, resolution peak layer {}, detection precedes: {}; top-{} overlap {:.3}",
        peaks.detection_peak, peaks.resolution_peak, peaks.detection_precedes, cfg.top_k, overlap
    );
    Ok(())
}

fn plot(a: PlotArgs) -> Outcome {
    let out = a.out.as_deref().map(out_dir).transpose()?;
    for input in &a.inputs {
        let input = existing_file(input, "CSV file")?;
        let svg = match &out {
            Some(dir) => dir.join(input.with_extension("svg").file_name().unwrap()),
            None => input.with_extension("svg"),
        };
        plot_csv(&input, &svg).with_context(|| format!("plotting {}", input.display()))?;
        println!("{}", svg.display());
    }
    Ok(())
}
