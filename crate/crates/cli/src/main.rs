mod config;
mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alignreid::container::write_atomic;
use alignreid::evaluator::{evaluate_protocol, extract_features, EvalProtocol, SearchMode, Shots};
use alignreid::nets::{load_checkpoint, Checkpoint, Variant};
use alignreid::syndata::{generate_dataset, load_dataset, DataConfig, Dataset, Split};
use alignreid::trainer::{run_ablation, sweep, train, AblationTable, TrainConfig, CHECKPOINT_FILE, LOSS_LOG_FILE};
use alignreid::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

/// Cross-modality (RGB to IR) identity retrieval with joint pixel and feature alignment.
#[derive(Parser)]
#[command(name = "alignreid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic two-modality dataset to disk.
    GenData(GenDataArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Evaluate a trained run and print the CMC/mAP table.
    Eval(EvalArgs),
    /// Train and evaluate several variants or a parameter sweep.
    Ablate(AblateArgs),
    /// Write the translation grid, feature projection and loss curves.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML or JSON file with dataset settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Individual setting, `key=value`; applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace an existing dataset in --out.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainFlags {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// TOML or JSON file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant; overrides the config file.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Training seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Individual setting, `key=value`; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Run directory for the checkpoint, loss log and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in --out.
    #[arg(long)]
    resume: bool,
    /// Print a loss line every this many iterations (0 for none).
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args, Clone)]
struct ProtocolArgs {
    /// Probe cameras: all IR cameras or the indoor subset.
    #[arg(long, value_enum, default_value_t = ModeArg::All)]
    mode: ModeArg,
    /// Gallery images per identity.
    #[arg(long, value_enum, default_value_t = ShotsArg::Single)]
    shots: ShotsArg,
    /// Random gallery draws averaged in the report.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Largest CMC rank reported.
    #[arg(long, default_value_t = 20)]
    max_rank: usize,
    /// Seed for the gallery draws.
    #[arg(long = "eval-seed", default_value_t = 0)]
    eval_seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory written by train.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Where to write the report; defaults to report.json in the run directory.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Output directory for the CSV, text table and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Variants to compare; defaults to all five.
    #[arg(long, value_enum, value_delimiter = ',')]
    variants: Vec<VariantArg>,
    /// Training seeds per variant.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Sweep one setting instead of comparing variants: `key=v1,v2,...`.
    #[arg(long, value_name = "KEY=V1,V2")]
    sweep: Option<String>,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    run: PathBuf,
    /// Output directory; defaults to plots/ inside the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the 2-D projection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Identities shown in the translation grid.
    #[arg(long, default_value_t = 6)]
    rows: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Basel,
    Pixalign,
    Featalign,
    AlignganMinus,
    Aligngan,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Basel => Variant::Basel,
            VariantArg::Pixalign => Variant::PixAlign,
            VariantArg::Featalign => Variant::FeatAlign,
            VariantArg::AlignganMinus => Variant::AlignGanMinus,
            VariantArg::Aligngan => Variant::AlignGan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    All,
    Indoor,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShotsArg {
    Single,
    Multi,
}

impl ProtocolArgs {
    fn protocol(&self) -> Result<EvalProtocol, Failure> {
        if self.repeats == 0 || self.max_rank == 0 {
            return Err(Failure::Usage("--repeats and --max-rank must be positive".into()));
        }
        Ok(EvalProtocol {
            mode: match self.mode {
                ModeArg::All => SearchMode::AllSearch,
                ModeArg::Indoor => SearchMode::IndoorSearch,
            },
            shots: match self.shots {
                ShotsArg::Single => Shots::Single,
                ShotsArg::Multi => Shots::Multi,
            },
            repeats: self.repeats,
            max_rank: self.max_rank,
            seed: self.eval_seed,
        })
    }
}

/// Why a command failed, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e {
                Error::Config { .. } | Error::Input(_) => 2,
                Error::Dataset(_) | Error::Load(_) | Error::Integrity { .. } | Error::Io { .. } | Error::Json(_) => 3,
                Error::Protocol(_) => 5,
                Error::Numeric(_)
                | Error::Sampling(_)
                | Error::BatchComposition(_)
                | Error::PairTaxonomy(_)
                | Error::NonFinite { .. }
                | Error::Checkpoint(_)
                | Error::ResumeMismatch { .. } => 4,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

fn assignments(list: &[String]) -> Result<Vec<(String, Value)>, Failure> {
    list.iter().map(|s| config::parse_assignment(s)).collect()
}

fn file_overrides(path: &Option<PathBuf>) -> Result<Vec<(String, Value)>, Failure> {
    match path {
        Some(p) => Ok(config::read_table(p)?.into_iter().collect()),
        None => Ok(Vec::new()),
    }
}

fn resolve_train_config(flags: &TrainFlags) -> Result<TrainConfig, Failure> {
    let mut layers = file_overrides(&flags.config)?;
    if let Some(v) = flags.variant {
        layers.push(("variant".into(), serde_json::to_value(Variant::from(v)).expect("variant")));
    }
    if let Some(s) = flags.seed {
        layers.push(("seed".into(), json!(s)));
    }
    layers.extend(assignments(&flags.set)?);
    let cfg: TrainConfig = config::overlay(&TrainConfig::default(), layers)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(dir: &Path, command: &str, body: Value) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "argv": std::env::args().collect::<Vec<_>>(),
    });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    let bytes = serde_json::to_vec_pretty(&doc).map_err(Error::from)?;
    write_atomic(&dir.join(format!("{command}.manifest.json")), &bytes)?;
    Ok(())
}

fn dataset_info(path: &Path, ds: &Dataset) -> Value {
    json!({
        "path": path,
        "generation_seed": ds.manifest.generation_seed,
        "config": ds.manifest.config,
    })
}

fn gen_data(a: GenDataArgs) -> Result<(), Failure> {
    let mut layers = file_overrides(&a.config)?;
    layers.extend(assignments(&a.set)?);
    let cfg: DataConfig = config::overlay(&DataConfig::default(), layers)?;
    cfg.validate()?;
    if a.out.join("manifest.json").exists() && !a.force {
        return Err(Failure::Usage(format!("{} already holds a dataset; pass --force to replace it", a.out.display())));
    }
    let ds = generate_dataset(&cfg, a.seed, &a.out)?;
    write_manifest(&a.out, "gen-data", json!({ "seed": a.seed, "config": cfg }))?;
    let (train, test) = (
        ds.split_samples(Split::Train).count(),
        ds.split_samples(Split::Test).count(),
    );
    println!("wrote {} ({train} train, {test} test samples)", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = resolve_train_config(&a.flags)?;
    let ds = load_dataset(&a.flags.data)?;
    let every = a.log_every;
    let out = train(&cfg, &ds, Some(&a.out), a.resume, &mut |r| {
        if every > 0 && r.iteration % every == 0 {
            eprintln!(
                "iter {:>6}  feat {:.4}  pix {:.4}  disc {:.4}",
                r.iteration, r.l_feat_total, r.l_pix_total, r.l_d_total
            );
        }
    })?;
    write_manifest(
        &a.out,
        "train",
        json!({ "resume": a.resume, "train_config": cfg, "dataset": dataset_info(&a.flags.data, &ds) }),
    )?;
    println!(
        "trained {} for {} iterations; checkpoint {}",
        cfg.variant.label(),
        out.log.last().map_or(0, |r| r.iteration),
        a.out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn load_run(run: &Path) -> Result<Checkpoint, Failure> {
    let path = run.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Failure::Core(Error::Load(format!("no checkpoint at {}", path.display()))));
    }
    Ok(load_checkpoint(&path)?)
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let protocol = a.protocol.protocol()?;
    let ds = load_dataset(&a.data)?;
    let ckpt = load_run(&a.run)?;
    let report = evaluate_protocol(&ckpt.bundle, &ds, &protocol)?;
    print!("{}", report.table());
    let path = a.report.clone().unwrap_or_else(|| a.run.join("report.json"));
    write_atomic(&path, &serde_json::to_vec_pretty(&report).map_err(Error::from)?)?;
    write_manifest(
        &a.run,
        "eval",
        json!({
            "protocol": protocol,
            "report": path,
            "train_config": ckpt.meta.get("train_config"),
            "dataset": dataset_info(&a.data, &ds),
        }),
    )?;
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Failure> {
    let base = resolve_train_config(&a.flags)?;
    let protocol = a.protocol.protocol()?;
    let ds = load_dataset(&a.flags.data)?;
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.iter().map(|&v| v.into()).collect()
    };
    let sweep_spec = match &a.sweep {
        Some(s) => {
            let (k, vs) = s
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--sweep expects key=v1,v2, got {s:?}")))?;
            let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            Some((k.trim().to_string(), values))
        }
        None => None,
    };
    write_manifest(
        &a.out,
        "ablate",
        json!({
            "train_config": base,
            "variants": variants,
            "seeds": a.seeds,
            "sweep": sweep_spec,
            "protocol": protocol,
            "dataset": dataset_info(&a.flags.data, &ds),
        }),
    )?;
    let mut progress = |r: &alignreid::trainer::AblationRow| {
        eprintln!("{} seed {}: R1 {:.3} mAP {:.3}", r.label, r.seed, r.rank1, r.map);
    };
    let table: AblationTable = match &sweep_spec {
        Some((key, values)) => sweep(&base, key, values, &a.seeds, &ds, &protocol, &mut progress)?,
        None => run_ablation(&base, &variants, &a.seeds, &ds, &protocol, &mut progress)?,
    };
    write_atomic(&a.out.join("ablation.csv"), table.to_csv()?.as_bytes())?;
    let text = table.to_text();
    write_atomic(&a.out.join("ablation.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.data)?;
    let bundle = load_run(&a.run)?.bundle;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("plots"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();

    if bundle.variant().has_pixel_module() {
        let p = out.join("translation_grid.png");
        plot::translation_grid(&bundle, &ds, a.rows, &p)?;
        written.push(p);
    } else {
        println!("skipping translation grid: {} has no pixel module", bundle.variant().label());
    }

    let tests: Vec<_> = ds.split_samples(Split::Test).map(|(r, s)| (r.identity_id, r.modality, s)).collect();
    let samples: Vec<_> = tests.iter().map(|t| t.2).collect();
    let features = extract_features(&bundle, &samples)?;
    let points = plot::project_2d(&features, a.seed);
    let ids: Vec<u32> = tests.iter().map(|t| t.0).collect();
    let modality: Vec<_> = tests.iter().map(|t| t.1).collect();
    let p = out.join("features.svg");
    plot::feature_scatter(&points, &ids, &modality, &p)?;
    written.push(p);

    let log_path = a.run.join(LOSS_LOG_FILE);
    if log_path.exists() {
        let text = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let log = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()
            .map_err(Error::from)?;
        let p = out.join("losses.svg");
        plot::loss_curves(&log, &p)?;
        written.push(p);
    } else {
        println!("skipping loss curves: no {}", log_path.display());
    }
    write_manifest(&out, "plot", json!({ "seed": a.seed, "rows": a.rows, "run": a.run, "written": written }))?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = writeln!(std::io::stderr(), "error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
