//! Experiment workbench CLI: generates the design-phase repository, runs
//! the LoI benchmark grid, and emits report artifacts. Every subcommand is
//! deterministic given the master seed; wall-clock columns are the only
//! fields that differ between reruns.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dtgap_core::config::StructureConfig;
use dtgap_core::orchestrator::{
    aggregate, grid_csv, instance_csv, instance_report, report_csv, run_cell, run_experiment,
    second_generation_pretrain, strip_timing_columns, CellOutcome, ExperimentPlan, Loi,
    FROZEN_MASTER_SEED,
};
use dtgap_core::sampler::generate_design_records;
use dtgap_core::seeds::{child_seed, hex_digest};
use dtgap_core::{GapInjectionSpec, Repository, TrussModel};

/// Budget and window for second-generation comparisons: both repositories
/// pretrain for one epoch and are scored on the same fresh-asset window.
const SECONDGEN_EPOCHS: usize = 1;
const SECONDGEN_EVAL_INSTANCES: usize = 200;
const SECONDGEN_SEEDS: u64 = 10;

#[derive(Parser)]
#[command(
    name = "dtgap",
    version,
    about = "Reality-gap analysis workbench for a sensorized truss twin"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the design repository and the gap-injection spec.
    Gen(GenArgs),
    /// Run the LoI experiment grid and write report artifacts.
    Run(RunArgs),
    /// Emit the 42-sensor physical/virtual table for one test instance.
    Instance(InstanceArgs),
    /// Compare pretraining on the original vs the run-augmented repository.
    Secondgen(SecondgenArgs),
    /// Aggregate a report into per-(LoI, epochs) means.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunConfig {
    /// Structure description TOML; the bundled bridge when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gap-injection spec JSON, written by `gen` and read by `run`.
    #[arg(long, default_value = "gap-spec.json")]
    gap_spec: PathBuf,
    /// Design repository directory.
    #[arg(long, default_value = "repo")]
    repo: PathBuf,
    /// Output directory for run artifacts.
    #[arg(long, env = "DTGAP_OUT", default_value = "out")]
    out: PathBuf,
    /// Master seed; every random stream derives from it.
    #[arg(long, default_value_t = FROZEN_MASTER_SEED)]
    seed: u64,
    /// Design-phase dataset size.
    #[arg(long, default_value_t = 2000)]
    records: usize,
    /// Random splits per (LoI, epochs) cell.
    #[arg(long, default_value_t = 10)]
    splits: usize,
    /// Epoch budgets for the grid.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    epochs: Vec<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    cfg: RunConfig,
    /// Overwrite an existing repository and gap spec.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: RunConfig,
    /// Levels of integration to run: A, B, C or all.
    #[arg(long, default_value = "all")]
    loi: String,
    /// Overwrite existing run artifacts.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct InstanceArgs {
    #[command(flatten)]
    cfg: RunConfig,
    /// Test-window instance to tabulate.
    #[arg(long)]
    timestep: usize,
    /// Level of integration the instance is evaluated under.
    #[arg(long, default_value = "B")]
    loi: String,
    /// Overwrite an existing instance table.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SecondgenArgs {
    #[command(flatten)]
    cfg: RunConfig,
    /// Overwrite an existing comparison table.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    cfg: RunConfig,
    /// Overwrite an existing aggregated grid.
    #[arg(long)]
    force: bool,
}

/// Recorded alongside every run so later subcommands (and reruns) can check
/// they are looking at the same world. All digests are over
/// timing-stripped content, so equal-seed reruns produce equal manifests.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    master_seed: u64,
    record_count: usize,
    split_count: usize,
    epoch_budgets: Vec<usize>,
    lois: Vec<String>,
    cells: usize,
    structure_digest: String,
    gap_spec_digest: String,
    repository_digest: String,
    report_digest: String,
    transcript_digest: String,
    augmented_records: Option<usize>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Instance(args) => cmd_instance(args),
        Command::Secondgen(args) => cmd_secondgen(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_structure(cfg: &RunConfig) -> Result<StructureConfig> {
    match &cfg.config {
        Some(path) => StructureConfig::load(path)
            .with_context(|| format!("loading structure config {}", path.display())),
        None => Ok(StructureConfig::default()),
    }
}

fn plan_of(cfg: &RunConfig) -> ExperimentPlan {
    let mut plan = ExperimentPlan::frozen_benchmark();
    plan.master_seed = cfg.seed;
    plan.record_count = cfg.records;
    plan.split_count = cfg.splits;
    plan.epoch_budgets = cfg.epochs.clone();
    plan
}

fn parse_lois(arg: &str) -> Result<Vec<Loi>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(Loi::ALL.to_vec());
    }
    let loi = Loi::parse(&arg.to_ascii_uppercase())
        .with_context(|| format!("unknown level of integration '{arg}' (expected A, B, C or all)"))?;
    Ok(vec![loi])
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "{} already exists; pass --force to overwrite",
            path.display()
        );
    }
    Ok(())
}

fn repository_digest(repo: &Repository) -> String {
    let manifest = serde_json::to_string(&repo.manifest()).expect("manifest serializes");
    hex_digest(manifest.as_bytes())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let cfg = &args.cfg;
    let structure = load_structure(cfg)?;
    let truss = TrussModel::bridge(&structure).context("building structural model")?;
    let plan = plan_of(cfg);

    let records_file = cfg.repo.join("records.jsonl");
    if records_file.exists() {
        if !args.force {
            bail!(
                "repository {} already exists; pass --force to regenerate",
                cfg.repo.display()
            );
        }
        fs::remove_dir_all(&cfg.repo)
            .with_context(|| format!("clearing repository {}", cfg.repo.display()))?;
    }
    refuse_overwrite(&cfg.gap_spec, args.force)?;

    let mut repo = Repository::create(&cfg.repo).context("creating repository")?;
    let records = generate_design_records(&truss, plan.design_seed(), plan.record_count)
        .context("generating design records")?;
    repo.ingest(records).context("ingesting design records")?;

    let spec = plan.gap_spec();
    spec.save(&cfg.gap_spec)
        .with_context(|| format!("writing gap spec {}", cfg.gap_spec.display()))?;

    println!(
        "generated {} design records in {} (seed {})",
        repo.count(),
        cfg.repo.display(),
        plan.master_seed
    );
    println!("gap spec {} (digest {})", cfg.gap_spec.display(), spec.digest());
    Ok(())
}

fn report_preamble(manifest: &RunManifest) -> String {
    format!(
        "# master_seed {}\n# structure {}\n# gap_spec {}\n# repository {}\n",
        manifest.master_seed,
        manifest.structure_digest,
        manifest.gap_spec_digest,
        manifest.repository_digest
    )
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = &args.cfg;
    let structure = load_structure(cfg)?;
    let truss = TrussModel::bridge(&structure).context("building structural model")?;
    let plan = plan_of(cfg);
    let lois = parse_lois(&args.loi)?;

    let repo = Repository::open(&cfg.repo)
        .with_context(|| format!("opening repository {}", cfg.repo.display()))?;
    let spec = GapInjectionSpec::load(&cfg.gap_spec)
        .with_context(|| format!("loading gap spec {}", cfg.gap_spec.display()))?;

    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    let report_path = cfg.out.join("report.csv");
    let manifest_path = cfg.out.join("run-manifest.json");
    let transcript_path = cfg.out.join("transcript.json");
    let augmented_dir = cfg.out.join("repo-augmented");
    refuse_overwrite(&report_path, args.force)?;
    refuse_overwrite(&manifest_path, args.force)?;

    let outcome =
        run_experiment(&truss, &repo, &spec, &plan, &lois).context("running experiment grid")?;

    let augmented_records = if lois.contains(&Loi::C) {
        let mut augmented = repo.detached_copy();
        augmented
            .ingest(outcome.novel_records.clone())
            .context("ingesting detached feedback records")?;
        if augmented_dir.exists() {
            fs::remove_dir_all(&augmented_dir)
                .with_context(|| format!("clearing {}", augmented_dir.display()))?;
        }
        augmented
            .save_as(&augmented_dir)
            .context("writing augmented repository")?;
        Some(augmented.count())
    } else {
        None
    };

    let transcript = serde_json::json!({
        "master_seed": plan.master_seed,
        "digest": outcome.state.digest(),
        "events": outcome.state.events(),
    });
    fs::write(
        &transcript_path,
        serde_json::to_string_pretty(&transcript).expect("transcript serializes"),
    )
    .with_context(|| format!("writing {}", transcript_path.display()))?;

    let mut manifest = RunManifest {
        master_seed: plan.master_seed,
        record_count: plan.record_count,
        split_count: plan.split_count,
        epoch_budgets: plan.epoch_budgets.clone(),
        lois: lois.iter().map(|l| l.label().to_string()).collect(),
        cells: outcome.rows.len(),
        structure_digest: structure.digest(),
        gap_spec_digest: spec.digest(),
        repository_digest: repository_digest(&repo),
        report_digest: String::new(),
        transcript_digest: outcome.state.digest(),
        augmented_records,
    };
    let report = format!("{}{}", report_preamble(&manifest), report_csv(&outcome.rows));
    manifest.report_digest = hex_digest(strip_timing_columns(&report).as_bytes());

    fs::write(&report_path, &report)
        .with_context(|| format!("writing {}", report_path.display()))?;
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .with_context(|| format!("writing {}", manifest_path.display()))?;

    println!(
        "ran {} cells ({} x {:?} x {} splits) -> {}",
        outcome.rows.len(),
        args.loi,
        plan.epoch_budgets,
        plan.split_count,
        report_path.display()
    );
    if let Some(n) = augmented_records {
        println!(
            "augmented repository: {} records ({} novel) -> {}",
            n,
            outcome.novel_records.len(),
            augmented_dir.display()
        );
    }
    Ok(())
}

fn load_run_manifest(cfg: &RunConfig) -> Result<RunManifest> {
    let path = cfg.out.join("run-manifest.json");
    let text = fs::read_to_string(&path).with_context(|| {
        format!(
            "missing run artifacts: {} (run `dtgap run` first)",
            path.display()
        )
    })?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Rebuilds the plan a finished run used, verifying the inputs on disk are
/// still the ones its manifest recorded.
fn plan_from_manifest(
    cfg: &RunConfig,
    manifest: &RunManifest,
    spec: &GapInjectionSpec,
    repo: &Repository,
) -> Result<ExperimentPlan> {
    if spec.digest() != manifest.gap_spec_digest {
        bail!(
            "gap spec {} does not match the completed run (stale artifacts?)",
            cfg.gap_spec.display()
        );
    }
    if repository_digest(repo) != manifest.repository_digest {
        bail!(
            "repository {} does not match the completed run (stale artifacts?)",
            cfg.repo.display()
        );
    }
    let mut plan = ExperimentPlan::frozen_benchmark();
    plan.master_seed = manifest.master_seed;
    plan.record_count = manifest.record_count;
    plan.split_count = manifest.split_count;
    plan.epoch_budgets = manifest.epoch_budgets.clone();
    Ok(plan)
}

fn cmd_instance(args: InstanceArgs) -> Result<()> {
    let cfg = &args.cfg;
    let structure = load_structure(cfg)?;
    let truss = TrussModel::bridge(&structure).context("building structural model")?;
    let manifest = load_run_manifest(cfg)?;
    let repo = Repository::open(&cfg.repo)
        .with_context(|| format!("opening repository {}", cfg.repo.display()))?;
    let spec = GapInjectionSpec::load(&cfg.gap_spec)
        .with_context(|| format!("loading gap spec {}", cfg.gap_spec.display()))?;
    let plan = plan_from_manifest(cfg, &manifest, &spec, &repo)?;
    let lois = parse_lois(&args.loi)?;
    if lois.len() != 1 {
        bail!("instance tables are per level of integration; pass --loi A, B or C");
    }

    let instance_path = cfg.out.join("instance.csv");
    refuse_overwrite(&instance_path, args.force)?;

    // The designated cell: the run's largest epoch budget on its first
    // split, which is also the cell the aggregated table ends on.
    let epochs = *plan
        .epoch_budgets
        .last()
        .context("run manifest records no epoch budgets")?;
    let split_seed = *plan
        .split_seeds()
        .first()
        .context("run manifest records no splits")?;
    let artifacts = run_cell(&truss, &repo, &spec, &plan, split_seed, epochs, lois[0], None)
        .context("evaluating designated cell")?;
    let report =
        instance_report(&truss, &artifacts, args.timestep).context("tabulating instance")?;
    let body = format!("# master_seed {}\n{}", plan.master_seed, instance_csv(&report));
    fs::write(&instance_path, body)
        .with_context(|| format!("writing {}", instance_path.display()))?;
    println!(
        "instance {} under LoI {} (epochs {}, split {}): mse {:.6e} -> {}",
        args.timestep,
        lois[0],
        epochs,
        split_seed,
        report.mse_m2,
        instance_path.display()
    );
    Ok(())
}

fn cmd_secondgen(args: SecondgenArgs) -> Result<()> {
    let cfg = &args.cfg;
    let structure = load_structure(cfg)?;
    let truss = TrussModel::bridge(&structure).context("building structural model")?;
    let manifest = load_run_manifest(cfg)?;
    let augmented_dir = cfg.out.join("repo-augmented");
    if !augmented_dir.join("records.jsonl").exists() {
        bail!(
            "no augmented repository at {} (run `dtgap run` with LoI C first)",
            augmented_dir.display()
        );
    }
    let original = Repository::open(&cfg.repo)
        .with_context(|| format!("opening repository {}", cfg.repo.display()))?;
    let augmented = Repository::open(&augmented_dir)
        .with_context(|| format!("opening augmented repository {}", augmented_dir.display()))?;

    let csv_path = cfg.out.join("secondgen.csv");
    refuse_overwrite(&csv_path, args.force)?;

    let plan = {
        let mut plan = ExperimentPlan::frozen_benchmark();
        plan.master_seed = manifest.master_seed;
        plan
    };
    let mut out = format!(
        "# master_seed {}\n# original {} augmented {}\n",
        plan.master_seed,
        repository_digest(&original),
        repository_digest(&augmented)
    );
    out.push_str("asset_seed,original_mse_m2,augmented_mse_m2,original_records,augmented_records,win\n");
    let mut wins = 0usize;
    for k in 0..SECONDGEN_SEEDS {
        let outcome = second_generation_pretrain(
            &truss,
            &original,
            &augmented,
            &plan.hyper,
            SECONDGEN_EPOCHS,
            SECONDGEN_EVAL_INSTANCES,
            child_seed(plan.master_seed, "secondgen", k),
        )
        .context("second-generation pretraining")?;
        let win = outcome.augmented_mse_m2 < outcome.original_mse_m2;
        wins += win as usize;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            outcome.asset_seed,
            outcome.original_mse_m2,
            outcome.augmented_mse_m2,
            outcome.original_records,
            outcome.augmented_records,
            win as u8
        ));
    }
    out.push_str(&format!("# wins {wins}/{SECONDGEN_SEEDS}\n"));
    fs::write(&csv_path, out).with_context(|| format!("writing {}", csv_path.display()))?;
    println!(
        "second-generation pretraining: augmented repo wins {wins}/{SECONDGEN_SEEDS} -> {}",
        csv_path.display()
    );
    Ok(())
}

fn parse_report_rows(text: &str) -> Result<Vec<CellOutcome>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() || line.starts_with("loi,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = || format!("report line {}: malformed row '{line}'", i + 1);
        if fields.len() != 7 {
            bail!(parse_err());
        }
        rows.push(CellOutcome {
            loi: Loi::parse(fields[0]).with_context(parse_err)?,
            epochs: fields[1].parse().with_context(parse_err)?,
            split_seed: fields[2].parse().with_context(parse_err)?,
            mse_m2: fields[3].parse().with_context(parse_err)?,
            train_s: fields[4].parse().with_context(parse_err)?,
            finetune_s: fields[5].parse().with_context(parse_err)?,
            novel_count: fields[6].parse().with_context(parse_err)?,
        });
    }
    Ok(rows)
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let cfg = &args.cfg;
    let report_path = cfg.out.join("report.csv");
    let text = fs::read_to_string(&report_path).with_context(|| {
        format!(
            "missing run artifacts: {} (run `dtgap run` first)",
            report_path.display()
        )
    })?;
    let rows = parse_report_rows(&text)?;
    if rows.is_empty() {
        bail!("{} holds no data rows", report_path.display());
    }
    let grid_path = cfg.out.join("report.grid.csv");
    refuse_overwrite(&grid_path, args.force)?;

    // Carry the source report's comment preamble (seed and input digests)
    // onto the aggregate so it stays self-describing.
    let preamble: String = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let cells = aggregate(&rows);
    let body = format!("{preamble}{}", grid_csv(&cells));
    fs::write(&grid_path, body).with_context(|| format!("writing {}", grid_path.display()))?;
    println!(
        "aggregated {} rows into {} cells -> {}",
        rows.len(),
        cells.len(),
        grid_path.display()
    );
    Ok(())
}
