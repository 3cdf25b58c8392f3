use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use prescriptor::costs::{build_cost_model, CostKind, CostModel};
use prescriptor::evaluate::{evaluate_assignments, EvaluationRow, ReportTable};
use prescriptor::heuristics::{blind_greedy, greedy_label, random_label, random_prescription, GREEDY_VARIANTS};
use prescriptor::impact::{default_weight_specs, estimate_all, WeightCache};
use prescriptor::ingest::{parse_date, parse_history, RegionHistory, RegionKey};
use prescriptor::pipeline::{min_runs_before, run_experiment, write_outputs, ExperimentConfig};
use prescriptor::predictor::{ExternalPredictor, Predictor, SurrogatePredictor};
use prescriptor::prescriber::MinRuns;
use prescriptor::prescription_csv::{group_rows, read_rows, write_rows, PrescriptionRow};
use prescriptor::rollout::{
    default_start_date, prescribe_all, schedule_from_assignments, seed_history, variants, PrescriptionSchedule,
    DEFAULT_HORIZON_DAYS,
};
use prescriptor::{default_catalog, PlanCatalog};

mod server;

#[derive(Parser)]
#[command(name = "prescriptor", version, about = "Intervention-plan prescription and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a tracker CSV and summarize each region.
    Ingest(Common),
    /// Derive minimum run lengths per (plan, level) from history.
    DeriveRuns(Common),
    /// Estimate and cache impact weights for every region and weight set.
    EstimateWeights(Common),
    /// Prescribe schedules with the exact optimizer.
    Prescribe {
        #[command(flatten)]
        common: Common,
        /// Hold each prescribed level for its minimum run length.
        #[arg(long)]
        consecutive: bool,
    },
    /// Emit blind-greedy or random baseline schedules.
    Heuristic {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: HeuristicKind,
        /// Greedy variant index or random seed.
        #[arg(long)]
        variant: Vec<u64>,
    },
    /// Score a prescription CSV through the predictor.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prescriptions: PathBuf,
    },
    /// Run the full benchmark and write report tables.
    Report(Common),
    /// Serve the JSON API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory of static dashboard files served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HeuristicKind {
    Greedy,
    Random,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    /// Tracker CSV with daily plan levels and cumulative cases.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_date_arg)]
    start_date: Option<NaiveDate>,
    #[arg(long, default_value_t = DEFAULT_HORIZON_DAYS)]
    horizon: usize,
    /// fixed, random or realistic; repeat for several, defaults to all.
    #[arg(long = "cost-model")]
    cost_models: Vec<CostKind>,
    /// Seed of the random cost model.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight-set label (repeatable) or weight cache file / directory.
    #[arg(long)]
    weights: Vec<String>,
    /// External predictor program; the built-in surrogate is used otherwise.
    #[arg(long)]
    predictor: Option<PathBuf>,
    #[arg(long = "predictor-arg")]
    predictor_args: Vec<String>,
    /// Output file, or a directory (always for `report`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Restrict to these regions (`Country` or `Country__Region`).
    #[arg(long = "region")]
    regions: Vec<String>,
}

fn parse_date_arg(s: &str) -> Result<NaiveDate, String> {
    parse_date(s).ok_or_else(|| format!("expected YYYY-MM-DD, got `{s}`"))
}

struct Loaded {
    catalog: PlanCatalog,
    histories: BTreeMap<RegionKey, RegionHistory>,
    predictor: Arc<dyn Predictor>,
    cache: WeightCache,
    start: NaiveDate,
    cost_models: Vec<CostModel>,
}

impl Common {
    fn load(&self) -> Result<Loaded> {
        let catalog = default_catalog();
        let file = File::open(&self.data).with_context(|| format!("opening {}", self.data.display()))?;
        let mut histories = parse_history(file, &catalog).with_context(|| format!("parsing {}", self.data.display()))?;
        if !self.regions.is_empty() {
            let wanted: Vec<RegionKey> = self.regions.iter().map(|r| r.parse().unwrap()).collect();
            for w in &wanted {
                if !histories.contains_key(w) {
                    bail!("unknown region `{w}`");
                }
            }
            histories.retain(|k, _| wanted.contains(k));
        }
        let predictor: Arc<dyn Predictor> = match &self.predictor {
            Some(program) => Arc::new(ExternalPredictor {
                program: program.clone(),
                args: self.predictor_args.clone(),
                catalog: catalog.clone(),
            }),
            None => Arc::new(SurrogatePredictor::with_defaults(catalog.clone())),
        };
        let cache = match self.weight_source() {
            Some(p) if p.is_dir() || p.extension().is_none() => WeightCache::open(&p, &predictor.fingerprint())?,
            Some(p) => WeightCache::open_file(&p)?,
            None => WeightCache::in_memory(),
        };
        let kinds = if self.cost_models.is_empty() {
            CostKind::ALL.to_vec()
        } else {
            self.cost_models.clone()
        };
        let cost_models = kinds
            .iter()
            .map(|&k| build_cost_model(k, &catalog, (k == CostKind::Random).then_some(self.seed)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Loaded {
            catalog,
            histories,
            predictor,
            cache,
            start: self.start_date.unwrap_or_else(default_start_date),
            cost_models,
        })
    }

    fn weight_labels(&self) -> Vec<String> {
        let known: Vec<String> = default_weight_specs().into_iter().map(|s| s.label).collect();
        self.weights.iter().filter(|w| known.contains(w)).cloned().collect()
    }

    fn weight_source(&self) -> Option<PathBuf> {
        let labels = self.weight_labels();
        self.weights.iter().find(|w| !labels.contains(w)).map(PathBuf::from)
    }

    fn config(&self, ctx: &Loaded) -> ExperimentConfig {
        ExperimentConfig {
            start_date: ctx.start,
            horizon_days: self.horizon,
            cost_kinds: ctx.cost_models.iter().map(|c| c.kind).collect(),
            cost_seed: self.seed,
            ..ExperimentConfig::default()
        }
    }

    /// `--out` as a file; a path without an extension is a directory that
    /// receives `<name>.<format>`.
    fn sink(&self, name: &str) -> Result<Box<dyn Write>> {
        let Some(p) = &self.out else {
            return Ok(Box::new(std::io::stdout().lock()));
        };
        let path = if p.is_dir() || p.extension().is_none() {
            std::fs::create_dir_all(p)?;
            let ext = match self.format {
                Format::Csv => "csv",
                Format::Json => "json",
            };
            p.join(format!("{name}.{ext}"))
        } else {
            p.clone()
        };
        Ok(Box::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(c) => ingest(&c),
        Command::DeriveRuns(c) => derive_runs(&c),
        Command::EstimateWeights(c) => estimate_weights(&c),
        Command::Prescribe { common, consecutive } => prescribe(&common, consecutive),
        Command::Heuristic { common, kind, variant } => heuristic(&common, kind, &variant),
        Command::Evaluate { common, prescriptions } => evaluate(&common, &prescriptions),
        Command::Report(c) => report(&c),
        Command::Serve {
            common,
            addr,
            static_dir,
        } => {
            let ctx = common.load()?;
            let config = common.config(&ctx);
            let state = prescriptor::service::ServiceState::new(
                ctx.catalog,
                ctx.histories,
                ctx.predictor,
                ctx.cache,
                config,
            );
            server::serve(Arc::new(state), &addr, static_dir.as_deref())
        }
    }
}

fn ingest(c: &Common) -> Result<()> {
    let ctx = c.load()?;
    let mut out = c.sink("ingest")?;
    match c.format {
        Format::Json => {
            let regions: Vec<_> = ctx
                .histories
                .values()
                .map(|h| {
                    json!({
                        "region": h.key,
                        "first_date": h.first_date(),
                        "last_date": h.last_date(),
                        "days": h.len(),
                        "current_new_cases": h.last_smoothed(),
                    })
                })
                .collect();
            serde_json::to_writer_pretty(&mut out, &regions)?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(out, "region,first_date,last_date,days,current_new_cases")?;
            for h in ctx.histories.values() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    h.key,
                    h.first_date().map(|d| d.to_string()).unwrap_or_default(),
                    h.last_date().map(|d| d.to_string()).unwrap_or_default(),
                    h.len(),
                    h.last_smoothed().unwrap_or(0.0)
                )?;
            }
        }
    }
    Ok(())
}

fn derive_runs(c: &Common) -> Result<()> {
    let ctx = c.load()?;
    let runs = min_runs_before(&ctx.histories, &ctx.catalog, ctx.start);
    let mut out = c.sink("min_runs")?;
    match c.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &runs)?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(out, "plan,level,min_run_days")?;
            for ((p, l), d) in runs.iter() {
                writeln!(out, "{p},{l},{d}")?;
            }
        }
    }
    Ok(())
}

fn estimate_weights(c: &Common) -> Result<()> {
    let ctx = c.load()?;
    let labels = c.weight_labels();
    let specs: Vec<_> = default_weight_specs()
        .into_iter()
        .filter(|s| labels.is_empty() || labels.contains(&s.label))
        .collect();
    let results = estimate_all(
        &ctx.histories,
        &specs,
        &ctx.catalog,
        ctx.predictor.as_ref(),
        &ctx.cache,
    );
    for ((key, label), r) in &results {
        if let Err(e) = r {
            log::warn!("{key}/{label}: {e}");
        }
    }
    ctx.cache.save()?;
    match ctx.cache.path() {
        Some(p) if c.out.is_none() => println!("{}", p.display()),
        _ => writeln!(c.sink("weights")?, "{}", ctx.cache.to_json())?,
    }
    Ok(())
}

fn write_schedules(c: &Common, catalog: &PlanCatalog, schedules: &[PrescriptionSchedule]) -> Result<()> {
    let mut out = c.sink("prescriptions")?;
    match c.format {
        Format::Csv => {
            let rows: Vec<PrescriptionRow> = schedules.iter().flat_map(|s| s.to_rows()).collect();
            write_rows(&mut out, catalog, &rows)?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, schedules)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn prescribe(c: &Common, consecutive: bool) -> Result<()> {
    let ctx = c.load()?;
    let weight_sets = c.weight_labels();
    let specs: Vec<_> = default_weight_specs()
        .into_iter()
        .filter(|s| weight_sets.is_empty() || weight_sets.contains(&s.label))
        .collect();
    let labels: Vec<String> = specs.iter().map(|s| s.label.clone()).collect();
    let variants = if consecutive {
        variants(&[], &labels)
    } else {
        variants(&labels, &[])
    };
    let mut weights = BTreeMap::new();
    for (k, r) in estimate_all(&ctx.histories, &specs, &ctx.catalog, ctx.predictor.as_ref(), &ctx.cache) {
        match r {
            Ok(w) => {
                weights.insert(k, w);
            }
            Err(e) => log::warn!("{}/{}: {e}", k.0, k.1),
        }
    }
    ctx.cache.save()?;
    let min_runs = if consecutive {
        min_runs_before(&ctx.histories, &ctx.catalog, ctx.start)
    } else {
        MinRuns::default()
    };
    let batch = prescribe_all(
        &ctx.histories,
        &weights,
        &ctx.cost_models,
        &variants,
        &ctx.catalog,
        ctx.predictor.as_ref(),
        ctx.start,
        c.horizon,
        &min_runs,
    );
    for (region, label, kind, msg) in &batch.failures {
        log::warn!("{region} {label} {kind}: {msg}");
    }
    write_schedules(c, &ctx.catalog, &batch.schedules)
}

fn heuristic(c: &Common, kind: HeuristicKind, picks: &[u64]) -> Result<()> {
    let ctx = c.load()?;
    let picks: Vec<u64> = if picks.is_empty() {
        match kind {
            HeuristicKind::Greedy => (0..GREEDY_VARIANTS as u64).collect(),
            HeuristicKind::Random => (0..prescriptor::heuristics::RANDOM_VARIANTS).collect(),
        }
    } else {
        picks.to_vec()
    };
    let mut schedules = Vec::new();
    for (key, history) in &ctx.histories {
        for cm in &ctx.cost_models {
            for (index, &v) in picks.iter().enumerate() {
                let (label, assignments) = match kind {
                    HeuristicKind::Greedy => {
                        if v >= GREEDY_VARIANTS as u64 {
                            bail!("greedy variant must be below {GREEDY_VARIANTS}");
                        }
                        let v = v as u32;
                        (greedy_label(v), vec![blind_greedy(cm, &ctx.catalog, v); c.horizon])
                    }
                    HeuristicKind::Random => (
                        random_label(v),
                        random_prescription(&ctx.catalog, v, key, ctx.start, c.horizon),
                    ),
                };
                match schedule_from_assignments(
                    history,
                    assignments,
                    ctx.start,
                    &label,
                    cm,
                    &ctx.catalog,
                    ctx.predictor.as_ref(),
                ) {
                    Ok(s) => schedules.push(PrescriptionSchedule {
                        prescription_index: index as u32,
                        ..s
                    }),
                    Err(e) => log::warn!("{key} {label}: {e}"),
                }
            }
        }
    }
    write_schedules(c, &ctx.catalog, &schedules)
}

fn evaluate(c: &Common, prescriptions: &Path) -> Result<()> {
    let ctx = c.load()?;
    let file = File::open(prescriptions).with_context(|| format!("opening {}", prescriptions.display()))?;
    let rows = read_rows(file, &ctx.catalog)?;
    let mut tables: Vec<ReportTable> = Vec::new();
    for ((key, index), days) in group_rows(rows) {
        let Some(history) = ctx.histories.get(&key) else {
            log::warn!("{key}: not in the data, skipped");
            continue;
        };
        let start = days[0].0;
        let seed = seed_history(history, start)?;
        let assignments: Vec<_> = days.into_iter().map(|(_, a)| a).collect();
        for cm in &ctx.cost_models {
            let label = format!("prescription_{index}");
            let row: EvaluationRow = evaluate_assignments(
                &label,
                &seed,
                &assignments,
                ctx.predictor.as_ref(),
                cm,
                &ctx.catalog,
            )?;
            match tables
                .iter_mut()
                .find(|t| t.scope == key.canonical() && t.cost_kind == cm.kind)
            {
                Some(t) => t.rows.push(row),
                None => tables.push(ReportTable {
                    scope: key.canonical(),
                    cost_kind: cm.kind,
                    rows: vec![row],
                }),
            }
        }
    }
    let mut out = c.sink("evaluations")?;
    match c.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &tables)?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(out, "region,cost_model,model_label,cases,costs_normalized,costs_raw")?;
            for t in &tables {
                for r in &t.rows {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        t.scope,
                        t.cost_kind,
                        r.model_label,
                        r.mean_daily_cases,
                        r.mean_stringency_normalized,
                        r.mean_stringency_raw
                    )?;
                }
            }
        }
    }
    Ok(())
}

fn report(c: &Common) -> Result<()> {
    let ctx = c.load()?;
    let config = c.config(&ctx);
    let result = run_experiment(&ctx.histories, &ctx.catalog, ctx.predictor.as_ref(), &ctx.cache, &config)?;
    ctx.cache.save()?;
    for f in &result.failures {
        log::warn!("{} {}: {}", f.region, f.model_label, f.message);
    }
    match &c.out {
        Some(dir) => {
            for p in write_outputs(&result, &ctx.catalog, dir)? {
                println!("{}", p.display());
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            match c.format {
                Format::Json => {
                    serde_json::to_writer_pretty(&mut out, &result.tables)?;
                    writeln!(out)?;
                }
                Format::Csv => {
                    for t in &result.tables {
                        writeln!(out, "# {} {}", t.scope, t.cost_kind)?;
                        write!(out, "{}", t.to_csv())?;
                    }
                }
            }
        }
    }
    Ok(())
}
