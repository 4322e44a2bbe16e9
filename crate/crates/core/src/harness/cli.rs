use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ablate::{ablate, Variant};
use super::config::RunConfig;
use super::perturb::{perturb, PerturbMode, PerturbSpec};
use super::report::{Report, SplitMetrics};
use super::train::{evaluate_with, train, train_repeats, Trained, REPORT_FILE};
use crate::backbone::MODALITIES;
use crate::datamodel::{
    load_dataset, save_dataset, save_embeddings, split_dataset, synth_generate, Dataset, EmbeddingMatrix, Split,
    SynthSpec,
};
use crate::diffcore::gradcheck::gradcheck;
use crate::diffcore::PrimitiveKind;
use crate::error::{Error, Result};

const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "mmoe", version, about = "Multi-modal mixture-of-experts spoiler detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Default,
    GraphOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-signal dataset.
    Synth {
        /// SynthSpec JSON; missing fields take the preset's values.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a model and write checkpoint, profiles and report.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Evaluate a trained run on its validation and test splits.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics under edge removal or feature zeroing; writes curves.csv.
    Perturb {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "edges")]
        mode: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train ablation variants; all of them when none is named.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every primitive.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fusion and GAT attention statistics of a trained run.
    AnalyzeAttention {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write user profiles and per-review modality vectors for plotting.
    ExportEmbeddings {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 for usage or configuration errors,
/// 1 otherwise.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a dataset directory, splitting 8:1:1 when it carries no split.
fn load_data(dir: &Path, seed: u64) -> Result<Dataset> {
    let ds = load_dataset(dir)?;
    if ds.is_split() {
        Ok(ds)
    } else {
        split_dataset(&ds, DEFAULT_SPLIT, seed)
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_run(run: &Path, data: &Path) -> Result<Trained> {
    let cfg = RunConfig::load(&run.join(super::train::CONFIG_FILE))?;
    let ds = load_data(data, cfg.train.seed)?;
    Trained::load(run, &ds)
}

fn print_summary(report: &Report) {
    if let Some(m) = &report.metrics {
        println!(
            "test f1 {:.4} auc {} acc {:.4}",
            m.test.f1,
            m.test.auc.map_or("n/a".to_string(), |a| format!("{a:.4}")),
            m.test.acc
        );
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            spec,
            preset,
            out,
            seed,
        } => {
            let spec = match (spec, preset) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                (None, Preset::Default) => SynthSpec::default(),
                (None, Preset::GraphOnly) => SynthSpec::graph_only(),
            };
            let ds = synth_generate(&spec, seed)?;
            save_dataset(&out, &ds)?;
            let (u, m, r) = ds.counts();
            println!("wrote {u} users, {m} movies, {r} reviews to {}", out.display());
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            repeats,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let ds = load_data(&data, cfg.train.seed)?;
            if repeats <= 1 {
                let trained = train(&ds, &cfg)?;
                trained.save(&out)?;
                print_summary(&trained.report);
            } else {
                let (runs, report) = train_repeats(&ds, &cfg, repeats)?;
                create_dir(&out)?;
                for (i, run) in runs.iter().enumerate() {
                    run.save(&out.join(format!("run{i}")))?;
                }
                report.save(&out.join(REPORT_FILE))?;
                if let Some(r) = &report.repeats {
                    println!("test f1 {:.4} ± {:.4}, acc {:.4} ± {:.4}", r.f1.mean, r.f1.std, r.acc.mean, r.acc.std);
                }
            }
        }
        Command::Eval { run, data, out } => {
            let trained = load_run(&run, &data)?;
            let mut report = Report::new("eval", &trained.config);
            report.metrics = Some(SplitMetrics {
                val: trained.evaluate(&trained.split(Split::Val))?.metrics,
                test: trained.evaluate(&trained.split(Split::Test))?.metrics,
            });
            let out = out.unwrap_or(run);
            create_dir(&out)?;
            report.save(&out.join("eval.json"))?;
            print_summary(&report);
        }
        Command::Perturb {
            run,
            data,
            mode,
            rates,
            seed,
            out,
        } => {
            let spec = PerturbSpec {
                mode: mode.parse::<PerturbMode>()?,
                rates,
                seed,
            };
            spec.validate()?;
            let trained = load_run(&run, &data)?;
            let curve = perturb(&trained, &spec)?;
            let mut report = Report::new("perturb", &trained.config);
            create_dir(&out)?;
            write(&out.join("curves.csv"), &curve.to_csv())?;
            print!("{}", curve.to_csv());
            report.perturbation = Some(curve);
            report.save(&out.join(REPORT_FILE))?;
        }
        Command::Ablate {
            config,
            data,
            variants,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let variants: Vec<Variant> = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<Result<_>>()?
            };
            let ds = load_data(&data, cfg.train.seed)?;
            create_dir(&out)?;
            let mut table = String::from("variant,f1,auc,acc\n");
            for v in variants {
                let trained = ablate(&ds, &cfg, v)?;
                trained.save(&out.join(v.id()))?;
                if let Some(m) = &trained.report.metrics {
                    let auc = m.test.auc.map(|a| a.to_string()).unwrap_or_default();
                    table.push_str(&format!("{},{},{},{}\n", v.id(), m.test.f1, auc, m.test.acc));
                }
            }
            write(&out.join("ablation.csv"), &table)?;
            print!("{table}");
        }
        Command::Gradcheck { seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = gradcheck(&PrimitiveKind::ALL, &mut rng)?;
            for e in &report.entries {
                println!("{:<16} {:>3} points  max rel err {:.3e}", e.primitive, e.points, e.max_rel_err);
            }
            if let Some(p) = out {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    create_dir(dir)?;
                }
                write(&p, &serde_json::to_string_pretty(&report)?)?;
            }
            if !report.passed(GRADCHECK_TOL) {
                return Err(Error::Contract(format!(
                    "max relative error {:.3e} exceeds {GRADCHECK_TOL:e}",
                    report.max_rel_err()
                )));
            }
        }
        Command::AnalyzeAttention { run, data, split, out } => {
            let trained = load_run(&run, &data)?;
            let summary = trained.analyze_attention(&trained.split(split.into()))?;
            let mut report = Report::new("analyze_attention", &trained.config);
            report.attention = Some(summary);
            create_dir(&out)?;
            report.save(&out.join(REPORT_FILE))?;
            println!("{}", serde_json::to_string_pretty(&report.attention)?);
        }
        Command::ExportEmbeddings { run, data, split, out } => {
            let trained = load_run(&run, &data)?;
            create_dir(&out)?;
            if let Some(p) = &trained.prepared.profiles {
                save_embeddings(&out.join("user_profiles.f32"), p)?;
            }
            export_modal_vectors(&trained, &trained.split(split.into()), &out)?;
        }
    }
    Ok(())
}

/// Writes `z_meta`, `z_text` and `z_graph` for `reviews` plus a CSV of
/// their ids and labels, row-aligned.
fn export_modal_vectors(trained: &Trained, reviews: &[usize], out: &Path) -> Result<()> {
    let mut rows: [Vec<Vec<f64>>; 3] = Default::default();
    let mut order = Vec::with_capacity(reviews.len());
    let p = &trained.prepared;
    evaluate_with(
        &trained.model,
        &trained.registry,
        &p.store,
        &p.graph,
        &p.labels,
        reviews,
        trained.config.train.batch_size,
        trained.config.train.seed,
        |f, res, batch| {
            for (m, z) in res.modal.iter().enumerate() {
                let data = f.graph.data(*z);
                let d = data.len() / batch.len();
                rows[m].extend(data.chunks(d).map(|c| c.to_vec()));
            }
            order.extend_from_slice(&batch.reviews);
            Ok(())
        },
    )?;
    for (m, name) in MODALITIES.iter().enumerate() {
        let dim = rows[m].first().map_or(0, |r| r.len());
        let kind = format!("z_{name}");
        let mat = EmbeddingMatrix::from_rows(&kind, dim, &rows[m])?;
        save_embeddings(&out.join(format!("{kind}.f32")), &mat)?;
    }
    let mut csv = String::from("review_id,label\n");
    for r in order {
        csv.push_str(&format!("{},{}\n", p.ds.reviews[r].review_id, p.labels[r]));
    }
    write(&out.join("reviews.csv"), &csv)
}
