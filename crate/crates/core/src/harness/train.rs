use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::metrics::{evaluate_metrics, Metrics};
use super::report::{AttentionSummary, EpochRecord, Report, SplitMetrics};
use crate::backbone::{
    read_checkpoint, spoiler_scores, total_loss, write_checkpoint, FeatureStore, ForwardOutput, Model, ReviewBatch,
    MODALITIES,
};
use crate::datamodel::{
    build_meta_vectors, load_embeddings, save_embeddings, Dataset, EmbeddingMatrix, MetaTable, Split, TextFeatures,
};
use crate::diffcore::{adamw_step, lr_exponential_step, OptimizerState, ParamId, ParamRegistry};
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, ModalAttention};
use crate::graph::{EdgeRole, HeteroGraph, NodeType};
use crate::nn::Forward;
use crate::profile::{train_profiles, PretextReport, PROFILE_KIND};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const PROFILES_FILE: &str = "profiles.f32";
pub const REPORT_FILE: &str = "report.json";

const EVAL_TAG: u64 = 0x4556_414c_0000_0000;
const SHUFFLE_TAG: u64 = 0x5348_5546_0000_0000;
const PROFILE_TAG: u64 = 0x5052_4f46_0000_0000;

/// Seed of the subgraph sampled for evaluation batch `b`. Fixed across
/// epochs so that validation scores are comparable.
pub fn eval_seed(seed: u64, b: usize) -> u64 {
    seed ^ EVAL_TAG ^ b as u64
}

fn train_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    seed ^ ((epoch as u64) << 32) ^ step as u64
}

/// Inputs derived from a dataset before the backbone phase.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub ds: Dataset,
    pub text: TextFeatures,
    pub meta: MetaTable,
    pub graph: HeteroGraph,
    pub store: FeatureStore,
    pub labels: Vec<u8>,
    /// Frozen user profiles; `None` when the graph branch or profiles are off.
    pub profiles: Option<EmbeddingMatrix>,
    pub pretext: Option<PretextReport>,
}

impl Prepared {
    /// Featurizes `ds` and runs profile pretext training unless `profiles`
    /// are supplied.
    pub fn new(ds: &Dataset, cfg: &RunConfig, profiles: Option<EmbeddingMatrix>) -> Result<Self> {
        let m = &cfg.model;
        let text = TextFeatures::from_dataset(ds, m.text_dim)?;
        let meta = build_meta_vectors(ds, m.meta_dim)?;
        let wants_profiles = m.branches.graph && m.user_profile;
        let (profiles, pretext) = match (wants_profiles, profiles) {
            (false, _) => (None, None),
            (true, Some(p)) => (Some(p), None),
            (true, None) => {
                let (p, rep) = train_profiles(ds, &text, &m.profile, cfg.train.seed ^ PROFILE_TAG)?;
                (Some(p), Some(rep))
            }
        };
        let store = FeatureStore::new(ds, &text, &meta, profiles.as_ref())?;
        Ok(Prepared {
            graph: HeteroGraph::build(ds),
            labels: ds.labels(),
            ds: ds.clone(),
            text,
            meta,
            store,
            profiles,
            pretext,
        })
    }
}

/// Result of evaluating a model on a list of reviews.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// Summed cross-entropy.
    pub loss: f64,
    pub metrics: Metrics,
}

/// Eval-mode pass over `reviews`, calling `observe` after every batch.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with<F>(
    model: &Model,
    reg: &ParamRegistry,
    store: &FeatureStore,
    graph: &HeteroGraph,
    labels: &[u8],
    reviews: &[usize],
    batch_size: usize,
    seed: u64,
    mut observe: F,
) -> Result<Evaluation>
where
    F: FnMut(&Forward, &ForwardOutput, &ReviewBatch) -> Result<()>,
{
    let mut scores = Vec::with_capacity(reviews.len());
    let mut ys = Vec::with_capacity(reviews.len());
    let mut loss = 0.0;
    for (b, chunk) in reviews.chunks(batch_size.max(1)).enumerate() {
        let batch = model.make_batch(chunk, labels, store, graph, eval_seed(seed, b))?;
        let mut f = Forward::new(reg, false, 0);
        let out = model.forward(&mut f, &batch, store, graph, 0.0)?;
        let targets: Vec<usize> = batch.labels.iter().map(|&y| y as usize).collect();
        let ce = f.graph.cross_entropy(out.logits, &targets, None)?;
        loss += f.graph.data(ce)[0];
        scores.extend(spoiler_scores(f.graph.data(out.logits)));
        ys.extend_from_slice(&batch.labels);
        observe(&f, &out, &batch)?;
    }
    let metrics = evaluate_metrics(&scores, &ys)?;
    Ok(Evaluation {
        scores,
        labels: ys,
        loss,
        metrics,
    })
}

/// A trained model with the inputs it was trained on.
#[derive(Clone, Debug)]
pub struct Trained {
    pub config: RunConfig,
    pub model: Model,
    pub registry: ParamRegistry,
    pub prepared: Prepared,
    pub report: Report,
}

impl Trained {
    pub fn split(&self, split: Split) -> Vec<usize> {
        self.prepared.ds.split_indices(split)
    }

    pub fn evaluate(&self, reviews: &[usize]) -> Result<Evaluation> {
        self.evaluate_on(&self.prepared.store, &self.prepared.graph, reviews)
    }

    /// Evaluates with substituted features or graph.
    pub fn evaluate_on(&self, store: &FeatureStore, graph: &HeteroGraph, reviews: &[usize]) -> Result<Evaluation> {
        evaluate_with(
            &self.model,
            &self.registry,
            store,
            graph,
            &self.prepared.labels,
            reviews,
            self.config.train.batch_size,
            self.config.train.seed,
            |_, _, _| Ok(()),
        )
    }

    /// Fusion and GAT attention statistics over `reviews`.
    pub fn analyze_attention(&self, reviews: &[usize]) -> Result<AttentionSummary> {
        let p = &self.prepared;
        let mut fusion = ModalAttention::default();
        let mut into_reviews: IndexMap<String, (f64, usize)> = IndexMap::new();
        let mut into_users: IndexMap<String, (f64, usize)> = IndexMap::new();
        for key in ["self", "E1", "E2"] {
            into_reviews.insert(key.into(), (0.0, 0));
        }
        for key in ["self", "E3"] {
            into_users.insert(key.into(), (0.0, 0));
        }
        evaluate_with(
            &self.model,
            &self.registry,
            &p.store,
            &p.graph,
            &p.labels,
            reviews,
            self.config.train.batch_size,
            self.config.train.seed,
            |f, out, batch| {
                if !out.fusion_attention.is_empty() {
                    fusion.add(&f.graph, &out.fusion_attention)?;
                }
                let Some(sub) = &batch.subgraph else {
                    return Ok(());
                };
                for layer in &out.gat_attention {
                    for ((&dst, role), &a) in layer.dst.iter().zip(&layer.role).zip(&layer.alpha) {
                        let key = match role {
                            EdgeRole::SelfLoop => "self".to_string(),
                            EdgeRole::Typed(t) => format!("{t:?}"),
                        };
                        let table = match p.graph.locate(sub.nodes[dst]).0 {
                            NodeType::Review => &mut into_reviews,
                            NodeType::User => &mut into_users,
                            NodeType::Movie => continue,
                        };
                        let e = table.entry(key).or_insert((0.0, 0));
                        e.0 += a;
                        e.1 += 1;
                    }
                }
                Ok(())
            },
        )?;
        let mean = |t: IndexMap<String, (f64, usize)>| {
            t.into_iter()
                .filter(|(_, (_, n))| *n > 0)
                .map(|(k, (s, n))| (k, s / n as f64))
                .collect()
        };
        Ok(AttentionSummary {
            fusion: (self.model.fusion.mode() == FusionMode::Transformer && fusion.samples() > 0)
                .then(|| fusion.matrix())
                .transpose()?,
            fusion_order: ["graph".into(), "text".into(), "meta".into()],
            gat_into_reviews: mean(into_reviews),
            gat_into_users: mean(into_users),
        })
    }

    /// Writes config, checkpoint, profiles and report into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.config.save(&dir.join(CONFIG_FILE))?;
        write_checkpoint(&dir.join(CHECKPOINT_FILE), &self.registry)?;
        if let Some(p) = &self.prepared.profiles {
            save_embeddings(&dir.join(PROFILES_FILE), p)?;
        }
        self.report.save(&dir.join(REPORT_FILE))
    }

    /// Rebuilds a run saved by [`Trained::save`] against its dataset.
    pub fn load(dir: &Path, ds: &Dataset) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let profile_path = dir.join(PROFILES_FILE);
        let profiles = if config.model.branches.graph && config.model.user_profile {
            let p = load_embeddings(&profile_path, ds.users.len(), config.model.text_dim)?;
            if p.kind != PROFILE_KIND {
                return Err(Error::Format(format!(
                    "{} holds {} embeddings, expected {PROFILE_KIND}",
                    profile_path.display(),
                    p.kind
                )));
            }
            Some(p)
        } else {
            None
        };
        let prepared = Prepared::new(ds, &config, profiles)?;
        let mut registry = ParamRegistry::new(config.train.seed);
        let model = Model::new(&mut registry, &config.model)?;
        read_checkpoint(&dir.join(CHECKPOINT_FILE), &mut registry)?;
        let report_path = dir.join(REPORT_FILE);
        let report = if report_path.exists() {
            Report::load(&report_path)?
        } else {
            Report::new("train", &config)
        };
        Ok(Trained {
            config,
            model,
            registry,
            prepared,
            report,
        })
    }
}

fn all_params(model: &Model) -> Vec<ParamId> {
    model.param_groups().into_iter().flat_map(|g| g.1).collect()
}

/// Profile phase then backbone phase. The returned registry holds the
/// parameters of the epoch with the best validation F1.
pub fn train(ds: &Dataset, cfg: &RunConfig) -> Result<Trained> {
    cfg.validate()?;
    let start = Instant::now();
    let prepared = Prepared::new(ds, cfg, None)?;
    let mut trained = train_prepared(prepared, cfg)?;
    trained.report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(trained)
}

/// Backbone phase on already prepared inputs.
pub fn train_prepared(prepared: Prepared, cfg: &RunConfig) -> Result<Trained> {
    cfg.validate()?;
    let start = Instant::now();
    let t = &cfg.train;
    let ds = &prepared.ds;
    let train_ids = ds.split_indices(Split::Train);
    let val_ids = ds.split_indices(Split::Val);
    let test_ids = ds.split_indices(Split::Test);
    if train_ids.is_empty() {
        return Err(Error::Contract("the training split is empty".into()));
    }
    if val_ids.is_empty() || test_ids.is_empty() {
        return Err(Error::Contract("validation and test splits must be non-empty".into()));
    }

    let mut reg = ParamRegistry::new(t.seed);
    let model = Model::new(&mut reg, &cfg.model)?;
    let params = all_params(&model);
    let mut opt = OptimizerState::new(t.lr, t.weight_decay);
    let mut report = Report::new("train", cfg);
    report.pretext = prepared.pretext.clone();

    let eval = |reg: &ParamRegistry, ids: &[usize]| {
        evaluate_with(
            &model,
            reg,
            &prepared.store,
            &prepared.graph,
            &prepared.labels,
            ids,
            t.batch_size,
            t.seed,
            |_, _, _| Ok(()),
        )
    };
    report.initial_loss = Some(eval(&reg, &train_ids)?.loss / train_ids.len() as f64);

    let mut order = train_ids.clone();
    let mut best: Option<(f64, usize, Vec<Vec<f64>>)> = None;
    for epoch in 1..=t.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ SHUFFLE_TAG ^ epoch as u64);
        order.shuffle(&mut rng);
        let mut ce_sum = 0.0;
        let mut load: IndexMap<String, Vec<f64>> = IndexMap::new();
        for (step, chunk) in order.chunks(t.batch_size).enumerate() {
            let s = train_seed(t.seed, epoch, step);
            let batch = model.make_batch(chunk, &prepared.labels, &prepared.store, &prepared.graph, s)?;
            let mut f = Forward::new(&reg, true, s);
            let out = model.forward(&mut f, &batch, &prepared.store, &prepared.graph, t.dropout)?;
            for (m, g) in &out.gates {
                let l = f.graph.data(g.load);
                let acc = load
                    .entry(MODALITIES[*m].to_string())
                    .or_insert_with(|| vec![0.0; l.len()]);
                acc.iter_mut().zip(l).for_each(|(a, v)| *a += v);
            }
            let parts = total_loss(&mut f, &out, &batch.labels, &params, t.l2, t.balance_weight)?;
            ce_sum += parts.cross_entropy;
            let mut graph = f.graph;
            reg.zero_grads();
            graph.backward(parts.total, &mut reg)?;
            adamw_step(&mut reg, &mut opt)?;
        }
        for v in load.values_mut() {
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total.max(f64::MIN_POSITIVE));
        }

        let (tr, va, te) = if t.strict_serial {
            (eval(&reg, &train_ids)?, eval(&reg, &val_ids)?, eval(&reg, &test_ids)?)
        } else {
            let reg = &reg;
            let eval = &eval;
            std::thread::scope(|sc| {
                let a = sc.spawn(|| eval(reg, &train_ids));
                let b = sc.spawn(|| eval(reg, &val_ids));
                let c = eval(reg, &test_ids);
                let a = a.join().expect("evaluation thread panicked");
                let b = b.join().expect("evaluation thread panicked");
                Ok::<_, Error>((a?, b?, c?))
            })?
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val f1 {:.4} test auc {:?}",
            ce_sum / train_ids.len() as f64,
            va.metrics.f1,
            te.metrics.auc
        );
        if best.as_ref().is_none_or(|b| va.metrics.f1 > b.0) {
            best = Some((va.metrics.f1, epoch, reg.snapshot()));
        }
        report.epochs.push(EpochRecord {
            epoch,
            lr: opt.lr,
            train_loss: ce_sum / train_ids.len() as f64,
            train_eval_loss: tr.loss / train_ids.len() as f64,
            val: va.metrics,
            test: te.metrics,
            expert_load: load,
        });
        opt.lr = lr_exponential_step(opt.lr, t.gamma)?;
    }

    let (_, best_epoch, snapshot) = best.expect("at least one epoch");
    reg.restore(&snapshot)?;
    let rec = &report.epochs[best_epoch - 1];
    report.best_epoch = Some(best_epoch);
    report.metrics = Some(SplitMetrics {
        val: rec.val,
        test: rec.test,
    });
    let mut trained = Trained {
        config: cfg.clone(),
        model,
        registry: reg,
        prepared,
        report,
    };
    trained.report.attention = Some(trained.analyze_attention(&test_ids)?);
    trained.report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(trained)
}

/// `n` independent runs with seeds `seed, seed + 1, ...` and a summary of
/// their best-epoch test metrics.
pub fn train_repeats(ds: &Dataset, cfg: &RunConfig, n: usize) -> Result<(Vec<Trained>, Report)> {
    if n == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let start = Instant::now();
    let mut runs = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let mut c = cfg.clone();
        c.train.seed = cfg.train.seed.wrapping_add(i);
        runs.push(train(ds, &c)?);
    }
    let seeds = runs.iter().map(|r| r.config.train.seed).collect();
    let test = runs
        .iter()
        .map(|r| r.report.metrics.as_ref().map(|m| m.test))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Contract("a repeat finished without metrics".into()))?;
    let mut report = Report::new("repeats", cfg);
    report.repeats = Some(super::report::RepeatSummary::new(seeds, test)?);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((runs, report))
}
