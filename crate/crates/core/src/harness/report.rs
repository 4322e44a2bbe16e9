use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{Metrics, Spread};
use crate::error::{Error, Result};
use crate::profile::PretextReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-review cross-entropy over the epoch's training batches.
    pub train_loss: f64,
    /// Mean per-review cross-entropy on the training split in eval mode,
    /// measured after the epoch.
    pub train_eval_loss: f64,
    pub val: Metrics,
    pub test: Metrics,
    /// Share of gate weight routed to each expert, per modality.
    pub expert_load: IndexMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub val: Metrics,
    pub test: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbCurve {
    pub mode: String,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl PerturbCurve {
    /// `rate,f1,auc,acc` with an empty field for an undefined AUC.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rate,f1,auc,acc\n");
        for p in &self.points {
            let auc = p.metrics.auc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", p.rate, p.metrics.f1, auc, p.metrics.acc));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    /// Fusion attention averaged over layers, heads and test reviews, rows
    /// and columns ordered (graph, text, meta).
    pub fusion: Option<[[f64; 3]; 3]>,
    pub fusion_order: [String; 3],
    /// Mean GAT coefficient on edges entering review nodes, keyed by
    /// `self`, `E1`, `E2`.
    pub gat_into_reviews: IndexMap<String, f64>,
    /// Mean GAT coefficient on edges entering user nodes (`self`, `E3`).
    pub gat_into_users: IndexMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    pub test: Vec<Metrics>,
    pub f1: Spread,
    pub auc: Option<Spread>,
    pub acc: Spread,
}

impl RepeatSummary {
    pub fn new(seeds: Vec<u64>, test: Vec<Metrics>) -> Result<Self> {
        let pick = |g: fn(&Metrics) -> f64| test.iter().map(g).collect::<Vec<_>>();
        let aucs: Option<Vec<f64>> = test.iter().map(|m| m.auc).collect();
        Ok(RepeatSummary {
            f1: Spread::of(&pick(|m| m.f1)).ok_or_else(|| Error::Contract("no repeats".into()))?,
            acc: Spread::of(&pick(|m| m.acc)).ok_or_else(|| Error::Contract("no repeats".into()))?,
            auc: aucs.and_then(|a| Spread::of(&a)),
            seeds,
            test,
        })
    }
}

/// Everything needed to reproduce and inspect one harness run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub seed: u64,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub wall_clock_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretext: Option<PretextReport>,
    #[serde(default)]
    pub epochs: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<SplitMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<RepeatSummary>,
}

impl Report {
    pub fn new(kind: &str, config: &RunConfig) -> Self {
        Report {
            kind: kind.to_string(),
            seed: config.train.seed,
            config: config.clone(),
            variant: None,
            wall_clock_secs: 0.0,
            initial_loss: None,
            pretext: None,
            epochs: vec![],
            best_epoch: None,
            metrics: None,
            perturbation: None,
            attention: None,
            repeats: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
