use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{CurvePoint, PerturbCurve};
use super::train::Trained;
use crate::datamodel::Split;
use crate::error::{Error, Result};
use crate::graph::{EdgeType, HeteroGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Remove each graph edge independently.
    Edges,
    /// Zero each text feature element independently.
    Text,
    /// Zero each metadata element independently.
    Meta,
}

impl PerturbMode {
    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::Edges => "edges",
            PerturbMode::Text => "text",
            PerturbMode::Meta => "meta",
        }
    }
}

impl fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edges" | "edge" => Ok(PerturbMode::Edges),
            "text" => Ok(PerturbMode::Text),
            "meta" => Ok(PerturbMode::Meta),
            _ => Err(Error::Config(format!("unknown perturbation mode {s:?} (edges, text, meta)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub mode: PerturbMode,
    /// Ascending, each in `[0, 1]`.
    pub rates: Vec<f64>,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::Config("no perturbation rates given".into()));
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("perturbation rate {r} outside [0, 1]")));
        }
        if self.rates.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("perturbation rates must be sorted ascending".into()));
        }
        Ok(())
    }
}

/// Copy of `graph` without the edges whose uniform draw falls below `rate`.
/// One seed gives nested edge sets across rates.
pub fn drop_edges(graph: &HeteroGraph, rate: f64, seed: u64) -> HeteroGraph {
    let n: usize = EdgeType::ALL.iter().map(|&t| graph.edge_count(t)).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    graph.filter_edges(|e| u[e] >= rate)
}

/// Test-split metrics of a trained model under increasing input damage.
pub fn perturb(trained: &Trained, spec: &PerturbSpec) -> Result<PerturbCurve> {
    spec.validate()?;
    let test = trained.split(Split::Test);
    let p = &trained.prepared;
    let mut points = Vec::with_capacity(spec.rates.len());
    for &rate in &spec.rates {
        let eval = match spec.mode {
            PerturbMode::Edges => trained.evaluate_on(&p.store, &drop_edges(&p.graph, rate, spec.seed), &test)?,
            PerturbMode::Text => trained.evaluate_on(&p.store.drop_text(rate, spec.seed), &p.graph, &test)?,
            PerturbMode::Meta => trained.evaluate_on(&p.store.drop_meta(rate, spec.seed), &p.graph, &test)?,
        };
        points.push(CurvePoint {
            rate,
            metrics: eval.metrics,
        });
    }
    Ok(PerturbCurve {
        mode: spec.mode.name().to_string(),
        seed: spec.seed,
        points,
    })
}
