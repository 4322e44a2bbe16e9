//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::{dense_gat, logistic_probe, pairwise_auc, randomize};
use mmoe_core::backbone::{total_loss, FeatureStore, Model, ModelConfig, MoESettings};
use mmoe_core::datamodel::{
    build_meta_vectors, synth_generate, synth_generate_with_truth, Dataset, MovieRecord, Propensity, ReviewRecord,
    SynthSpec, TextFeatures, UserRecord,
};
use mmoe_core::diffcore::gradcheck::{check_params, gradcheck};
use mmoe_core::diffcore::{Init, ParamRegistry, PrimitiveKind, Tensor};
use mmoe_core::fusion::{Fusion, FusionMode};
use mmoe_core::graph::{
    encode_graph, gat_layer, sample_subgraph, EdgeType, GatLayerParams, GraphEncoderConfig, HeteroGraph, Subgraph,
};
use mmoe_core::harness::{ablate, evaluate_metrics, perturb, train, PerturbMode, PerturbSpec, RunConfig, Variant};
use mmoe_core::moe::{balancing_loss, gate, moe_forward, moe_forward_dense, MoEConfig, MoELayer};
use mmoe_core::nn::{EncoderConfig, Forward};
use mmoe_core::profile::{assemble_all, train_profiles, PretextStats, ProfileConfig, ProfileModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const GAT_TOL: f64 = 1e-5;
const MOE_TOL: f64 = 1e-6;
const AUC_TOL: f64 = 1e-9;
const ROW_TOL: f64 = 1e-6;
const LEARN_AUC: f64 = 0.95;
const LEARN_BUDGET: Duration = Duration::from_secs(300);
const ABLATION_GAP: f64 = 0.10;
const CURVE_SLACK: f64 = 0.02;
const CURVE_HIGH: f64 = 0.9;
const CURVE_LOW: f64 = 0.6;
const PROBE_ACC: f64 = 0.9;
/// Step size used on the graph-dominant dataset, where only two hops of
/// message passing carry the label.
const GRAPH_ONLY_LR: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grad(reg: &mut ParamRegistry, ids: &[mmoe_core::diffcore::ParamId], f: impl Fn(&mut Forward) -> mmoe_core::Result<mmoe_core::diffcore::Var>) -> f64 {
    check_params(reg, ids, |r| {
        let mut fw = Forward::new(r, false, 0);
        let l = f(&mut fw)?;
        Ok((fw.graph, l))
    })
    .unwrap()
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// 2 users, 1 movie, 3 reviews.
fn toy_dataset() -> Dataset {
    let meta = |k: &str, v: f64| [(k.to_string(), v)].into_iter().collect();
    let users = (0..2)
        .map(|u| UserRecord {
            user_id: format!("u{u}"),
            metadata: meta("badge_count", 1.0 + 4.0 * u as f64),
            description_text: None,
            review_ids: vec![],
        })
        .collect();
    let movies = vec![MovieRecord {
        movie_id: "m0".into(),
        metadata: meta("year", 2001.0),
        synopsis_text: "an island of dinosaurs".into(),
        genre: None,
    }];
    let reviews = [(0, 1), (1, 0), (0, 0)]
        .iter()
        .enumerate()
        .map(|(i, &(u, y))| ReviewRecord {
            review_id: format!("r{i}"),
            user_id: format!("u{u}"),
            movie_id: "m0".into(),
            metadata: meta("point", 2.0 + 3.0 * i as f64),
            text: ["the butler did it", "lovely score", "she was dead all along"][i].into(),
            label: y,
            split: None,
        })
        .collect();
    Dataset::new(users, movies, reviews).unwrap()
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: Vec<(&str, f64)> = vec![];

    let report = gradcheck(&PrimitiveKind::ALL, &mut rng).unwrap();
    worst.push(("primitives", report.max_rel_err()));

    // cross-entropy through a linear map
    let mut reg = ParamRegistry::new(2);
    let w = reg.register("w", &[3, 4], Init::Uniform(1.0)).unwrap();
    let x = rand_matrix(&mut rng, 5, 3);
    worst.push((
        "cross_entropy",
        grad(&mut reg, &[w], |f| {
            let xv = f.graph.constant(x.clone());
            let wv = f.param(w);
            let z = f.graph.matmul(xv, wv)?;
            f.graph.cross_entropy(z, &[0, 3, 1, 2, 2], None)
        }),
    ));

    // graph encoder
    let ds = common::tiny(&[(0, 0), (0, 1), (1, 1), (1, 0)], 2, 2);
    let g = HeteroGraph::build(&ds);
    let sub = sample_subgraph(&g, &[0, 1, 2, 3], 2, usize::MAX, &mut rng).unwrap();
    let mut reg = ParamRegistry::new(3);
    let cfg = GraphEncoderConfig {
        dims: vec![3, 4, 2],
        leaky_slope: 0.2,
        dropout: 0.0,
    };
    let layers: Vec<GatLayerParams> = (0..2)
        .map(|l| GatLayerParams::new(&mut reg, &format!("gat{l}"), cfg.dims[l], cfg.dims[l + 1]).unwrap())
        .collect();
    let readout = reg.register("readout", &[4, 2], Init::Uniform(1.0)).unwrap();
    let xg = rand_matrix(&mut rng, sub.len(), 3);
    let ids: Vec<_> = layers.iter().flat_map(|l| l.params()).collect();
    worst.push((
        "encode_graph",
        grad(&mut reg, &ids, |f| {
            let gv = f.graph.constant(xg.clone());
            let e = encode_graph(f, &sub, gv, &layers, &cfg)?;
            let r = f.param(readout);
            let m = f.graph.mul(e.seeds, r)?;
            f.graph.sum(m)
        }),
    ));

    // mixture of experts at a top-k-stable point
    let mut reg = ParamRegistry::new(4);
    let layer = MoELayer::new(
        &mut reg,
        "moe",
        MoEConfig {
            n_experts: 3,
            k: 2,
            d_in: 4,
            hidden: 5,
            d_out: 3,
            noisy: true,
        },
    )
    .unwrap();
    let readout = reg.register("readout", &[6, 3], Init::Uniform(1.0)).unwrap();
    let xm = rand_matrix(&mut rng, 6, 4);
    let mut ids = vec![layer.w_gate];
    ids.extend(layer.experts.iter().flat_map(|e| e.params()));
    worst.push((
        "moe",
        grad(&mut reg, &ids, |f| {
            let xv = f.graph.constant(xm.clone());
            let gt = gate(f, xv, &layer)?;
            let z = moe_forward(f, xv, &layer, &gt, 0.0)?;
            let r = f.param(readout);
            let m = f.graph.mul(z, r)?;
            f.graph.sum(m)
        }),
    ));

    // pretext head of the profile encoder
    let spec = SynthSpec {
        n_users: 30,
        n_movies: 5,
        n_reviews: 90,
        text_dim: 8,
        ..SynthSpec::default()
    };
    let pds = synth_generate(&spec, 2).unwrap();
    let text = TextFeatures::from_dataset(&pds, 8).unwrap();
    let seqs = assemble_all(&pds, &text, 6).unwrap();
    let labels = pds.labels();
    let pcfg = ProfileConfig {
        encoder: EncoderConfig {
            d_model: 8,
            heads: 2,
            ff_dim: 8,
            layers: 1,
            dropout: 0.0,
        },
        max_len: 6,
        ..ProfileConfig::default()
    };
    let mut reg = ParamRegistry::new(5);
    let pm = ProfileModel::new(&mut reg, &pcfg).unwrap();
    let ids = pm.head.params().to_vec();
    worst.push((
        "profile head",
        grad(&mut reg, &ids, |f| {
            Ok(pm.pretext_loss(f, &seqs[..6], &labels, &mut PretextStats::default())?.unwrap())
        }),
    ));

    // fusion output layer
    let mut reg = ParamRegistry::new(6);
    let enc = EncoderConfig {
        d_model: 4,
        heads: 2,
        ff_dim: 6,
        layers: 2,
        dropout: 0.0,
    };
    let fusion = Fusion::new(&mut reg, FusionMode::Transformer, &enc).unwrap();
    let Fusion::Transformer { out, .. } = &fusion else { unreachable!() };
    let zs: Vec<Tensor> = (0..3).map(|_| rand_matrix(&mut rng, 3, 4)).collect();
    let ids = out.params().to_vec();
    worst.push((
        "fusion W_o",
        grad(&mut reg, &ids, |f| {
            let v: Vec<_> = zs.iter().map(|z| f.graph.constant(z.clone())).collect();
            let o = fusion.forward(f, v[0], v[1], v[2])?;
            f.graph.cross_entropy(o.logits, &[1, 0, 1], None)
        }),
    ));

    // meta encoder and end to end
    let mcfg = ModelConfig {
        text_dim: 4,
        meta_dim: 3,
        meta_hidden: 5,
        meta_out: 4,
        text_proj: 4,
        gnn_hidden: 5,
        gnn_out: 4,
        moe: MoESettings {
            n_experts: 3,
            k: 2,
            hidden: 5,
            noisy: true,
        },
        fusion: mmoe_core::backbone::FusionSettings {
            dim: 4,
            heads: 2,
            ff_dim: 6,
            layers: 1,
            ..Default::default()
        },
        user_profile: false,
        ..ModelConfig::default()
    };
    let tds = toy_dataset();
    let ttext = TextFeatures::from_dataset(&tds, 4).unwrap();
    let tmeta = build_meta_vectors(&tds, 3).unwrap();
    let store = FeatureStore::new(&tds, &ttext, &tmeta, None).unwrap();
    let tg = HeteroGraph::build(&tds);
    let mut reg = ParamRegistry::new(7);
    let model = Model::new(&mut reg, &mcfg).unwrap();
    let xmeta = rand_matrix(&mut rng, 2, 3);
    let ids = model.meta_encoder.as_ref().unwrap().params();
    worst.push((
        "meta encoder",
        grad(&mut reg, &ids, |f| {
            let xv = f.graph.constant(xmeta.clone());
            let y = model.meta_encode(f, xv, 0.0)?.unwrap();
            let s = f.graph.square(y)?;
            f.graph.sum(s)
        }),
    ));
    let batch = model.make_batch(&[0, 2], &tds.labels(), &store, &tg, 0).unwrap();
    let groups = model.param_groups();
    let all: Vec<_> = groups.iter().flat_map(|g| g.1.clone()).collect();
    let mut e2e: f64 = 0.0;
    for (_, ids) in &groups {
        e2e = e2e.max(grad(&mut reg, ids, |f| {
            let out = model.forward(f, &batch, &store, &tg, 0.0)?;
            Ok(total_loss(f, &out, &batch.labels, &all, 1e-3, 1e-2)?.total)
        }));
    }

    let elapsed = start.elapsed();
    let module_max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let pass = module_max <= GRAD_TOL && e2e <= E2E_TOL && elapsed < GRAD_BUDGET && tg.n_nodes() == 6;
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        pass,
        format!(
            "{}; end-to-end {e2e:.1e} (tol {GRAD_TOL:e}/{E2E_TOL:e}); {:.1}s",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gat_dev: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let (d_in, d_out) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut edges = vec![];
        for s in 0..n {
            for d in 0..n {
                if s != d && rng.random_bool(0.4) {
                    edges.push((s, d));
                }
            }
        }
        let sub = Subgraph {
            nodes: (0..n).collect(),
            seeds: (0..n).collect(),
            edges: edges.iter().map(|&(s, d)| (s, d, EdgeType::E2)).collect(),
        };
        let mut reg = ParamRegistry::new(0);
        let p = GatLayerParams::new(&mut reg, "gat", d_in, d_out).unwrap();
        randomize(&mut reg, &mut rng, 1.0);
        let g: Vec<f64> = (0..n * d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut f = Forward::new(&reg, false, 0);
        let gv = f.graph.constant(Tensor::matrix(n, d_in, g.clone()).unwrap());
        let o = gat_layer(&mut f, &sub, gv, &p, 0.2).unwrap();
        let expect = dense_gat(
            n,
            &edges,
            &g,
            d_in,
            d_out,
            &reg.get(p.theta_s).data,
            &reg.get(p.theta_t).data,
            &reg.get(p.a_s).data,
            &reg.get(p.a_t).data,
            0.2,
        );
        for (a, b) in f.graph.data(o.out).iter().zip(&expect) {
            gat_dev = gat_dev.max((a - b).abs());
        }
    }

    let mut moe_dev: f64 = 0.0;
    for (n, k) in [(2, 1), (4, 1), (4, 2), (8, 2), (8, 8)] {
        let mut reg = ParamRegistry::new(n as u64 + k as u64);
        let layer = MoELayer::new(
            &mut reg,
            "moe",
            MoEConfig {
                n_experts: n,
                k,
                d_in: 5,
                hidden: 7,
                d_out: 3,
                noisy: true,
            },
        )
        .unwrap();
        let mut f = Forward::new(&reg, true, 5);
        let x = f.graph.constant(rand_matrix(&mut rng, 40, 5));
        let g = gate(&mut f, x, &layer).unwrap();
        let sparse = moe_forward(&mut f, x, &layer, &g, 0.0).unwrap();
        let dense = moe_forward_dense(&mut f, x, &layer, &g, 0.0).unwrap();
        for (a, b) in f.graph.data(sparse).iter().zip(f.graph.data(dense)) {
            moe_dev = moe_dev.max((a - b).abs());
        }
    }

    let mut auc_dev: f64 = 0.0;
    for case in 0..20 {
        let n = rng.random_range(2..80);
        let levels = if case % 3 == 0 { 4.0 } else { 1e9 };
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        labels[0] = 1;
        labels[n - 1] = 0;
        let m = evaluate_metrics(&scores, &labels).unwrap();
        auc_dev = auc_dev.max((m.auc.unwrap() - pairwise_auc(&scores, &labels).unwrap()).abs());
    }
    outcome(
        gat_dev <= GAT_TOL && moe_dev <= MOE_TOL && auc_dev <= AUC_TOL,
        format!("GAT {gat_dev:.1e} (tol {GAT_TOL:e}), MoE {moe_dev:.1e} (tol {MOE_TOL:e}), AUC {auc_dev:.1e} (tol {AUC_TOL:e})"),
    )
}

fn criterion_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = synth_generate(&SynthSpec::default(), 7).unwrap();
    let g = HeteroGraph::build(&ds);
    let r = ds.reviews.len();
    let edges_ok = EdgeType::ALL.iter().all(|&t| g.edge_count(t) == r);

    // GAT coefficients per destination
    let sub = sample_subgraph(&g, &[0, 5, 9, 100], 2, 200, &mut rng).unwrap();
    let mut reg = ParamRegistry::new(1);
    let p = GatLayerParams::new(&mut reg, "gat", 4, 3).unwrap();
    randomize(&mut reg, &mut rng, 1.0);
    let mut f = Forward::new(&reg, false, 0);
    let x = f.graph.constant(rand_matrix(&mut rng, sub.len(), 4));
    let o = gat_layer(&mut f, &sub, x, &p, 0.2).unwrap();
    let mut sums = vec![0.0; sub.len()];
    for (k, &d) in o.dst.iter().enumerate() {
        sums[d] += f.graph.data(o.alpha)[k];
    }
    let gat_dev = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);

    // fusion attention rows
    let mut reg = ParamRegistry::new(2);
    let enc = EncoderConfig {
        d_model: 8,
        heads: 4,
        ff_dim: 16,
        layers: 2,
        dropout: 0.0,
    };
    let fusion = Fusion::new(&mut reg, FusionMode::Transformer, &enc).unwrap();
    let mut f = Forward::new(&reg, false, 0);
    let zs: Vec<_> = (0..3).map(|_| f.graph.constant(rand_matrix(&mut rng, 5, 8))).collect();
    let out = fusion.forward(&mut f, zs[0], zs[1], zs[2]).unwrap();
    let mut fusion_dev: f64 = 0.0;
    for a in &out.attention {
        for row in f.graph.attention_probs(*a).unwrap().chunks(3) {
            fusion_dev = fusion_dev.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }

    // k = 1 gates
    let mut reg = ParamRegistry::new(3);
    let layer = MoELayer::new(
        &mut reg,
        "moe",
        MoEConfig {
            n_experts: 4,
            k: 1,
            d_in: 6,
            hidden: 4,
            d_out: 2,
            noisy: true,
        },
    )
    .unwrap();
    let mut one_hot = true;
    for training in [false, true] {
        let mut f = Forward::new(&reg, training, 9);
        let x = f.graph.constant(rand_matrix(&mut rng, 50, 6));
        let gt = gate(&mut f, x, &layer).unwrap();
        for row in f.graph.data(gt.weights).chunks(4) {
            one_hot &= row.iter().filter(|w| **w != 0.0).count() == 1 && row.iter().sum::<f64>() == 1.0;
        }
    }
    let bl_ok = balancing_loss(&[2.0, 0.0]) == 1.0 && balancing_loss(&[0.25; 4]) == 0.0;

    let pass = edges_ok && gat_dev <= ROW_TOL && fusion_dev <= ROW_TOL && one_hot && bl_ok;
    outcome(
        pass,
        format!(
            "|E1|=|E2|=|E3|={} for {r} reviews; GAT rows {gat_dev:.1e}, fusion rows {fusion_dev:.1e} (tol {ROW_TOL:e}); k=1 one-hot {one_hot}; BL([2,0])={}, BL(uniform)={}",
            g.edge_count(EdgeType::E1),
            balancing_loss(&[2.0, 0.0]),
            balancing_loss(&[0.25; 4])
        ),
    )
}

fn criterion_learnability() -> Outcome {
    let start = Instant::now();
    let ds = synth_generate(&SynthSpec::default(), 7).unwrap();
    let cfg = RunConfig::desk();
    let trained = train(&ds, &cfg).unwrap();
    let elapsed = start.elapsed();
    let test = trained.report.metrics.as_ref().unwrap().test;
    let auc = test.auc.unwrap_or(0.0);
    outcome(
        auc >= LEARN_AUC && elapsed <= LEARN_BUDGET && trained.report.epochs.len() == 60,
        format!(
            "test AUC {auc:.4} (need {LEARN_AUC}) after {} epochs, best epoch {}, {:.0}s (budget {}s)",
            trained.report.epochs.len(),
            trained.report.best_epoch.unwrap(),
            elapsed.as_secs_f64(),
            LEARN_BUDGET.as_secs()
        ),
    )
}

fn graph_only_config() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.train.lr = GRAPH_ONLY_LR;
    cfg
}

fn criteria_graph_only() -> (Outcome, Outcome) {
    let ds = synth_generate(&SynthSpec::graph_only(), 7).unwrap();
    let cfg = graph_only_config();
    let full = ablate(&ds, &cfg, Variant::Full).unwrap();
    let wo_graph = ablate(&ds, &cfg, Variant::WoGraph).unwrap();
    let wo_meta = ablate(&ds, &cfg, Variant::WoMeta).unwrap();
    let auc = |t: &mmoe_core::harness::Trained| t.report.metrics.as_ref().unwrap().test.auc.unwrap_or(0.5);
    let (a_full, a_graph, a_meta) = (auc(&full), auc(&wo_graph), auc(&wo_meta));
    let gap = (a_full - a_graph) - (a_full - a_meta);
    let ablation = outcome(
        gap >= ABLATION_GAP,
        format!(
            "AUC full {a_full:.4}, w/o graph {a_graph:.4}, w/o meta {a_meta:.4}; extra drop {gap:.4} (need {ABLATION_GAP})"
        ),
    );

    let spec = PerturbSpec {
        mode: PerturbMode::Edges,
        rates: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        seed: 7,
    };
    let curve = perturb(&full, &spec).unwrap();
    let aucs: Vec<f64> = curve.points.iter().map(|p| p.metrics.auc.unwrap_or(0.5)).collect();
    let trend = aucs.windows(2).all(|w| w[1] <= w[0] + CURVE_SLACK);
    let pass = trend && aucs[0] >= CURVE_HIGH && aucs[4] <= CURVE_LOW;
    let shown: Vec<String> = aucs.iter().map(|a| format!("{a:.4}")).collect();
    let robustness = outcome(
        pass,
        format!(
            "AUC at rates 0..1: [{}]; need AUC(0) >= {CURVE_HIGH}, AUC(1) <= {CURVE_LOW}, rises <= {CURVE_SLACK}",
            shown.join(", ")
        ),
    );
    (ablation, robustness)
}

fn criterion_profile_probe() -> Outcome {
    let spec = SynthSpec {
        propensity: Propensity::TwoPoint {
            low: 0.05,
            high: 0.95,
            high_fraction: 0.5,
        },
        a_user: 3.0,
        b_genre: 0.0,
        c_meta: 0.0,
        desc_fraction: 0.0,
        ..SynthSpec::default()
    };
    let (ds, truth) = synth_generate_with_truth(&spec, 7).unwrap();
    let text = TextFeatures::from_dataset(&ds, spec.text_dim).unwrap();
    let cfg = ModelConfig::desk().profile;
    let (profiles, _) = train_profiles(&ds, &text, &cfg, 7).unwrap();
    let x: Vec<Vec<f64>> = (0..profiles.rows).map(|u| profiles.row_f64(u)).collect();
    let y: Vec<u8> = truth.user_propensity.iter().map(|&p| (p > 0.5) as u8).collect();
    let acc = logistic_probe(&x, &y);
    outcome(
        acc >= PROBE_ACC,
        format!("held-out probe accuracy {acc:.4} over {} users (need {PROBE_ACC})", x.len()),
    )
}

fn criterion_determinism() -> Outcome {
    let spec = SynthSpec {
        n_users: 60,
        n_movies: 20,
        n_reviews: 400,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec, 7).unwrap();
    let mut cfg = RunConfig::desk();
    cfg.train.epochs = 3;
    cfg.model.profile.epochs = 2;
    assert!(cfg.train.strict_serial);
    let a = train(&ds, &cfg).unwrap().report;
    let b = train(&ds, &cfg).unwrap().report;
    let json = |r: &mmoe_core::harness::Report| {
        serde_json::to_string(&(&r.initial_loss, &r.epochs, &r.best_epoch, &r.metrics, &r.pretext)).unwrap()
    };
    outcome(
        a.epochs == b.epochs && json(&a) == json(&b),
        format!("{} epochs, trajectories identical: {}", a.epochs.len(), json(&a) == json(&b)),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "gradient suite", criterion_gradients()),
        (2, "oracle equivalence", criterion_oracles()),
        (3, "structural invariants", criterion_structure()),
        (4, "synthetic learnability", criterion_learnability()),
    ];
    let (ablation, robustness) = criteria_graph_only();
    results.push((5, "ablation ordering", ablation));
    results.push((6, "robustness curve", robustness));
    results.push((7, "user-profile probe", criterion_profile_probe()));
    results.push((8, "determinism", criterion_determinism()));
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n} {name}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
