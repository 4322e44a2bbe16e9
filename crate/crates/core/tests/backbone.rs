use indexmap::IndexMap;
use mmoe_core::backbone::{
    decode_checkpoint, encode_checkpoint, total_loss, Branches, FeatureStore, ForwardOutput, MixerKind, Model,
    ModelConfig, MoESettings, FusionSettings,
};
use mmoe_core::datamodel::{build_meta_vectors, Dataset, MovieRecord, ReviewRecord, TextFeatures, UserRecord};
use mmoe_core::diffcore::gradcheck::check_params;
use mmoe_core::diffcore::{ParamRegistry, Tensor};
use mmoe_core::graph::HeteroGraph;
use mmoe_core::moe::{balancing_loss, GateOutput};
use mmoe_core::nn::Forward;
use mmoe_core::Error;

fn meta(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// 2 users, 1 movie, 3 reviews: a 6-node graph.
fn toy() -> Dataset {
    let users = (0..2)
        .map(|u| UserRecord {
            user_id: format!("u{u}"),
            metadata: meta(&[("badge_count", u as f64 * 3.0 + 1.0)]),
            description_text: None,
            review_ids: vec![],
        })
        .collect();
    let movies = vec![MovieRecord {
        movie_id: "m0".into(),
        metadata: meta(&[("year", 1999.0)]),
        synopsis_text: "a ship sinks slowly".into(),
        genre: None,
    }];
    let words = ["the twist ending reveals the killer", "great acting and music", "he dies at the end"];
    let reviews = [(0, 1), (0, 0), (1, 1)]
        .iter()
        .enumerate()
        .map(|(i, &(u, y))| ReviewRecord {
            review_id: format!("r{i}"),
            user_id: format!("u{u}"),
            movie_id: "m0".into(),
            metadata: meta(&[("time", i as f64), ("point", 3.0 + 2.0 * i as f64)]),
            text: words[i].into(),
            label: y,
            split: None,
        })
        .collect();
    Dataset::new(users, movies, reviews).unwrap()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        text_dim: 4,
        meta_dim: 3,
        meta_hidden: 5,
        meta_out: 4,
        text_proj: 4,
        gnn_hidden: 5,
        gnn_out: 4,
        gnn_layers: 2,
        hops: 2,
        neighbor_cap: 50,
        moe: MoESettings {
            n_experts: 3,
            k: 2,
            hidden: 5,
            noisy: true,
        },
        fusion: FusionSettings {
            dim: 4,
            heads: 2,
            ff_dim: 6,
            layers: 1,
            ..FusionSettings::default()
        },
        user_profile: false,
        ..ModelConfig::default()
    }
}

struct Setup {
    ds: Dataset,
    graph: HeteroGraph,
    store: FeatureStore,
}

fn setup(cfg: &ModelConfig) -> Setup {
    let ds = toy();
    let text = TextFeatures::from_dataset(&ds, cfg.text_dim).unwrap();
    let meta = build_meta_vectors(&ds, cfg.meta_dim).unwrap();
    let store = FeatureStore::new(&ds, &text, &meta, None).unwrap();
    let graph = HeteroGraph::build(&ds);
    Setup { ds, graph, store }
}

fn logits_of(model: &Model, reg: &ParamRegistry, s: &Setup, reviews: &[usize]) -> Vec<f64> {
    let batch = model.make_batch(reviews, &s.ds.labels(), &s.store, &s.graph, 0).unwrap();
    let mut f = Forward::new(reg, false, 0);
    let out = model.forward(&mut f, &batch, &s.store, &s.graph, 0.0).unwrap();
    f.graph.data(out.logits).to_vec()
}

#[test]
fn paper_scale_branch_widths() {
    let cfg = ModelConfig::default();
    let mut reg = ParamRegistry::new(1);
    let model = Model::new(&mut reg, &cfg).unwrap();
    let mut f = Forward::new(&reg, false, 0);
    let x = f.graph.constant(Tensor::zeros(&[3, 6]));
    let xm = model.meta_encode(&mut f, x, 0.0).unwrap().unwrap();
    assert_eq!(f.graph.shape(xm), [3, 256]);
    let t = f.graph.constant(Tensor::zeros(&[2, 768]));
    let xt = model.text_project(&mut f, t).unwrap().unwrap();
    assert_eq!(f.graph.shape(xt), [2, 256]);
    let bad = f.graph.constant(Tensor::zeros(&[2, 7]));
    assert!(model.meta_encode(&mut f, bad, 0.0).is_err());
}

#[test]
fn zero_weight_meta_encoder_returns_bias() {
    let cfg = small_config();
    let mut reg = ParamRegistry::new(2);
    let model = Model::new(&mut reg, &cfg).unwrap();
    let enc = model.meta_encoder.clone().unwrap();
    reg.get_mut(enc.first.w).data.fill(0.0);
    reg.get_mut(enc.second.w).data.fill(0.0);
    reg.get_mut(enc.first.b).data.fill(0.7);
    let b2 = vec![0.1, -0.2, 0.3, 0.4];
    reg.get_mut(enc.second.b).data.copy_from_slice(&b2);
    let mut f = Forward::new(&reg, false, 0);
    let x = f.graph.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap());
    let y = model.meta_encode(&mut f, x, 0.0).unwrap().unwrap();
    assert_eq!(f.graph.data(y), [b2.clone(), b2].concat());
}

#[test]
fn meta_encoder_gradients_match_differences() {
    let cfg = small_config();
    let mut reg = ParamRegistry::new(3);
    let model = Model::new(&mut reg, &cfg).unwrap();
    let ids = model.meta_encoder.as_ref().unwrap().params();
    let x = Tensor::matrix(2, 3, vec![0.3, -1.2, 0.8, 1.1, 0.2, -0.6]).unwrap();
    let err = check_params(&mut reg, &ids, |r| {
        let mut f = Forward::new(r, false, 0);
        let xv = f.graph.constant(x.clone());
        let y = model.meta_encode(&mut f, xv, 0.0)?.unwrap();
        let sq = f.graph.square(y)?;
        let l = f.graph.sum(sq)?;
        Ok((f.graph, l))
    })
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn identity_text_projection_is_a_no_op() {
    let cfg = small_config();
    let mut reg = ParamRegistry::new(4);
    let model = Model::new(&mut reg, &cfg).unwrap();
    let l = model.text_projection.clone().unwrap();
    let w = reg.get_mut(l.w);
    w.data.fill(0.0);
    for i in 0..4 {
        w.data[i * 4 + i] = 1.0;
    }
    reg.get_mut(l.b).data.fill(0.0);
    let input = vec![0.0, 1.5, 2.0, 0.25, 3.0, 0.0, 0.1, 9.0];
    let run = || {
        let mut f = Forward::new(&reg, false, 0);
        let x = f.graph.constant(Tensor::matrix(2, 4, input.clone()).unwrap());
        let y = model.text_project(&mut f, x).unwrap().unwrap();
        f.graph.data(y).to_vec()
    };
    assert_eq!(run(), input);
    assert_eq!(run(), run());
}

#[test]
fn single_review_batch_and_eval_determinism() {
    let cfg = small_config();
    let s = setup(&cfg);
    let mut reg = ParamRegistry::new(5);
    let model = Model::new(&mut reg, &cfg).unwrap();
    let batch = model.make_batch(&[1], &s.ds.labels(), &s.store, &s.graph, 0).unwrap();
    let mut f = Forward::new(&reg, false, 0);
    let out = model.forward(&mut f, &batch, &s.store, &s.graph, 0.2).unwrap();
    assert_eq!(f.graph.shape(out.logits), [1, 2]);
    assert_eq!(out.gates.len(), 3);
    let a = logits_of(&model, &reg, &s, &[0, 1, 2]);
    let b = logits_of(&model, &reg, &s, &[0, 1, 2]);
    assert_eq!(a, b);
    let empty = model.make_batch(&[], &s.ds.labels(), &s.store, &s.graph, 0);
    assert!(empty.is_err() || model.forward(&mut f, &empty.unwrap(), &s.store, &s.graph, 0.0).is_err());
}

#[test]
fn ablated_branch_owns_no_parameters_and_still_predicts() {
    for (branches, gone) in [
        (Branches { text: false, ..Branches::default() }, ["text_projection", "mixer.text"]),
        (Branches { graph: false, ..Branches::default() }, ["graph.", "mixer.graph"]),
        (Branches { meta: false, ..Branches::default() }, ["meta_encoder", "mixer.meta"]),
    ] {
        let cfg = ModelConfig {
            branches,
            ..small_config()
        };
        let s = setup(&cfg);
        let mut reg = ParamRegistry::new(6);
        let model = Model::new(&mut reg, &cfg).unwrap();
        for (name, _) in reg.iter() {
            assert!(gone.iter().all(|p| !name.starts_with(p)), "{name}");
        }
        let batch = model.make_batch(&[0, 2], &s.ds.labels(), &s.store, &s.graph, 0).unwrap();
        reg.zero_grads();
        let mut f = Forward::new(&reg, false, 0);
        let out = model.forward(&mut f, &batch, &s.store, &s.graph, 0.0).unwrap();
        assert_eq!(f.graph.shape(out.logits), [2, 2]);
        let params: Vec<_> = model.param_groups().into_iter().flat_map(|g| g.1).collect();
        let loss = total_loss(&mut f, &out, &batch.labels, &params, 0.0, 1e-2).unwrap();
        let mut g = f.graph;
        g.backward(loss.total, &mut reg).unwrap();
        assert!(reg.iter().all(|(_, t)| t.grad.as_ref().is_some_and(|v| v.iter().all(|x| x.is_finite()))));
    }
}

#[test]
fn without_moe_there_are_no_gates() {
    let cfg = ModelConfig {
        mixer: MixerKind::None,
        ..small_config()
    };
    let mut reg = ParamRegistry::new(7);
    Model::new(&mut reg, &cfg).unwrap();
    assert!(reg.iter().all(|(n, _)| !n.contains("w_gate") && !n.contains("w_noise")));
    let bad = ModelConfig {
        text_proj: 7,
        ..cfg
    };
    assert!(Model::new(&mut ParamRegistry::new(7), &bad).unwrap_err().is_config());
}

#[test]
fn loss_terms() {
    let cfg = small_config();
    let s = setup(&cfg);
    let mut reg = ParamRegistry::new(8);
    let model = Model::new(&mut reg, &cfg).unwrap();
    let params: Vec<_> = model.param_groups().into_iter().flat_map(|g| g.1).collect();
    let labels = s.ds.labels();
    let run = |reviews: &[usize], lambda: f64, w: f64| {
        let batch = model.make_batch(reviews, &labels, &s.store, &s.graph, 0).unwrap();
        let mut f = Forward::new(&reg, false, 0);
        let out = model.forward(&mut f, &batch, &s.store, &s.graph, 0.0).unwrap();
        let logits = f.graph.data(out.logits).to_vec();
        let parts = total_loss(&mut f, &out, &batch.labels, &params, lambda, w).unwrap();
        (f.graph.data(parts.total)[0], parts, logits, batch.labels)
    };

    let (total, parts, logits, y) = run(&[0, 1, 2], 0.0, 0.0);
    let ce: f64 = logits
        .chunks(2)
        .zip(&y)
        .map(|(z, &y)| {
            let m = z[0].max(z[1]);
            let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
            lse - z[y as usize]
        })
        .sum();
    assert!((total - ce).abs() < 1e-12);
    assert_eq!(parts.l2, 0.0);
    assert_eq!(parts.balance, 0.0);

    let (total, parts, ..) = run(&[0, 1, 2], 0.5, 0.0);
    assert!((parts.l2 - 0.5 * reg.l2_norm_sq()).abs() < 1e-9);
    assert!((total - ce - parts.l2).abs() < 1e-9);

    let (a, ..) = run(&[0], 0.0, 0.0);
    let (b, ..) = run(&[1, 2], 0.0, 0.0);
    let (ab, ..) = run(&[0, 1, 2], 0.0, 0.0);
    assert!((ab - a - b).abs() < 1e-9, "{ab} vs {}", a + b);
}

#[test]
fn balanced_loads_add_nothing() {
    assert_eq!(balancing_loss(&[0.5, 0.5]), 0.0);
    let reg = ParamRegistry::new(0);
    let mut f = Forward::new(&reg, false, 0);
    let logits = f.graph.constant(Tensor::matrix(2, 2, vec![0.2, -0.1, 1.0, 0.4]).unwrap());
    let weights = f.graph.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let load = f.graph.constant(Tensor::vector(vec![1.0, 1.0]));
    let z = f.graph.constant(Tensor::zeros(&[2, 2]));
    let out = ForwardOutput {
        logits,
        gates: vec![(0, GateOutput { weights, load, selected: vec![vec![0], vec![1]] })],
        modal: [z, z, z],
        fusion_attention: vec![],
        gat_attention: vec![],
    };
    let plain = total_loss(&mut f, &out, &[0, 1], &[], 0.0, 0.0).unwrap();
    let weighted = total_loss(&mut f, &out, &[0, 1], &[], 0.0, 100.0).unwrap();
    assert_eq!(f.graph.data(plain.total), f.graph.data(weighted.total));
}

#[test]
fn end_to_end_gradients_match_differences() {
    let cfg = small_config();
    let s = setup(&cfg);
    assert_eq!(s.graph.n_nodes(), 6);
    let mut reg = ParamRegistry::new(9);
    let model = Model::new(&mut reg, &cfg).unwrap();
    let batch = model.make_batch(&[0, 2], &s.ds.labels(), &s.store, &s.graph, 0).unwrap();
    let groups = model.param_groups();
    let all: Vec<_> = groups.iter().flat_map(|g| g.1.clone()).collect();
    for (name, ids) in &groups {
        let err = check_params(&mut reg, ids, |r| {
            let mut f = Forward::new(r, false, 0);
            let out = model.forward(&mut f, &batch, &s.store, &s.graph, 0.0)?;
            let parts = total_loss(&mut f, &out, &batch.labels, &all, 1e-3, 1e-2)?;
            Ok((f.graph, parts.total))
        })
        .unwrap();
        assert!(err <= 1e-3, "{name}: {err}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small_config();
    let mut reg = ParamRegistry::new(10);
    Model::new(&mut reg, &cfg).unwrap();
    let bytes = encode_checkpoint(&reg);
    assert_eq!(&bytes[..4], b"MMOE");
    let mut other = ParamRegistry::new(11);
    Model::new(&mut other, &cfg).unwrap();
    assert_ne!(other.snapshot(), reg.snapshot());
    decode_checkpoint(&bytes, &mut other).unwrap();
    assert_eq!(other.snapshot(), reg.snapshot());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad, &mut other), Err(Error::Format(_))));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3], &mut other), Err(Error::Format(_))));

    let wider = ModelConfig {
        gnn_out: 5,
        ..cfg
    };
    let mut other = ParamRegistry::new(12);
    Model::new(&mut other, &wider).unwrap();
    assert!(matches!(decode_checkpoint(&bytes, &mut other), Err(Error::Shape(_))));
}
