//! Forward-pass oracles and structural properties of the model.

mod common;

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};
use common::*;
use graspreason_model::head::grasp_loss;
use graspreason_model::model::{GraspPredictor, ReasoningModel};
use graspreason_model::params::ParamGroup;
use graspreason_model::vlm::{batch_target_embeddings, TargetSpan};
use proptest::prelude::*;

type Mat = Vec<Vec<f64>>;

fn params(m: &ReasoningModel) -> HashMap<String, (Vec<usize>, Vec<f64>)> {
    m.store
        .named_vars(&[ParamGroup::Backbone, ParamGroup::Adapter])
        .into_iter()
        .map(|(n, v)| (n, (v.dims().to_vec(), v.as_tensor().flatten_all().unwrap().to_vec1().unwrap())))
        .collect()
}

fn vec_of(p: &HashMap<String, (Vec<usize>, Vec<f64>)>, name: &str) -> Vec<f64> {
    p[name].1.clone()
}

fn mat_of(p: &HashMap<String, (Vec<usize>, Vec<f64>)>, name: &str) -> Mat {
    let (dims, v) = &p[name];
    v.chunks(dims[1]).map(<[f64]>::to_vec).collect()
}

/// Effective weight including the low-rank path.
fn weight(p: &HashMap<String, (Vec<usize>, Vec<f64>)>, name: &str, scale: f64) -> Mat {
    let mut w = mat_of(p, &format!("{name}.weight"));
    if let Some((_, _)) = p.get(&format!("{name}.lora_a")) {
        let a = mat_of(p, &format!("{name}.lora_a"));
        let b = mat_of(p, &format!("{name}.lora_b"));
        for (o, row) in w.iter_mut().enumerate() {
            for (i, x) in row.iter_mut().enumerate() {
                *x += scale * (0..a.len()).map(|r| b[o][r] * a[r][i]).sum::<f64>();
            }
        }
    }
    w
}

fn linear(x: &[f64], w: &Mat, b: Option<&[f64]>) -> Vec<f64> {
    w.iter()
        .enumerate()
        .map(|(o, row)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b.map_or(0.0, |b| b[o]))
        .collect()
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i]).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Pre-norm causal transformer written out loop by loop.
fn naive_hidden(m: &ReasoningModel, emb: &Mat) -> Mat {
    let p = params(m);
    let cfg = m.backbone.config();
    let scale = cfg.adapter_alpha / cfg.adapter_rank as f64;
    let (h, nh) = (cfg.hidden_dim, cfg.heads);
    let hd = h / nh;
    let pos = mat_of(&p, "lm.pos_emb");
    let mut x: Mat = emb.iter().enumerate().map(|(t, e)| e.iter().zip(&pos[t]).map(|(a, b)| a + b).collect()).collect();
    for l in 0..cfg.layers {
        let n = |s: &str| format!("lm.block{l}.{s}");
        let qkv_w = weight(&p, &n("qkv"), scale);
        let out_w = weight(&p, &n("out"), scale);
        let qkv: Mat = x
            .iter()
            .map(|r| linear(&layer_norm(r, &vec_of(&p, &n("ln1.gamma")), &vec_of(&p, &n("ln1.beta"))), &qkv_w, Some(&vec_of(&p, &n("qkv.bias")))))
            .collect();
        let len = x.len();
        let mut merged = vec![vec![0.0; h]; len];
        for head in 0..nh {
            let q = |t: usize, d: usize| qkv[t][head * hd + d];
            let k = |t: usize, d: usize| qkv[t][h + head * hd + d];
            let v = |t: usize, d: usize| qkv[t][2 * h + head * hd + d];
            for i in 0..len {
                let s: Vec<f64> = (0..=i).map(|j| (0..hd).map(|d| q(i, d) * k(j, d)).sum::<f64>() / (hd as f64).sqrt()).collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for d in 0..hd {
                    merged[i][head * hd + d] = (0..=i).map(|j| e[j] / z * v(j, d)).sum();
                }
            }
        }
        let fc1 = weight(&p, &n("fc1"), scale);
        let fc2 = weight(&p, &n("fc2"), scale);
        for i in 0..len {
            let a = linear(&merged[i], &out_w, Some(&vec_of(&p, &n("out.bias"))));
            for d in 0..h {
                x[i][d] += a[d];
            }
            let y = layer_norm(&x[i], &vec_of(&p, &n("ln2.gamma")), &vec_of(&p, &n("ln2.beta")));
            let mid: Vec<f64> = linear(&y, &fc1, Some(&vec_of(&p, &n("fc1.bias")))).into_iter().map(gelu).collect();
            let o = linear(&mid, &fc2, Some(&vec_of(&p, &n("fc2.bias"))));
            for d in 0..h {
                x[i][d] += o[d];
            }
        }
    }
    x.iter().map(|r| layer_norm(r, &vec_of(&p, "lm.ln_f.gamma"), &vec_of(&p, "lm.ln_f.beta"))).collect()
}

fn perturb_adapters(m: &ReasoningModel, std: f64) {
    for (i, (_, v)) in m.store.named_vars(&[ParamGroup::Adapter]).into_iter().enumerate() {
        v.set(&(randn(201 + i as u64, std, v.dims()).to_dtype(v.dtype()).unwrap() + v.as_tensor()).unwrap()).unwrap();
    }
}

#[test]
fn backbone_matches_loop_reference() {
    let ds = tiny_dataset(2, 21);
    let m = tiny_model(&ds, DType::F64);
    perturb_adapters(&m, 0.1);
    let emb = randn(202, 1.0, &[1, 9, m.cfg.hidden_dim]);
    let got = m.backbone.hidden_states(&emb).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
    let want = naive_hidden(&m, &emb.squeeze(0).unwrap().to_vec2().unwrap());
    for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
    }
}

#[test]
fn later_tokens_do_not_change_earlier_states() {
    let ds = tiny_dataset(2, 22);
    let m = tiny_model(&ds, DType::F64);
    let a = randn(203, 1.0, &[1, 8, m.cfg.hidden_dim]);
    let tail = randn(204, 1.0, &[1, 3, m.cfg.hidden_dim]);
    let b = Tensor::cat(&[&a.narrow(1, 0, 5).unwrap(), &tail], 1).unwrap();
    let ha = m.backbone.hidden_states(&a).unwrap().narrow(1, 0, 5).unwrap();
    let hb = m.backbone.hidden_states(&b).unwrap().narrow(1, 0, 5).unwrap();
    let d = scalar(&(ha - hb).unwrap().abs().unwrap().max_all().unwrap());
    assert!(d < 1e-12);
}

#[test]
fn span_average_uses_only_span_rows() {
    let h = randn(205, 1.0, &[2, 6, 3]);
    let spans = [TargetSpan { start: 1, end: 4 }, TargetSpan { start: 5, end: 6 }];
    let got = batch_target_embeddings(&h, &spans).unwrap().to_vec2::<f64>().unwrap();
    let rows: Vec<Vec<Vec<f64>>> = h.to_vec3().unwrap();
    for (b, s) in spans.iter().enumerate() {
        for d in 0..3 {
            let want = (s.start..s.end).map(|t| rows[b][t][d]).sum::<f64>() / s.len() as f64;
            assert!((got[b][d] - want).abs() < 1e-12);
        }
    }
    assert!(batch_target_embeddings(&h, &[TargetSpan { start: 2, end: 7 }, spans[1]]).is_err());
}

#[test]
fn grasp_loss_matches_elementwise_smooth_l1() {
    let dev = Device::Cpu;
    let pred = randn(206, 1.5, &[2, 4, 3, 5]);
    let gt = randn(207, 1.0, &[2, 4, 3, 5]);
    let p: Vec<f64> = pred.flatten_all().unwrap().to_vec1().unwrap();
    let g: Vec<f64> = gt.flatten_all().unwrap().to_vec1().unwrap();
    let sum: f64 = p
        .iter()
        .zip(&g)
        .map(|(a, b)| {
            let d = (a - b).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum();
    let want = sum / (2.0 * 3.0 * 5.0);
    assert!((scalar(&grasp_loss(&pred, &gt).unwrap()) - want).abs() < 1e-12);
    assert!(grasp_loss(&pred, &gt.narrow(0, 0, 1).unwrap()).is_err());
}

#[test]
fn fusion_feature_changes_the_maps() {
    let ds = tiny_dataset(2, 23);
    let m = tiny_model(&ds, DType::F64);
    let s = m.cfg.image_size;
    let img = randn(208, 0.5, &[1, 3, s, s]);
    let f1 = randn(209, 1.0, &[1, m.cfg.fusion_dim]);
    let f2 = randn(210, 1.0, &[1, m.cfg.fusion_dim]);
    let a = m.head.forward(&img, &f1).unwrap().stacked().unwrap();
    let b = m.head.forward(&img, &f2).unwrap().stacked().unwrap();
    assert!(scalar(&(a - b).unwrap().abs().unwrap().max_all().unwrap()) > 1e-6);
    let wrong = Tensor::zeros((1, m.cfg.fusion_dim + 1), DType::F64, &Device::Cpu).unwrap();
    assert!(m.head.forward(&img, &wrong).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn head_maps_stay_in_range(seed in 0u64..1000, f_scale in 0.0f64..50.0, img_scale in 0.0f64..3.0) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = tiny_config();
        cfg.seed = seed;
        let mut store = graspreason_model::params::ParamStore::new(DType::F64, Device::Cpu);
        let head = graspreason_model::head::GraspHead::new(cfg.head(cfg.fusion_dim), &mut store, &mut rng, "head").unwrap();
        let s = cfg.image_size;
        let img = (randn(seed, 1.0, &[2, 3, s, s]) * img_scale).unwrap();
        let f = (randn(seed + 1000, 1.0, &[2, cfg.fusion_dim]) * f_scale).unwrap();
        let maps = head.forward(&img, &f).unwrap();
        for (t, lo, hi) in [(&maps.quality, 0.0, 1.0), (&maps.cos, -1.0, 1.0), (&maps.sin, -1.0, 1.0), (&maps.width, 0.0, 1.0)] {
            prop_assert_eq!(t.dims(), &[2, s, s]);
            let v: Vec<f64> = t.flatten_all().unwrap().to_vec1().unwrap();
            prop_assert!(v.iter().all(|x| x.is_finite() && *x >= lo && *x <= hi));
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let ds = tiny_dataset(3, 24);
    let mut m = tiny_model(&ds, DType::F32);
    perturb_adapters(&m, 0.01);
    m.freeze_adapters().unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = ReasoningModel::load(dir.path(), DType::F32, Device::Cpu).unwrap();
    assert!(back.is_frozen());
    assert_eq!(back.cfg, m.cfg);
    assert_eq!(back.vocab, m.vocab);
    let all = [ParamGroup::Backbone, ParamGroup::Adapter, ParamGroup::Projection, ParamGroup::GraspHead];
    assert_eq!(back.store.hash(&all).unwrap(), m.store.hash(&all).unwrap());
    let cache = ds.cache(&m.cfg, DType::F32);
    let s = &ds.test[0];
    let input = cache.for_sample(s).unwrap();
    let a = m.predict(&input, &s.instruction, None, 3).unwrap();
    let b = back.predict(&input, &s.instruction, None, 3).unwrap();
    assert_eq!(a.response_ids, b.response_ids);
    assert_eq!(a.poses, b.poses);
}

#[test]
fn trainable_groups_follow_the_schedule() {
    let ds = tiny_dataset(2, 25);
    let vocab = graspreason_model::train::build_vocab(&ds.train, &ds.generic);
    let mut m = ReasoningModel::new(tiny_config(), vocab, DType::F32, Device::Cpu).unwrap();
    assert!(m.freeze_adapters().is_err());
    m.apply_adapters().unwrap();
    assert!(m.trainable_groups().contains(&ParamGroup::Adapter));
    assert!(!m.trainable_groups().contains(&ParamGroup::Backbone));
    m.freeze_adapters().unwrap();
    assert_eq!(m.trainable_groups(), vec![ParamGroup::Projection, ParamGroup::GraspHead]);
}
