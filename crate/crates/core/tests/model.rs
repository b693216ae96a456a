mod common;

use seqgen::data::ItemId;
use seqgen::model::{
    decode_checkpoint, encode_checkpoint, train, GptModel, ModelParameters, NextItemModel, TrainConfig,
};
use seqgen::{data, Gpt, Gpt64};

/// Straightforward reimplementation of the forward pass with nested loops
/// over the flat tensors. Returns next-item logits for every position.
fn reference_logits(model: &Gpt64, items: &[ItemId]) -> Vec<Vec<f64>> {
    let cfg = model.config().clone();
    let t: Vec<(String, Vec<usize>, Vec<f64>)> =
        model.params().tensors().into_iter().map(|(n, s, v)| (n, s, v.to_vec())).collect();
    let get = |name: &str| t.iter().find(|x| x.0 == name).map(|x| (x.1.clone(), x.2.clone())).unwrap();
    let (d, n) = (cfg.hidden_size, items.len());
    let hd = d / cfg.num_heads;

    let matvec = |x: &[f64], (shape, w): &(Vec<usize>, Vec<f64>), b: &[f64]| -> Vec<f64> {
        let (rows, cols) = (shape[0], shape[1]);
        (0..cols).map(|j| b[j] + (0..rows).map(|i| x[i] * w[i * cols + j]).sum::<f64>()).collect()
    };
    let norm = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        x.iter().enumerate().map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i]).collect()
    };
    let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());

    let (_, emb) = get("item_emb");
    let (_, pos) = get("pos_emb");
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|p| (0..d).map(|j| emb[items[p] as usize * d + j] + pos[p * d + j]).collect())
        .collect();
    for blk in 0..cfg.num_blocks {
        let p = |s: &str| get(&format!("blocks.{blk}.{s}"));
        let (ln1_g, ln1_b) = (p("ln1_g").1, p("ln1_b").1);
        let qkv: Vec<Vec<f64>> = h.iter().map(|x| matvec(&norm(x, &ln1_g, &ln1_b), &p("attn_w"), &p("attn_b").1)).collect();
        let mut o = vec![vec![0.0; d]; n];
        for head in 0..cfg.num_heads {
            for i in 0..n {
                let q = &qkv[i][head * hd..(head + 1) * hd];
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        let k = &qkv[j][d + head * hd..d + (head + 1) * hd];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let w = (s - m).exp() / z;
                    for c in 0..hd {
                        o[i][head * hd + c] += w * qkv[j][2 * d + head * hd + c];
                    }
                }
            }
        }
        for i in 0..n {
            let y = matvec(&o[i], &p("proj_w"), &p("proj_b").1);
            for j in 0..d {
                h[i][j] += y[j];
            }
            let c = norm(&h[i], &p("ln2_g").1, &p("ln2_b").1);
            let f: Vec<f64> = matvec(&c, &p("fc_w"), &p("fc_b").1).into_iter().map(gelu).collect();
            let m = matvec(&f, &p("out_w"), &p("out_b").1);
            for j in 0..d {
                h[i][j] += m[j];
            }
        }
    }
    let (lnf_g, lnf_b) = (get("lnf_g").1, get("lnf_b").1);
    h.iter()
        .map(|x| {
            let z = norm(x, &lnf_g, &lnf_b);
            (0..=cfg.item_count)
                .map(|it| if it == 0 { f64::NEG_INFINITY } else { (0..d).map(|j| z[j] * emb[it * d + j]).sum() })
                .collect()
        })
        .collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.is_infinite() || y.is_infinite() {
            assert_eq!(x, y, "entry {i}");
        } else {
            assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
        }
    }
}

#[test]
fn forward_matches_loop_reference() {
    for (seed, (blocks, heads)) in [(1, 2), (2, 1), (2, 2), (1, 4)].into_iter().enumerate() {
        let model = common::random_gpt(common::small_cfg(8, blocks, heads, 11, 10), 0.5, seed as u64);
        let items = [3, 1, 4, 1, 5, 9, 2, 6];
        let want = reference_logits(&model, &items);
        let got = model.sequence_logits(&items).unwrap();
        for (t, row) in want.iter().enumerate() {
            assert_close(got.row(t).as_slice().unwrap(), row, 1e-10);
        }
        assert_close(model.forward(&items).unwrap().values(), want.last().unwrap(), 1e-10);
    }
}

#[test]
fn cached_decoding_matches_full_forward() {
    let model = common::random_gpt(common::small_cfg(8, 2, 2, 9, 6), 0.5, 17);
    let mut prefix = vec![2, 7];
    let (mut state, _) = model.begin(&prefix).unwrap();
    // runs past max_seq_len so the sliding window path is exercised
    for item in [1, 9, 4, 4, 3, 8, 5, 2] {
        let step = model.advance(&mut state, item).unwrap();
        prefix.push(item);
        let full = model.forward(&prefix).unwrap();
        assert_close(step.values(), full.values(), 1e-10);
    }
}

#[test]
fn long_prefixes_use_the_last_window() {
    let model = common::random_gpt(common::small_cfg(8, 1, 1, 9, 4), 0.5, 3);
    let long = [1, 2, 3, 4, 5, 6, 7];
    assert_eq!(model.forward(&long).unwrap(), model.forward(&long[3..]).unwrap());
}

#[test]
fn later_items_do_not_affect_earlier_positions() {
    let model = common::random_gpt(common::small_cfg(8, 2, 2, 9, 8), 0.5, 5);
    let a = model.sequence_logits(&[1, 2, 3, 4, 5]).unwrap();
    let b = model.sequence_logits(&[1, 2, 3, 9, 8]).unwrap();
    for t in 0..3 {
        assert_eq!(a.row(t), b.row(t));
    }
    assert_ne!(a.row(3), b.row(3));
}

#[test]
fn output_projection_is_the_item_embedding() {
    let mut model = common::random_gpt(common::small_cfg(8, 1, 1, 6, 8), 0.5, 9);
    let before = model.forward(&[1, 2]).unwrap();
    // item 5 never appears in the input, so only its output score can move
    model.params_mut().item_emb.row_mut(5).mapv_inplace(|v| 2.0 * v);
    let after = model.forward(&[1, 2]).unwrap();
    for i in 1..=6 {
        if i == 5 {
            assert!((after.get(i) - 2.0 * before.get(i)).abs() < 1e-12);
        } else {
            assert_eq!(after.get(i), before.get(i));
        }
    }
    assert_eq!(after.get(0), f64::NEG_INFINITY);
}

#[test]
fn gradients_match_finite_differences_with_two_blocks() {
    let cfg = common::small_cfg(6, 2, 2, 7, 6);
    let mut model = common::random_gpt(cfg, 0.4, 23);
    let batch = vec![vec![1, 3, 2, 7, 4, 6, 5], vec![0, 0, 2, 2, 5, 1, 4]];
    let (_, grads) = model.loss_and_gradients(&batch).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.2.to_vec()).collect();
    let h = 1e-4;
    for (ti, g) in analytic.iter().enumerate() {
        let mut num = Vec::with_capacity(g.len());
        for j in 0..g.len() {
            let orig = model.params().tensors()[ti].2[j];
            model.params_mut().tensors_mut()[ti].1[j] = orig + h;
            let up = model.loss(&batch).unwrap();
            model.params_mut().tensors_mut()[ti].1[j] = orig - h;
            let down = model.loss(&batch).unwrap();
            model.params_mut().tensors_mut()[ti].1[j] = orig;
            num.push((up - down) / (2.0 * h));
        }
        let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        assert!(diff / norm < 1e-5, "tensor {ti}: relative error {}", diff / norm);
    }
}

#[test]
fn padding_row_gets_no_gradient() {
    let model = common::random_gpt(common::small_cfg(4, 1, 1, 5, 6), 0.4, 2);
    let (_, g) = model.loss_and_gradients(&[vec![0, 0, 1, 2, 3]]).unwrap();
    assert!(g.item_emb.row(0).iter().all(|&v| v == 0.0));
}

#[test]
fn f32_and_f64_agree() {
    let cfg = common::small_cfg(8, 2, 2, 9, 8);
    let p64: ModelParameters<f64> = ModelParameters::random(&cfg, 0.3, 4);
    let p32: ModelParameters<f32> = ModelParameters::random(&cfg, 0.3, 4);
    let m64 = GptModel::new(cfg.clone(), p64).unwrap();
    let m32: Gpt = GptModel::new(cfg, p32).unwrap();
    let a = m64.forward(&[1, 5, 3]).unwrap();
    let b = m32.forward(&[1, 5, 3]).unwrap();
    for i in 1..=9 {
        assert!((a.get(i) - b.get(i) as f64).abs() < 1e-4);
    }
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let model: Gpt = GptModel::init(common::small_cfg(8, 2, 2, 9, 8), 8).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();
    let back: Gpt = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn training_is_reproducible_and_lowers_the_loss() {
    let seqs = data::synthetic::cycle_sequences(200, 12, 20, 1);
    let log = data::InteractionLog::from_sequences(12, &seqs).unwrap();
    let split = data::split(&log, 5, 0.5, 1).unwrap();
    let mcfg = common::small_cfg(16, 1, 1, 12, 16);
    let tcfg = TrainConfig { max_epochs: 4, patience: 4, ..Default::default() };
    let a = train::<f32>(&split, &mcfg, &tcfg, 3, |_| {}).unwrap();
    let b = train::<f32>(&split, &mcfg, &tcfg, 3, |_| {}).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
}

/// d=2, I=3, one block and head; entry `k` of the concatenated tensors is
/// `((37k mod 17) - 8) / 10`. Logits frozen from a separate numpy evaluation.
fn frozen_model() -> Gpt64 {
    let cfg = common::small_cfg(2, 1, 1, 3, 4);
    let mut model = GptModel::new(cfg.clone(), ModelParameters::zeros(&cfg)).unwrap();
    let mut k = 0i64;
    for (_, data) in model.params_mut().tensors_mut() {
        for v in data.iter_mut() {
            *v = ((k * 37) % 17 - 8) as f64 / 10.0;
            k += 1;
        }
    }
    model
}

const FROZEN_1: [f64; 3] = [0.13999944489915844, -0.9999938938907423, 1.0899938938907423];
const FROZEN_132: [f64; 3] = [0.1399994448991584, -0.9999938938907422, 1.089993893890742];

#[test]
fn tiny_model_matches_frozen_logits() {
    let model = frozen_model();
    for (prefix, want) in [(&[1][..], FROZEN_1), (&[1, 3, 2][..], FROZEN_132)] {
        let got = model.forward(prefix).unwrap();
        for i in 1..=3 {
            assert!((got.get(i) - want[i as usize - 1]).abs() < 1e-12, "{prefix:?} item {i}");
        }
        assert_eq!(got.get(0), f64::NEG_INFINITY);
    }
    // the same fixture through an f32 checkpoint
    let cfg = model.config().clone();
    let mut p32: ModelParameters<f32> = ModelParameters::zeros(&cfg);
    for ((_, dst), (_, _, src)) in p32.tensors_mut().into_iter().zip(model.params().tensors()) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *s as f32;
        }
    }
    let m32: Gpt = GptModel::new(cfg, p32).unwrap();
    let back: Gpt = decode_checkpoint(&encode_checkpoint(&m32).unwrap()).unwrap();
    let got = back.forward(&[1]).unwrap();
    for i in 1..=3 {
        assert!((got.get(i) as f64 - FROZEN_1[i as usize - 1]).abs() < 1e-5);
    }
}
