use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::Tensor;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

fn mix_vars(tape: &mut Tape, rng: &mut ChaCha8Rng, c_out: usize, c_in: usize) -> MixWeights {
    MixWeights {
        weight: tape.variable(rand_tensor(rng, &[c_out, c_in])),
        bias: tape.variable(rand_tensor(rng, &[c_out])),
        slope: tape.variable(rand_tensor(rng, &[c_out])),
    }
}

fn identity_mix(tape: &mut Tape, c: usize, slope: f64) -> MixWeights {
    MixWeights {
        weight: tape.constant(Tensor::from_fn(&[c, c], |i| (i / c == i % c) as u8 as f64).unwrap()),
        bias: tape.constant(Tensor::zeros(&[c])),
        slope: tape.constant(Tensor::full(&[c], slope)),
    }
}

/// Dense `[V·T, V·T]` matrix of the factored product, built entry by entry:
/// node `(v, t)` receives `Σ_u Σ_s A_s[v,u,t] · A_t[t,s,u]` from node `(u, s)`.
fn expand(a_s: &Tensor, a_t: &Tensor, v: usize, t: usize) -> Tensor {
    let mut full = Tensor::zeros(&[v * t, v * t]);
    for vi in 0..v {
        for ti in 0..t {
            for u in 0..v {
                for s in 0..t {
                    let w = a_s.get(&[vi, u, ti]) * a_t.get(&[ti, s, u]);
                    full.set(&[vi * t + ti, u * t + s], w);
                }
            }
        }
    }
    full
}

#[test]
fn gcn_identity_pipeline_returns_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (v, t, c) = (3, 2, 2);
    let mut tape = Tape::new();
    let x = tape.constant(rand_tensor(&mut rng, &[1, c, v, t]));
    let a = tape.constant(Tensor::from_fn(&[v * t, v * t], |i| (i / (v * t) == i % (v * t)) as u8 as f64).unwrap());
    let w = identity_mix(&mut tape, c, 1.0);
    let y = gcn_layer_forward(&mut tape, x, a, &w).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let zero = tape.constant(Tensor::zeros(&[v * t, v * t]));
    let w = identity_mix(&mut tape, c, 0.3);
    let y = gcn_layer_forward(&mut tape, x, zero, &w).unwrap();
    assert!(tape.value(y).data().iter().all(|x| *x == 0.0));
}

#[test]
fn gcn_matches_dense_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (v, t, c, c2) = (3, 2, 2, 3);
    let xt = rand_tensor(&mut rng, &[1, c, v, t]);
    let at = rand_tensor(&mut rng, &[v * t, v * t]);
    let wt = rand_tensor(&mut rng, &[c2, c]);
    let bt = rand_tensor(&mut rng, &[c2]);
    let st = rand_tensor(&mut rng, &[c2]);
    let mut tape = Tape::new();
    let x = tape.constant(xt.clone());
    let a = tape.constant(at.clone());
    let w = MixWeights {
        weight: tape.constant(wt.clone()),
        bias: tape.constant(bt.clone()),
        slope: tape.constant(st.clone()),
    };
    let y = gcn_layer_forward(&mut tape, x, a, &w).unwrap();
    for o in 0..c2 {
        for n in 0..v * t {
            let mut z = bt.data()[o];
            for i in 0..c {
                let mut ax = 0.0;
                for m in 0..v * t {
                    ax += at.get(&[n, m]) * xt.data()[i * v * t + m];
                }
                z += wt.get(&[o, i]) * ax;
            }
            let want = if z >= 0.0 { z } else { st.data()[o] * z };
            let got = tape.value(y).data()[o * v * t + n];
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn sts_equals_expanded_gcn_for_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in 1..=4 {
        for t in 1..=4 {
            let (c, c2) = (2, 3);
            let xt = rand_tensor(&mut rng, &[2, c, v, t]);
            let a_s = rand_tensor(&mut rng, &[v, v, t]);
            let a_t = rand_tensor(&mut rng, &[t, t, v]);
            let mut tape = Tape::new();
            let x = tape.constant(xt);
            let w = mix_vars(&mut tape, &mut rng, c2, c);
            let (vs, vt) = (tape.constant(a_s.clone()), tape.constant(a_t.clone()));
            let full = tape.constant(expand(&a_s, &a_t, v, t));
            let y1 = sts_layer_forward(&mut tape, x, vs, vt, &w).unwrap();
            let y2 = gcn_layer_forward(&mut tape, x, full, &w).unwrap();
            for (p, q) in tape.value(y1).data().iter().zip(tape.value(y2).data()) {
                assert!((p - q).abs() < 1e-12, "V={v} T={t}: {p} vs {q}");
            }
        }
    }
}

#[test]
fn sts_with_identity_factors_is_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (v, t, c) = (3, 2, 2);
    let mut tape = Tape::new();
    let x = tape.constant(rand_tensor(&mut rng, &[1, c, v, t]));
    let eye_s = tape.constant(Tensor::from_fn(&[v, v, t], |i| (i / (v * t) == (i / t) % v) as u8 as f64).unwrap());
    let eye_t = tape.constant(Tensor::from_fn(&[t, t, v], |i| (i / (t * v) == (i / v) % t) as u8 as f64).unwrap());
    let w = mix_vars(&mut tape, &mut rng, 3, c);
    let y = sts_layer_forward(&mut tape, x, eye_s, eye_t, &w).unwrap();
    let z = tape.channel_mix(x, w.weight, 1).unwrap();
    let z = tape.channel_bias(z, w.bias).unwrap();
    let z = tape.prelu(z, w.slope).unwrap();
    assert_eq!(tape.value(y), tape.value(z));
}

#[test]
fn dw_block_unit_kernel_and_hand_case() {
    // C = 1, α = C: the depth-wise step is one scalar multiply.
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    // A_t swaps the two frames for both joints, A_s is the identity.
    let a_t = tape.constant(Tensor::new(vec![2, 2, 2], vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap());
    let a_s = tape.constant(Tensor::new(vec![2, 2, 2], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap());
    let dw = DepthwiseWeights {
        weight: tape.constant(Tensor::new(vec![1, 1], vec![2.5]).unwrap()),
        bias: tape.constant(Tensor::new(vec![1], vec![-1.0]).unwrap()),
        groups: 1,
    };
    let mlp = identity_mix(&mut tape, 1, 1.0);
    let y = dw_block_forward(&mut tape, x, a_s, a_t, &dw, &mlp).unwrap();
    // Swapped frames [2,1,4,3], times 2.5 minus 1 = [4, 1.5, 9, 6.5], clamp at 6.
    assert_eq!(tape.value(y).data(), &[4.0, 1.5, 6.0, 6.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (v, t, c) = (3, 2, 4);
    let xv = tape.constant(rand_tensor(&mut rng, &[1, c, v, t]));
    let a_s = tape.constant(rand_tensor(&mut rng, &[v, v, t]));
    let a_t = tape.constant(rand_tensor(&mut rng, &[t, t, v]));
    let ones = DepthwiseWeights {
        weight: tape.constant(Tensor::full(&[c, 1], 1.0)),
        bias: tape.constant(Tensor::zeros(&[c])),
        groups: c,
    };
    let mlp = identity_mix(&mut tape, c, 1.0);
    let y = dw_block_forward(&mut tape, xv, a_s, a_t, &ones, &mlp).unwrap();
    let z = factored_mix(&mut tape, xv, a_s, a_t).unwrap();
    let z = tape.relu6(z).unwrap();
    assert_eq!(tape.value(y), tape.value(z));
}

#[test]
fn dw_block_rejects_non_dividing_groups() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 2, 2]));
    let a = tape.constant(Tensor::zeros(&[2, 2, 2]));
    let dw = DepthwiseWeights {
        weight: tape.constant(Tensor::zeros(&[3, 1])),
        bias: tape.constant(Tensor::zeros(&[3])),
        groups: 2,
    };
    let mlp = identity_mix(&mut tape, 3, 1.0);
    assert!(matches!(
        dw_block_forward(&mut tape, x, a, a, &dw, &mlp),
        Err(Error::Config(_))
    ));
}

#[test]
fn ses_masks_match_zeroed_copies_and_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (v, t, c) = (3, 2, 2);
    for _ in 0..20 {
        let xt = rand_tensor(&mut rng, &[2, c, v, t]);
        let a_s = rand_tensor(&mut rng, &[v, v, t]);
        let a_t = rand_tensor(&mut rng, &[t, t, v]);
        let m_s = Tensor::from_fn(&[v, v, t], |_| (rng.random::<f64>() >= 0.3) as u8 as f64).unwrap();
        let m_t = Tensor::from_fn(&[t, t, v], |_| (rng.random::<f64>() >= 0.3) as u8 as f64).unwrap();
        let zeroed = |a: &Tensor, m: &Tensor| {
            Tensor::from_fn(a.shape(), |i| if m.data()[i] == 1.0 { a.data()[i] } else { 0.0 }).unwrap()
        };
        let mut tape = Tape::new();
        let x = tape.constant(xt);
        let dw = DepthwiseWeights {
            weight: tape.variable(rand_tensor(&mut rng, &[c, 1])),
            bias: tape.variable(rand_tensor(&mut rng, &[c])),
            groups: c,
        };
        let mlp = mix_vars(&mut tape, &mut rng, c, c);
        let (vs, vt) = (tape.variable(a_s.clone()), tape.variable(a_t.clone()));
        let (ms, mt) = (tape.constant(m_s.clone()), tape.constant(m_t.clone()));
        let y = ses_block_forward(&mut tape, x, vs, vt, ms, mt, &dw, &mlp).unwrap();
        let (zs, zt) = (tape.constant(zeroed(&a_s, &m_s)), tape.constant(zeroed(&a_t, &m_t)));
        let y0 = dw_block_forward(&mut tape, x, zs, zt, &dw, &mlp).unwrap();
        let bits = |v: Var, tape: &Tape| -> Vec<u64> { tape.value(v).data().iter().map(|x| x.to_bits()).collect() };
        assert_eq!(bits(y, &tape), bits(y0, &tape));

        let root = tape.sum(y).unwrap();
        let g = tape.backward(root).unwrap();
        for (gv, m) in [(g.get(vs).unwrap(), &m_s), (g.get(vt).unwrap(), &m_t)] {
            for (gi, mi) in gv.data().iter().zip(m.data()) {
                if *mi == 0.0 {
                    assert_eq!(*gi, 0.0);
                }
            }
        }
    }
}

#[test]
fn ses_all_zero_masks_give_relu6_of_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (v, t, c) = (2, 3, 2);
    let mut tape = Tape::new();
    let x = tape.constant(rand_tensor(&mut rng, &[1, c, v, t]));
    let a_s = tape.constant(rand_tensor(&mut rng, &[v, v, t]));
    let a_t = tape.constant(rand_tensor(&mut rng, &[t, t, v]));
    let m_s = tape.constant(Tensor::zeros(&[v, v, t]));
    let m_t = tape.constant(Tensor::zeros(&[t, t, v]));
    let dw = DepthwiseWeights {
        weight: tape.constant(rand_tensor(&mut rng, &[c, 1])),
        bias: tape.constant(Tensor::zeros(&[c])),
        groups: c,
    };
    let mlp = identity_mix(&mut tape, c, 1.0);
    let y = ses_block_forward(&mut tape, x, a_s, a_t, m_s, m_t, &dw, &mlp).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    let half = tape.constant(Tensor::full(&[v, v, t], 0.5));
    assert!(matches!(
        ses_block_forward(&mut tape, x, a_s, a_t, half, m_t, &dw, &mlp),
        Err(Error::Contract(_))
    ));
}

fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        joints: 3,
        observed_frames: 4,
        forecast_frames: 2,
        channels: vec![3, 4, 4],
        gcn_layers: 2,
        tcn_layers: 2,
        alpha: None,
        variant,
        tcn_kernel: 1,
        input_scale_mm: 100.0,
    }
}

fn random_windows(rng: &mut ChaCha8Rng, n: usize, frames: usize, joints: usize) -> Vec<Poses> {
    (0..n)
        .map(|_| {
            let data = (0..frames * joints * 3).map(|_| rng.random_range(-300.0..300.0)).collect();
            Poses::new(frames, joints, data).unwrap()
        })
        .collect()
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    let mut c = ModelConfig::default();
    c.channels[0] = 4;
    assert!(c.validate().is_err());
    let bad = [
        ModelConfig { observed_frames: 1, ..ModelConfig::default() },
        ModelConfig { tcn_kernel: 27, ..ModelConfig::default() },
        ModelConfig { tcn_kernel: 2, ..ModelConfig::default() },
        ModelConfig { gcn_layers: 4, ..ModelConfig::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
    let c = ModelConfig { alpha: Some(5), ..ModelConfig::default() };
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn forward_shape_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = ModelConfig::default();
    let xs = random_windows(&mut rng, 2, 10, 15);
    let refs: Vec<&Poses> = xs.iter().collect();
    for variant in [Variant::Vanilla, Variant::Sts, Variant::StsDw, Variant::Ses] {
        let m = SesGcnModel::new(ModelConfig { variant, ..cfg.clone() }, 9).unwrap();
        let a = m.predict(&refs).unwrap();
        let b = SesGcnModel::new(ModelConfig { variant, ..cfg.clone() }, 9).unwrap().predict(&refs).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!((a[0].frames(), a[0].joints()), (25, 15));
        let bits = |p: &[Poses]| -> Vec<u64> { p.iter().flat_map(|q| q.data().iter().map(|x| x.to_bits())).collect() };
        assert_eq!(bits(&a), bits(&b), "{variant:?}");
    }
}

#[test]
fn masks_only_on_ses() {
    let m = SesGcnModel::new(small_config(Variant::StsDw), 0).unwrap();
    assert!(m.masks().is_none());
    let mut m = m;
    assert!(matches!(m.set_masks(vec![]), Err(Error::Contract(_))));
    let s = SesGcnModel::new(small_config(Variant::Ses), 0).unwrap();
    assert_eq!(s.masks().unwrap().len(), 2);
}

#[test]
fn one_layer_encoder_is_block_plus_residual() {
    let mut cfg = small_config(Variant::StsDw);
    cfg.channels = vec![3, 3];
    cfg.gcn_layers = 1;
    let mut m = SesGcnModel::new(cfg, 1).unwrap();
    // Running variance 1 - eps with zero mean makes eval batch norm the identity.
    let var = m.store().find("gcn.0.bn.running_var").unwrap();
    m.store_mut().get_mut(var).value = Tensor::full(&[3], 1.0 - BN_EPS);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let bound = m.store().bind(&mut tape);
    let x = tape.constant(rand_tensor(&mut rng, &[2, 3, 3, 4]));
    let (h, _) = m.encoder_forward(&mut tape, &bound, x, Mode::Eval).unwrap();

    let s = m.store();
    let get = |name: &str| bound.var(s.find(name).unwrap());
    let dw = DepthwiseWeights {
        weight: get("gcn.0.dw.weight"),
        bias: get("gcn.0.dw.bias"),
        groups: 3,
    };
    let mlp = MixWeights {
        weight: get("gcn.0.mix.weight"),
        bias: get("gcn.0.mix.bias"),
        slope: get("gcn.0.prelu"),
    };
    let block = dw_block_forward(&mut tape, x, get("gcn.0.adj_s"), get("gcn.0.adj_t"), &dw, &mlp).unwrap();
    let want = tape.add(block, x).unwrap();
    for (a, b) in tape.value(h).data().iter().zip(tape.value(want).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_weight_encoder_matches_hand_trace() {
    // Two layers 3 → 2 → 2 with every learnable tensor zero. Each block then
    // outputs zero, batch norm maps it to beta, and the residuals carry the
    // input: h1 = beta1 + (W_r x + b_r), h2 = beta2 + h1.
    let mut cfg = small_config(Variant::Sts);
    cfg.channels = vec![3, 2, 2];
    let mut m = SesGcnModel::new(cfg, 3).unwrap();
    let names: Vec<_> = m.store().entries().iter().map(|e| e.name.clone()).collect();
    for n in &names {
        if n.starts_with("gcn.") && !n.contains("running") && !n.contains("res.") && !n.contains("prelu") {
            let id = m.store().find(n).unwrap();
            let shape = m.store().get(id).value.shape().to_vec();
            m.store_mut().get_mut(id).value = Tensor::zeros(&shape);
        }
    }
    let beta1 = [0.5, -1.0];
    let beta2 = [2.0, 0.25];
    m.store_mut().load("gcn.0.bn.beta", Tensor::new(vec![2], beta1.to_vec()).unwrap()).unwrap();
    m.store_mut().load("gcn.1.bn.beta", Tensor::new(vec![2], beta2.to_vec()).unwrap()).unwrap();
    let wr = m.store().get(m.store().find("gcn.0.res.weight").unwrap()).value.clone();
    let br = m.store().get(m.store().find("gcn.0.res.bias").unwrap()).value.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xt = rand_tensor(&mut rng, &[2, 3, 3, 4]);
    let mut tape = Tape::new();
    let bound = m.store().bind(&mut tape);
    let x = tape.constant(xt.clone());
    let (h, _) = m.encoder_forward(&mut tape, &bound, x, Mode::Train).unwrap();
    let out = tape.value(h);
    for n in 0..2 {
        for o in 0..2 {
            for node in 0..12 {
                let mut proj = br.data()[o];
                for i in 0..3 {
                    proj += wr.get(&[o, i]) * xt.data()[(n * 3 + i) * 12 + node];
                }
                let want = beta2[o] + beta1[o] + proj;
                let got = out.data()[(n * 2 + o) * 12 + node];
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn identity_decoder_passes_first_channels_through() {
    let mut cfg = small_config(Variant::Sts);
    cfg.observed_frames = 5;
    cfg.forecast_frames = 5;
    cfg.channels = vec![3, 4, 4];
    cfg.tcn_layers = 4;
    cfg.tcn_kernel = 3;
    let mut m = SesGcnModel::new(cfg, 5).unwrap();
    let c = 4;
    let eye = |n: usize| Tensor::from_fn(&[n, n], |i| (i / n == i % n) as u8 as f64).unwrap();
    m.store_mut().load("tcn.remap", eye(5)).unwrap();
    for i in 1..4 {
        m.store_mut().load(&alloc::format!("tcn.{i}.kernel"), Tensor::from_fn(&[c, 3], |j| (j % 3 == 1) as u8 as f64).unwrap()).unwrap();
        m.store_mut().load(&alloc::format!("tcn.{i}.bias"), Tensor::zeros(&[c])).unwrap();
        m.store_mut().load(&alloc::format!("tcn.{i}.prelu"), Tensor::full(&[c], 1.0)).unwrap();
    }
    m.store_mut().load("tcn.out.weight", Tensor::from_fn(&[3, c], |i| (i / c == i % c) as u8 as f64).unwrap()).unwrap();
    m.store_mut().load("tcn.out.bias", Tensor::zeros(&[3])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ht = rand_tensor(&mut rng, &[2, c, 3, 5]);
    let mut tape = Tape::new();
    let bound = m.store().bind(&mut tape);
    let h = tape.constant(ht.clone());
    let y = m.tcn_decode(&mut tape, &bound, h).unwrap();
    let y = tape.value(y);
    assert_eq!(y.shape(), &[2, 3, 3, 5]);
    for n in 0..2 {
        for i in 0..3 * 15 {
            assert_eq!(y.data()[n * 45 + i], ht.data()[n * 60 + i]);
        }
    }
}

#[test]
fn decoder_remaps_ten_frames_to_twenty_five() {
    let m = SesGcnModel::new(ModelConfig::default(), 0).unwrap();
    let mut tape = Tape::new();
    let bound = m.store().bind(&mut tape);
    let h = tape.constant(Tensor::full(&[1, 64, 15, 10], 0.1));
    let y = m.tcn_decode(&mut tape, &bound, h).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 3, 15, 25]);
}

/// Independent count from the layer recipe.
fn enumerate(cfg: &ModelConfig) -> (usize, usize) {
    let (v, t, k) = (cfg.joints, cfg.observed_frames, cfg.forecast_frames);
    let mut adj = 0;
    let mut w = 0;
    for l in 0..cfg.gcn_layers {
        let (ci, co) = (cfg.channels[l], cfg.channels[l + 1]);
        adj += match cfg.variant {
            Variant::Vanilla => (v * t) * (v * t),
            _ => v * v * t + t * t * v,
        };
        if matches!(cfg.variant, Variant::StsDw | Variant::Ses) {
            let g = cfg.alpha.unwrap_or(ci);
            w += ci * (ci / g) + ci;
        }
        w += co * ci + co + co; // mix weight, bias, prelu
        w += 2 * co; // bn gamma, beta
        if ci != co {
            w += co * ci + co;
        }
    }
    let c = *cfg.channels.last().unwrap();
    w += k * t;
    w += (cfg.tcn_layers - 1) * (c + c * cfg.tcn_kernel + c);
    w += 3 * c + 3;
    (adj, w)
}

#[test]
fn parameter_counts_match_enumeration() {
    let mut tiny = small_config(Variant::Vanilla);
    tiny.joints = 2;
    tiny.observed_frames = 2;
    tiny.channels = vec![3, 3];
    tiny.gcn_layers = 1;
    let p = count_parameters(&SesGcnModel::new(tiny.clone(), 0).unwrap());
    assert_eq!(p.adjacency, 16);
    assert_eq!((p.adjacency, p.weights), enumerate(&tiny));
    assert_eq!(p.total, p.adjacency + p.weights);

    for variant in [Variant::Vanilla, Variant::Sts, Variant::StsDw, Variant::Ses] {
        for alpha in [None, Some(1)] {
            let cfg = ModelConfig {
                variant,
                alpha,
                ..ModelConfig::default()
            };
            let p = count_parameters(&SesGcnModel::new(cfg.clone(), 0).unwrap());
            assert_eq!((p.adjacency, p.weights), enumerate(&cfg), "{variant:?} {alpha:?}");
            assert_eq!(p.masked_out, 0);
        }
    }
}

#[test]
fn adjacency_counts_for_22_joints_10_frames() {
    let cfg = |variant| ModelConfig {
        joints: 22,
        channels: vec![3, 8],
        gcn_layers: 1,
        variant,
        ..ModelConfig::default()
    };
    assert_eq!(count_parameters(&SesGcnModel::new(cfg(Variant::Vanilla), 0).unwrap()).adjacency, 48_400);
    assert_eq!(count_parameters(&SesGcnModel::new(cfg(Variant::Sts), 0).unwrap()).adjacency, 7_040);
}

#[test]
fn masked_entries_are_zero_frozen_and_uncounted() {
    let cfg = small_config(Variant::Ses);
    let mut m = SesGcnModel::new(cfg.clone(), 0).unwrap();
    let before = count_parameters(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let masks: Vec<MaskPair> = (0..2)
        .map(|_| {
            let mut p = MaskPair::ones(3, 4);
            p.spatial = Tensor::from_fn(&[3, 3, 4], |_| (rng.random::<f64>() > 0.3) as u8 as f64).unwrap();
            p.temporal = Tensor::from_fn(&[4, 4, 3], |_| (rng.random::<f64>() > 0.3) as u8 as f64).unwrap();
            p
        })
        .collect();
    let zeros: usize = masks.iter().map(|p| p.zeros_spatial() + p.zeros_temporal()).sum();
    m.set_masks(masks.clone()).unwrap();
    let after = count_parameters(&m);
    assert_eq!(after.masked_out, zeros);
    assert_eq!(after.adjacency, before.adjacency - zeros);
    assert_eq!(after.weights, before.weights);
    for (l, p) in masks.iter().enumerate() {
        let Adjacency::Factored { spatial, .. } = m.adjacency(l) else { unreachable!() };
        for (v, mk) in m.store().get(spatial).value.data().iter().zip(p.spatial.data()) {
            if *mk == 0.0 {
                assert_eq!(v.to_bits(), 0.0f64.to_bits());
            }
        }
    }
    let mut bad = masks;
    bad.pop();
    assert!(m.set_masks(bad).is_err());
}

#[test]
fn small_sparse_model_matches_finite_differences() {
    for seed in 0..10u64 {
        for (name, err) in crate::gradcheck::model_check(seed).unwrap() {
            assert!(err < 1e-5, "{name}: seed {seed} error {err}");
        }
    }
}
