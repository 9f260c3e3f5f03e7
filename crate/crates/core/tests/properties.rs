use bcpnn_core::model_io::{decode_params, encode_params};
use bcpnn_core::{
    build_network, complementary_encode, compute_support, derive_weights, reduced_dot, rewire, soft_wta,
    update_traces, Fixed16, NetworkConfig, PrecisionMode, Projection, SparseConnectivity, TrainingParams,
};
use half::f16;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> impl Strategy<Value = NetworkConfig> {
    (2usize..12, 1usize..4, 1usize..8, 2usize..5, any::<u64>()).prop_flat_map(|(n_in, n_hid, m, classes, seed)| {
        (1..=n_in).prop_flat_map(move |n_act| {
            (0..=n_in - n_act).prop_map(move |n_sil| NetworkConfig {
                n_input_hcu: n_in,
                n_hidden_hcu: n_hid,
                hidden_mcu_per_hcu: m,
                n_classes: classes,
                n_act,
                n_sil,
                n_replace: n_sil.min(2),
                seed,
                ..NetworkConfig::mnist()
            })
        })
    })
}

fn random_projection(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Projection {
    let conn = SparseConnectivity::random(cfg.n_input_hcu, cfg.n_hidden_hcu, cfg.n_act, cfg.n_sil, rng);
    let mut p = Projection::new(conn, 2, cfg.hidden_mcu_per_hcu);
    p.init_traces();
    p
}

fn one_hot_groups(n_groups: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut y = vec![0.0; n_groups * m];
    for g in y.chunks_mut(m) {
        g[rng.gen_range(0..m)] = 1.0;
    }
    y
}

/// Rounds once to the binary16 grid by scaling to the local ulp.
fn round_half(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let e = v.abs().log2().floor().max(-14.0);
    let ulp = (e - 10.0).exp2();
    let r = (v / ulp).round_ties_even() * ulp;
    if r.abs() > 65504.0 {
        f64::INFINITY.copysign(v)
    } else {
        r
    }
}

fn fp16_dot_oracle(w: &[f32], a: &[f32]) -> f64 {
    let mut acc = 0.0;
    for (&w, &a) in w.iter().zip(a) {
        let p = round_half(f16::from_f32(w).to_f64() * f16::from_f32(a).to_f64());
        acc = round_half(acc + p);
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fp16_dot_matches_reference(v in prop::collection::vec((-8.0f32..8.0, 0.0f32..1.0), 0..64)) {
        let (w, a): (Vec<f32>, Vec<f32>) = v.into_iter().unzip();
        let ours = reduced_dot(&w, &a, PrecisionMode::FP16).unwrap();
        let oracle = fp16_dot_oracle(&w, &a);
        prop_assert!(ours == oracle || (ours.is_nan() && oracle.is_nan()), "{ours} vs {oracle}");
    }

    #[test]
    fn fp32_dot_is_close_to_exact(v in prop::collection::vec((-8.0f32..8.0, 0.0f32..1.0), 0..64)) {
        let (w, a): (Vec<f32>, Vec<f32>) = v.into_iter().unzip();
        let exact: f64 = w.iter().zip(&a).map(|(&w, &a)| w as f64 * a as f64).sum();
        let bound: f64 = w.iter().zip(&a).map(|(&w, &a)| (w as f64 * a as f64).abs()).sum::<f64>() * 1e-6 + 1e-9;
        prop_assert!((reduced_dot(&w, &a, PrecisionMode::FP32).unwrap() - exact).abs() <= bound);
    }

    #[test]
    fn q312_rounds_to_nearest(x in -9.0f64..9.0) {
        let (q, saturated) = Fixed16::from_f64_checked(x);
        let v = q.to_f64();
        if saturated {
            prop_assert!(q == Fixed16::MAX || q == Fixed16::MIN);
            prop_assert!(x >= Fixed16::MAX.to_f64() || x <= Fixed16::MIN.to_f64());
        } else {
            prop_assert!((v - x).abs() <= Fixed16::STEP / 2.0);
        }
    }

    #[test]
    fn soft_wta_is_a_distribution(s in prop::collection::vec(-1e3f64..1e3, 1..40), beta in 0.01f64..20.0) {
        let p = soft_wta(&s, beta).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let k = p.iter().enumerate().fold(0, |b, (i, &v)| if v > p[b] { i } else { b });
        prop_assert_eq!(s[k], top);
    }

    #[test]
    fn complementary_code_sums_to_one(img in prop::collection::vec(0.0f32..=1.0, 1..100)) {
        let x = complementary_encode(&img).unwrap();
        prop_assert_eq!(x.len(), 2 * img.len());
        for (pair, &v) in x.chunks(2).zip(&img) {
            prop_assert_eq!(pair[1], v);
            prop_assert!((pair[0] + pair[1] - 1.0).abs() <= f32::EPSILON);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_support_matches_dense_sum(cfg in small_config(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_projection(&cfg, &mut rng);
        p.weights.iter_mut().for_each(|w| *w = rng.gen_range(-3.0..3.0));
        p.biases.iter_mut().for_each(|b| *b = rng.gen_range(-5.0..0.0));
        let img: Vec<f32> = (0..cfg.n_input_hcu).map(|_| rng.gen()).collect();
        let x = complementary_encode(&img).unwrap();
        let (m, pm, slots) = (cfg.hidden_mcu_per_hcu, 2, cfg.n_slots());
        for h in 0..cfg.n_hidden_hcu {
            let s = compute_support(&x, &p, h).unwrap();
            for (j, &sj) in s.iter().enumerate() {
                let mut dense = p.biases[h * m + j] as f64;
                let mut mag = dense.abs();
                for (slot, &c) in p.connectivity.active(h).iter().enumerate() {
                    for i in 0..pm {
                        let t = p.weights[((h * slots + slot) * pm + i) * m + j] as f64 * x[c as usize * pm + i] as f64;
                        dense += t;
                        mag += t.abs();
                    }
                }
                prop_assert!((sj as f64 - dense).abs() <= mag * 1e-5 + 1e-6, "{} vs {}", sj, dense);
            }
        }
    }

    #[test]
    fn traces_stay_normalized(cfg in small_config(), seed in any::<u64>(), alpha in 1e-4f64..1.0, steps in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_projection(&cfg, &mut rng);
        let m = cfg.hidden_mcu_per_hcu;
        for _ in 0..steps {
            let img: Vec<f32> = (0..cfg.n_input_hcu).map(|_| rng.gen()).collect();
            let y = one_hot_groups(cfg.n_hidden_hcu, m, &mut rng);
            update_traces(&mut p, &complementary_encode(&img).unwrap(), &y, alpha).unwrap();
        }
        let t = &p.traces;
        prop_assert!(t.p_pre.iter().chain(&t.p_post).chain(&t.p_joint).all(|v| (0.0..=1.0).contains(v)));
        for g in t.p_pre.chunks(2).chain(t.p_post.chunks(m)) {
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        // Each joint block is a distribution over (pre, post) pairs.
        for block in t.p_joint.chunks(2 * m) {
            prop_assert!((block.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn derived_weights_reproduce_joint(cfg in small_config(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_projection(&cfg, &mut rng);
        for _ in 0..10 {
            let img: Vec<f32> = (0..cfg.n_input_hcu).map(|_| rng.gen()).collect();
            let y = one_hot_groups(cfg.n_hidden_hcu, cfg.hidden_mcu_per_hcu, &mut rng);
            update_traces(&mut p, &complementary_encode(&img).unwrap(), &y, 0.3).unwrap();
        }
        let eps = 1e-8;
        derive_weights(&mut p, eps);
        let (m, pm, slots) = (cfg.hidden_mcu_per_hcu, 2, cfg.n_slots());
        for h in 0..cfg.n_hidden_hcu {
            for j in 0..m {
                let pj = p.traces.p_post[h * m + j] + eps;
                prop_assert!((p.biases[h * m + j] as f64 - pj.ln()).abs() <= 1e-5);
                for (slot, &c) in p.connectivity.slots(h).iter().enumerate() {
                    for i in 0..pm {
                        let k = ((h * slots + slot) * pm + i) * m + j;
                        let pi = p.traces.p_pre[c as usize * pm + i] + eps;
                        let pij = p.traces.p_joint[k] + eps;
                        let back = (p.weights[k] as f64).exp() * pi * pj;
                        prop_assert!((back - pij).abs() <= 1e-6 * pij);
                    }
                }
            }
        }
    }

    #[test]
    fn rewiring_keeps_connectivity_valid(cfg in small_config(), seed in any::<u64>(), rounds in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_projection(&cfg, &mut rng);
        let params = TrainingParams::new(&cfg, 10).unwrap();
        for _ in 0..rounds {
            let img: Vec<f32> = (0..cfg.n_input_hcu).map(|_| rng.gen()).collect();
            let y = one_hot_groups(cfg.n_hidden_hcu, cfg.hidden_mcu_per_hcu, &mut rng);
            update_traces(&mut p, &complementary_encode(&img).unwrap(), &y, 0.2).unwrap();
            let params = TrainingParams { n_replace: rng.gen_range(0..=cfg.n_sil), ..params.clone() };
            rewire(&mut p, &params, &mut rng);
        }
        prop_assert!(p.connectivity.check().is_ok());
        for h in 0..cfg.n_hidden_hcu {
            prop_assert_eq!(p.connectivity.active(h).len(), cfg.n_act);
            prop_assert_eq!(p.connectivity.silent(h).len(), cfg.n_sil);
            let mut all = p.connectivity.slots(h).to_vec();
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), cfg.n_slots());
        }
    }

    #[test]
    fn parameter_file_round_trips(cfg in small_config(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = build_network(&cfg).unwrap();
        for p in [&mut net.input_hidden, &mut net.hidden_output] {
            p.weights.iter_mut().for_each(|w| *w = rng.gen_range(-10.0..10.0));
            p.biases.iter_mut().for_each(|b| *b = rng.gen_range(-10.0..0.0));
        }
        let back = decode_params(&encode_params(&net, PrecisionMode::FP32).unwrap()).unwrap();
        prop_assert_eq!(&back.config, &net.config);
        prop_assert_eq!(&back.input_hidden.connectivity, &net.input_hidden.connectivity);
        prop_assert_eq!(&back.input_hidden.weights, &net.input_hidden.weights);
        prop_assert_eq!(&back.hidden_output.biases, &net.hidden_output.biases);
        for mode in [PrecisionMode::FP16, PrecisionMode::MIXED] {
            let back = decode_params(&encode_params(&net, mode).unwrap()).unwrap();
            for (&a, &b) in back.input_hidden.weights.iter().zip(&net.input_hidden.weights) {
                prop_assert_eq!(a, mode.store(b as f64));
            }
        }
    }
}
