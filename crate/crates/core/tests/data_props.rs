use paraformer::data::presets::custom_meta;
use paraformer::data::{
    compute_norm_stats, denormalize, generate_synthetic, normalize, split_by_time, steps_per_day,
    temporal_subsample, DatasetTensor, Preset, SyntheticSpec,
};
use paraformer::metrics::convert_units;
use paraformer::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(t: usize, g: usize, f_in: usize, f_out: usize, seed: u64) -> DatasetTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = (0..t * g * f_in)
        .map(|_| rng.gen_range(-50.0f32..300.0))
        .collect();
    let targets = (0..t * g * f_out)
        .map(|_| rng.gen_range(-1e-3f32..1e-3))
        .collect();
    DatasetTensor::new(t, g, inputs, targets, custom_meta(g, f_in, f_out, 20)).unwrap()
}

fn channel_moments(values: &[f32], width: usize, c: usize) -> (f64, f64) {
    let col: Vec<f64> = values
        .iter()
        .skip(c)
        .step_by(width)
        .map(|&v| v as f64)
        .collect();
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[test]
fn normalized_training_channels_are_standardized() {
    let d = random_dataset(40, 6, 5, 3, 1);
    let stats = compute_norm_stats(&d);
    let n = normalize(&d, &stats).unwrap();
    for (c, st) in stats.inputs.iter().enumerate() {
        let z: Vec<f64> = d
            .inputs()
            .iter()
            .skip(c)
            .step_by(5)
            .map(|&v| st.normalize(v as f64))
            .collect();
        let m = z.iter().sum::<f64>() / z.len() as f64;
        let s = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
        assert!(
            m.abs() < 1e-9 && (s - 1.0).abs() < 1e-6,
            "input {c}: {m} {s}"
        );
    }
    for c in 0..5 {
        let (m, s) = channel_moments(n.inputs(), 5, c);
        assert!(
            m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6,
            "input {c}: {m} {s}"
        );
    }
    for c in 0..3 {
        let (m, s) = channel_moments(n.targets(), 3, c);
        assert!(
            m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6,
            "target {c}: {m} {s}"
        );
    }
    for (c, st) in stats.inputs.iter().enumerate() {
        let (m, s) = channel_moments(d.inputs(), 5, c);
        assert!((st.mean - m).abs() < 1e-9 * m.abs().max(1.0));
        assert!((st.std - s).abs() < 1e-9 * s.max(1.0));
    }
}

#[test]
fn denormalize_inverts_normalize() {
    let d = random_dataset(30, 4, 2, 6, 2);
    let stats = compute_norm_stats(&d);
    let n = normalize(&d, &stats).unwrap();
    let z = Tensor::new(
        &[30 * 4, 6],
        n.targets().iter().map(|&v| v as f64).collect(),
    )
    .unwrap();
    let back = denormalize(&z, &stats).unwrap();
    for (b, &orig) in back.data().iter().zip(d.targets()) {
        let tol = 1e-5 * (orig.abs() as f64).max(stats.targets[0].std);
        assert!((b - orig as f64).abs() <= tol.max(1e-9), "{b} vs {orig}");
    }
}

#[test]
fn constant_channel_is_zeroed_not_divided() {
    let meta = custom_meta(2, 2, 1, 20);
    let inputs = (0..10 * 2).flat_map(|i| [7.0f32, i as f32]).collect();
    let d = DatasetTensor::new(10, 2, inputs, vec![1.0; 20], meta).unwrap();
    let stats = compute_norm_stats(&d);
    assert_eq!(stats.constant_inputs(), vec![0]);
    let n = normalize(&d, &stats).unwrap();
    assert!(n.inputs().iter().step_by(2).all(|&v| v == 0.0));
    assert!(n.targets().iter().all(|&v| v == 0.0));
}

#[test]
fn synthetic_generation_is_reproducible() {
    let spec = SyntheticSpec::new(Preset::Custom { f_in: 6, f_out: 4 }, 64, 3, 5);
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a.inputs(), b.inputs());
    assert_eq!(a.targets(), b.targets());
    let v2 = generate_synthetic(&SyntheticSpec::new(Preset::V2Small, 16, 2, 5)).unwrap();
    assert_eq!((v2.f_in(), v2.f_out()), (557, 368));
}

/// Solves `A x = b` for symmetric positive definite `A` by Gaussian elimination.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut inv: Vec<f64> = (0..n * n)
        .map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        for k in 0..n {
            a.swap(col * n + k, piv * n + k);
            inv.swap(col * n + k, piv * n + k);
        }
        b.swap(col, piv);
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        b[col] /= p;
        for r in 0..n {
            if r != col {
                let f = a[r * n + col];
                for k in 0..n {
                    a[r * n + k] -= f * a[col * n + k];
                    inv[r * n + k] -= f * inv[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    (b, inv)
}

/// Least-squares fit of each target on `[1, x_t, x_{t−2}]`; returns t-statistics
/// of the lag-2 coefficients, `[f_out][f_in]`.
fn lag_t_stats(d: &DatasetTensor) -> Vec<Vec<f64>> {
    let (f_in, f_out) = (d.f_in(), d.f_out());
    let p = 1 + 2 * f_in;
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for g in 0..d.n_grid() {
        for t in 2..d.n_time() {
            let mut r = vec![1.0];
            r.extend(d.input(t, g).iter().map(|&v| v as f64));
            r.extend(d.input(t - 2, g).iter().map(|&v| v as f64));
            rows.push(r);
            ys.push(d.target(t, g).iter().map(|&v| v as f64).collect::<Vec<_>>());
        }
    }
    let n = rows.len();
    let mut xtx = vec![0.0; p * p];
    for r in &rows {
        for i in 0..p {
            for j in 0..p {
                xtx[i * p + j] += r[i] * r[j];
            }
        }
    }
    (0..f_out)
        .map(|o| {
            let xty: Vec<f64> = (0..p)
                .map(|i| rows.iter().zip(&ys).map(|(r, y)| r[i] * y[o]).sum())
                .collect();
            let (beta, inv) = solve(xtx.clone(), xty, p);
            let rss: f64 = rows
                .iter()
                .zip(&ys)
                .map(|(r, y)| (y[o] - r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).powi(2))
                .sum();
            let sigma2 = rss / (n - p) as f64;
            (1 + f_in..p)
                .map(|i| beta[i] / (sigma2 * inv[i * p + i]).sqrt())
                .collect()
        })
        .collect()
}

#[test]
fn lagged_inputs_explain_targets_only_with_memory() {
    let spec = SyntheticSpec::new(Preset::Custom { f_in: 4, f_out: 2 }, 1500, 4, 3);
    let with = lag_t_stats(&generate_synthetic(&spec.clone().with_memory(1.0, 0.9)).unwrap());
    let max_with = with.iter().flatten().fold(0.0f64, |m, t| m.max(t.abs()));
    assert!(
        max_with > 10.0,
        "lag coefficients indistinguishable from zero: {with:?}"
    );

    let without = lag_t_stats(&generate_synthetic(&spec.with_memory(0.0, 0.9)).unwrap());
    for t in without.iter().flatten() {
        assert!(
            t.abs() < 3.0,
            "lag coefficient {t} sigma from zero without memory: {without:?}"
        );
    }
}

#[test]
fn subsample_and_split_keep_order_and_sizes() {
    let d = random_dataset(100, 3, 2, 2, 4);
    let s = temporal_subsample(&d, 3).unwrap();
    assert_eq!(s.n_time(), 34);
    assert_eq!(s.meta.step_minutes, 60);
    assert_eq!(s.input(5, 1), d.input(15, 1));
    let (tr, va, te) = split_by_time(&d, 0.7, 0.1).unwrap();
    assert_eq!((tr.n_time(), va.n_time(), te.n_time()), (70, 10, 20));
    assert_eq!(va.input(0, 2), d.input(70, 2));
    assert_eq!(te.target(19, 0), d.target(99, 0));
    assert!(temporal_subsample(&d, 0).is_err());
    assert!(split_by_time(&d, 0.95, 0.1).is_err());
    assert_eq!(steps_per_day(20), 72);
    assert_eq!(steps_per_day(140), 11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_conversion_round_trips(values in proptest::collection::vec(-1e3f64..1e3, 1..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale: Vec<f64> = values.iter().map(|_| 10f64.powf(rng.gen_range(-3.0..6.0))).collect();
        let energy = convert_units(&values, &scale).unwrap();
        let inverse: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();
        let back = convert_units(&energy, &inverse).unwrap();
        for (b, v) in back.iter().zip(&values) {
            prop_assert!((b - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn subsample_keeps_every_stride_step(t in 2usize..60, g in 1usize..4, stride in 1usize..8, seed in any::<u64>()) {
        prop_assume!(stride < t);
        let d = random_dataset(t, g, 2, 1, seed);
        let s = temporal_subsample(&d, stride).unwrap();
        prop_assert_eq!(s.n_time(), t.div_ceil(stride));
        for k in 0..s.n_time() {
            for gi in 0..g {
                prop_assert_eq!(s.input(k, gi), d.input(k * stride, gi));
                prop_assert_eq!(s.target(k, gi), d.target(k * stride, gi));
            }
        }
    }
}
