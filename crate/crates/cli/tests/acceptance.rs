#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use paraformer::checkpoint::{self, Checkpoint};
use paraformer::data::presets::custom_meta;
use paraformer::data::{
    compute_norm_stats, generate_synthetic, make_nonoverlapping_windows, make_sliding_windows,
    make_windows, normalize, read_dataset, read_dataset_bytes, split_by_time, write_dataset,
    write_dataset_bytes, DatasetTensor, Preset, SyntheticSpec, WindowBatch, WindowMode,
};
use paraformer::metrics::{
    pointwise_metrics, r_squared, spatial_r2_map, zonal_daily_r2, LatBinning,
};
use paraformer::nn::{
    encoder_layer_forward, scaled_dot_product_attention, Mlp, MlpConfig, ModelConfig, Paraformer,
};
use paraformer::optim::{
    cosine_lr, evaluate_mse, mse_loss, predict_windows, train, OptimizerKind, Scheduler,
    SchedulerConfig, SchedulerKind, TrainConfig,
};
use paraformer::search::{
    enumerate_grid, run_search, write_leaderboard, SearchData, SearchSettings, SearchSpace,
};
use paraformer::tensor::gradcheck::{check, check_model, weighted_sum, GradCheck, STEP};
use paraformer::tensor::{Tape, Tensor, Var};
use paraformer::{Error, FormatError, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.1..1.5);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    })
}

fn c1_gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut record = |name: &str, r: paraformer::Result<GradCheck>| -> Result<(), String> {
        let r = r.map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max(r.max_relative_error);
        ensure!(
            r.max_relative_error < 1e-4,
            "{name}: relative error {:.3e}",
            r.max_relative_error
        );
        Ok(())
    };
    type Unary = fn(&mut Tape<f64>, Var) -> paraformer::Result<Var>;
    let unary: [(&str, &[usize], Unary); 11] = [
        ("gelu", &[3, 4], |t, x| Ok(t.gelu(x))),
        ("relu", &[3, 4], |t, x| Ok(t.relu(x))),
        ("leaky_relu", &[3, 4], |t, x| Ok(t.leaky_relu(x, 0.01))),
        ("tanh", &[3, 4], |t, x| Ok(t.tanh(x))),
        ("square", &[3, 4], |t, x| Ok(t.square(x))),
        ("scale", &[3, 4], |t, x| Ok(t.scale(x, -1.7))),
        ("reshape", &[2, 6], |t, x| t.reshape(x, &[3, 4])),
        ("permute", &[2, 3, 4, 2], |t, x| t.permute(x, &[0, 2, 1, 3])),
        ("sum", &[5], |t, x| Ok(t.sum(x))),
        ("mean", &[2, 5], |t, x| Ok(t.mean(x))),
        ("softmax", &[3, 5], |t, x| t.softmax(x)),
    ];
    for (name, shape, op) in unary {
        record(
            name,
            check(&[random(shape, 1)], STEP, |t, v| {
                let y = op(t, v[0])?;
                weighted_sum(t, y, 99)
            }),
        )?;
    }
    type Binary = fn(&mut Tape<f64>, Var, Var) -> paraformer::Result<Var>;
    let binary: [(&str, &[usize], &[usize], Binary); 7] = [
        ("add", &[2, 3], &[2, 3], |t, a, b| t.add(a, b)),
        ("sub", &[2, 3], &[2, 3], |t, a, b| t.sub(a, b)),
        ("mul", &[2, 3], &[2, 3], |t, a, b| t.mul(a, b)),
        ("add_bias", &[4, 3], &[3], |t, a, b| t.add_bias(a, b)),
        ("matmul", &[4, 5], &[5, 3], |t, a, b| t.matmul(a, b)),
        ("bmm", &[2, 3, 4], &[2, 4, 5], |t, a, b| t.bmm(a, b, false)),
        ("bmm_t", &[2, 3, 4], &[2, 5, 4], |t, a, b| t.bmm(a, b, true)),
    ];
    for (name, a, b, op) in binary {
        record(
            name,
            check(&[random(a, 2), random(b, 3)], STEP, |t, v| {
                let y = op(t, v[0], v[1])?;
                weighted_sum(t, y, 98)
            }),
        )?;
    }
    record(
        "linear",
        check(
            &[random(&[4, 3], 4), random(&[3, 2], 5), random(&[2], 6)],
            STEP,
            |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                weighted_sum(t, y, 7)
            },
        ),
    )?;
    record(
        "layer_norm",
        check(
            &[random(&[3, 6], 8), random(&[6], 9), random(&[6], 10)],
            STEP,
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(t, y, 11)
            },
        ),
    )?;
    let target = random(&[2, 3, 2], 12);
    let mask = [true, false, true, true, false, true];
    record(
        "mse_loss",
        check(&[random(&[2, 3, 2], 13)], STEP, |t, v| {
            mse_loss(t, v[0], &target, &mask)
        }),
    )?;
    let shape = [2, 2, 3, 2];
    record(
        "attention",
        check(
            &[random(&shape, 14), random(&shape, 15), random(&shape, 16)],
            STEP,
            |t, v| {
                let (out, w) = scaled_dot_product_attention(t, v[0], v[1], v[2])?;
                let a = weighted_sum(t, out, 17)?;
                let b = weighted_sum(t, w, 18)?;
                t.add(a, b)
            },
        ),
    )?;

    let mut config = ModelConfig::new(3, 2);
    config.d_model = 8;
    config.n_layers = 1;
    config.n_heads = 1;
    config.dropout = 0.0;
    config.window = 3;
    let layer = Paraformer::<f64>::new(config.clone(), 20)
        .map_err(|e| e.to_string())?
        .params
        .layers
        .remove(0);
    record(
        "encoder_layer",
        check(&[random(&[2, 3, 8], 21)], STEP, |t, v| {
            let vars = layer.register_on(t);
            let mut rng = ChaCha8Rng::seed_from_u64(19);
            let y = encoder_layer_forward(t, v[0], &vars, &config, false, &mut rng)?;
            weighted_sum(t, y, 22)
        }),
    )?;

    let y = random(&[2, 3, 2], 25);
    let mut model = Model::Paraformer(Paraformer::new(config, 23).map_err(|e| e.to_string())?);
    record(
        "paraformer",
        check_model(&mut model, &random(&[2, 3, 3], 24), STEP, |t, out| {
            mse_loss(t, out, &y, &[true; 6])
        }),
    )?;

    let mlp_cfg = MlpConfig {
        hidden_widths: vec![5, 4],
        ..MlpConfig::new(3, 2)
    };
    let mut mlp = Model::Mlp(Mlp::new(mlp_cfg, 26).map_err(|e| e.to_string())?);
    let y = random(&[4, 1, 2], 27);
    record(
        "mlp",
        check_model(&mut mlp, &random(&[4, 1, 3], 28), STEP, |t, out| {
            mse_loss(t, out, &y, &[true; 4])
        }),
    )?;
    Ok(format!("worst relative error {worst:.2e}"))
}

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-10 * want.abs().max(1e-300) || (got - want).abs() < 1e-14
}

fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

fn oracle_r2(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let mean = neumaier(truth.iter().copied()) / truth.len() as f64;
    let res = neumaier(pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)));
    let tot = neumaier(truth.iter().map(|t| (t - mean) * (t - mean)));
    (tot > 0.0).then(|| 1.0 - res / tot)
}

fn c2_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for case in 0..50 {
        let n = rng.gen_range(2..40);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let truth: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let pred: Vec<f64> = truth
            .iter()
            .map(|t| t + scale * rng.gen_range(-0.5..0.5))
            .collect();
        let (mae, rmse) = pointwise_metrics(&pred, &truth).map_err(|e| e.to_string())?;
        let want_mae = neumaier(pred.iter().zip(&truth).map(|(p, t)| (p - t).abs())) / n as f64;
        let want_mse = neumaier(pred.iter().zip(&truth).map(|(p, t)| (p - t) * (p - t))) / n as f64;
        ensure!(close(mae, want_mae), "case {case}: MAE {mae} vs {want_mae}");
        ensure!(
            close(rmse * rmse, want_mse),
            "case {case}: MSE {} vs {want_mse}",
            rmse * rmse
        );
        ensure!(rmse >= mae, "case {case}: RMSE {rmse} < MAE {mae}");
        let r2 = r_squared(&pred, &truth).map_err(|e| e.to_string())?;
        let want = oracle_r2(&pred, &truth);
        ensure!(
            matches!((r2, want), (Some(a), Some(b)) if close(a, b)),
            "case {case}: R² {r2:?} vs {want:?}"
        );

        let g = rng.gen_range(2..7);
        let spd = rng.gen_range(1..4);
        let days = rng.gen_range(2..5);
        let width = rng.gen_range(1..4);
        let lats: Vec<f64> = (0..g).map(|_| rng.gen_range(-90.0..90.0)).collect();
        let prov: Vec<(usize, usize)> = (0..days * spd)
            .flat_map(|t| (0..g).map(move |gi| (t, gi)))
            .collect();
        let truth: Vec<f64> = (0..prov.len() * width)
            .map(|_| rng.gen_range(-5.0..5.0))
            .collect();
        let pred: Vec<f64> = truth.iter().map(|v| v + rng.gen_range(-2.0..2.0)).collect();
        let binning = LatBinning::new(3, &lats).map_err(|e| e.to_string())?;
        let zonal = zonal_daily_r2(&pred, &truth, &prov, width, 0..width, &binning, spd)
            .map_err(|e| e.to_string())?;
        for (b, row) in zonal.iter().enumerate() {
            for (c, got) in row.iter().enumerate() {
                let members: Vec<usize> =
                    (0..g).filter(|&gi| binning.assignment[gi] == b).collect();
                if members.is_empty() {
                    ensure!(got.is_none(), "case {case}: empty bin {b} has R² {got:?}");
                    continue;
                }
                let mut mp = Vec::new();
                let mut mt = Vec::new();
                for d in 0..days {
                    let rows: Vec<usize> = (0..prov.len())
                        .filter(|&i| prov[i].0 / spd == d && members.contains(&prov[i].1))
                        .collect();
                    mp.push(
                        neumaier(rows.iter().map(|&i| pred[i * width + c])) / rows.len() as f64,
                    );
                    mt.push(
                        neumaier(rows.iter().map(|&i| truth[i * width + c])) / rows.len() as f64,
                    );
                }
                let want = oracle_r2(&mp, &mt);
                ensure!(
                    matches!((got, want), (Some(a), Some(b)) if close(*a, b)),
                    "case {case}: zonal bin {b} channel {c}: {got:?} vs {want:?}"
                );
            }
        }
        for c in 0..width {
            let map =
                spatial_r2_map(&pred, &truth, &prov, width, c, g).map_err(|e| e.to_string())?;
            for (gi, got) in map.iter().enumerate() {
                let rows: Vec<usize> = (0..prov.len()).filter(|&i| prov[i].1 == gi).collect();
                let p: Vec<f64> = rows.iter().map(|&i| pred[i * width + c]).collect();
                let t: Vec<f64> = rows.iter().map(|&i| truth[i * width + c]).collect();
                let want = oracle_r2(&p, &t);
                ensure!(
                    matches!((got, want), (Some(a), Some(b)) if close(*a, b)),
                    "case {case}: spatial grid {gi}: {got:?} vs {want:?}"
                );
            }
        }
    }
    Ok("50 cases within 1e-10 relative".into())
}

fn coded(t: usize, g: usize, f_in: usize, f_out: usize) -> DatasetTensor {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for ti in 0..t {
        for gi in 0..g {
            inputs.extend((0..f_in).map(|c| (1000 * ti + 10 * gi + c) as f32));
            targets.extend((0..f_out).map(|c| -((1000 * ti + 10 * gi + c) as f32)));
        }
    }
    DatasetTensor::new(t, g, inputs, targets, custom_meta(g, f_in, f_out, 20)).unwrap()
}

fn c3_windowing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let mut violations = Vec::new();
    let mut checked = 0;
    for instance in 0..200 {
        let t = rng.gen_range(1..=64);
        let g = rng.gen_range(1..=8);
        let l = rng.gen_range(1..=7);
        let (f_in, f_out) = (rng.gen_range(1..4), rng.gen_range(1..3));
        let d = coded(t, g, f_in, f_out);
        let mut fail = |what: &str| {
            violations.push(format!("instance {instance} (T={t} G={g} L={l}): {what}"))
        };
        if l > t {
            if make_nonoverlapping_windows(&d, l).is_ok() || make_sliding_windows(&d, l).is_ok() {
                fail("window longer than series accepted");
            }
            continue;
        }
        checked += 1;

        let w = make_nonoverlapping_windows(&d, l).unwrap();
        if w.n_seq() != (t / l) * g || w.n_scored() != w.n_seq() * l {
            fail("nonoverlapping count");
        }
        let mut seen = HashSet::new();
        for (row, &(ti, gi)) in w.provenance().iter().enumerate() {
            if !seen.insert((ti, gi)) || ti >= (t / l) * l {
                fail("nonoverlapping coverage");
            }
            if w.x()[row * f_in..(row + 1) * f_in] != *d.input(ti, gi)
                || w.y()[row * f_out..(row + 1) * f_out] != *d.target(ti, gi)
            {
                fail("nonoverlapping provenance");
            }
        }
        if seen.len() != (t / l) * l * g {
            fail("nonoverlapping coverage size");
        }

        let sw = make_sliding_windows(&d, l).unwrap();
        let scored: Vec<(usize, usize)> = sw.scored().map(|(_, _, ti, gi)| (ti, gi)).collect();
        let unique: HashSet<_> = scored.iter().copied().collect();
        let want: HashSet<_> = (l - 1..t)
            .flat_map(|ti| (0..g).map(move |gi| (ti, gi)))
            .collect();
        if unique.len() != scored.len() || unique != want {
            fail("sliding scored positions");
        }
        for (seq, pos, ti, gi) in sw.scored() {
            let row = seq * l + pos;
            if sw.y()[row * f_out..(row + 1) * f_out] != *d.target(ti, gi) {
                fail("sliding target");
            }
            for k in 0..l {
                let r = seq * l + k;
                if sw.x()[r * f_in..(r + 1) * f_in] != *d.input(ti + 1 + k - l, gi) {
                    fail("sliding reconstruction");
                }
            }
        }
    }
    ensure!(
        violations.is_empty(),
        "{} violations, first: {}",
        violations.len(),
        violations[0]
    );
    Ok(format!(
        "0 violations across 200 instances ({checked} windowable)"
    ))
}

fn c4_overfit() -> Outcome {
    let d = generate_synthetic(&SyntheticSpec::new(Preset::V1Small, 1024, 4, 7))
        .map_err(|e| e.to_string())?;
    let n = normalize(&d, &compute_norm_stats(&d)).map_err(|e| e.to_string())?;
    let all = make_windows(&n, 5, WindowMode::Sliding).map_err(|e| e.to_string())?;
    let pick: Vec<usize> = (0..512).map(|i| i * all.n_seq() / 512).collect();
    let seqs = all.select(&pick).map_err(|e| e.to_string())?;
    let val = seqs
        .select(&(0..64).map(|i| i * 8).collect::<Vec<_>>())
        .map_err(|e| e.to_string())?;
    let mut cfg = ModelConfig::new(124, 128);
    cfg.d_model = 64;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.window = 5;
    cfg.dropout = 0.0;
    let mut model = Model::Paraformer(Paraformer::new(cfg, 1).map_err(|e| e.to_string())?);
    let mut tc = TrainConfig::new(1000, 128, 3e-3, 3);
    tc.max_steps = Some(2000);
    let r = train(&mut model, &seqs, &val, &tc, |_| {}).map_err(|e| e.to_string())?;
    let mse = evaluate_mse(&model, &seqs, 512).map_err(|e| e.to_string())?;
    ensure!(r.steps <= 2000, "{} optimizer steps", r.steps);
    ensure!(mse < 1e-3, "train MSE {mse:.3e} after {} steps", r.steps);
    Ok(format!("train MSE {mse:.3e} after {} steps", r.steps))
}

fn pooled_r2(model: &Model, w: &WindowBatch) -> paraformer::Result<f64> {
    let p = predict_windows(model, w, 512)?;
    let fo = w.f_out();
    let rows: Vec<usize> = w
        .score_mask()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();
    let mut res = 0.0;
    let mut tot = 0.0;
    for c in 0..fo {
        let mean = rows.iter().map(|&i| w.y()[i * fo + c] as f64).sum::<f64>() / rows.len() as f64;
        for &i in &rows {
            let y = w.y()[i * fo + c] as f64;
            res += (p.data()[i * fo + c] - y).powi(2);
            tot += (y - mean).powi(2);
        }
    }
    Ok(1.0 - res / tot)
}

fn r2_gap(alpha: f64, seed: u64) -> paraformer::Result<f64> {
    let mut spec = SyntheticSpec::new(Preset::V1Small, 4096, 16, seed).with_memory(alpha, 0.9);
    if alpha == 0.0 {
        spec.beta = 0.0;
    }
    let d = generate_synthetic(&spec)?;
    let (tr, va, te) = split_by_time(&d, 0.7, 0.1)?;
    let stats = compute_norm_stats(&tr);
    let windows = |s: &DatasetTensor| -> paraformer::Result<WindowBatch> {
        make_windows(&normalize(s, &stats)?, 5, WindowMode::NonOverlapping)
    };
    let (wtr, wva, wte) = (windows(&tr)?, windows(&va)?, windows(&te)?);
    let steps = 1000;

    let mut cfg = ModelConfig::new(124, 128);
    cfg.d_model = 64;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.dropout = 0.0;
    let mut para = Model::Paraformer(Paraformer::new(cfg, seed)?);
    let epochs = steps * 64 / wtr.n_seq() + 1;
    let mut tc = TrainConfig::new(epochs, 64, 1e-3, seed).with_scheduler(SchedulerKind::Cosine);
    tc.max_steps = Some(steps);
    train(&mut para, &wtr, &wva, &tc, |_| {})?;

    let (ftr, fva, fte) = (
        wtr.flatten_scored(),
        wva.flatten_scored(),
        wte.flatten_scored(),
    );
    let mut mc = MlpConfig::new(124, 128);
    mc.hidden_widths = vec![256; 3];
    let mut mlp = Model::Mlp(Mlp::new(mc, seed)?);
    let epochs = steps * 256 / ftr.n_seq() + 1;
    let mut tc = TrainConfig::new(epochs, 256, 1e-3, seed).with_scheduler(SchedulerKind::Cosine);
    tc.max_steps = Some(steps);
    train(&mut mlp, &ftr, &fva, &tc, |_| {})?;

    Ok(pooled_r2(&para, &wte)? - pooled_r2(&mlp, &fte)?)
}

fn c5_memory_advantage() -> Outcome {
    let seeds = [1u64, 2, 3];
    let mean_gap = |alpha: f64| -> Result<f64, String> {
        let gaps: Vec<f64> = seeds
            .iter()
            .map(|&s| r2_gap(alpha, s))
            .collect::<paraformer::Result<_>>()
            .map_err(|e| e.to_string())?;
        Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
    };
    let memory = mean_gap(1.0)?;
    let control = mean_gap(0.0)?;
    ensure!(
        memory >= 0.10,
        "memory gap {memory:.3} below 0.10 (control {control:+.3})"
    );
    ensure!(
        control.abs() <= 0.03,
        "control gap {control:+.3} outside ±0.03 (memory {memory:.3})"
    );
    Ok(format!(
        "R² gap {memory:.3} with memory, {control:+.3} without"
    ))
}

fn c6_scheduler() -> Outcome {
    let mut s = Scheduler::new(SchedulerConfig::plateau(), 1e-4).map_err(|e| e.to_string())?;
    let mut halved_at = None;
    for epoch in 1..=30 {
        if s.epoch_end(1.0) < 1e-4 {
            halved_at = Some(epoch);
            break;
        }
    }
    // The first epoch sets the reference; eleven flat epochs follow it.
    ensure!(
        halved_at == Some(12),
        "first reduction at epoch {halved_at:?}"
    );
    ensure!(s.lr() == 5e-5, "reduced lr {}", s.lr());
    for (base, min, t_max) in [(1e-3, 0.0, 200), (3e-3, 1e-5, 17), (0.5, 0.1, 1)] {
        ensure!(
            (cosine_lr(base, min, t_max, 0) - base).abs() < 1e-12,
            "cosine start for {base}"
        );
        ensure!(
            (cosine_lr(base, min, t_max, t_max) - min).abs() < 1e-12,
            "cosine end for {base}"
        );
    }
    Ok("plateau halves after 11 flat epochs; cosine endpoints exact".into())
}

fn c7_grid() -> Outcome {
    let grid = enumerate_grid(&SearchSpace::default()).map_err(|e| e.to_string())?;
    let unique: HashSet<_> = grid.iter().collect();
    ensure!(
        grid.len() == 1152 && unique.len() == 1152,
        "{} tuples, {} unique",
        grid.len(),
        unique.len()
    );

    let spec =
        SyntheticSpec::new(Preset::Custom { f_in: 8, f_out: 4 }, 300, 4, 5).with_memory(1.0, 0.9);
    let d = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let (tr, va, _) = split_by_time(&d, 0.7, 0.1).map_err(|e| e.to_string())?;
    let stats = compute_norm_stats(&tr);
    let tr = normalize(&tr, &stats).map_err(|e| e.to_string())?;
    let va = normalize(&va, &stats).map_err(|e| e.to_string())?;
    let space = SearchSpace {
        n_layers: vec![1],
        d_model: vec![8, 16],
        n_heads: vec![2],
        batch: vec![32, 64],
        optimizer: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
        scheduler: vec![SchedulerKind::Cosine],
        window: None,
    };
    let settings = SearchSettings {
        epochs: 2,
        lr: 3e-3,
        ..SearchSettings::default()
    };
    let data = SearchData {
        train: &tr,
        val: &va,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut boards = Vec::new();
    for run in 0..2 {
        let out = run_search(&space, &data, &settings, 11, None).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("board{run}.csv"));
        write_leaderboard(&path, &out.leaderboard).map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let untimed: Vec<String> = text
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(rest, _)| rest).to_string())
            .collect();
        ensure!(
            untimed[0].ends_with(",epochs"),
            "unexpected columns {}",
            untimed[0]
        );
        boards.push(untimed);
    }
    ensure!(
        boards[0] == boards[1],
        "leaderboards differ between identical runs"
    );
    Ok("1152 unique tuples; identical leaderboards".into())
}

fn format_error<T: std::fmt::Debug>(r: paraformer::Result<T>) -> Result<FormatError, String> {
    match r {
        Err(Error::Format(f)) => Ok(f),
        other => Err(format!("expected a format error, got {other:?}")),
    }
}

fn c8_formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let (t, g, f_in, f_out) = (9, 3, 5, 4);
    let inputs = (0..t * g * f_in)
        .map(|_| rng.gen::<f32>() * 1e3 - 5e2)
        .collect();
    let targets = (0..t * g * f_out)
        .map(|_| rng.gen::<f32>() * 1e-3)
        .collect();
    let d = DatasetTensor::new(t, g, inputs, targets, custom_meta(g, f_in, f_out, 20))
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("d.cpsd");
    write_dataset(&d, &path).map_err(|e| e.to_string())?;
    let back = read_dataset(&path).map_err(|e| e.to_string())?;
    ensure!(
        back == d && write_dataset_bytes(&back) == std::fs::read(&path).unwrap(),
        "dataset round trip not bit-exact"
    );

    let bytes = write_dataset_bytes(&d);
    let meta = || d.meta.clone();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    ensure!(
        matches!(
            format_error(read_dataset_bytes(&bad, meta()))?,
            FormatError::BadMagic { .. }
        ),
        "dataset magic"
    );
    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&9u32.to_le_bytes());
    ensure!(
        matches!(
            format_error(read_dataset_bytes(&bad, meta()))?,
            FormatError::UnsupportedVersion(9)
        ),
        "dataset version"
    );
    let mut bad = bytes.clone();
    bad[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
    ensure!(
        matches!(
            format_error(read_dataset_bytes(&bad, meta()))?,
            FormatError::SizeOverflow(_)
        ),
        "dataset size overflow"
    );
    let mut bad = bytes.clone();
    bad.push(0);
    ensure!(
        matches!(
            format_error(read_dataset_bytes(&bad, meta()))?,
            FormatError::TrailingBytes(1)
        ),
        "dataset trailing bytes"
    );
    for cut in 0..bytes.len() {
        ensure!(
            read_dataset_bytes(&bytes[..cut], meta()).is_err(),
            "dataset cut at {cut} accepted"
        );
    }

    let mut cfg = ModelConfig::new(f_in, f_out);
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    let model = Model::Paraformer(Paraformer::new(cfg, 1).map_err(|e| e.to_string())?);
    let ck = Checkpoint::from_model(serde_json::json!({"note": "acceptance"}), &model);
    let path = dir.path().join("m.cpkt");
    ck.write(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::read(&path).map_err(|e| e.to_string())?;
    let bytes = ck.to_bytes().map_err(|e| e.to_string())?;
    ensure!(
        back == ck && back.to_bytes().unwrap() == bytes,
        "checkpoint round trip not bit-exact"
    );

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"CPSD");
    ensure!(
        matches!(
            format_error(Checkpoint::from_bytes(&bad))?,
            FormatError::BadMagic { .. }
        ),
        "checkpoint magic"
    );
    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&(checkpoint::VERSION + 1).to_le_bytes());
    ensure!(
        matches!(
            format_error(Checkpoint::from_bytes(&bad))?,
            FormatError::UnsupportedVersion(_)
        ),
        "checkpoint version"
    );
    let mut bad = bytes.clone();
    bad[12] = b'[';
    ensure!(
        matches!(
            format_error(Checkpoint::from_bytes(&bad))?,
            FormatError::Metadata(_)
        ),
        "checkpoint header JSON"
    );
    for cut in 0..bytes.len() {
        let r = catch_unwind(|| Checkpoint::from_bytes(&bytes[..cut]));
        ensure!(r.is_ok(), "checkpoint cut at {cut} panicked");
    }
    Ok("bit-exact round trips; corrupted headers rejected".into())
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_paraformer"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        o.status.code() == Some(0),
        "{} exited {:?}: {}",
        args[0],
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn c9_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let config = serde_json::json!({
        "model": {"d_model": 64, "n_layers": 2, "n_heads": 4},
        "train": {"epochs": 5, "batch": 64, "lr": 1e-3}
    });
    std::fs::write(dir.path().join("config.json"), config.to_string())
        .map_err(|e| e.to_string())?;
    run_cli(&["gen", "--out", &p("d.cpsd")])?;
    run_cli(&[
        "train",
        "--data",
        &p("d.cpsd"),
        "--config",
        &p("config.json"),
        "--out-ckpt",
        &p("m.cpkt"),
    ])?;
    run_cli(&[
        "eval",
        "--data",
        &p("d.cpsd"),
        "--ckpt",
        &p("m.cpkt"),
        "--report",
        &p("report.json"),
    ])?;
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(Path::new(&p("report.json"))).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let vars = report["variables"]
        .as_array()
        .ok_or("report has no variables")?;
    let names: Vec<&str> = vars.iter().filter_map(|v| v["name"].as_str()).collect();
    let expected = [
        "dT/dt", "dq/dt", "NETSW", "FLWDS", "PRECSC", "PRECC", "SOLS", "SOLL", "SOLSD", "SOLLD",
    ];
    ensure!(names == expected, "variables {names:?}");
    for v in vars {
        let finite = |k: &str| v[k].as_f64().is_some_and(f64::is_finite);
        ensure!(
            finite("mae") && finite("rmse"),
            "non-finite metrics for {}",
            v["name"]
        );
    }
    Ok("10 variables in order with finite MAE/RMSE".into())
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 9] = [
        (
            "gradient correctness",
            c1_gradients,
            Duration::from_secs(60),
        ),
        ("metric oracle equivalence", c2_metrics, Duration::MAX),
        ("windowing invariants", c3_windowing, Duration::MAX),
        ("overfit capacity", c4_overfit, Duration::from_secs(600)),
        (
            "memory advantage",
            c5_memory_advantage,
            Duration::from_secs(1800),
        ),
        ("scheduler semantics", c6_scheduler, Duration::MAX),
        ("grid enumeration", c7_grid, Duration::MAX),
        ("format round trips", c8_formats, Duration::MAX),
        ("end-to-end CLI", c9_end_to_end, Duration::from_secs(300)),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let label = format!("criterion {}", i + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| name.contains(f.as_str()) || label.ends_with(f.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = start.elapsed();
        let outcome = match outcome {
            Ok(_) if secs > *limit => Err(format!(
                "took {:.1}s, limit {}s",
                secs.as_secs_f64(),
                limit.as_secs()
            )),
            o => o,
        };
        match outcome {
            Ok(detail) => println!(
                "{label} {name}: PASS ({detail}; {:.1}s)",
                secs.as_secs_f64()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "{label} {name}: FAIL ({detail}; {:.1}s)",
                    secs.as_secs_f64()
                );
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
