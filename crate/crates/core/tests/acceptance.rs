//! Acceptance suite. Each test checks one criterion and writes a single
//! `criterion N: PASS|FAIL ...` line to stderr (uncaptured), so a plain
//! `cargo test` run shows the full table.
//!
//! The desk-scale model (2000 train / 200 val / 500 test, 40 epochs) is
//! trained once and shared; the ablation and determinism criteria train
//! their own.

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use mdd_core::baselines::{
    analytic_displacement, count_events, grid_oracle, ltm_segment_estimates, scenario_report, write_metrics_csv,
    EventRule, MetricRow, OracleGrids, ScenarioReport, STATIC_TOLERANCE_MM,
};
use mdd_core::dataset::{gen_bs_scenario, generate_splits, synth_phase, BsScenario, BsScenarioSpec, DatasetSpec, Splits};
use mdd_core::diff::{ConvShape, Temperature};
use mdd_core::loss::{ablation_variant, loss_on_tape, LossConfig, MddLabel};
use mdd_core::ltm::{forward, forward_on_tape, LtmConfig, Mode};
use mdd_core::phase::{extract_phase, itoh_unwrap, phase_to_displacement};
use mdd_core::sim::{compose_distance_series, synth_echo_cube};
use mdd_core::train::{evaluate, train, EvalMetrics, IterationLog, TrainConfig, TrainOutcome};
use mdd_core::{IsacConfig, LtmParams, SceneParams, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

// ----- tolerances -----

const ROUND_TRIP_RMS_M: f64 = 1e-9;
const ROUND_TRIP_SCENES: usize = 100;
const ROUND_TRIP_SECONDS: f64 = 10.0;

const OP_REL_ERR: f64 = 1e-4;
const END_TO_END_REL_ERR: f64 = 1e-3;
const GRAD_TRIALS: u64 = 50;
const GRAD_SECONDS: f64 = 60.0;

const ORACLE_SCENES: usize = 50;
const ORACLE_BIAS_M: f64 = 0.3e-3;
const ORACLE_FREQ_HZ: f64 = 0.5;
const ORACLE_SHARE: f64 = 0.90;

const MAX_EPOCHS: usize = 40;
const DESK_BIAS_MAE_M: f64 = 1.0e-3;
const DESK_HIT_SHARE: f64 = 0.85;
const DESK_SECONDS: f64 = 30.0 * 60.0;

const BIAS_SETTLE_FACTOR: f64 = 1.10;
const FREQ_LAG_FACTOR: f64 = 2.0;
/// Iterations averaged for the "end of epoch 1" frequency loss.
const EPOCH_END_WINDOW: usize = 5;

const STATIC_SHARE: f64 = 0.95;
const CLUTTER_HZ: f64 = 0.41;

const EXPECTED_COUNTS: [(f64, usize); 3] = [(0.5, 37), (1.0, 7), (2.0, 2)];

// ----- shared fixtures -----

fn line(id: &str, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id}: {verdict} {}", detail.as_ref());
}

fn info(id: &str, detail: impl AsRef<str>) {
    let _ = writeln!(std::io::stderr(), "    {id}: {}", detail.as_ref());
}

struct DeskRun {
    splits: Splits,
    outcome: TrainOutcome<f64>,
    test: EvalMetrics,
    seconds: f64,
}

fn desk_run(loss: LossConfig) -> DeskRun {
    let start = Instant::now();
    let splits = generate_splits(&DatasetSpec::desk()).expect("desk dataset");
    let init = LtmParams::new(LtmConfig::default(), 0).expect("init");
    let cfg = TrainConfig { epochs: MAX_EPOCHS, loss, ..TrainConfig::default() };
    let outcome = train(&init, &splits.train, &splits.val, &cfg).expect("training");
    let test = evaluate(&outcome.params, &splits.test).expect("evaluation");
    DeskRun { splits, outcome, test, seconds: start.elapsed().as_secs_f64() }
}

fn desk() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| desk_run(TrainConfig::default().loss))
}

fn scenario() -> &'static BsScenario {
    static SC: OnceLock<BsScenario> = OnceLock::new();
    SC.get_or_init(|| gen_bs_scenario(&BsScenarioSpec::default()).expect("scenario"))
}

fn desk_scenario_report() -> &'static ScenarioReport {
    static REPORT: OnceLock<ScenarioReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let sc = scenario();
        scenario_report(sc, &ltm_segment_estimates(&desk().outcome.params, sc)).expect("scenario report")
    })
}

fn metric_rows(run: &DeskRun, report: &ScenarioReport) -> Vec<MetricRow> {
    let m = &run.test;
    let mut rows = vec![
        MetricRow::new("ltm", "test_bias_mae_m", m.bias_mae_m),
        MetricRow::new("ltm", "test_bias_rmse_m", m.bias_rmse_m),
        MetricRow::new("ltm", "test_freq_mae_hz", m.freq_mae_hz),
        MetricRow::new("ltm", "test_freq_hit_rate", m.freq_hit_rate),
        MetricRow::new("ltm", "test_failures", m.failures as f64),
        MetricRow::new("ltm", "best_epoch", run.outcome.best_epoch as f64),
    ];
    rows.extend(report.rows("ltm"));
    rows
}

fn metric_file_hash(run: &DeskRun, report: &ScenarioReport) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &metric_rows(run, report)).expect("metrics csv");
    hex::encode(Sha256::digest(&buf))
}

// ----- 1: signal-model round trip -----

#[test]
fn criterion_1_signal_round_trip() {
    let start = Instant::now();
    let cfg = IsacConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..ROUND_TRIP_SCENES {
        let bias = rng.random_range(0.0..25e-3);
        let scene = SceneParams {
            mdd_bias_m: bias,
            mdd_amplitude_m: 0.1 * bias,
            mdd_frequency_hz: rng.random_range(5.0..15.0),
            ..SceneParams::default()
        };
        let cube = synth_echo_cube::<f64>(&cfg, &scene, i as u64).unwrap();
        let phase = itoh_unwrap(&extract_phase(&cube, None).unwrap());
        let d = phase_to_displacement(&phase, false).unwrap();
        let r: Vec<f64> = compose_distance_series(&cfg, &scene).unwrap();
        let se: f64 = d.values_m.iter().zip(&r).map(|(x, ri)| (x - (ri - r[0])).powi(2)).sum();
        worst = worst.max((se / r.len() as f64).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= ROUND_TRIP_RMS_M && secs < ROUND_TRIP_SECONDS;
    line("1", pass, format!("worst RMS {worst:.3e} m over {ROUND_TRIP_SCENES} scenes (<= {ROUND_TRIP_RMS_M:e}), {secs:.1} s"));
    assert!(pass);
}

// ----- 2: gradient suite -----

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Finite-difference check of `build` against every input, contracting the
/// output with fixed random weights.
fn op_check(inputs: &[Vec<f64>], build: &dyn Fn(&mut Tape, &[mdd_core::diff::Var]) -> mdd_core::diff::Var, seed: u64) -> f64 {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let record = |t: &mut Tape, xs: &[Vec<f64>]| {
        let vars: Vec<_> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let y = build(t, &vars);
        (vars, y)
    };
    let mut probe = Tape::new();
    let (_, y) = record(&mut probe, inputs);
    let coef: Vec<f64> = (0..probe.value(y).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let contract = |t: &mut Tape, y| {
        let c = t.leaf(coef.clone());
        let cy = t.conv1d(y, c, None, ConvShape::single(1, 0)).unwrap();
        t.sum(cy)
    };
    let value_at = |xs: &[Vec<f64>]| {
        let mut t = Tape::new();
        let (_, y) = record(&mut t, xs);
        let l = contract(&mut t, y);
        t.scalar(l)
    };
    let mut t = Tape::new();
    let (vars, y) = record(&mut t, inputs);
    let l = contract(&mut t, y);
    let mut worst: f64 = 0.0;
    for (j, v) in vars.iter().enumerate() {
        let g = t.grad_of(l, *v).unwrap();
        for i in 0..inputs[j].len() {
            let (mut up, mut down) = (inputs.to_vec(), inputs.to_vec());
            up[j][i] += h;
            down[j][i] -= h;
            worst = worst.max(rel_err(g[i], (value_at(&up) - value_at(&down)) / (2.0 * h)));
        }
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn op_suite() -> Vec<(&'static str, f64)> {
    type Build = Box<dyn Fn(&mut Tape, &[mdd_core::diff::Var]) -> mdd_core::diff::Var>;
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..GRAD_TRIALS {
        let n = rng.random_range(8..32);
        let x = uniform(&mut rng, n, -1.0, 1.0);
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let xc = uniform(&mut rng, ci * n, -1.0, 1.0);
        let kc = uniform(&mut rng, co * ci * 3, -1.0, 1.0);
        let bc = uniform(&mut rng, co, -1.0, 1.0);
        let shape = ConvShape { in_channels: ci, out_channels: co, stride: 1 + trial as usize % 2, padding: trial as usize % 2 };
        let w = uniform(&mut rng, n, 0.1, 1.0);
        let y = uniform(&mut rng, n, -1.0, 1.0);
        let s = uniform(&mut rng, 1, -1.0, 1.0);
        let f = uniform(&mut rng, 1, 0.5, 15.0);
        let times: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let factor = rng.random_range(-3.0..3.0);
        let nfft = 2 * n;
        // A fixed absolute temperature on the scale of this input's spectrum;
        // far below it the softmax is one-hot and carries no gradient to check.
        let abs_tau = {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let p = t.power_spectrum(v, Some(nfft)).unwrap();
            0.3 * t.value(p)[1..].iter().fold(0.0f64, |m, &q| m.max(q))
        };
        let cases: Vec<(&'static str, Vec<Vec<f64>>, Build)> = vec![
            ("conv1d", vec![xc, kc, bc], Box::new(move |t, v| t.conv1d(v[0], v[1], Some(v[2]), shape).unwrap())),
            ("leaky_relu", vec![x.clone()], Box::new(|t, v| t.leaky_relu(v[0], 0.01))),
            ("max_pool1d", vec![x.clone()], Box::new(|t, v| t.max_pool1d(v[0], 4, 2).unwrap())),
            ("power_spectrum", vec![x.clone()], Box::new(move |t, v| t.power_spectrum(v[0], Some(nfft)).unwrap())),
            (
                "soft_argmax_freq",
                vec![x.clone()],
                Box::new(move |t, v| {
                    let p = t.power_spectrum(v[0], Some(nfft)).unwrap();
                    let temp = if trial % 2 == 0 { Temperature::Relative(0.3) } else { Temperature::Absolute(abs_tau) };
                    t.soft_argmax_freq(p, 100.0, nfft, temp, true).unwrap()
                }),
            ),
            ("mean", vec![x.clone()], Box::new(|t, v| t.mean(v[0]))),
            ("sum", vec![x.clone()], Box::new(|t, v| t.sum(v[0]))),
            ("add", vec![x.clone(), y.clone()], Box::new(|t, v| t.add(v[0], v[1]))),
            ("add_broadcast", vec![x.clone(), s.clone()], Box::new(|t, v| t.add(v[0], v[1]))),
            ("sub", vec![x.clone(), y.clone()], Box::new(|t, v| t.sub(v[0], v[1]))),
            ("sub_broadcast", vec![s.clone(), x.clone()], Box::new(|t, v| t.sub(v[0], v[1]))),
            ("scale", vec![x.clone()], Box::new(move |t, v| t.scale(v[0], factor))),
            ("square", vec![x.clone()], Box::new(|t, v| t.square(v[0]))),
            ("weighted_center", vec![x.clone()], Box::new(move |t, v| t.weighted_center(v[0], &w).unwrap())),
            ("sin_mean", vec![f], Box::new(move |t, v| t.sin_mean(v[0], &times))),
        ];
        for (name, inputs, build) in cases {
            let e = op_check(&inputs, &*build, trial);
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(slot) => slot.1 = slot.1.max(e),
                None => worst.push((name, e)),
            }
        }
    }
    worst
}

/// Total loss of one sample as a function of the flattened parameters.
fn ltm_loss(params: &LtmParams, phase: &[f64], label: &MddLabel, loss: &LossConfig) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let (vars, f) = forward_on_tape(&mut tape, params, phase, Mode::Train).unwrap();
    let (total, _) = loss_on_tape(&mut tape, vars.bias, vars.frequency, f, label, loss).unwrap();
    let grads = tape.backward(total, &params.store).unwrap();
    (tape.scalar(total), grads)
}

fn shifted(params: &LtmParams, dir: &[Vec<f64>], step: f64) -> LtmParams {
    let mut p = params.clone();
    for (id, d) in params.store.ids().zip(dir) {
        for (v, di) in p.store.get_mut(id).iter_mut().zip(d) {
            *v += step * di;
        }
    }
    p
}

/// Directional finite differences of the full training loss along random
/// parameter-scaled directions.
fn end_to_end_suite() -> f64 {
    let spec = DatasetSpec::desk();
    let loss = LossConfig::millimetre();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..GRAD_TRIALS {
        let params = LtmParams::new(LtmConfig::default(), trial).unwrap();
        let bias_m = rng.random_range(0.5e-3..25e-3);
        let label = MddLabel {
            bias_m,
            amplitude_m: 0.1 * bias_m,
            frequency_hz: rng.random_range(5.0..15.0),
            snr_db: Some(rng.random_range(0..=10) as f64),
        };
        let phase = synth_phase(&spec, &label, trial).unwrap();
        let (_, grads) = ltm_loss(&params, &phase.values_rad, &label, &loss);
        let dir: Vec<Vec<f64>> = params
            .store
            .iter()
            .map(|(_, v)| v.iter().map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * (x.abs() + 1e-3)
            }).collect::<Vec<f64>>())
            .collect();
        let analytic: f64 = grads.iter().flatten().zip(dir.iter().flatten()).map(|(g, d)| g * d).sum();
        let h = 1e-6;
        let up = ltm_loss(&shifted(&params, &dir, h), &phase.values_rad, &label, &loss).0;
        let down = ltm_loss(&shifted(&params, &dir, -h), &phase.values_rad, &label, &loss).0;
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * h)));
    }
    worst
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let ops = op_suite();
    let e2e = end_to_end_suite();
    let secs = start.elapsed().as_secs_f64();
    let op_worst = ops.iter().map(|o| o.1).fold(0.0, f64::max);
    let pass = op_worst < OP_REL_ERR && e2e < END_TO_END_REL_ERR && secs < GRAD_SECONDS;
    line(
        "2",
        pass,
        format!(
            "{} ops x {GRAD_TRIALS} trials worst rel err {op_worst:.2e} (< {OP_REL_ERR:e}); \
             end-to-end worst {e2e:.2e} (< {END_TO_END_REL_ERR:e}); {secs:.1} s",
            ops.len()
        ),
    );
    for (name, e) in &ops {
        info("2", format!("{name:<18} {e:.2e}"));
    }
    assert!(pass);
}

// ----- 3: oracle equivalence -----

#[test]
fn criterion_3_oracle_equivalence() {
    let params = &desk().outcome.params;
    let spec = DatasetSpec::desk();
    let grids = OracleGrids::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agree = 0;
    let (mut worst_b, mut worst_f) = (0.0f64, 0.0f64);
    for i in 0..ORACLE_SCENES {
        // Labels on the oracle grid: 0.1 mm and 0.1 Hz steps.
        let bias_m = rng.random_range(0..=250) as f64 * 1e-4;
        let label = MddLabel {
            bias_m,
            amplitude_m: 0.1 * bias_m,
            frequency_hz: rng.random_range(50..=150) as f64 * 0.1,
            snr_db: None,
        };
        let phase = synth_phase(&spec, &label, i as u64).unwrap();
        let oracle = grid_oracle(&analytic_displacement(&phase), &grids).unwrap();
        let (b, f) = match forward(params, &phase, Mode::Infer) {
            Ok(e) => (e.bias_m, e.frequency_hz),
            Err(_) => (0.0, 0.0),
        };
        let (eb, ef) = ((b - oracle.bias_m).abs(), (f - oracle.frequency_hz).abs());
        worst_b = worst_b.max(eb);
        worst_f = worst_f.max(ef);
        agree += usize::from(eb <= ORACLE_BIAS_M && ef <= ORACLE_FREQ_HZ);
    }
    let share = agree as f64 / ORACLE_SCENES as f64;
    let pass = share >= ORACLE_SHARE;
    line(
        "3",
        pass,
        format!(
            "{agree}/{ORACLE_SCENES} scenes within {:.1} mm / {ORACLE_FREQ_HZ} Hz of the grid oracle \
             (share {share:.2} >= {ORACLE_SHARE}); worst {:.3} mm / {worst_f:.2} Hz",
            ORACLE_BIAS_M * 1e3,
            worst_b * 1e3
        ),
    );
    assert!(pass);
}

// ----- 4: desk-scale generalisation -----

#[test]
fn criterion_4_desk_generalization() {
    let run = desk();
    let m = &run.test;
    let [tr, va, te] = run.splits.sizes();
    let disjoint = {
        let keys: std::collections::HashSet<_> = run.splits.train.iter().map(|s| s.key()).collect();
        run.splits.test.iter().all(|s| !keys.contains(&s.key()))
    };
    let pass = m.bias_mae_m <= DESK_BIAS_MAE_M
        && m.freq_hit_rate >= DESK_HIT_SHARE
        && run.outcome.epochs.len() <= MAX_EPOCHS
        && disjoint
        && run.seconds < DESK_SECONDS;
    line(
        "4",
        pass,
        format!(
            "bias MAE {:.3} mm (<= {:.1}), freq hits {:.3} (>= {DESK_HIT_SHARE}), freq MAE {:.2} Hz; \
             {tr}/{va}/{te} split, disjoint {disjoint}, {} epochs, best {}, {:.0} s",
            m.bias_mae_m * 1e3,
            DESK_BIAS_MAE_M * 1e3,
            m.freq_hit_rate,
            m.freq_mae_hz,
            run.outcome.epochs.len(),
            run.outcome.best_epoch,
            run.seconds
        ),
    );
    assert!(pass);
}

// ----- 5: convergence ordering -----

fn epoch_iters(log: &[IterationLog], epoch: usize) -> Vec<&IterationLog> {
    log.iter().filter(|l| l.epoch == epoch).collect()
}

#[test]
fn criterion_5_convergence_ordering() {
    let log = &desk().outcome.iterations;
    let last = log.iter().map(|l| l.epoch).max().unwrap();
    let first = epoch_iters(log, 1);
    let final_iters = epoch_iters(log, last);
    let mean = |xs: &[&IterationLog], f: fn(&IterationLog) -> f64| xs.iter().map(|l| f(l)).sum::<f64>() / xs.len() as f64;
    let final_r = mean(&final_iters, |l| l.loss.l_r);
    let final_f = mean(&final_iters, |l| l.loss.l_f);
    let best_r_epoch1 = first.iter().map(|l| l.loss.l_r).fold(f64::INFINITY, f64::min);
    let tail = &first[first.len().saturating_sub(EPOCH_END_WINDOW)..];
    let end_f_epoch1 = mean(tail, |l| l.loss.l_f);
    let bias_settles = best_r_epoch1 <= BIAS_SETTLE_FACTOR * final_r;
    let freq_lags = end_f_epoch1 > FREQ_LAG_FACTOR * final_f;
    let pass = bias_settles && freq_lags;
    line(
        "5",
        pass,
        format!(
            "bias loss: epoch-1 min {best_r_epoch1:.3e} vs final-epoch mean {final_r:.3e} \
             (<= {BIAS_SETTLE_FACTOR}x: {bias_settles}); freq loss: end of epoch 1 {end_f_epoch1:.3} vs final {final_f:.3} \
             (> {FREQ_LAG_FACTOR}x: {freq_lags})"
        ),
    );
    assert!(pass);
}

// ----- 6: clutter separation -----

/// Share of static segments where a least-squares fit of DC plus a sinusoid
/// at the known clutter frequency keeps the DC within tolerance.
fn known_frequency_fit_share(sc: &BsScenario) -> f64 {
    let n = sc.spec.segment_frames;
    let w = std::f64::consts::TAU * sc.spec.clutter_frequency_hz;
    let (mut ok, mut total) = (0, 0);
    for k in 0..sc.segment_count() {
        if sc.segment_events[k].is_some() {
            continue;
        }
        let first = k * n;
        let mut ata = [[0.0; 3]; 3];
        let mut atb = [0.0; 3];
        for (l, y) in sc.segment(k).iter().enumerate() {
            let t = (first + l) as f64 / sc.spec.frame_rate_hz;
            let row = [1.0, (w * t).sin(), (w * t).cos()];
            for a in 0..3 {
                atb[a] += row[a] * y;
                for b in 0..3 {
                    ata[a][b] += row[a] * row[b];
                }
            }
        }
        let dc = solve3(ata, atb)[0];
        total += 1;
        ok += usize::from(dc.abs() <= STATIC_TOLERANCE_MM * 1e-3);
    }
    ok as f64 / total as f64
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let m = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= m * a[c][k];
            }
            b[r] -= m * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        x[r] = (b[r] - (r + 1..3).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

#[test]
fn criterion_6a_static_segments_stay_quiet() {
    let r = desk_scenario_report();
    let pass = r.static_within >= STATIC_SHARE;
    line(
        "6(a)",
        pass,
        format!(
            "static frames with |bias| <= {STATIC_TOLERANCE_MM} mm: {:.3} (>= {STATIC_SHARE}) at {} mm clutter",
            r.static_within,
            scenario().spec.clutter_amplitude_mm
        ),
    );
    info("6(a)", format!("ideal window-mean tracker would reach {:.3}", r.static_within_ideal));
    info("6(a)", format!("DC + known 0.41 Hz least-squares fit reaches {:.3}", known_frequency_fit_share(scenario())));
    assert!(pass);
}

#[test]
fn criterion_6b_residual_carries_the_clutter_line() {
    let r = desk_scenario_report();
    let per_segment = r.event_residual_lines_hz.iter().filter(|&&f| (f - CLUTTER_HZ).abs() <= r.segment_bin_hz).count();
    let whole = (r.residual_line_hz - CLUTTER_HZ).abs() <= r.residual_bin_hz;
    let n = r.event_residual_lines_hz.len();
    let pass = n > 0 && per_segment == n && whole;
    line(
        "6(b)",
        pass,
        format!(
            "event segments with residual line at {CLUTTER_HZ} Hz +- {} Hz: {per_segment}/{n}; \
             whole-series residual line {:.4} Hz (bin {:.5} Hz)",
            r.segment_bin_hz, r.residual_line_hz, r.residual_bin_hz
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6c_vibration_estimate_avoids_clutter() {
    let r = desk_scenario_report();
    let bin = LtmConfig::default().freq_resolution_hz;
    let hits = r.event_frequencies_hz.iter().filter(|&&f| (f - CLUTTER_HZ).abs() <= bin).count();
    let pass = hits == 0;
    let low = r.event_frequencies_hz.iter().filter(|&&f| f < 5.0).count();
    line(
        "6(c)",
        pass,
        format!("event estimates at {CLUTTER_HZ} +- {bin} Hz: {hits}/{} (must be 0)", r.event_frequencies_hz.len()),
    );
    info("6(c)", format!("{low} event estimates fall below 5 Hz"));
    assert!(pass);
}

// ----- 7: event metrics machinery -----

#[test]
fn criterion_7_event_counts() {
    let sc = scenario();
    let counts: Vec<usize> = EXPECTED_COUNTS
        .iter()
        .map(|&(thr, _)| count_events(&sc.clean, thr, 0.0, &EventRule::default()).unwrap())
        .collect();
    let pass = counts.iter().zip(EXPECTED_COUNTS).all(|(&got, (_, want))| got == want);
    line(
        "7",
        pass,
        format!("clean-series counts at 0.5/1/2 mm: {counts:?} (expected {:?})", EXPECTED_COUNTS.map(|c| c.1)),
    );
    assert!(pass);
}

// ----- 8: ablation direction -----

#[test]
fn criterion_8_ablation_direction() {
    let sc = scenario();
    let mut results: Vec<(&str, f64, f64)> = Vec::new();
    for name in ["full", "no_lr", "no_lf", "no_ld"] {
        let report = if name == "full" {
            desk_scenario_report().clone()
        } else {
            let loss = LossConfig { flags: ablation_variant(name).unwrap(), ..LossConfig::millimetre() };
            let run = desk_run(loss);
            scenario_report(sc, &ltm_segment_estimates(&run.outcome.params, sc)).unwrap()
        };
        results.push((name, report.recall, report.event_bias_mae_m));
    }
    // Higher recall first, then lower event bias error.
    let mut ranked = results.clone();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.total_cmp(&b.2)));
    let recall = |n: &str| results.iter().find(|r| r.0 == n).unwrap().1;
    let pass = recall("full") >= recall("no_ld") && ranked[0].0 != "no_lr";
    line(
        "8",
        pass,
        format!(
            "ranking {:?}; full recall {:.3} >= no_ld {:.3}; best is {}",
            ranked.iter().map(|r| r.0).collect::<Vec<_>>(),
            recall("full"),
            recall("no_ld"),
            ranked[0].0
        ),
    );
    for (name, rec, mae) in &results {
        info("8", format!("{name:<6} recall {rec:.3}, event bias MAE {:.3} mm", mae * 1e3));
    }
    assert!(pass);
}

// ----- 9: determinism -----

#[test]
fn criterion_9_determinism() {
    let first = metric_file_hash(desk(), desk_scenario_report());
    let rerun = desk_run(TrainConfig::default().loss);
    let sc = scenario();
    let report = scenario_report(sc, &ltm_segment_estimates(&rerun.outcome.params, sc)).unwrap();
    let second = metric_file_hash(&rerun, &report);
    let pass = first == second;
    line("9", pass, format!("metric file sha256 {} vs {}", &first[..16], &second[..16]));
    assert!(pass);
}
