//! Acceptance criteria, run in order in one test so that wall-clock budgets
//! are not shared with concurrently running tests. Prints one PASS/FAIL
//! line per criterion; the fusion ordering of the ablation grid is
//! reported as INFO and not gated.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use s2c::dataio::RunConfig;
use s2c::hcaa::FusionMode;
use s2c::metrics::{
    diagonal_w2, fgd, frechet_distance, mixture_transport_cost, smoothness, wgd, GaussianStats, GmmComponent,
    GmmModel,
};
use s2c::networks::{DualModel, GestureSequence, Hand, ModelConfig, PositionSequence};
use s2c::numkit::{RngStream, Tensor};
use s2c::pipeline::{self, ABLATION_CELLS};
use s2c::sampler::{run_reverse, SamplerState, ZeroVelocity};
use s2c::schedule::DiffusionSchedule;
use s2c::synthdata::{make_dataset, DataParams, Dataset, Split};
use s2c::verify;

/// Step budget for each ablation cell's motion stage.
const GRID_MOTION_STEPS: &str = "200";
/// Test clips sampled and scored per ablation cell.
const GRID_EVAL_CLIPS: &str = "32";
const GRID_SEEDS: [u64; 3] = [7, 8, 9];

/// Writes past the harness's output capture so the verdicts show up in a
/// plain `cargo test` run.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

struct Ledger {
    lines: Vec<String>,
    failed: Vec<String>,
}

impl Ledger {
    fn record(&mut self, id: &str, name: &str, passed: bool, detail: String) {
        let line = format!("[{}] {id} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        emit(&line);
        self.lines.push(line);
        if !passed {
            self.failed.push(format!("{id} {name}"));
        }
    }

    fn info(&mut self, id: &str, name: &str, detail: String) {
        let line = format!("[INFO] {id} {name}: {detail}");
        emit(&line);
        self.lines.push(line);
    }
}

fn round_trip(ledger: &mut Ledger) {
    let start = Instant::now();
    let sched = DiffusionSchedule::standard();
    assert_eq!(sched.steps(), 1000);
    let mut rng = RngStream::new(2024, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let x0 = Tensor::scalar(3.0 * rng.normal());
        let eps = Tensor::scalar(rng.normal());
        let t = 1 + rng.below(1000) as usize;
        let xt = sched.forward_sample(&x0, t, &eps);
        let v = sched.v_target(&x0, &eps, t);
        worst = worst.max((sched.recover_x0(&xt, &v, t).item() - x0.item()).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ledger.record(
        "1",
        "algebraic identity",
        worst <= 1e-12 && secs < 5.0,
        format!("max |x0 error| {worst:.2e} (limit 1e-12) over 1e4 triples, {secs:.2} s (limit 5 s)"),
    );
}

fn gradients(ledger: &mut Ledger) {
    let start = Instant::now();
    let full = verify::stage_two_gradient_error(false, 4);
    let per_hand = verify::stage_two_gradient_error(true, 4);
    let secs = start.elapsed().as_secs_f64();
    ledger.record(
        "2",
        "gradient fidelity",
        full < 1e-4 && per_hand < 1e-4 && secs < 120.0,
        format!(
            "max rel err {full:.2e} full gradient, {per_hand:.2e} per hand under stop-gradient (limit 1e-4), {secs:.1} s (limit 120 s)"
        ),
    );
}

fn sampler_statistics(ledger: &mut Ledger) {
    let start = Instant::now();
    let sched = DiffusionSchedule::linear(200, 1e-4, 0.02).unwrap();
    let runs = 10_000;
    let state = SamplerState::start(&[runs], 200, (31, 32), true);
    let [x, _] = run_reverse(&ZeroVelocity, &sched, state).unwrap();
    let mean = x.sum() / runs as f64;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / runs as f64;
    let secs = start.elapsed().as_secs_f64();
    ledger.record(
        "3",
        "sampler statistics",
        mean.abs() < 0.05 && (var - 1.0).abs() < 0.07 && secs < 300.0,
        format!("mean {mean:.4} (|.| < 0.05), variance {var:.4} (|v - 1| < 0.07), {secs:.2} s"),
    );
}

fn hcaa_contracts(ledger: &mut Ledger) {
    let init = verify::lambda_zero_init_error();
    let common = verify::common_mode_residual();
    let reduce = verify::zero_lambda_deviation();
    ledger.record(
        "4",
        "HCAA contracts",
        init == 0.0 && common < 1e-6 && reduce < 1e-12,
        format!("lambda - lambda_init = {init:e}, common-mode max {common:.2e} (< 1e-6), zero-lambda vs self-attention {reduce:.2e}"),
    );
}

fn metric_oracles(ledger: &mut Ledger) {
    let one_d = |m: f64, var: f64| {
        GaussianStats::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, var)).unwrap()
    };
    let fd = frechet_distance(&one_d(0.0, 1.0), &one_d(1.0, 1.0)).unwrap();
    let fd_err = (fd - ((0.0f64 - 1.0).powi(2) + (1.0f64 - 1.0).powi(2))).abs();

    // K = 1: closed-form W2² of the two sets' pooled moments.
    let mut rng = RngStream::new(8, 8);
    let set = |rng: &mut RngStream, shift: f64, scale: f64| -> Vec<GestureSequence> {
        (0..12).map(|_| GestureSequence::new(Tensor::from_fn(&[16, 2, 3], |_| shift + scale * rng.normal())).unwrap()).collect()
    };
    let (a, b) = (set(&mut rng, 0.0, 1.0), set(&mut rng, 0.4, 0.6));
    let moments = |s: &[GestureSequence]| {
        let rows: Vec<Vec<f64>> = s.iter().flat_map(|g| {
            let f = g.flat();
            (0..f.rows()).map(move |r| f.row(r).to_vec()).collect::<Vec<_>>()
        }).collect();
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let var: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).collect();
        (mean, var)
    };
    let ((ma, va), (mb, vb)) = (moments(&a), moments(&b));
    let closed: f64 = (0..ma.len()).map(|k| (ma[k] - mb[k]).powi(2) + (va[k].sqrt() - vb[k].sqrt()).powi(2)).sum();
    let k1_err = (wgd(&a, &b, 1, 0).unwrap() - closed).abs();

    // K = 2: every vertex of the 2x2 transport polytope.
    let comp = |w: f64, m: f64, v: f64| GmmComponent { weight: w, mean: vec![m], variance: vec![v] };
    let ga = GmmModel { components: vec![comp(0.35, -2.0, 0.3), comp(0.65, 5.0, 1.5)] };
    let gb = GmmModel { components: vec![comp(0.65, -2.0, 0.3), comp(0.35, 5.0, 1.5)] };
    let c = |i: usize, j: usize| diagonal_w2(&ga.components[i], &gb.components[j]);
    let vertices = [0.0f64, 0.35];
    let enumerated = vertices
        .iter()
        .map(|&x| x * c(0, 0) + (0.35 - x) * c(0, 1) + (0.65 - x) * c(1, 0) + (x - 0.0) * c(1, 1))
        .fold(f64::INFINITY, f64::min);
    let k2_err = (mixture_transport_cost(&ga, &gb).unwrap() - enumerated).abs();

    let moving = GestureSequence::new(Tensor::from_fn(&[20, 2, 3], |i| ((i / 6) as f64 * 0.5).cos() * 0.8)).unwrap();
    let still = GestureSequence::new(Tensor::full(&[20, 2, 3], -0.1)).unwrap();
    let smooth = smoothness(&still, &moving).unwrap();

    ledger.record(
        "5",
        "metric oracles",
        fd_err <= 1e-9 && k1_err <= 1e-6 && k2_err <= 1e-9 && smooth == 1.0,
        format!("FD err {fd_err:.1e} (1e-9), WGD K=1 err {k1_err:.1e} (1e-6), WGD K=2 err {k2_err:.1e} (1e-9), static smoothness {smooth}"),
    );
}

fn positions_pd(model: &DualModel, data: &Dataset) -> f64 {
    let clips = data.split(Split::Test);
    let pred: Vec<[PositionSequence; 2]> =
        clips.iter().map(|c| Hand::BOTH.map(|h| model.predict_positions(h, &c.features))).collect();
    let gt: Vec<[PositionSequence; 2]> = clips.iter().map(|c| c.positions.clone()).collect();
    s2c::metrics::pd(&pred, &gt).unwrap()
}

fn hand_fgd(samples: &pipeline::SampleSet, data: &Dataset) -> [f64; 2] {
    [0, 1].map(|h| {
        let pred: Vec<GestureSequence> = samples.generated.iter().map(|g| g.gestures[h].clone()).collect();
        let gt: Vec<GestureSequence> = samples.clip_index.iter().map(|&i| data.clips[i].gestures[h].clone()).collect();
        fgd(&pred, &gt).unwrap()
    })
}

/// Returns the reference dataset and its embedder for the ablation grid.
fn desk_regression(ledger: &mut Ledger) -> (RunConfig, Dataset, s2c::metrics::MotionEmbedder) {
    let start = Instant::now();
    let cfg = RunConfig::default();
    assert_eq!((cfg.usize("clips"), cfg.usize("frames"), cfg.usize("joints")), (512, 32, 6));
    assert_eq!((cfg.usize("diffusion-steps"), cfg.u64("seed")), (200, 7));
    let data = make_dataset(&DataParams::from_run(&cfg));
    let embedder = pipeline::train_embedder(&cfg, &data).unwrap();
    let untrained = DualModel::new(&ModelConfig::from_run(&cfg).unwrap(), cfg.u64("seed"));
    let (mut model, _) = pipeline::train_position(&cfg, &data).unwrap();
    let (pd_before, pd_after) = (positions_pd(&untrained, &data), positions_pd(&model, &data));
    pipeline::train_motion(&cfg, &mut model, &data).unwrap();
    let test = pipeline::eval_indices(&cfg, &data, Split::Test);
    let trained_samples = pipeline::sample_clips(&cfg, &model, &data, &test, |_, _| {}).unwrap();
    let report = pipeline::evaluate(&cfg, &trained_samples, &data, &embedder).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let untrained_samples = pipeline::sample_clips(&cfg, &untrained, &data, &test, |_, _| {}).unwrap();
    let (after, before) = (hand_fgd(&trained_samples, &data), hand_fgd(&untrained_samples, &data));
    let passed = pd_after <= 0.5 * pd_before
        && after[0] <= 0.5 * before[0]
        && after[1] <= 0.5 * before[1]
        && report.all_finite()
        && secs < 45.0 * 60.0;
    ledger.record(
        "6",
        "desk-scale regression",
        passed,
        format!(
            "PD {pd_after:.4} vs untrained {pd_before:.4}; FGD L {:.4} vs {:.4}, R {:.4} vs {:.4} (ratio <= 0.5); \
             FID {:.4}; train+eval {:.1} min (limit 45)",
            after[0],
            before[0],
            after[1],
            before[1],
            report.get("fid", "both").unwrap(),
            secs / 60.0
        ),
    );
    (cfg, data, embedder)
}

fn ablation_grid(ledger: &mut Ledger, cfg: &RunConfig, data: &Dataset, embedder: &s2c::metrics::MotionEmbedder) {
    let start = Instant::now();
    let base = cfg.clone().with("motion-steps", GRID_MOTION_STEPS).unwrap().with("eval-clips", GRID_EVAL_CLIPS).unwrap();
    let table = pipeline::ablate(&base, data, embedder, &ABLATION_CELLS, &GRID_SEEDS, |row| {
        println!("    {} seed {} [{}] {}", row.cell.label(), row.seed, row.config_hash, if row.outcome.is_ok() { "ok" } else { "failed" });
    })
    .unwrap();
    // Reproduce one cell from scratch, stage one included.
    let probe = ABLATION_CELLS[2];
    let probe_cfg = probe.apply(&base.clone().with("seed", "7").unwrap()).unwrap();
    let rerun = pipeline::run_cell(&probe_cfg, data, embedder, None).unwrap();
    let original = table.rows.iter().find(|r| r.cell == probe && r.seed == 7).unwrap();
    let reproducible = original.config_hash == probe_cfg.hash_hex() && original.outcome.as_ref().ok() == Some(&rerun);
    let secs = start.elapsed().as_secs_f64();
    ledger.record(
        "7",
        "ablation grid",
        table.rows.len() == 18 && table.all_finite() && reproducible,
        format!(
            "{} cells finite, cell {} reproduced bitwise under hash {}, {:.1} min",
            table.rows.len(),
            probe.label(),
            original.config_hash,
            secs / 60.0
        ),
    );
    let ordering: Vec<String> =
        table.fusion_ordering().iter().map(|(m, fid)| format!("{} {fid:.4}", m.as_str())).collect();
    let best = table.fusion_ordering().first().map(|(m, _)| *m);
    ledger.info(
        "7",
        "fusion ordering by mean FID",
        format!("{} (HCAA best: {})", ordering.join(" < "), best == Some(FusionMode::Hcaa)),
    );
    for line in table.summary_csv().lines() {
        println!("    {line}");
    }
}

fn determinism(ledger: &mut Ledger) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default()
        .with("position-steps", "20")
        .unwrap()
        .with("motion-steps", "5")
        .unwrap()
        .with("embedder-steps", "10")
        .unwrap()
        .with("eval-clips", "2")
        .unwrap();
    let run = |tag: &str| -> Vec<Vec<u8>> {
        let root = dir.path().join(tag);
        let data = pipeline::gen_data(&cfg, &root.join("data")).unwrap();
        let (mut model, _) = pipeline::train_position(&cfg, &data).unwrap();
        model.save(&root.join("position.s2c")).unwrap();
        pipeline::train_motion(&cfg, &mut model, &data).unwrap();
        model.save(&root.join("model.s2c")).unwrap();
        let idx = pipeline::eval_indices(&cfg, &data, Split::Test);
        pipeline::sample_clips(&cfg, &model, &data, &idx, |_, _| {}).unwrap().write(&root.join("samples.s2c")).unwrap();
        ["data/dataset.s2c", "data/embedder.s2c", "position.s2c", "model.s2c", "samples.s2c"]
            .iter()
            .map(|f| std::fs::read(root.join(f)).unwrap())
            .collect()
    };
    let (a, b) = (run("a"), run("b"));
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    ledger.record(
        "8",
        "determinism",
        same == a.len(),
        format!("{same}/{} containers bitwise identical across reruns (dataset, embedder, checkpoints, samples)", a.len()),
    );
}

#[test]
fn acceptance() {
    let mut ledger = Ledger { lines: Vec::new(), failed: Vec::new() };
    round_trip(&mut ledger);
    gradients(&mut ledger);
    sampler_statistics(&mut ledger);
    hcaa_contracts(&mut ledger);
    metric_oracles(&mut ledger);
    determinism(&mut ledger);
    let (cfg, data, embedder) = desk_regression(&mut ledger);
    ablation_grid(&mut ledger, &cfg, &data, &embedder);
    emit("---- acceptance summary ----");
    for l in &ledger.lines {
        emit(l);
    }
    assert!(ledger.failed.is_empty(), "failed criteria: {:?}", ledger.failed);
}
