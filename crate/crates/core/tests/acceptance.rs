//! Acceptance suite: one PASS/FAIL line per criterion with its runtime.
//!
//! Run with `cargo test --release --test acceptance` (the test profile is
//! optimized too). The process exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use lngeom::attnet::{grad_check, AttnModel, ModelShape};
use lngeom::cli;
use lngeom::experiments::{
    run_heatmap, run_keyscan_model, run_majority, train_lm, HeatmapConfig, LmConfig,
    MajorityConfig, MajorityOutcome,
};
use lngeom::geometry::{layernorm, ones, project, projection_matrix};
use lngeom::linalg::{dot, max_abs_diff, norm, Mat};
use lngeom::rng::stream;
use lngeom::selectability::{analyze, separating_direction, KeySet, DEFAULT_TOL};
use lngeom::rng::tag;
use lngeom::{Exec, LayerNormVariant};

type Outcome = Result<String, String>;

fn gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn gaussian_keys(rng: &mut impl Rng, n: usize, d: usize) -> KeySet {
    KeySet::from_mat(Mat::from_fn(n, d, |_, _| StandardNormal.sample(&mut *rng))).unwrap()
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c1_decomposition() -> Outcome {
    let mut rng = stream(101, &[1]);
    let (mut orth, mut nrm, mut proj) = (0.0f64, 0.0f64, 0.0f64);
    for d in [2, 4, 8, 16, 64] {
        let p = projection_matrix(d).map_err(err)?;
        let sqrt_d = (d as f64).sqrt();
        for _ in 0..1000 {
            let x = gaussian(&mut rng, d);
            let y = layernorm(&x, LayerNormVariant::FULL).map_err(err)?;
            orth = orth.max(dot(&y, &ones(d)).abs());
            nrm = nrm.max((norm(&y) - sqrt_d).abs());
            proj = proj.max(max_abs_diff(&p.apply(&x).map_err(err)?, &project(&x).map_err(err)?));
        }
    }
    verdict(
        orth < 1e-9 && nrm < 1e-9 && proj < 1e-12,
        format!("max |y.1| = {orth:.2e}, max ||y|-sqrt(d)| = {nrm:.2e}, max |Px-project(x)| = {proj:.2e}"),
    )
}

fn c2_plane_collapse() -> Outcome {
    let mut rng = stream(102, &[1]);
    let mut worst = 0.0f64;
    for d in 2..=16 {
        for _ in 0..100 {
            // Unit vector orthogonal to ones by explicit centering.
            let z = gaussian(&mut rng, d);
            let m = z.iter().sum::<f64>() / d as f64;
            let c: Vec<f64> = z.iter().map(|v| v - m).collect();
            let l = norm(&c);
            let v: Vec<f64> = c.iter().map(|x| x / l).collect();
            let mut alpha: f64 = rng.random_range(-5.0..5.0);
            if alpha.abs() < 1e-3 {
                alpha = 1.0;
            }
            let beta: f64 = rng.random_range(-10.0..10.0);
            let x: Vec<f64> = v.iter().map(|vi| alpha * vi + beta).collect();
            let y = layernorm(&x, LayerNormVariant::FULL).map_err(err)?;
            let want: Vec<f64> = v.iter().map(|vi| alpha.signum() * (d as f64).sqrt() * vi).collect();
            worst = worst.max(max_abs_diff(&y, &want));
        }
    }
    verdict(worst < 1e-9, format!("max deviation {worst:.2e} over d = 2..16"))
}

fn c3_theorem_soundness() -> Outcome {
    let mut rng = stream(103, &[1]);
    let (mut unsel, mut sel, mut bad) = (0usize, 0usize, Vec::new());
    for set in 0..100 {
        let keys = gaussian_keys(&mut rng, 20, 4);
        let report = analyze(&keys, DEFAULT_TOL).map_err(err)?;
        let dirs: Vec<Vec<f64>> = (0..10_000).map(|_| gaussian(&mut rng, 4)).collect();
        for i in 0..keys.n() {
            if report.verdicts[i] {
                sel += 1;
                match separating_direction(&keys, i).map_err(err)? {
                    Some(s) => {
                        let own = dot(&s.direction, keys.key(i));
                        let best_other = (0..keys.n())
                            .filter(|&j| j != i)
                            .map(|j| dot(&s.direction, keys.key(j)))
                            .fold(f64::NEG_INFINITY, f64::max);
                        if !(own - best_other > 0.0) {
                            bad.push(format!("set {set} key {i}: direction does not separate"));
                        }
                    }
                    None => bad.push(format!("set {set} key {i}: no separating direction")),
                }
            } else {
                unsel += 1;
                for v in &dirs {
                    let own = dot(v, keys.key(i));
                    let best_other = (0..keys.n())
                        .filter(|&j| j != i)
                        .map(|j| dot(v, keys.key(j)))
                        .fold(f64::NEG_INFINITY, f64::max);
                    if best_other - own < -1e-9 {
                        bad.push(format!("set {set} key {i}: wins a random direction"));
                        break;
                    }
                }
            }
        }
    }
    verdict(
        bad.is_empty() && unsel > 0,
        format!(
            "{unsel} unselectable keys lose on all 10000 directions, {sel} selectable keys have verified separators; {} violations{}",
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    )
}

/// Strict vertices of the planar convex hull (Andrew's monotone chain;
/// collinear boundary points are dropped).
fn hull_vertices(points: &[[f64; 2]]) -> Vec<bool> {
    let n = points.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap());
    idx.dedup_by(|a, b| points[*a] == points[*b]);
    let cross = |o: usize, a: usize, b: usize| {
        let (o, a, b) = (points[o], points[a], points[b]);
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut on_hull = vec![false; n];
    if idx.len() <= 2 {
        for &i in &idx {
            on_hull[i] = true;
        }
    } else {
        let mut hull: Vec<usize> = Vec::new();
        for pass in 0..2 {
            let start = hull.len();
            let order: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
                Box::new(idx.iter())
            } else {
                Box::new(idx.iter().rev())
            };
            for &p in order {
                while hull.len() >= start + 2
                    && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
                {
                    hull.pop();
                }
                hull.push(p);
            }
            hull.pop();
        }
        for i in hull {
            on_hull[i] = true;
        }
    }
    // Exact duplicates are never selectable.
    for i in 0..n {
        if (0..n).any(|j| j != i && points[j] == points[i]) {
            on_hull[i] = false;
        }
    }
    on_hull
}

fn c4_planar_oracle() -> Outcome {
    let mut disagreements = 0usize;
    let mut sets = 0usize;
    let mut first = None;
    for seed in 0..100u64 {
        let mut rng = stream(104, &[seed]);
        for n in 3..=200 {
            let keys = gaussian_keys(&mut rng, n, 2);
            let pts: Vec<[f64; 2]> = keys.iter().map(|k| [k[0], k[1]]).collect();
            let oracle = hull_vertices(&pts);
            let report = analyze(&keys, DEFAULT_TOL).map_err(err)?;
            let diff = (0..n).filter(|&i| report.verdicts[i] != oracle[i]).count();
            if diff > 0 && first.is_none() {
                first = Some(format!("seed {seed}, n {n}"));
            }
            disagreements += diff;
            sets += 1;
        }
    }
    verdict(
        disagreements == 0,
        format!(
            "{sets} key sets, {disagreements} disagreements with the monotone-chain hull{}",
            first.map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn c5_heatmaps() -> Outcome {
    let ln_cfg = HeatmapConfig {
        n_values: (2..=128).collect(),
        d_values: (2..=10).collect(),
        trials: 100,
        master_seed: 105,
        layernorm_only: true,
    };
    let ln = run_heatmap(&ln_cfg, true, Exec::Parallel).map_err(err)?;
    let ln_max = ln.cells.iter().copied().fold(0.0, f64::max);
    let raw_cfg = HeatmapConfig {
        n_values: vec![4, 16, 64, 100, 256],
        d_values: vec![2],
        trials: 100,
        master_seed: 105,
        layernorm_only: false,
    };
    let raw = run_heatmap(&raw_cfg, false, Exec::Parallel).map_err(err)?;
    let trend: Vec<f64> = [4, 16, 64, 256].iter().map(|&n| raw.cell(n, 2).unwrap()).collect();
    let monotone = trend.windows(2).all(|w| w[0] <= w[1]);
    let at_100 = raw.cell(100, 2).unwrap();
    // Cross-check the n = 100 cell with the exact planar hull on the same draws.
    let mut oracle_total = 0.0;
    for trial in 0..100u64 {
        let mut rng = stream(105, &[tag::SWEEP, 100, 2, trial]);
        let pts: Vec<[f64; 2]> = (0..100)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let on = hull_vertices(&pts);
        oracle_total += on.iter().filter(|&&v| !v).count() as f64 / 100.0;
    }
    let oracle_100 = oracle_total / 100.0;
    verdict(
        ln_max == 0.0 && monotone && at_100 > 0.5 && (oracle_100 - at_100).abs() < 1e-12,
        format!(
            "layernormed grid max {ln_max} over {} cells; raw d=2 at n=4,16,64,256: {trend:.4?}; n=100: {at_100:.4} (hull oracle {oracle_100:.4})",
            ln.cells.len()
        ),
    )
}

fn c6_gradients() -> Outcome {
    let variants = [
        LayerNormVariant::FULL,
        LayerNormVariant::ProjectionOnly,
        LayerNormVariant::SCALING_ONLY,
        LayerNormVariant::Identity,
    ];
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for m in 0..20u64 {
        let mut rng = stream(106, &[m]);
        let variant = variants[m as usize % 4];
        // In d = 2 Full LN is locally constant, so its input gradients are
        // exactly zero and finite differences only see rounding noise.
        let d = rng.random_range(3..=6);
        let vocab = rng.random_range(2..=6);
        let k_out = rng.random_range(2..=5);
        let len = rng.random_range(1..=6);
        let shape = ModelShape {
            vocab,
            d,
            k_out,
            max_len: (m % 3 == 0).then_some(len),
        };
        let model = AttnModel::init(shape, variant, m % 2 == 1, 0.5, &mut rng).map_err(err)?;
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..k_out)).collect();
        let res = grad_check(&model, &tokens, &labels, 1e-5).map_err(err)?;
        if res.max_error() > worst {
            worst = res.max_error();
            worst_at = format!("model {m} ({})", variant.name());
        }
    }
    verdict(
        worst < 1e-4,
        format!("20 models, max relative error {worst:.2e} at {worst_at}"),
    )
}

fn majority_outcome(cache: &mut Option<MajorityOutcome>) -> Result<&MajorityOutcome, String> {
    if cache.is_none() {
        *cache = Some(run_majority(&MajorityConfig::default(), Exec::Parallel).map_err(err)?);
    }
    Ok(cache.as_ref().unwrap())
}

fn c7_majority(cache: &mut Option<MajorityOutcome>) -> Outcome {
    let cfg = MajorityConfig::default();
    let out = majority_outcome(cache)?;
    let full = LayerNormVariant::FULL.name();
    let scal = LayerNormVariant::SCALING_ONLY.name();
    let (mut faster, mut accurate) = (0, 0);
    let mut rows = Vec::new();
    for s in 0..cfg.n_seeds {
        let f = out.summary.run(full, s).ok_or("missing full run")?;
        let g = out.summary.run(scal, s).ok_or("missing scaling-only run")?;
        let fs = f.steps_to_threshold.unwrap_or(usize::MAX);
        let gs = g.steps_to_threshold.unwrap_or(usize::MAX);
        if fs < gs {
            faster += 1;
        }
        if f.steps_to_accuracy.is_some() {
            accurate += 1;
        }
        rows.push(format!(
            "seed {s}: {:?} vs {:?}",
            f.steps_to_threshold, g.steps_to_threshold
        ));
    }
    verdict(
        faster >= 4 && accurate >= 4,
        format!(
            "Full faster to loss <= {} in {faster}/5, accuracy >= {} in {accurate}/5 [{}]",
            cfg.loss_threshold,
            cfg.accuracy_threshold,
            rows.join("; ")
        ),
    )
}

fn c8_angles(cache: &mut Option<MajorityOutcome>) -> Outcome {
    let cfg = MajorityConfig::default();
    let out = majority_outcome(cache)?;
    let full = LayerNormVariant::FULL.name();
    let scal = LayerNormVariant::SCALING_ONLY.name();
    let (mut decreased, mut below) = (0, 0);
    let mut rows = Vec::new();
    for s in 0..cfg.n_seeds {
        let f = out.summary.run(full, s).ok_or("missing full run")?;
        let g = out.summary.run(scal, s).ok_or("missing scaling-only run")?;
        if f.final_angle_deg < f.initial_angle_deg {
            decreased += 1;
        }
        if f.final_angle_deg < g.final_angle_deg {
            below += 1;
        }
        rows.push(format!(
            "seed {s}: full {:.2}->{:.2}, scaling-only final {:.2}",
            f.initial_angle_deg, f.final_angle_deg, g.final_angle_deg
        ));
    }
    verdict(
        decreased >= 4 && below >= 4,
        format!(
            "Full angle decreased in {decreased}/5, below scaling-only in {below}/5 [{}]",
            rows.join("; ")
        ),
    )
}

fn c9_keyscan() -> Outcome {
    let cfg = LmConfig::default();
    let run = train_lm(&cfg, Exec::Parallel).map_err(err)?;
    let sequences: Vec<Vec<usize>> = run.test.iter().map(|e| e.tokens.clone()).collect();
    let report = run_keyscan_model(&run.model, &sequences, "lm", Exec::Parallel).map_err(err)?;
    let layer = &report.layers[0];
    let last = run.records.last().ok_or("no records")?;
    verdict(
        layer.fraction_unselectable_before_scaling > 0.0 && layer.fraction_after_full_ln == 0.0,
        format!(
            "{} model (test loss {:.3}): before scaling {:.4}, after Full LN {:.4} over {} sequences",
            cfg.variant.name(),
            last.test_loss,
            layer.fraction_unselectable_before_scaling,
            layer.fraction_after_full_ln,
            layer.sequences
        ),
    )
}

fn read_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name != cli::MANIFEST_NAME {
            files.insert(name, fs::read(&path).unwrap());
        }
    }
    files
}

fn cli_quiet(args: &[String]) -> i32 {
    let mut sink_out = Vec::new();
    let mut sink_err = Vec::new();
    let argv = std::iter::once("lngeom".to_string()).chain(args.iter().cloned());
    cli::run_with(argv, &mut sink_out, &mut sink_err)
}

fn c10_reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let root = tmp.path();
    let keys = root.join("keys.csv");
    fs::write(&keys, "# d=3\n1,0,3\n3,2,-1\n2,1,1\n0,5,0\n-1,-1,-1\n").map_err(err)?;
    let keys = keys.to_string_lossy().into_owned();
    let model_dir = root.join("lm-base");
    let model_dir_s = model_dir.to_string_lossy().into_owned();
    let base: Vec<(&str, Vec<String>)> = vec![
        ("geometry-demo", vec!["--d".into(), "16".into(), "--seed".into(), "3".into()]),
        ("selectable", vec!["--input".into(), keys.clone()]),
        (
            "heatmap",
            vec!["--n".into(), "2..40".into(), "--d".into(), "2,3,5".into(), "--trials".into(), "5".into(), "--seed".into(), "7".into()],
        ),
        (
            "majority",
            vec!["--steps".into(), "40".into(), "--seeds".into(), "2".into(), "--batch-size".into(), "32".into(), "--seq-len".into(), "8".into()],
        ),
        (
            "lm-train",
            vec!["--steps".into(), "30".into(), "--seq-len".into(), "12".into(), "--vocab".into(), "6".into()],
        ),
        ("keyscan", vec!["--model".into(), format!("{model_dir_s}/model.json"), "--sequences".into(), "8".into()]),
    ];
    // Keyscan needs a checkpoint.
    let code = cli_quiet(&[
        "lm-train".into(), "--steps".into(), "20".into(), "--seq-len".into(), "12".into(),
        "--vocab".into(), "6".into(), "--out".into(), model_dir_s.clone(), "--threads".into(), "1".into(),
    ]);
    if code != 0 {
        return Err(format!("lm-train for the keyscan checkpoint exited {code}"));
    }
    let mut checked = Vec::new();
    for (sub, args) in base {
        let mut outputs = Vec::new();
        for (tag, threads) in [("t1", "1"), ("t4", "4"), ("manifest", "2")] {
            let dir = root.join(format!("{sub}-{tag}"));
            let out_path = if sub == "selectable" {
                dir.join("report.json")
            } else {
                dir.clone()
            };
            let mut argv = vec![sub.to_string()];
            if tag == "manifest" {
                // Re-run from the first run's manifest alone.
                argv.push("--config".into());
                argv.push(root.join(format!("{sub}-t1")).join(cli::MANIFEST_NAME).to_string_lossy().into_owned());
            } else {
                argv.extend(args.iter().cloned());
            }
            argv.extend([
                "--out".into(),
                out_path.to_string_lossy().into_owned(),
                "--threads".into(),
                threads.into(),
            ]);
            let code = cli_quiet(&argv);
            if code != 0 {
                return Err(format!("{sub} ({tag}) exited {code}"));
            }
            outputs.push(read_outputs(&dir));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] || outputs[0] != outputs[2] {
            return Err(format!("{sub}: outputs differ across threads or manifest re-run"));
        }
        checked.push(format!("{sub} ({} files)", outputs[0].len()));
    }
    Ok(format!(
        "byte-identical at --threads 1/4 and from the manifest: {}",
        checked.join(", ")
    ))
}

fn main() -> ExitCode {
    let mut cache = None;
    let criteria: Vec<(&str, Duration, Box<dyn FnMut(&mut Option<MajorityOutcome>) -> Outcome>)> = vec![
        ("1 decomposition identities", Duration::from_secs(1), Box::new(|_| c1_decomposition())),
        ("2 plane collapse", Duration::from_secs(1), Box::new(|_| c2_plane_collapse())),
        ("3 hull verdict soundness", Duration::from_secs(30), Box::new(|_| c3_theorem_soundness())),
        ("4 planar oracle equivalence", Duration::from_secs(30), Box::new(|_| c4_planar_oracle())),
        ("5 heatmaps", Duration::from_secs(600), Box::new(|_| c5_heatmaps())),
        ("6 gradient check", Duration::from_secs(60), Box::new(|_| c6_gradients())),
        ("7 majority convergence", Duration::from_secs(900), Box::new(c7_majority)),
        ("8 angle dynamics", Duration::from_secs(900), Box::new(c8_angles)),
        ("9 keyscan", Duration::from_secs(900), Box::new(|_| c9_keyscan())),
        ("10 reproducibility", Duration::from_secs(900), Box::new(|_| c10_reproducibility())),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, mut f) in criteria {
        let number = name.split(' ').next().unwrap();
        if !only.is_empty() && !only.iter().any(|o| o == number) {
            continue;
        }
        let start = Instant::now();
        let result = f(&mut cache);
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let (ok, detail) = match result {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.2}s, limit {}s{}]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
