//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ctxvad::autoencoder::{ae_init, patches_to_batch, AutoencoderSpec, AutoencoderState};
use ctxvad::data::bundle::{ModelBundle, TENSORS_FILE};
use ctxvad::data::{
    decode_flo, decode_pgm_mask, decode_ppm, encode_flo, encode_pgm_mask, encode_ppm,
    parse_detections, parse_frame_annotations, write_detections, ImagePatch,
};
use ctxvad::eval::{roc_auc, run_experiment, ExperimentName};
use ctxvad::features::first_order_stats;
use ctxvad::inference::{
    classify_object, frame_anomaly_score, kmeans_fit_with, svm_train, Kernel, KMeansConfig,
    Verdict,
};
use ctxvad::inference::svm::{class_bounds, smo_solve, KernelMatrix, SolverParams, SvmParams};
use ctxvad::pipeline::{prepare, score_rows, Prepared};
use ctxvad::rng::Rng64;
use ctxvad::stages::{
    experiment_preset, load_scores_dir, run_pipeline, save_scores, synthesize_benchmark,
    PipelineConfig, Stage,
};
use ctxvad::Error;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "auc-oracle", limit: Some(Duration::from_secs(5)), run: auc_oracle },
        Criterion { id: 2, name: "svm-qp", limit: Some(Duration::from_secs(30)), run: svm_qp },
        Criterion { id: 3, name: "kmeans-exhaustive", limit: Some(Duration::from_secs(10)), run: kmeans_exhaustive },
        Criterion { id: 4, name: "ae-gradient-check", limit: Some(Duration::from_secs(60)), run: ae_gradients },
        Criterion { id: 5, name: "first-order-stats", limit: None, run: stats_oracle },
        Criterion { id: 6, name: "context-ablation", limit: Some(Duration::from_secs(600)), run: context_ablation },
        Criterion { id: 7, name: "fewshot-ordering", limit: Some(Duration::from_secs(600)), run: fewshot_ordering },
        Criterion { id: 8, name: "decision-rule-grid", limit: None, run: decision_grid },
        Criterion { id: 9, name: "determinism", limit: None, run: determinism },
        Criterion { id: 10, name: "format-conformance", limit: None, run: formats },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!(
                "took {:.1} s, limit {} s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            )),
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} {:>2} {:<20} {detail} [{:.2} s]",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn auc_oracle() -> Outcome {
    let mut rng = Rng64::new(101);
    let mut worst: f64 = 0.0;
    for inst in 0..200 {
        let n = 2 + rng.below(199);
        // coarse grids force ties on some instances
        let levels = [3usize, 10, 1000, 0][inst % 4];
        let mut labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.3).collect();
        labels[0] = true;
        labels[1] = false;
        rng.shuffle(&mut labels);
        let scores: Vec<f64> = (0..n)
            .map(|_| match levels {
                0 => rng.uniform(),
                l => rng.below(l) as f64 / l as f64,
            })
            .collect();
        let got = roc_auc(&scores, &labels).map_err(err)?.auc;
        let want = pairwise_auc(&scores, &labels);
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-9, || format!("max |auc - oracle| = {worst:e}"))?;
    Ok(format!("200 instances, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

/// Euclidean projection onto {a : yᵀa = 0, 0 ≤ aᵢ ≤ uᵢ}. The map
/// λ ↦ Σ yᵢ·clip(vᵢ − λyᵢ) is nonincreasing, so bisection finds the root.
fn project(v: &[f64], y: &[f64], u: &[f64]) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .zip(u)
            .map(|((&vi, &yi), &ui)| (vi - lam * yi).clamp(0.0, ui))
            .collect()
    };
    let g = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + u.iter().fold(0.0, |m: f64, &x| m.max(x)) + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

fn dual_objective(q: &[Vec<f64>], a: &[f64]) -> f64 {
    let n = a.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * q[i][j] * a[j];
        }
    }
    0.5 * quad - a.iter().sum::<f64>()
}

/// Accelerated projected gradient on the dual QP.
fn qp_oracle(q: &[Vec<f64>], y: &[f64], u: &[f64]) -> Vec<f64> {
    let n = y.len();
    let lipschitz = q.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let step = 1.0 / lipschitz;
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t: f64 = 1.0;
    for _ in 0..20_000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * z[j]).sum::<f64>() - 1.0)
            .collect();
        let v: Vec<f64> = z.iter().zip(&grad).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&v, y, u);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&a)
            .map(|(n, o)| n + (t - 1.0) / t_next * (n - o))
            .collect();
        a = next;
        t = t_next;
    }
    a
}

/// Largest violating-pair gap m(a) − M(a) of the KKT conditions.
fn kkt_gap(q: &[Vec<f64>], y: &[f64], u: &[f64], a: &[f64]) -> f64 {
    let n = a.len();
    let eps = 1e-12;
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    for i in 0..n {
        let g = (0..n).map(|j| q[i][j] * a[j]).sum::<f64>() - 1.0;
        let v = -y[i] * g;
        let in_up = if y[i] > 0.0 { a[i] < u[i] - eps } else { a[i] > eps };
        let in_low = if y[i] > 0.0 { a[i] > eps } else { a[i] < u[i] - eps };
        if in_up {
            up = up.max(v);
        }
        if in_low {
            low = low.min(v);
        }
    }
    (up - low).max(0.0)
}

fn svm_qp() -> Outcome {
    let mut rng = Rng64::new(202);
    let mut worst_obj: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for inst in 0..50 {
        let n = 4 + rng.below(17);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)]).collect();
        let mut labels: Vec<bool> = pts.iter().map(|p| p[0] + 0.5 * p[1] + rng.range(-1.0, 1.0) > 0.0).collect();
        labels[0] = true;
        labels[1] = false;
        let kernel = if inst % 2 == 0 {
            Kernel::Linear
        } else {
            Kernel::Rbf { gamma: rng.range(0.2, 2.0) }
        };
        let c = rng.range(0.1, 10.0);
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let u = class_bounds(&labels, c).map_err(err)?;
        let kij = |i: usize, j: usize| match kernel {
            Kernel::Linear => pts[i][0] * pts[j][0] + pts[i][1] * pts[j][1],
            Kernel::Rbf { gamma } => {
                let d = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
                (-gamma * d).exp()
            }
        };
        let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * kij(i, j)).collect()).collect();

        let km = KernelMatrix::compute(&kernel, &pts);
        let sol = smo_solve(&km, &y, &u, &SolverParams::default()).map_err(err)?;
        let feasible = sol.alpha.iter().zip(&u).all(|(&a, &ui)| (-1e-12..=ui + 1e-12).contains(&a))
            && sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum::<f64>().abs() < 1e-9;
        ensure(feasible, || format!("instance {inst}: SMO solution infeasible"))?;

        let oracle = qp_oracle(&q, &y, &u);
        let smo_obj = dual_objective(&q, &sol.alpha);
        let ref_obj = dual_objective(&q, &oracle);
        worst_obj = worst_obj.max((smo_obj - ref_obj).abs());
        worst_kkt = worst_kkt.max(kkt_gap(&q, &y, &u, &sol.alpha));
        ensure((sol.objective - smo_obj).abs() < 1e-9, || {
            format!("instance {inst}: reported objective {} vs recomputed {smo_obj}", sol.objective)
        })?;
    }
    ensure(worst_obj <= 1e-3, || format!("objective gap {worst_obj:e}"))?;
    ensure(worst_kkt <= 1e-3, || format!("KKT violation {worst_kkt:e}"))?;

    let pos = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
    let neg = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let svm = svm_train(&pos, &neg, &SvmParams { kernel: Kernel::Rbf { gamma: 1.0 }, c: 10.0, tol: 1e-3 })
        .map_err(err)?;
    let correct = pos.iter().filter(|p| svm.decision(p) > 0.0).count() + neg.iter().filter(|p| svm.decision(p) < 0.0).count();
    ensure(correct == 4, || format!("XOR training accuracy {}/4", correct))?;
    Ok(format!("objective gap {worst_obj:.1e}, KKT {worst_kkt:.1e}, XOR 4/4"))
}

// ---------------------------------------------------------------- 3

fn sse(points: &[&Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let dim = points[0].len();
    let centroid: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| p[d]).sum::<f64>() / points.len() as f64)
        .collect();
    points
        .iter()
        .map(|p| p.iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum()
}

fn kmeans_exhaustive() -> Outcome {
    let mut rng = Rng64::new(303);
    let mut worst: f64 = 0.0;
    for inst in 0..30 {
        let n = 3 + rng.below(6);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.range(-3.0, 3.0), rng.range(-3.0, 3.0)]).collect();
        // point 0 is pinned to side A so each bipartition is visited once
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << (n - 1)) {
            let in_b = |i: usize| i > 0 && mask & (1 << (i - 1)) != 0;
            let a: Vec<&Vec<f64>> = (0..n).filter(|&i| !in_b(i)).map(|i| &pts[i]).collect();
            let b: Vec<&Vec<f64>> = (0..n).filter(|&i| in_b(i)).map(|i| &pts[i]).collect();
            if b.is_empty() {
                continue;
            }
            best = best.min(sse(&a) + sse(&b));
        }
        let mut cfg = KMeansConfig::new(2, inst);
        cfg.restarts = 50;
        let fit = kmeans_fit_with(&pts, &cfg).map_err(err)?;
        let rel = (fit.objective - best).abs() / best.max(1e-12);
        worst = worst.max(rel);
        ensure(rel <= 1e-9, || format!("instance {inst} (n={n}): objective {} vs optimum {best}", fit.objective))?;
    }
    Ok(format!("30 instances, max relative deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn flat_get(st: &mut AutoencoderState, mut k: usize) -> f64 {
    for s in st.params_mut() {
        if k < s.len() {
            return s[k];
        }
        k -= s.len();
    }
    panic!("parameter index out of range")
}

fn flat_set(st: &mut AutoencoderState, mut k: usize, v: f64) {
    for s in st.params_mut() {
        if k < s.len() {
            s[k] = v;
            return;
        }
        k -= s.len();
    }
    panic!("parameter index out of range")
}

fn ae_gradients() -> Outcome {
    let spec = AutoencoderSpec {
        input_size: 8,
        encoder_widths: [3, 3, 4, 4],
        decoder_widths: [4, 3, 3],
    };
    let st = ae_init(&spec, 17).map_err(err)?;
    let mut rng = Rng64::new(404);
    let patches: Vec<ImagePatch> = (0..4)
        .map(|_| ImagePatch::new(8, 8, (0..8 * 8 * 3).map(|_| rng.uniform()).collect()).unwrap())
        .collect();
    let refs: Vec<&ImagePatch> = patches.iter().collect();
    let x = patches_to_batch(&refs, 8);
    let analytic: Vec<f64> = st.train_step(&x).gradients.slices().concat();
    let mut probe = st.clone();
    let n: usize = probe.params_mut().iter().map(|s| s.len()).sum();
    ensure(n == analytic.len(), || format!("{n} parameters but {} gradients", analytic.len()))?;
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let orig = flat_get(&mut probe, k);
        flat_set(&mut probe, k, orig + eps);
        let plus = probe.train_loss(&x);
        flat_set(&mut probe, k, orig - eps);
        let minus = probe.train_loss(&x);
        flat_set(&mut probe, k, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7));
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{n} parameters, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn scalar_stats(x: &[f64]) -> [f64; 6] {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for &v in x {
        mean += v;
    }
    mean /= n;
    let (mut m2, mut m3, mut m4, mut energy) = (0.0, 0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        energy += v * v;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    energy /= n;
    // a constant patch has no spread; its central moments are defined as 0
    let constant = x.iter().all(|&v| v == x[0]);
    if constant {
        mean = x[0];
        m2 = 0.0;
    }
    let (skew, kurt) = if constant { (0.0, 0.0) } else { (m3 / m2.powf(1.5), m4 / (m2 * m2)) };
    let mut hist = [0usize; 256];
    for &v in x {
        let mut bin = (v.clamp(0.0, 1.0) * 256.0).floor() as usize;
        if bin > 255 {
            bin = 255;
        }
        hist[bin] += 1;
    }
    let mut entropy = 0.0;
    for &c in &hist {
        if c > 0 {
            let p = c as f64 / n;
            entropy -= p * p.log2();
        }
    }
    [mean, m2, skew, kurt, energy, entropy]
}

fn stats_oracle() -> Outcome {
    let mut rng = Rng64::new(505);
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let side = 2 + rng.below(31);
        let x: Vec<f64> = match inst % 5 {
            0 => vec![rng.uniform(); side * side],
            1 => (0..side * side).map(|_| (rng.below(4) as f64) / 3.0).collect(),
            2 => (0..side * side).map(|_| rng.uniform().powi(3)).collect(),
            _ => (0..side * side).map(|_| rng.uniform()).collect(),
        };
        let s = first_order_stats(&x).map_err(err)?;
        let got = [s.mean, s.variance, s.skewness, s.kurtosis, s.energy, s.entropy];
        let want = scalar_stats(&x);
        for (name, (g, w)) in ["mean", "variance", "skewness", "kurtosis", "energy", "entropy"]
            .iter()
            .zip(got.iter().zip(&want))
        {
            let d = (g - w).abs();
            worst = worst.max(d);
            ensure(d <= 1e-12, || format!("patch {inst}: {name} {g} vs {w}"))?;
        }
    }
    Ok(format!("100 patches, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 6, 7

const EXPERIMENT_CONFIG: &str = r#"
[autoencoder]
max_patches = 256
[autoencoder.spec]
input_size = 16
encoder_widths = [8, 16, 16, 32]
decoder_widths = [16, 16, 8]
[autoencoder.train]
epochs = 3
[flow]
source = "provided"
[synth.params]
frames = 60
train_videos = 3
[experiments]
seeds = [0, 1, 2, 3, 4]
fewshot_n = [0, 60]
"#;

fn experiment_means(name: ExperimentName) -> Result<BTreeMap<String, f64>, String> {
    let cfg = PipelineConfig::from_toml(EXPERIMENT_CONFIG, ".").map_err(err)?;
    let preset = experiment_preset(name, cfg.synth.preset);
    let mut prepared: Vec<(u64, Prepared)> = Vec::new();
    for &seed in &cfg.experiments.seeds {
        let data = synthesize_benchmark(preset, seed, &cfg.synth.params).map_err(err)?;
        let p = prepare(&data, &cfg.flow, &cfg.autoencoder, &cfg.features, seed).map_err(err)?;
        prepared.push((seed, p));
    }
    let runs: Vec<(u64, &Prepared)> = prepared.iter().map(|(s, p)| (*s, p)).collect();
    let report = run_experiment(name, &runs, &cfg.inference, &cfg.training, &cfg.experiments).map_err(err)?;
    let mut means = BTreeMap::new();
    for setting in report.settings() {
        let aucs: Vec<f64> = report.rows.iter().filter(|r| r.setting == setting).map(|r| r.auc).collect();
        ensure(aucs.len() == cfg.experiments.seeds.len(), || {
            format!("setting {setting} has {} of {} seeds", aucs.len(), cfg.experiments.seeds.len())
        })?;
        means.insert(setting.to_string(), aucs.iter().sum::<f64>() / aucs.len() as f64);
    }
    Ok(means)
}

fn context_ablation() -> Outcome {
    let m = experiment_means(ExperimentName::ContextAblation)?;
    let full = *m.get("full").ok_or("no `full` rows")?;
    let bare = *m.get("no-context").ok_or("no `no-context` rows")?;
    let diff = full - bare;
    let detail = format!("full {full:.3}, no-context {bare:.3}, margin {diff:.3}");
    ensure(diff >= 0.05, || format!("{detail} < 0.05"))?;
    Ok(detail)
}

fn fewshot_ordering() -> Outcome {
    let m = experiment_means(ExperimentName::FewshotAblation)?;
    let zero = *m.get("N=0").ok_or("no `N=0` rows")?;
    let sixty = *m.get("N=60").ok_or("no `N=60` rows")?;
    let diff = sixty - zero;
    let detail = format!("N=0 {zero:.3}, N=60 {sixty:.3}, margin {diff:.3}");
    ensure(diff >= 0.02, || format!("{detail} < 0.02"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn decision_grid() -> Outcome {
    let (mu, eta) = (0.5, 0.5);
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let mut violations = Vec::new();
    let mut counts = [0usize; 3];
    for (i, &alpha) in grid.iter().enumerate() {
        for (j, &beta) in grid.iter().enumerate() {
            let v = classify_object(alpha, beta, mu, eta);
            let normal = alpha > beta && alpha > mu;
            let anomalous = alpha < beta && beta > eta;
            if normal && anomalous {
                violations.push(format!("({alpha},{beta}) satisfies both conditions"));
            }
            let want = if normal {
                Verdict::Normal
            } else if anomalous {
                Verdict::Anomalous
            } else {
                Verdict::Unknown
            };
            counts[want as usize] += 1;
            if v.label != want {
                violations.push(format!("({alpha},{beta}) labelled {:?}, expected {want:?}", v.label));
            }
            let frame = frame_anomaly_score(0, &[v]);
            if frame.alarm != (want != Verdict::Normal) {
                violations.push(format!("({alpha},{beta}) alarm {} for {want:?}", frame.alarm));
            }
            if frame.score != v.score {
                violations.push(format!("({alpha},{beta}) frame score differs from object score"));
            }
            let expected = ((1.0 + beta - alpha) / 2.0).clamp(0.0, 1.0);
            if (v.score - expected).abs() > 1e-15 {
                violations.push(format!("({alpha},{beta}) score {} vs {expected}", v.score));
            }
            if i > 0 && classify_object(grid[i - 1], beta, mu, eta).score < v.score {
                violations.push(format!("score rises with alpha at ({alpha},{beta})"));
            }
            if j > 0 && classify_object(alpha, grid[j - 1], mu, eta).score > v.score {
                violations.push(format!("score falls with beta at ({alpha},{beta})"));
            }
        }
    }
    // an unknown object among normal ones still raises the frame alarm
    let normal = classify_object(0.9, 0.1, mu, eta);
    let unknown = classify_object(0.3, 0.3, mu, eta);
    if !frame_anomaly_score(0, &[normal, unknown, normal]).alarm {
        violations.push("unknown object did not raise the frame alarm".into());
    }
    if frame_anomaly_score(0, &[normal, normal]).alarm {
        violations.push("all-normal frame raised an alarm".into());
    }
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    Ok(format!(
        "10201 points: {} normal, {} anomalous, {} unknown, 0 violations",
        counts[Verdict::Normal as usize],
        counts[Verdict::Anomalous as usize],
        counts[Verdict::Unknown as usize]
    ))
}

// ---------------------------------------------------------------- 9

const FIXTURE_CONFIG: &str = r#"
seed = 3
[synth.params]
frames = 60
[autoencoder]
max_patches = 128
[autoencoder.spec]
input_size = 16
encoder_widths = [8, 16, 16, 32]
decoder_widths = [16, 16, 8]
[autoencoder.train]
epochs = 3
[flow]
source = "provided"
[training]
n_anomalous = 30
"#;

struct RunArtifacts {
    scores: BTreeMap<String, Vec<u8>>,
    ae_payload: Vec<u8>,
    model_payload: Vec<u8>,
}

fn read_dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let p = entry.map_err(err)?.path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(err)?);
    }
    Ok(out)
}

fn run_fixture(base: &Path) -> Result<(PipelineConfig, RunArtifacts), String> {
    let cfg = PipelineConfig::from_toml(FIXTURE_CONFIG, base).map_err(err)?;
    run_pipeline(&cfg, &Stage::DEFAULT).map_err(|e| format!("{e}"))?;
    let layout = cfg.layout();
    let artifacts = RunArtifacts {
        scores: read_dir_bytes(&layout.scores_dir())?,
        ae_payload: std::fs::read(layout.ae_bundle().join(TENSORS_FILE)).map_err(err)?,
        model_payload: std::fs::read(layout.model_bundle().join(TENSORS_FILE)).map_err(err)?,
    };
    Ok((cfg, artifacts))
}

fn determinism() -> Outcome {
    let tmp_a = tempfile::tempdir().map_err(err)?;
    let tmp_b = tempfile::tempdir().map_err(err)?;
    let (cfg, first) = run_fixture(tmp_a.path())?;
    let (_, again) = run_fixture(tmp_a.path())?;
    let (_, elsewhere) = run_fixture(tmp_b.path())?;
    ensure(!first.scores.is_empty(), || "no score files written".into())?;
    for (label, other) in [("rerun", &again), ("other directory", &elsewhere)] {
        ensure(first.scores == other.scores, || format!("{label}: score files differ"))?;
        ensure(first.ae_payload == other.ae_payload, || format!("{label}: autoencoder payload differs"))?;
        ensure(first.model_payload == other.model_payload, || format!("{label}: model payload differs"))?;
    }

    let layout = cfg.layout();
    for (dir, payload) in [(layout.ae_bundle(), &first.ae_payload), (layout.model_bundle(), &first.model_payload)] {
        let bundle = ModelBundle::load(&dir).map_err(err)?;
        let (_, reencoded) = bundle.encode().map_err(err)?;
        ensure(&reencoded == payload, || format!("{}: re-encoded payload differs", dir.display()))?;
    }

    let bundle = ModelBundle::load(layout.model_bundle()).map_err(err)?;
    let (model, columns) = bundle.inference.as_ref().ok_or("model bundle has no inference section")?;
    let test = layout.split_files("test").load().map_err(err)?;
    let rescored = score_rows(model, columns, &test.rows, &test.frame_counts).map_err(err)?;
    let out = tempfile::tempdir().map_err(err)?;
    save_scores(out.path(), &rescored).map_err(err)?;
    ensure(read_dir_bytes(out.path())? == first.scores, || "re-scoring a loaded bundle changed scores".into())?;
    let loaded = load_scores_dir(layout.scores_dir()).map_err(err)?;
    let frames: usize = loaded.iter().map(|v| v.frames.len()).sum();
    Ok(format!(
        "{} score files ({frames} frames), {} + {} payload bytes identical across 3 runs and reloads",
        first.scores.len(),
        first.ae_payload.len(),
        first.model_payload.len()
    ))
}

// ---------------------------------------------------------------- 10

fn fixture(name: &str) -> Vec<u8> {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name].iter().collect();
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn class_of<T>(r: ctxvad::Result<T>) -> &'static str {
    match r {
        Ok(_) => "ok",
        Err(Error::Format(_)) => "format",
        Err(Error::Validation(_)) => "validation",
        Err(Error::Parse { .. }) => "parse",
        Err(_) => "other",
    }
}

fn formats() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: &'static str, want: &str| {
        if got != want {
            failures.push(format!("{name}: {got}, expected {want}"));
        }
    };
    check("bad_magic.flo", class_of(decode_flo(&fixture("bad_magic.flo"))), "format");
    check("truncated.flo", class_of(decode_flo(&fixture("truncated.flo"))), "format");
    check("bad_magic.pgm", class_of(decode_pgm_mask(&fixture("bad_magic.pgm"))), "format");
    check("bad_size.pgm", class_of(decode_pgm_mask(&fixture("bad_size.pgm"))), "format");
    check("bad_value.pgm", class_of(decode_pgm_mask(&fixture("bad_value.pgm"))), "validation");
    check("bad_magic.ppm", class_of(decode_ppm(&fixture("bad_magic.ppm"))), "format");
    check("truncated.ppm", class_of(decode_ppm(&fixture("truncated.ppm"))), "format");
    check("malformed.jsonl", class_of(parse_detections(&fixture("malformed.jsonl")[..])), "parse");
    check("bad_class.jsonl", class_of(parse_detections(&fixture("bad_class.jsonl")[..])), "validation");
    check("zero_width.jsonl", class_of(parse_detections(&fixture("zero_width.jsonl")[..])), "validation");
    check("bad_label.csv", class_of(parse_frame_annotations(&fixture("bad_label.csv")[..])), "validation");
    check("duplicate_frame.csv", class_of(parse_frame_annotations(&fixture("duplicate_frame.csv")[..])), "validation");
    if let Err(Error::Parse { line, .. }) = parse_detections(&fixture("malformed.jsonl")[..]) {
        if line != 2 {
            failures.push(format!("malformed.jsonl: parse error reported on line {line}, expected 2"));
        }
    }

    let round_trips: [(&str, fn(&[u8]) -> Result<Vec<u8>, String>); 4] = [
        ("valid.flo", |b| decode_flo(b).map(|f| encode_flo(&f)).map_err(err)),
        ("valid.pgm", |b| decode_pgm_mask(b).map(|m| encode_pgm_mask(&m)).map_err(err)),
        ("valid.ppm", |b| decode_ppm(b).map(|p| encode_ppm(&p)).map_err(err)),
        ("valid.jsonl", |b| {
            let recs = parse_detections(b).map_err(err)?;
            let mut out = Vec::new();
            write_detections(&mut out, &recs).map_err(err)?;
            Ok(out)
        }),
    ];
    for (name, rt) in round_trips {
        let bytes = fixture(name);
        match rt(&bytes) {
            Ok(out) if out == bytes => {}
            Ok(_) => failures.push(format!("{name}: round trip changed the bytes")),
            Err(e) => failures.push(format!("{name}: rejected: {e}")),
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok("12 corrupted fixtures rejected with the expected class, 4 valid fixtures round-trip".into())
}
