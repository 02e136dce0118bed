//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every threshold is pinned below.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mixssm_cli::sweeps::ablation_settings;
use mixssm_core::encoders::{cross_merge, cross_scan, ConvBranch};
use mixssm_core::fusion::{Pooling, SelectiveConfig, SelectiveModule};
use mixssm_core::gradcheck::{run_suite, SuiteOptions};
use mixssm_core::network::{load_checkpoint, save_checkpoint, MixSsmNet, ModelConfig};
use mixssm_core::nn::{Activation, Ctx, Init, Module};
use mixssm_core::tensor::no_grad;
use mixssm_core::train::Metrics;
use mixssm_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-3;
const GRAD_SEEDS: usize = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const SCAN_TOL: f64 = 1e-5;
const SCAN_INSTANCES: usize = 50;
const CONV_TOL: f64 = 1e-6;
const CONV_INSTANCES: usize = 20;
const METRIC_TRIALS: usize = 100;
const SELECTIVE_TRIALS: usize = 100;
const WEIGHT_SUM_TOL: f64 = 1e-6;
const CROSS_SCAN_TRIALS: usize = 100;
const OVERFIT_ACC: f64 = 0.95;
const OVERFIT_STEPS: usize = 300;
const OVERFIT_LR: f64 = 5e-5;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
const LOSS_JITTER: f64 = 1e-3;
const DIST_TOL: f64 = 1e-6;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, &'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mixssm(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mixssm"))
        .args(args)
        .env("MIXSSM_THREADS", "1")
        .output()
        .expect("spawn mixssm");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn c1_gradient_suite() -> Outcome {
    let start = Instant::now();
    let opts = SuiteOptions {
        seeds: GRAD_SEEDS,
        tolerance: GRAD_TOL,
        ..SuiteOptions::default()
    };
    let results = run_suite(&opts).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let summary: Vec<String> = results
        .iter()
        .map(|r| format!("{}={:.1e}", r.name, r.report.max_rel_error))
        .collect();
    for r in &results {
        ensure(r.report.pass && r.seeds >= GRAD_SEEDS, || format!("{} failed: {:?}", r.name, r.report))?;
    }
    ensure(elapsed < GRAD_BUDGET, || format!("took {elapsed:?}"))?;
    let (code, _, _) = mixssm(&["gradcheck", "--seeds", "1"]);
    ensure(code == 0, || format!("cli gradcheck exit {code}"))?;
    let (code, _, _) = mixssm(&["gradcheck", "--seeds", "1", "--inject-fault"]);
    ensure(code == 3, || format!("fault-injected gradcheck exit {code}"))?;
    Ok(format!("max rel errors {} in {:.1}s", summary.join(" "), elapsed.as_secs_f64()))
}

#[allow(clippy::too_many_arguments)]
fn sequential_scan(u: &[f64], dt: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64], t: usize, ch: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; t * ch];
    for k in 0..ch {
        let mut h = vec![0.0; n];
        for s in 0..t {
            let (uv, dv) = (u[s * ch + k], dt[s * ch + k]);
            let mut acc = d[k] * uv;
            for j in 0..n {
                h[j] = (dv * a[k * n + j]).exp() * h[j] + dv * b[s * n + j] * uv;
                acc += c[s * n + j] * h[j];
            }
            y[s * ch + k] = acc;
        }
    }
    y
}

fn nested_loop_conv(x: &[f64], (h, w, c): (usize, usize, usize), k: &[f64], ks: usize, bias: &[f64]) -> Vec<f64> {
    let pad = ks / 2;
    let mut out = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            for o in 0..c {
                let mut acc = bias[o];
                for m in 0..ks {
                    for n in 0..ks {
                        let (ii, jj) = (i + m, j + n);
                        if ii < pad || jj < pad || ii - pad >= h || jj - pad >= w {
                            continue;
                        }
                        for l in 0..c {
                            acc += x[((ii - pad) * w + jj - pad) * c + l] * k[((m * ks + n) * c + l) * c + o];
                        }
                    }
                }
                out[(i * w + j) * c + o] = acc;
            }
        }
    }
    out
}

fn brute_metrics(pred: &[usize], actual: &[usize], k: usize) -> (Vec<Vec<usize>>, [f64; 4]) {
    let mut cm = vec![vec![0; k]; k];
    for a in 0..k {
        for q in 0..k {
            cm[a][q] = pred.iter().zip(actual).filter(|(&x, &y)| x == q && y == a).count();
        }
    }
    let acc = pred.iter().zip(actual).filter(|(x, y)| x == y).count() as f64 / pred.len() as f64;
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = pred.iter().zip(actual).filter(|(&x, &y)| x == c && y == c).count();
        let predicted = pred.iter().filter(|&&x| x == c).count();
        let actual_c = actual.iter().filter(|&&y| y == c).count();
        let prec = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let rec = if actual_c > 0 { tp as f64 / actual_c as f64 } else { 0.0 };
        ps += prec;
        rs += rec;
        fs += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    }
    let kf = k as f64;
    (cm, [acc, ps / kf, rs / kf, fs / kf])
}

fn c2_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut vals = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
    let mut scan_worst = 0.0f64;
    let mut dims = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..SCAN_INSTANCES {
        let (t, n, ch) = (dims.random_range(1..=64), dims.random_range(1..=8), dims.random_range(1..=16));
        let (u, dt, a) = (vals(t * ch, -1.0, 1.0), vals(t * ch, 1e-3, 0.5), vals(ch * n, -3.0, -0.05));
        let (b, c, d) = (vals(t * n, -1.0, 1.0), vals(t * n, -1.0, 1.0), vals(ch, -1.0, 1.0));
        let expect = sequential_scan(&u, &dt, &a, &b, &c, &d, t, ch, n);
        let tensor = |shape: &[usize], v: &[f64]| Tensor::<f64>::from_f64(shape, v).unwrap();
        let got = Tensor::selective_scan(
            &tensor(&[t, ch], &u),
            &tensor(&[t, ch], &dt),
            &tensor(&[ch, n], &a),
            &tensor(&[t, n], &b),
            &tensor(&[t, n], &c),
            &tensor(&[ch], &d),
        )
        .map_err(|e| e.to_string())?;
        for (g, e) in got.data().iter().zip(&expect) {
            scan_worst = scan_worst.max((g - e).abs());
        }
    }
    ensure(scan_worst < SCAN_TOL, || format!("scan deviation {scan_worst:e}"))?;

    let mut conv_worst = 0.0f64;
    for i in 0..CONV_INSTANCES as u64 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + i);
        let (h, w, c, ks) = (r.random_range(1..=6), r.random_range(1..=6), r.random_range(1..=4), [1, 3, 5][i as usize % 3]);
        let mut conv: ConvBranch<f64> = ConvBranch::new(&mut Init::new(i), c, ks).unwrap();
        conv.activation = Activation::Identity;
        let k: Vec<f64> = (0..ks * ks * c * c).map(|_| r.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..h * w * c).map(|_| r.random_range(-1.0..1.0)).collect();
        conv.kernel = Tensor::from_vec(&[ks, ks, c, c], k.clone()).unwrap();
        conv.bias = Tensor::from_vec(&[c], bias.clone()).unwrap();
        let got = conv.forward(&Tensor::from_vec(&[h, w, c], x.clone()).unwrap()).unwrap();
        for (g, e) in got.data().iter().zip(nested_loop_conv(&x, (h, w, c), &k, ks, &bias)) {
            conv_worst = conv_worst.max((g - e).abs());
        }
    }
    ensure(conv_worst < CONV_TOL, || format!("conv deviation {conv_worst:e}"))?;

    let mut r = ChaCha8Rng::seed_from_u64(22);
    for trial in 0..METRIC_TRIALS {
        let k = r.random_range(2..=6);
        let len = r.random_range(1..=80);
        let actual: Vec<usize> = (0..len).map(|_| r.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..len).map(|_| r.random_range(0..k)).collect();
        let m = Metrics::from_predictions(&pred, &actual, k).map_err(|e| e.to_string())?;
        let (cm, scalars) = brute_metrics(&pred, &actual, k);
        let got = [m.accuracy, m.precision, m.recall, m.f1];
        ensure(m.confusion == cm && got == scalars, || format!("trial {trial}: {got:?} vs {scalars:?}"))?;
    }
    Ok(format!(
        "scan max dev {scan_worst:.1e} over {SCAN_INSTANCES}; conv max dev {conv_worst:.1e} over {CONV_INSTANCES}; metrics exact over {METRIC_TRIALS}"
    ))
}

fn c3_selective_invariants() -> Outcome {
    let mut sum_worst = 0.0f64;
    let mut violations = 0usize;
    for trial in 0..SELECTIVE_TRIALS as u64 {
        let mut r = ChaCha8Rng::seed_from_u64(300 + trial);
        let n = r.random_range(1..=4);
        let c = 8;
        let (h, w) = (r.random_range(1..=5), r.random_range(1..=5));
        let cfg = SelectiveConfig {
            pooling: Pooling::ALL[trial as usize % 4],
            kernel: [1, 3, 5, 7][(trial / 4) as usize % 4],
            ..SelectiveConfig::default()
        };
        let mut m: SelectiveModule<f64> = SelectiveModule::new(&mut Init::new(trial), c, n, &cfg).unwrap();
        m.visit_mut("", &mut |_, t| {
            let v = t.data().iter().map(|x| x + r.random_range(-2.0..2.0)).collect();
            *t = Tensor::param(t.shape(), v).unwrap();
        });
        let branches: Vec<Tensor<f64>> = (0..n)
            .map(|_| Tensor::from_vec(&[h, w, c], (0..h * w * c).map(|_| r.random_range(-10.0..10.0)).collect()).unwrap())
            .collect();
        let ctx = if trial % 2 == 0 { Ctx::eval() } else { Ctx::train(trial) };
        let weights = m.weights_for(&branches, &ctx).map_err(|e| e.to_string())?;
        for row in weights.data().chunks(n) {
            sum_worst = sum_worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let out = m.forward(&branches, &ctx).map_err(|e| e.to_string())?;
        for (i, v) in out.data().iter().enumerate() {
            let vals: Vec<f64> = branches.iter().map(|b| b.data()[i]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // rounding slack of a convex combination of n values
            let slack = 4.0 * f64::EPSILON * hi.abs().max(lo.abs());
            if *v < lo - slack || *v > hi + slack {
                violations += 1;
            }
        }
    }
    ensure(sum_worst <= WEIGHT_SUM_TOL, || format!("weight sum off by {sum_worst:e}"))?;
    ensure(violations == 0, || format!("{violations} convex-hull violations"))?;
    Ok(format!("{SELECTIVE_TRIALS} inputs, max |sum-1| {sum_worst:.1e}, 0 hull violations"))
}

fn c4_cross_scan_identity() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..CROSS_SCAN_TRIALS {
        let (h, w, c) = (r.random_range(1..=9), r.random_range(1..=9), r.random_range(1..=6));
        let v: Vec<f64> = (0..h * w * c).map(|_| f64::from(r.random_range(-10_000i32..10_000))).collect();
        let t = Tensor::from_vec(&[h, w, c], v.clone()).unwrap();
        let merged = cross_merge(&cross_scan(&t).unwrap(), h, w).unwrap();
        let exact = merged.data().iter().zip(&v).all(|(m, x)| m.to_bits() == (4.0 * x).to_bits());
        ensure(exact, || format!("trial {trial} ({h}x{w}x{c}) not bitwise 4V"))?;
    }
    Ok(format!("{CROSS_SCAN_TRIALS} integer tensors, bitwise equal to 4V"))
}

fn parse_log(path: &Path) -> Result<Vec<(f64, f64)>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[1], f[2])
        })
        .collect())
}

fn metric(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN)
}

fn c5_desk_overfit(dir: &Path) -> Outcome {
    let data = dir.join("data");
    let (code, _, err) = mixssm(&["synth", "--out", p(&data), "--classes", "4", "--per-class", "16", "--size", "32"]);
    ensure(code == 0, || format!("synth failed: {err}"))?;
    let ckpt = dir.join("overfit.ckpt");
    let start = Instant::now();
    let (code, _, err) = mixssm(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--epochs",
        &(OVERFIT_STEPS / 2).to_string(),
        "--batch-size",
        "32",
        "--lr",
        &OVERFIT_LR.to_string(),
        "--max-steps",
        &OVERFIT_STEPS.to_string(),
    ]);
    let elapsed = start.elapsed();
    ensure(code == 0, || format!("train exit {code}: {err}"))?;
    let metrics_path = dir.join("overfit.metrics");
    let (code, _, err) = mixssm(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--metrics-out", p(&metrics_path)]);
    ensure(code == 0, || format!("eval exit {code}: {err}"))?;
    let acc = metric(&fs::read_to_string(&metrics_path).unwrap(), "acc");
    let log = parse_log(&ckpt.with_extension("log.csv"))?;
    let first_hit = log.iter().position(|&(_, a)| a >= OVERFIT_ACC).map(|e| e + 1);
    // epoch-mean loss must not rise after epoch 2 beyond the jitter allowance
    let rises = log.windows(2).skip(1).filter(|w| w[1].0 > w[0].0 + LOSS_JITTER).count();
    ensure(acc >= OVERFIT_ACC, || format!("train-set accuracy {acc}"))?;
    ensure(elapsed < OVERFIT_BUDGET, || format!("took {elapsed:?}"))?;
    ensure(rises == 0, || format!("epoch loss rose {rises} times after epoch 2"))?;
    Ok(format!(
        "lr {OVERFIT_LR:e}, {OVERFIT_STEPS} steps: train acc {acc} (epoch-log acc >= {OVERFIT_ACC} first at epoch {first_hit:?}), final loss {:.4}, loss non-increasing after epoch 2, {:.1}s",
        log.last().map_or(f64::NAN, |l| l.0),
        elapsed.as_secs_f64()
    ))
}

fn c6_ablation(dir: &Path) -> Outcome {
    let data = dir.join("data");
    let cfg = dir.join("ablate.toml");
    fs::write(&cfg, "[train]\nepochs = 3\n").unwrap();
    let out = dir.join("ablate.csv");
    let (code, _, err) = mixssm(&["ablate", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)]);
    ensure(code == 0, || format!("ablate exit {code}: {err}"))?;
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    ensure(lines.first() == Some(&"config,acc,f1"), || format!("header {:?}", lines.first()))?;
    ensure(lines.len() == 9, || format!("{} data rows", lines.len() - 1))?;
    for row in &lines[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let ok = f.len() == 3 && f[1..].iter().all(|v| v.parse::<f64>().is_ok_and(|x| (0.0..=1.0).contains(&x)));
        ensure(ok, || format!("bad row {row}"))?;
    }
    let settings = ablation_settings(&ModelConfig::desk());
    let counts: Vec<usize> = settings
        .iter()
        .map(|s| MixSsmNet::<f32>::new(&s.model).unwrap().num_params())
        .collect();
    ensure(counts[1..].iter().all(|&c| c < counts[0]), || format!("param counts {counts:?}"))?;
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    Ok(format!("8 rows {names:?}; params full {} > max ablated {}", counts[0], counts[1..].iter().max().unwrap()))
}

fn c7_determinism(dir: &Path) -> Outcome {
    let data = dir.join("data");
    let mut ckpts = Vec::new();
    let mut metrics = Vec::new();
    for run in 0..2 {
        let ckpt = dir.join(format!("det{run}.ckpt"));
        let (code, _, err) = mixssm(&["train", "--data", p(&data), "--out", p(&ckpt), "--epochs", "3", "--seed", "7", "--lr", "1e-3"]);
        ensure(code == 0, || format!("train exit {code}: {err}"))?;
        let m = dir.join(format!("det{run}.metrics"));
        let (code, _, err) = mixssm(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--metrics-out", p(&m)]);
        ensure(code == 0, || format!("eval exit {code}: {err}"))?;
        ckpts.push(fs::read(&ckpt).unwrap());
        metrics.push(fs::read(&m).unwrap());
    }
    ensure(ckpts[0] == ckpts[1], || "checkpoints differ".into())?;
    ensure(metrics[0] == metrics[1], || "metrics differ".into())?;
    let model: MixSsmNet = load_checkpoint(dir.join("det0.ckpt")).map_err(|e| e.to_string())?;
    let again = dir.join("det0.resaved.ckpt");
    save_checkpoint(&model, &again).map_err(|e| e.to_string())?;
    ensure(fs::read(&again).unwrap() == ckpts[0], || "save(load(x)) != x".into())?;
    let reloaded: MixSsmNet = load_checkpoint(&again).map_err(|e| e.to_string())?;
    let bits = |m: &MixSsmNet| -> Vec<u32> {
        m.named_params().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    ensure(bits(&model) == bits(&reloaded), || "round trip not bit-exact".into())?;
    Ok(format!("2 runs: identical checkpoints ({} bytes) and metrics; round trip bit-exact", ckpts[0].len()))
}

fn c8_shape_chain() -> Outcome {
    let cfg = ModelConfig::default();
    let net: MixSsmNet = MixSsmNet::new(&cfg).map_err(|e| e.to_string())?;
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let image = Tensor::from_vec(&[224, 224, 3], (0..224 * 224 * 3).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap();
    let trace = no_grad(|| net.trace(&image, &Ctx::eval())).map_err(|e| e.to_string())?;
    let c = cfg.dims[0];
    let expected = vec![vec![56, 56, c], vec![28, 28, 2 * c], vec![14, 14, 4 * c], vec![7, 7, 8 * c]];
    ensure(trace.shapes == expected, || format!("shapes {:?}", trace.shapes))?;
    let probs = trace.probs.to_f64_vec();
    let sum: f64 = probs.iter().sum();
    ensure(probs.len() == cfg.num_classes, || format!("{} classes", probs.len()))?;
    ensure((sum - 1.0).abs() <= DIST_TOL, || format!("sum {sum}"))?;
    ensure(probs.iter().all(|&v| v > 0.0 && v < 1.0), || "entry outside (0,1)".into())?;
    Ok(format!("224x224x3 -> {:?} -> {} probs summing to {sum:.7}", trace.shapes, probs.len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path();
    let criteria: [Criterion; 8] = [
        ("1", "gradient suite", Box::new(c1_gradient_suite)),
        ("2", "oracle equivalence", Box::new(c2_oracles)),
        ("3", "selective-module invariants", Box::new(c3_selective_invariants)),
        ("4", "cross-scan identity", Box::new(c4_cross_scan_identity)),
        ("5", "desk overfit", Box::new(move || c5_desk_overfit(dir))),
        ("6", "ablation harness", Box::new(move || c6_ablation(dir))),
        ("7", "determinism", Box::new(move || c7_determinism(dir))),
        ("8", "shape chain", Box::new(c8_shape_chain)),
    ];
    let mut failed = 0;
    for (id, name, run) in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("ACCEPTANCE {id} PASS {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("ACCEPTANCE {id} FAIL {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
