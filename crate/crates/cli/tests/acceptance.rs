//! End-to-end acceptance suite.
//!
//! Each criterion prints one `PASS`/`FAIL` line to stderr (bypassing the test
//! harness capture) and then asserts. The criteria run one at a time so that
//! the timing checks are not skewed by each other. Artifacts land under
//! `target/tmp/acceptance/`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tidedown::costmodel::{flops_asm, flops_atm, flops_fe};
use tidedown::eval::{mae, mse};
use tidedown::field::{Extent, NormStats, TidalField};
use tidedown::model::{plan_queries, BranchKind, FmsRatio, Model, ModelConfig, ENSEMBLE};
use tidedown::nn::{Graph, Scalar, Tensor, Var};
use tidedown::synth::{generate, split_dataset, SynthSpec};
use tidedown::train::{masked_l1, Dataset, TrainConfig, Trainer};

// Reference cost table, in units of 1e9 MACs.
const FE_G: f64 = 207.0;
const ASM_G: [(&str, f64, f64); 4] = [("None", 612.0, 0.01), ("5:1", 442.0, 0.01), ("2:1", 340.0, 0.01), ("11:1", 514.0, 0.02)];
const ATM_G: [(&str, f64, f64); 4] = [("None", 116.0, 0.02), ("5:1", 83.0, 0.02), ("2:1", 64.0, 0.02), ("11:1", 96.0, 0.025)];
const TEST_G: [(&str, f64); 3] = [("None", 819.0), ("5:1", 649.0), ("2:1", 547.0)];
const TOTAL_TOL: f64 = 0.02;
const TRAIN_2_1_G: f64 = 611.0;
const REDUCTION_PCT: f64 = 33.2;
const REDUCTION_TOL_PP: f64 = 0.5;
const FLOPS_BUDGET: Duration = Duration::from_secs(1);

const GRAD_SAMPLES: usize = 50;
const FD_STEP: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-6;
const GRAD_ABS_FLOOR: f64 = 1e-8;
const GRAD_BUDGET: Duration = Duration::from_secs(30);

const MASK_TRIALS: u64 = 100;
const ORACLE_SHAPES: u64 = 50;
const ORACLE_TOL: f64 = 1e-5;

const DESK_BUDGET: Duration = Duration::from_secs(15 * 60);
const DESK_SPLIT: [usize; 3] = [48, 8, 8];
const ATM_EPOCH: usize = 5;
const ATM_SEEDS: [u64; 3] = [7, 8, 9];
const ATM_MIN_WINS: usize = 2;
const INFER_SCALES: [f64; 5] = [1.0, 2.5, 6.0, 12.7, 50.0];
const X50_BUDGET: Duration = Duration::from_secs(5 * 60);

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, result: Result<String, String>) {
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    // leading newline keeps the line separate from the harness progress output
    let line = format!("\ncriterion {n:>2} {tag}  {name}: {detail}\n");
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    if let Err(d) = result {
        panic!("criterion {n} ({name}) failed: {d}");
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cli(args: &[&str]) -> Result<(String, Duration), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_tidedown"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning tidedown: {e}"))?;
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(format!("tidedown {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok((String::from_utf8_lossy(&out.stdout).into_owned(), elapsed))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn within(got: f64, want: f64, frac: f64) -> bool {
    (got - want).abs() <= frac * want.abs()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn criterion_01_cost_table() {
    let _g = serial();
    let result = (|| {
        let (out, took) = cli(&["flops", "--format", "csv"])?;
        let rows = csv_rows(&out);
        let macs = |label: &str, col: usize| -> Result<f64, String> {
            let row = rows.iter().find(|r| r[0] == label).ok_or(format!("no `{label}` row"))?;
            Ok(row[col].parse::<u64>().map_err(|e| e.to_string())? as f64 / 1e9)
        };
        let (fe_col, asm_col, atm_col) = (6, 7, 8);
        let fe = macs("None", fe_col)?;
        check(within(fe, FE_G, 0.01), || format!("FE {fe:.2}G vs {FE_G}G"))?;
        for (label, want, tol) in ASM_G {
            let got = macs(label, asm_col)?;
            check(within(got, want, tol), || format!("ASM {label} {got:.2}G vs {want}G"))?;
        }
        for (label, want, tol) in ATM_G {
            let got = macs(label, atm_col)?;
            check(within(got, want, tol), || format!("ATM {label} {got:.2}G vs {want}G"))?;
        }
        let test = |label: &str| -> Result<f64, String> { Ok(macs(label, fe_col)? + macs(label, asm_col)?) };
        for (label, want) in TEST_G {
            let got = test(label)?;
            check(within(got, want, TOTAL_TOL), || format!("test {label} {got:.2}G vs {want}G"))?;
        }
        let train = test("2:1")? + macs("2:1", atm_col)?;
        check(within(train, TRAIN_2_1_G, TOTAL_TOL), || format!("train 2:1 {train:.2}G vs {TRAIN_2_1_G}G"))?;
        let reduction = 100.0 * (1.0 - test("2:1")? / test("None")?);
        check((reduction - REDUCTION_PCT).abs() <= REDUCTION_TOL_PP, || {
            format!("2:1 reduction {reduction:.2}% vs {REDUCTION_PCT}%")
        })?;
        check(took < FLOPS_BUDGET, || format!("took {took:?}"))?;
        Ok(format!("FE {fe:.2}G, train 2:1 {train:.2}G, 2:1 test reduction {reduction:.2}%, {took:.2?}"))
    })();
    report(1, "cost table", result);
}

fn tiny(channels: usize, fms: Option<FmsRatio>, atm_scale: usize) -> ModelConfig {
    ModelConfig {
        channels,
        n_blocks: 2,
        fms_ratio: fms,
        atm_scale,
        lr_height: 6,
        lr_width: 6,
        n_mlp_hidden: 2,
        use_pe: true,
    }
}

fn random_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0)).unwrap()).collect();
    Tensor::new(shape, data).unwrap()
}

fn random_queries(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, [f64; 2])> {
    (0..n).map(|_| (0, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])).collect()
}

#[test]
fn criterion_02_counted_macs_match_cost_model() {
    let _g = serial();
    let result = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lines = Vec::new();
        for fms in [None, Some(FmsRatio::new(1, 1)), Some(FmsRatio::new(3, 1))] {
            let cfg = tiny(8, fms, 2);
            let model = Model::<f32>::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
            let mut g = Graph::new();
            let x = g.input(random_tensor(&mut rng, &[1, 3, 6, 6]));
            let feat = model.fe_forward(&mut g, x).unwrap();
            let fe = g.macs();
            let plan = plan_queries(6, 6, &random_queries(&mut rng, 4)).unwrap();
            model.asm_forward(&mut g, feat, &plan).unwrap();
            let asm = g.macs() - fe;
            model.atm_forward(&mut g, feat).unwrap();
            let atm = g.macs() - fe - asm;
            let want = (flops_fe(&cfg), flops_asm(&cfg, 4, ENSEMBLE as u64).unwrap(), flops_atm(&cfg).unwrap());
            check((fe, asm, atm) == want, || format!("fms {fms:?}: counted {:?}, model {want:?}", (fe, asm, atm)))?;
            lines.push(format!("{fe}/{asm}/{atm}"));
        }
        Ok(format!("fe/asm/atm MACs equal for None, 1:1, 3:1 ({})", lines.join(", ")))
    })();
    report(2, "instrumented MAC count", result);
}

/// Training-style loss of a tiny model in 64-bit mode.
fn tiny_loss(model: &Model<f64>, lr: &Tensor<f64>, queries: &[(usize, [f64; 2])], targets: &[Tensor<f64>; 2]) -> (Graph<f64>, Var) {
    let mut g = Graph::new();
    let x = g.input(lr.clone());
    let feat = model.fe_forward(&mut g, x).unwrap();
    let plan = plan_queries(6, 6, queries).unwrap();
    let pred = model.asm_forward(&mut g, feat, &plan).unwrap();
    let t0 = g.input(targets[0].clone());
    let asm = g.masked_l1(pred, t0, vec![true; targets[0].len()]).unwrap();
    let out = model.atm_forward(&mut g, feat).unwrap();
    let t1 = g.input(targets[1].clone());
    let atm = g.masked_l1(out, t1, vec![true; targets[1].len()]).unwrap();
    let loss = g.add(asm, atm).unwrap();
    (g, loss)
}

#[test]
fn criterion_03_full_model_gradients() {
    let _g = serial();
    let start = Instant::now();
    let result = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = tiny(8, Some(FmsRatio::new(1, 1)), 2);
        let mut model = Model::<f64>::new(cfg, 3).unwrap();
        let lr = random_tensor(&mut rng, &[1, 3, 6, 6]);
        let queries = random_queries(&mut rng, 6);
        let targets = [random_tensor(&mut rng, &[6, 3]), random_tensor(&mut rng, &[1, 3, 12, 12])];

        let (g, loss) = tiny_loss(&model, &lr, &queries, &targets);
        model.params_mut().zero_grads();
        g.backward(loss, model.params_mut()).unwrap();

        let sizes: Vec<usize> = model.params().entries().iter().map(|e| e.values.len()).collect();
        let total: usize = sizes.iter().sum();
        let mut worst = 0.0f64;
        for _ in 0..GRAD_SAMPLES {
            let mut k = rng.random_range(0..total);
            let entry = sizes.iter().position(|&n| if k < n { true } else { k -= n; false }).unwrap();
            let id = model.params().iter().nth(entry).unwrap().0;
            let analytic = model.params().get(id).grads[k];
            let orig = model.params().get(id).values[k];
            let mut eval = |v: f64| {
                model.params_mut().get_mut(id).values[k] = v;
                let (g, loss) = tiny_loss(&model, &lr, &queries, &targets);
                g.value(loss).data()[0]
            };
            let numeric = (eval(orig + FD_STEP) - eval(orig - FD_STEP)) / (2.0 * FD_STEP);
            model.params_mut().get_mut(id).values[k] = orig;
            let err = (analytic - numeric).abs();
            let tol = GRAD_ABS_FLOOR + GRAD_REL_TOL * analytic.abs().max(numeric.abs());
            let name = &model.params().get(id).name;
            check(err <= tol, || format!("{name}[{k}]: analytic {analytic:e}, numeric {numeric:e}"))?;
            worst = worst.max(err / tol);
        }
        let took = start.elapsed();
        check(took < GRAD_BUDGET, || format!("took {took:?}"))?;
        Ok(format!("{GRAD_SAMPLES} parameters, worst error {worst:.3} of tolerance, {took:.2?}"))
    })();
    report(3, "full-model gradient check", result);
}

fn random_field(rng: &mut ChaCha8Rng, t: usize, h: usize, w: usize, mask: &[bool], land: f32) -> TidalField {
    let data = (0..t * 3 * h * w)
        .map(|i| if mask[i % (h * w)] { rng.random_range(-2.0..2.0) } else { land })
        .collect();
    TidalField::new(t, h, w, data, mask.to_vec(), Extent::default(), 100.0).unwrap()
}

#[test]
fn criterion_04_land_masking_invariance() {
    let _g = serial();
    let result = (|| {
        for trial in 0..MASK_TRIALS {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + trial);
            let (h, w, t) = (rng.random_range(2..12), rng.random_range(2..12), rng.random_range(1..4));
            let mut mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.6)).collect();
            mask[rng.random_range(0..h * w)] = true;
            let gt = random_field(&mut rng, t, h, w, &mask, 0.0);
            let pred = random_field(&mut rng, t, h, w, &mask, 0.0);

            let mut gt2 = gt.clone();
            let mut pred2 = pred.clone();
            for (i, (a, b)) in gt2.data_mut().iter_mut().zip(pred2.data_mut()).enumerate() {
                if !mask[i % (h * w)] {
                    *a = [f32::NAN, f32::INFINITY, 1e30][i % 3];
                    *b = rng.random_range(-1e6..1e6);
                }
            }
            let metrics = |g: &TidalField, p: &TidalField| {
                (
                    masked_l1(p.data(), g.data(), &mask).unwrap(),
                    mse(g.data(), p.data(), &mask).unwrap(),
                    mae(g.data(), p.data(), &mask).unwrap(),
                )
            };
            let (a, b) = (metrics(&gt, &pred), metrics(&gt2, &pred2));
            check(a == b, || format!("trial {trial}: {a:?} became {b:?}"))?;

            let once = gt2.infill_nearest().map_err(|e| e.to_string())?;
            let twice = once.infill_nearest().map_err(|e| e.to_string())?;
            let bits = |f: &TidalField| f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            check(bits(&once) == bits(&twice), || format!("trial {trial}: infill is not idempotent"))?;
            check(once.all_finite(), || format!("trial {trial}: infill left non-finite land"))?;
        }
        Ok(format!("{MASK_TRIALS} random fields: metrics exactly equal, infill idempotent"))
    })();
    report(4, "masking invariance", result);
}

fn conv_oracle(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
    let [n, cin, h, wd] = x.dims4("x").unwrap();
    let cout = b.len();
    let mut out = vec![0.0; n * cout * h * wd];
    for ni in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = b.data()[co] as f64;
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as i64 + ky as i64 - 1, xx as i64 + kx as i64 - 1);
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= wd as i64 {
                                    continue;
                                }
                                let xv = x.data()[((ni * cin + ci) * h + sy as usize) * wd + sx as usize] as f64;
                                s += xv * w.data()[((co * cin + ci) * 3 + ky) * 3 + kx] as f64;
                            }
                        }
                    }
                    out[((ni * cout + co) * h + y) * wd + xx] = s;
                }
            }
        }
    }
    out
}

fn max_diff(got: &[f32], want: &[f64]) -> f64 {
    got.iter().zip(want).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_05_substrate_oracles() {
    let _g = serial();
    let result = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0.0f64;
        for i in 0..ORACLE_SHAPES {
            // pixel shuffle against the index formula
            let (n, c, r) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
            let mut g = Graph::<f32>::new();
            let input = random_tensor::<f32>(&mut rng, &[n, c * r * r, h, w]);
            let xin = g.input(input.clone());
            let y = g.pixel_shuffle(xin, r).unwrap();
            let out = g.value(y);
            check(out.shape() == [n, c, h * r, w * r], || format!("shape {:?}", out.shape()))?;
            for (ni, ci, hi, wi, dy, dx) in itertools(n, c, h, w, r) {
                let o = out.data()[((ni * c + ci) * h * r + hi * r + dy) * w * r + wi * r + dx];
                let src = input.data()[((ni * c * r * r + ci * r * r + dy * r + dx) * h + hi) * w + wi];
                check(o.to_bits() == src.to_bits(), || format!("shape {i}: pixel shuffle index mismatch"))?;
            }

            // conv2d and linear against loops
            let (n, cin, cout) = (rng.random_range(1..3), rng.random_range(1..9), rng.random_range(1..9));
            let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
            let (x, wt, b) = (
                random_tensor::<f32>(&mut rng, &[n, cin, h, w]),
                random_tensor::<f32>(&mut rng, &[cout, cin, 3, 3]),
                random_tensor::<f32>(&mut rng, &[cout]),
            );
            let want = conv_oracle(&x, &wt, &b);
            let (xv, wv, bv) = (g.input(x), g.input(wt), g.input(b));
            let y = g.conv2d(xv, wv, bv).unwrap();
            let d = max_diff(g.value(y).data(), &want);
            check(d <= ORACLE_TOL, || format!("shape {i}: conv2d off by {d:e}"))?;
            worst = worst.max(d);

            let (m, din, dout) = (rng.random_range(1..9), rng.random_range(1..40), rng.random_range(1..12));
            let (x, wt, b) = (
                random_tensor::<f32>(&mut rng, &[m, din]),
                random_tensor::<f32>(&mut rng, &[dout, din]),
                random_tensor::<f32>(&mut rng, &[dout]),
            );
            let want: Vec<f64> = (0..m * dout)
                .map(|k| {
                    let (r, o) = (k / dout, k % dout);
                    b.data()[o] as f64 + (0..din).map(|j| x.data()[r * din + j] as f64 * wt.data()[o * din + j] as f64).sum::<f64>()
                })
                .collect();
            let (xv, wv, bv) = (g.input(x), g.input(wt), g.input(b));
            let y = g.linear(xv, wv, bv).unwrap();
            let d = max_diff(g.value(y).data(), &want);
            check(d <= ORACLE_TOL, || format!("shape {i}: linear off by {d:e}"))?;
            worst = worst.max(d);
        }
        Ok(format!("{ORACLE_SHAPES} shapes: pixel shuffle bit-exact, worst conv/linear error {worst:.2e}"))
    })();
    report(5, "substrate oracles", result);
}

fn itertools(n: usize, c: usize, h: usize, w: usize, r: usize) -> impl Iterator<Item = (usize, usize, usize, usize, usize, usize)> {
    (0..n).flat_map(move |ni| {
        (0..c).flat_map(move |ci| {
            (0..h).flat_map(move |hi| {
                (0..w).flat_map(move |wi| (0..r).flat_map(move |dy| (0..r).map(move |dx| (ni, ci, hi, wi, dy, dx))))
            })
        })
    })
}

#[test]
fn criterion_06_branch_isolation() {
    let _g = serial();
    let result = (|| {
        let ratios = [(1, 1), (2, 1), (3, 1), (5, 1), (11, 1), (1, 2), (1, 5)];
        for (a, b) in ratios {
            let ratio = FmsRatio::new(a, b);
            let mut rng = ChaCha8Rng::seed_from_u64(600 + a as u64 * 10 + b as u64);
            let mut model = Model::<f32>::new(tiny(12, Some(ratio), 2), a as u64).unwrap();
            let lr = random_tensor::<f32>(&mut rng, &[1, 3, 6, 6]);
            let feat = model.features(lr.clone()).unwrap();
            let before = model.predict_grid(&feat, 0, 13, 9).unwrap();
            for id in model.head_params(BranchKind::Level) {
                model.params_mut().get_mut(id).values.iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
            }
            let feat = model.features(lr.clone()).unwrap();
            let after = model.predict_grid(&feat, 0, 13, 9).unwrap();
            let plane = 13 * 9;
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            check(bits(&before[..2 * plane]) == bits(&after[..2 * plane]), || format!("{ratio}: velocity changed"))?;
            check(before[2 * plane..] != after[2 * plane..], || format!("{ratio}: level did not change"))?;

            let mut g = Graph::new();
            let x = g.input(lr);
            let feat = model.fe_forward(&mut g, x).unwrap();
            let queries = random_queries(&mut rng, 9);
            let plan = plan_queries(6, 6, &queries).unwrap();
            let pred = model.asm_forward(&mut g, feat, &plan).unwrap();
            let t = g.input(random_tensor(&mut rng, &[9, 3]));
            let asm = g.masked_l1(pred, t, [true, true, false].repeat(9)).unwrap();
            let out = model.atm_forward(&mut g, feat).unwrap();
            let n = g.value(out).len();
            let t = g.input(random_tensor(&mut rng, g.value(out).shape()));
            let atm = g.masked_l1(out, t, (0..n).map(|i| i < 2 * n / 3).collect()).unwrap();
            let loss = g.add(asm, atm).unwrap();
            model.params_mut().zero_grads();
            g.backward(loss, model.params_mut()).unwrap();
            for id in model.head_params(BranchKind::Level) {
                let e = model.params().get(id);
                check(e.grads.iter().all(|&v| v == 0.0), || format!("{ratio}: {} has a gradient", e.name))?;
            }
        }
        Ok(format!("{} ratios: velocity bitwise unchanged, level-head gradients exactly zero", ratios.len()))
    })();
    report(6, "FMS branch isolation", result);
}

struct DeskRun {
    data: PathBuf,
    out: PathBuf,
    train_time: Duration,
}

fn desk_json() -> serde_json::Value {
    let text = std::fs::read_to_string(repo_root().join("configs/desk.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Trains the desk configuration through the CLI into `dir`.
fn train_desk(dir: &Path) -> Result<DeskRun, String> {
    let (data, out) = (dir.join("data"), dir.join("run"));
    let mut cfg = desk_json();
    cfg["paths"]["data_dir"] = p(&data).into();
    cfg["paths"]["out_dir"] = p(&out).into();
    let cfg_path = dir.join("desk.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let (_, train_time) = cli(&["train", "--config", p(&cfg_path)])?;
    Ok(DeskRun { data, out, train_time })
}

fn desk() -> &'static Result<DeskRun, String> {
    static DESK: OnceLock<Result<DeskRun, String>> = OnceLock::new();
    DESK.get_or_init(|| train_desk(&work_dir("desk")))
}

fn eval_row(pred: &Path, gt: &Path) -> Result<[f64; 4], String> {
    let (out, _) = cli(&["eval", "--pred", p(pred), "--gt", p(gt), "--scale", "4"])?;
    let row = csv_rows(&out).pop().ok_or("empty eval output")?;
    let v: Vec<f64> = row[3..7].iter().map(|s| s.parse().unwrap()).collect();
    Ok([v[0], v[1], v[2], v[3]])
}

#[test]
fn criterion_07_desk_training_beats_bicubic() {
    let _g = serial();
    let result = (|| {
        let run = desk().as_ref().map_err(Clone::clone)?;
        let synth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.data.join("synth.json")).unwrap()).unwrap();
        let split: Vec<usize> = serde_json::from_value(synth["timesteps"].clone()).unwrap();
        check(split == DESK_SPLIT, || format!("split {split:?}"))?;
        check(run.train_time < DESK_BUDGET, || format!("training took {:?}", run.train_time))?;

        let lr = run.data.join("test_lr.tcds");
        let gt = run.data.join("test_hr.tcds");
        let (asm, bic) = (run.out.join("test_asm_x4.tcds"), run.out.join("test_bicubic_x4.tcds"));
        let ckpt = run.out.join("desk.tckp");
        cli(&["infer", "--checkpoint", p(&ckpt), "--input", p(&lr), "--scale", "4", "--out", p(&asm)])?;
        cli(&["infer", "--method", "bicubic", "--input", p(&lr), "--scale", "4", "--out", p(&bic)])?;
        let (m, b) = (eval_row(&asm, &gt)?, eval_row(&bic, &gt)?);
        let detail = format!(
            "velocity MSE {:.4e} vs bicubic {:.4e}, level MSE {:.4e} vs bicubic {:.4e}, trained in {:.0?}",
            m[0], b[0], m[2], b[2], run.train_time
        );
        check(m[0] < b[0] && m[2] < b[2], || detail.clone())?;
        Ok(detail)
    })();
    report(7, "desk training beats bicubic", result);
}

#[test]
fn criterion_08_atm_speeds_up_early_training() {
    let _g = serial();
    let result = (|| {
        let cfg = desk_json();
        let model: ModelConfig = serde_json::from_value(cfg["model"].clone()).unwrap();
        let train: TrainConfig = serde_json::from_value(cfg["train"].clone()).unwrap();
        let spec: SynthSpec = serde_json::from_value(cfg["synth"].clone()).unwrap();
        let split: [f64; 3] = serde_json::from_value(cfg["split"].clone()).unwrap();
        let [tr, va, _] = split_dataset(&generate(&spec).unwrap(), split).unwrap();
        let stats = NormStats::from_sea_cells(&tr.hr).unwrap();
        let (tr, va) = (Dataset::new(&tr, &stats).unwrap(), Dataset::new(&va, &stats).unwrap());

        let mut csv = String::from("seed,atm,epoch,mean_loss_asm,mean_loss_atm,val_mse,val_mse_velocity,val_mse_level\n");
        let mut wins = 0;
        let mut pairs = Vec::new();
        for seed in ATM_SEEDS {
            let mut at_epoch = [0.0; 2];
            for (slot, atm) in [(0, true), (1, false)] {
                let tc = TrainConfig { seed, atm_enabled: atm, ..train.clone() };
                let mut trainer = Trainer::new(model.clone(), tc, stats).unwrap();
                for r in trainer.fit(&tr, Some(&va), ATM_EPOCH, &mut Vec::new()).unwrap() {
                    let v = r.val.unwrap();
                    let atm_loss = r.mean_loss_atm.map_or_else(String::new, |l| l.to_string());
                    csv += &format!(
                        "{seed},{atm},{},{},{atm_loss},{},{},{}\n",
                        r.epoch, r.mean_loss_asm, v.mse, v.velocity_mse, v.level_mse
                    );
                    if r.epoch == ATM_EPOCH {
                        at_epoch[slot] = v.mse;
                    }
                }
            }
            wins += usize::from(at_epoch[0] < at_epoch[1]);
            pairs.push(format!("seed {seed}: {:.3e} vs {:.3e}", at_epoch[0], at_epoch[1]));
        }
        let path = work_dir("atm").join("atm_curves.csv");
        std::fs::write(&path, csv).unwrap();
        let detail = format!(
            "ATM on vs off at epoch {ATM_EPOCH}: {} ({wins}/{} wins, curves in {})",
            pairs.join("; "),
            ATM_SEEDS.len(),
            path.display()
        );
        check(wins >= ATM_MIN_WINS, || detail.clone())?;
        Ok(detail)
    })();
    report(8, "ATM effect on early validation", result);
}

fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let text_end = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').nth(2).ok_or("short PGM header")?.0;
    let header = std::str::from_utf8(&bytes[..text_end]).map_err(|e| e.to_string())?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    check(tok.len() == 4 && tok[0] == "P5" && tok[3] == "255", || format!("bad PGM header {header:?}"))?;
    let (w, h): (usize, usize) = (tok[1].parse().unwrap(), tok[2].parse().unwrap());
    let pixels = bytes[text_end + 1..].to_vec();
    check(pixels.len() == w * h, || format!("PGM has {} pixels, expected {}", pixels.len(), w * h))?;
    Ok((w, h, pixels))
}

#[test]
fn criterion_09_arbitrary_scales() {
    let _g = serial();
    let result = (|| {
        let run = desk().as_ref().map_err(Clone::clone)?;
        let dir = work_dir("scales");
        let ckpt = run.out.join("desk.tckp");
        let lr_path = run.data.join("test_lr.tcds");
        let lr = TidalField::load(&lr_path).unwrap();
        let single = dir.join("test_lr_t0.tcds");
        lr.slice_time(0, 1).unwrap().save(&single).unwrap();

        let mut notes = Vec::new();
        for s in INFER_SCALES {
            // the x50 grid is 1200x1200, so it runs on one timestep
            let (input, t) = if s >= 50.0 { (&single, 1) } else { (&lr_path, lr.timesteps()) };
            let out = dir.join(format!("x{s}.tcds"));
            let (_, took) = cli(&["infer", "--checkpoint", p(&ckpt), "--input", p(input), "--scale", &s.to_string(), "--out", p(&out)])?;
            let field = TidalField::load(&out).unwrap();
            let side = (24.0 * s).round() as usize;
            check(field.shape() == [t, 3, side, side], || format!("x{s}: shape {:?}", field.shape()))?;
            check(field.all_finite(), || format!("x{s}: non-finite values"))?;
            if s >= 50.0 {
                check(took < X50_BUDGET, || format!("x50 took {took:?}"))?;
                notes.push(format!("x50 in {took:.1?}"));
            }
            for ch in ["u", "v", "level"] {
                let pgm = dir.join(format!("x{s}_{ch}.pgm"));
                cli(&["render", "--field", p(&out), "--channel", ch, "--t", "0", "--out", p(&pgm)])?;
                let (w, h, px) = read_pgm(&pgm)?;
                check((w, h) == (side, side), || format!("x{s} {ch}: image {w}x{h}"))?;
                let holes = px.iter().zip(field.mask()).filter(|(&v, &sea)| sea && v == 0).count();
                check(holes == 0, || format!("x{s} {ch}: {holes} black sea pixels"))?;
            }
        }
        Ok(format!("scales {INFER_SCALES:?}: shapes correct, all finite, no black sea pixels; {}", notes.join(", ")))
    })();
    report(9, "arbitrary-scale inference", result);
}

fn without_wall_clock(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

#[test]
fn criterion_10_repeat_run_is_bitwise_identical() {
    let _g = serial();
    let result = (|| {
        let first = desk().as_ref().map_err(Clone::clone)?;
        let second = train_desk(&work_dir("desk_repeat"))?;
        let read = |run: &DeskRun, f: &str| std::fs::read(run.out.join(f)).unwrap();
        check(read(first, "desk.tckp") == read(&second, "desk.tckp"), || "checkpoints differ".into())?;
        for split in ["train", "val", "test"] {
            for res in ["lr", "hr"] {
                let f = format!("{split}_{res}.tcds");
                let same = std::fs::read(first.data.join(&f)).unwrap() == std::fs::read(second.data.join(&f)).unwrap();
                check(same, || format!("{f} differs"))?;
            }
        }
        let loss = |run: &DeskRun| without_wall_clock(&String::from_utf8(read(run, "desk.loss.csv")).unwrap());
        check(loss(first) == loss(&second), || "loss logs differ".into())?;
        check(read(first, "desk.epochs.csv") == read(&second, "desk.epochs.csv"), || "epoch logs differ".into())?;
        Ok(format!("checkpoint ({} bytes), datasets, loss and epoch logs identical", read(first, "desk.tckp").len()))
    })();
    report(10, "determinism", result);
}
