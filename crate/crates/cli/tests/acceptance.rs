//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use largo_cli::commands::{self, SweepSource};
use largo_cli::read_csv;
use largo_core::data::{generate, DatasetBundle, ShiftSpec};
use largo_core::gradcheck;
use largo_core::largo::{compose_regulated, GammaPair, LargoState};
use largo_core::linalg::{rand_normal, svd_top_r, Mat, Rng};
use largo_core::lora::{compute_s_r, init_svd, LoraAdapter};
use largo_core::model::ModelState;
use largo_core::projection::{project_mars, project_row};
use largo_core::tpgm::{tpgm_step, TpgmState};
use largo_core::train::{pretrain, train_run, Method, MetricsRow, PretrainConfig, RunConfig, RunOutcome};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let report = match gradcheck::run_suite(100, 0) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let worst = report.worst().unwrap();
    let mut kinds: Vec<&str> = report.checks.iter().map(|c| c.name).collect();
    kinds.sort();
    kinds.dedup();
    let pass = report.passed(1e-5) && elapsed < Duration::from_secs(30) && kinds.len() == 12;
    verdict(
        pass,
        format!(
            "{} checks over {} kinds, worst {} {:.2e}, {:.1?}",
            report.checks.len(),
            kinds.len(),
            worst.name,
            worst.rel_err,
            elapsed
        ),
    )
}

fn projection_invariants() -> Verdict {
    let mut rng = Rng::new(2);
    let mut failures = Vec::new();
    for t in 0..500 {
        let n = 1 + rng.below(6);
        let d = 1 + rng.below(6);
        let gamma = rng.uniform(0.01, 5.0);
        let w0 = rand_normal(&mut rng, n, d, 1.0).unwrap();
        let w_hat = w0.add(&rand_normal(&mut rng, n, d, 1.5).unwrap()).unwrap();
        let once = project_mars(&w0, &w_hat, gamma).unwrap();
        let twice = project_mars(&w0, &once, gamma).unwrap();
        if once.data().iter().zip(twice.data()).any(|(a, b)| (a - b).abs() > 1e-12) {
            failures.push(format!("instance {t}: not idempotent"));
        }
        for i in 0..n {
            let delta: Vec<f64> = w_hat.row(i).iter().zip(w0.row(i)).map(|(a, b)| a - b).collect();
            let row = project_row(&delta, gamma);
            let want = l1(&delta).min(gamma);
            if (l1(&row) - want).abs() > 1e-12 * want.max(1.0) {
                failures.push(format!("instance {t} row {i}: norm {} vs {want}", l1(&row)));
            }
            let alpha = if l1(&delta) > 0.0 { l1(&row) / l1(&delta) } else { 1.0 };
            let aligned = alpha > 0.0
                && alpha <= 1.0
                && row.iter().zip(&delta).all(|(r, x)| (r - alpha * x).abs() <= 1e-12 * x.abs().max(1.0));
            if !aligned {
                failures.push(format!("instance {t} row {i}: direction changed"));
            }
            let mars_row: Vec<f64> = once.row(i).iter().zip(w0.row(i)).map(|(a, b)| a - b).collect();
            if mars_row.iter().zip(&row).any(|(a, b)| (a - b).abs() > 1e-12) {
                failures.push(format!("instance {t} row {i}: matrix projection differs from row projection"));
            }
        }
    }
    verdict(
        failures.is_empty(),
        match failures.first() {
            Some(f) => format!("{} failures, first: {f}", failures.len()),
            None => "500 instances".into(),
        },
    )
}

/// Per-seed benchmark and pretrained model on the default spec.
struct Seeded {
    bundle: DatasetBundle,
    base: ModelState,
}

fn seeded(seed: u64) -> Seeded {
    let spec = ShiftSpec { seed, ..ShiftSpec::default() };
    let bundle = generate(&spec).unwrap();
    let pcfg = PretrainConfig { seed, ..PretrainConfig::default() };
    let base = pretrain(&pcfg, &bundle.pretrain, spec.classes).unwrap();
    Seeded { bundle, base }
}

/// Final-epoch (id_val accuracy, mean OOD accuracy).
fn final_accuracies(rows: &[MetricsRow]) -> (f64, f64) {
    let last = rows.iter().map(|r| r.epoch).max().unwrap();
    let fin: Vec<&MetricsRow> = rows.iter().filter(|r| r.epoch == last).collect();
    let id = fin.iter().find(|r| r.split_name == "id_val").unwrap().accuracy;
    let ood: Vec<f64> = fin
        .iter()
        .filter(|r| r.split_name != "id_val" && r.split_name != "id_train")
        .map(|r| r.accuracy)
        .collect();
    (id, ood.iter().sum::<f64>() / ood.len() as f64)
}

fn largo_bound(out: &RunOutcome) -> Verdict {
    let epochs = out.trace.len();
    let bad = out
        .trace
        .iter()
        .filter(|t| t.delta_l1 > t.bound * (1.0 + 1e-12))
        .count();
    let last = out.trace.last().unwrap();
    verdict(
        bad == 0 && out.bound_violations == 0 && epochs == 51,
        format!(
            "{epochs} logged epochs, {bad} over bound, {} step violations, final delta_l1 {:.3e} <= {:.3e}",
            out.bound_violations, last.delta_l1, last.bound
        ),
    )
}

fn svd_init_identity() -> Verdict {
    let mut rng = Rng::new(4);
    let mut worst: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..100 {
        let n = 2 + rng.below(9);
        let d = 2 + rng.below(9);
        let r = 1 + rng.below(n.min(d).min(4));
        let w0 = rand_normal(&mut rng, n, d, 1.0).unwrap();
        let s_r = compute_s_r(&svd_top_r(&w0, r).unwrap().sigma_r, r).unwrap();
        let mut norms = Vec::new();
        for s in [1.0, 0.5, 0.1] {
            let (a, b) = init_svd(&w0, r, s).unwrap();
            let got = largo_core::linalg::matmul(&a, &b).unwrap().frobenius_norm();
            worst = worst.max((got - s * s * s_r * (r as f64).sqrt()).abs());
            norms.push(got);
        }
        worst_ratio = worst_ratio
            .max((norms[1] - 0.25 * norms[0]).abs())
            .max((norms[2] - 0.01 * norms[0]).abs());
    }
    verdict(
        worst < 1e-10 && worst_ratio < 1e-10,
        format!("100 bases, identity deviation {worst:.1e}, s^2 scaling deviation {worst_ratio:.1e}"),
    )
}

fn directional(lora: &[(f64, f64)], largo: &[(f64, f64)], elapsed: Duration) -> Verdict {
    let mean = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    let (lo_id, lo_ood) = (mean(lora, |x| x.0), mean(lora, |x| x.1));
    let (la_id, la_ood) = (mean(largo, |x| x.0), mean(largo, |x| x.1));
    let pass = lora.len() >= 10
        && la_ood >= lo_ood
        && (la_id - lo_id).abs() <= 0.02
        && elapsed < Duration::from_secs(600);
    verdict(
        pass,
        format!(
            "{} seeds: largo ood {la_ood:.4} vs lora {lo_ood:.4}; id {la_id:.4} vs {lo_id:.4}; {:.0?}",
            lora.len(),
            elapsed
        ),
    )
}

/// Smooth test loss `Σ t·w + 0.15·w² + sin w` and its gradient.
fn smooth_grad(target: &Mat, w: &Mat) -> Mat {
    let data = w.data().iter().zip(target.data()).map(|(x, t)| t + 0.3 * x + x.cos()).collect();
    Mat::from_vec(w.rows(), w.cols(), data).unwrap()
}

fn max_row_excess(w: &Mat, w0: &Mat, gamma: f64) -> f64 {
    (0..w.rows())
        .map(|i| l1(&w.row(i).iter().zip(w0.row(i)).map(|(a, b)| a - b).collect::<Vec<_>>()) - gamma)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn tpgm_feasibility(base: &ModelState, trained: &RunOutcome) -> Verdict {
    let mut rng = Rng::new(6);
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    let mut sgd_equal = true;
    for _ in 0..100 {
        let n = 1 + rng.below(8);
        let d = 1 + rng.below(8);
        let w0 = rand_normal(&mut rng, n, d, 1.0).unwrap();
        let t_train = rand_normal(&mut rng, n, d, 1.0).unwrap();
        let t_val = rand_normal(&mut rng, n, d, 1.0).unwrap();
        let gamma = rng.uniform(0.01, 1.0);
        let mut st = TpgmState::new(w0.clone(), w0.clone(), gamma, 0.1).unwrap();
        let mut loose = TpgmState::new(w0.clone(), w0.clone(), 1e12, 0.1).unwrap();
        let mut sgd = w0.clone();
        for _ in 0..30 {
            st = tpgm_step(&st, &smooth_grad(&t_train, &st.w), |w| smooth_grad(&t_val, w), 0.1).unwrap();
            worst = worst.max(max_row_excess(&st.w, &w0, st.gamma));
            steps += 1;
            loose = tpgm_step(&loose, &smooth_grad(&t_train, &loose.w), |w| smooth_grad(&t_val, w), 0.1).unwrap();
            sgd = sgd.add_scaled(-0.1, &smooth_grad(&t_train, &sgd)).unwrap();
            sgd_equal &= loose.w == sgd;
        }
    }
    // the trained network's layers against their final radii
    let anchors = base.effective_weights();
    let mut layer_worst = f64::NEG_INFINITY;
    for ((layer, w0), &gamma) in trained.model.layers.iter().zip(&anchors).zip(&trained.radii) {
        layer_worst = layer_worst.max(max_row_excess(&layer.weight.effective(), w0, gamma));
    }
    verdict(
        worst <= 1e-12 && layer_worst <= 1e-12 && trained.radii.len() == 2 && sgd_equal,
        format!(
            "{steps} steps, max row excess {worst:.1e}; trained network excess {layer_worst:.1e}; \
             gamma=1e12 trajectory {} SGD",
            if sgd_equal { "bitwise equals" } else { "differs from" }
        ),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

type Final = (f64, f64, f64);

fn ablations() -> Verdict {
    let start = Instant::now();
    let dir = scratch("ablations");
    let mut detail = Vec::new();
    let mut pass = true;
    let grids = [
        ("gamma_init", "method = largo\ngamma_init = 1e-4, 1e-6, 1e-8\n"),
        ("svd_scalar", "method = largo\nsvd_scalar = 1, 0.5, 0.1\n"),
    ];
    for (key, grid) in grids {
        let grid_path = write(&dir, &format!("{key}.txt"), grid);
        let out = dir.join(key);
        if let Err(e) = commands::sweep_cmd(&grid_path, &[0, 1, 2], SweepSource::Spec(None), &out, 1) {
            return verdict(false, format!("{key} sweep failed: {e}"));
        }
        let rows = match read_csv(&out.join(commands::METRICS_FILE)) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("{key} csv unreadable: {e}")),
        };
        // value -> per-seed (delta_l1, id, ood)
        let mut per_value: Vec<(String, Vec<Final>)> = Vec::new();
        let mut ids: Vec<&str> = rows.iter().map(|r| r.run_id.as_str()).collect();
        ids.dedup();
        for id in ids {
            let run: Vec<MetricsRow> = rows.iter().filter(|r| r.run_id == id).cloned().collect();
            let cfg_text = std::fs::read_to_string(out.join("runs.txt")).unwrap();
            let block = cfg_text.split(&format!("[{id}]\n")).nth(1).unwrap();
            let value = block
                .lines()
                .find_map(|l| l.strip_prefix(&format!("{key} = ")))
                .unwrap()
                .to_string();
            let last = run.iter().map(|r| r.epoch).max().unwrap();
            let delta = run.iter().find(|r| r.epoch == last).unwrap().delta_l1;
            let (i, o) = final_accuracies(&run);
            match per_value.iter_mut().find(|(v, _)| *v == value) {
                Some((_, v)) => v.push((delta, i, o)),
                None => per_value.push((value, vec![(delta, i, o)])),
            }
        }
        let mut summary: Vec<(f64, f64, f64, f64)> = per_value
            .iter()
            .map(|(v, runs)| {
                let n = runs.len() as f64;
                (
                    v.parse::<f64>().unwrap(),
                    runs.iter().map(|r| r.0).sum::<f64>() / n,
                    runs.iter().map(|r| r.1).sum::<f64>() / n,
                    runs.iter().map(|r| r.2).sum::<f64>() / n,
                )
            })
            .collect();
        summary.sort_by(|a, b| a.0.total_cmp(&b.0));
        pass &= rows.len() == 3 * 3 * 51 * 5 && per_value.iter().all(|(_, r)| r.len() == 3);
        if key == "gamma_init" {
            pass &= summary.windows(2).all(|w| w[0].1 <= w[1].1);
        }
        let cells: Vec<String> = summary
            .iter()
            .map(|(v, d, i, o)| format!("{v:e}: delta {d:.2e} id {i:.4} ood {o:.4}"))
            .collect();
        detail.push(format!("{key} [{}]", cells.join("; ")));
    }
    detail.push(format!("{:.0?}", start.elapsed()));
    verdict(pass, detail.join(" | "))
}

fn determinism() -> Verdict {
    let dir = scratch("determinism");
    let exe = env!("CARGO_BIN_EXE_largo");
    let spec = write(
        &dir,
        "spec.in",
        "seed = 8\nn_pretrain = 2000\nn_id_train = 400\nn_ood = 300\nhidden = 24,24\npretrain_epochs = 4\n",
    );
    let cfg = write(&dir, "cfg.txt", "method = tpgm_lora\nepochs = 3\nrank = 4\nseed = 5\n");
    let grid = write(&dir, "grid.txt", "method = largo, vanilla_ft, linear_probe\nepochs = 2\nrank = 4\n");
    let run = |args: Vec<String>| -> Result<(), String> {
        let out = Command::new(exe).args(&args).env("LARGO_THREADS", "2").output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut files: Vec<Vec<Vec<u8>>> = Vec::new();
    for k in 0..2 {
        let base = dir.join(format!("base{k}"));
        let tuned = dir.join(format!("tuned{k}"));
        let swept = dir.join(format!("sweep{k}"));
        let ckpt = base.join(commands::CHECKPOINT_FILE);
        let steps = [
            vec!["pretrain".into(), "--spec".into(), s(&spec), "--out".into(), s(&base)],
            vec!["finetune".into(), "--config".into(), s(&cfg), "--pretrained".into(), s(&ckpt), "--out".into(), s(&tuned)],
            vec![
                "sweep".into(), "--grid".into(), s(&grid), "--seeds".into(), "0,1".into(),
                "--pretrained".into(), s(&ckpt), "--out".into(), s(&swept),
            ],
        ];
        for step in steps {
            if let Err(e) = run(step) {
                return verdict(false, e);
            }
        }
        let read = |p: PathBuf| std::fs::read(p).unwrap();
        files.push(vec![
            read(ckpt),
            read(base.join(commands::DATA_FILE)),
            read(tuned.join(commands::METRICS_FILE)),
            read(tuned.join(commands::CHECKPOINT_FILE)),
            read(swept.join(commands::METRICS_FILE)),
        ]);
    }
    let same = files[0] == files[1];
    verdict(
        same,
        format!(
            "pretrain, finetune and sweep repeated: {}",
            if same { "all outputs byte-identical" } else { "outputs differ" }
        ),
    )
}

fn scale_invariance() -> Verdict {
    let mut rng = Rng::new(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = 1 + rng.below(8);
        let d = 1 + rng.below(8);
        let r = 1 + rng.below(n.min(d).min(3));
        let w0 = rand_normal(&mut rng, n, d, 1.0).unwrap();
        let a = rand_normal(&mut rng, n, r, 1.0).unwrap();
        let b = rand_normal(&mut rng, r, d, 1.0).unwrap();
        let gammas = GammaPair::new(rng.uniform(0.01, 2.0), rng.uniform(0.01, 2.0), 0.1).unwrap();
        let st = LargoState::new(LoraAdapter::new(w0.clone(), a.clone(), b.clone()).unwrap(), gammas);
        let base = compose_regulated(&st);
        for k in [0.5, 2.0, 10.0] {
            let moved = LargoState::new(LoraAdapter::new(w0.clone(), a.scale(k), b.clone()).unwrap(), gammas);
            let m = compose_regulated(&moved);
            worst = worst.max(base.data().iter().zip(m.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
    }
    verdict(worst < 1e-12, format!("200 states x 3 factors, max deviation {worst:.1e}"))
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!("{} criterion {n} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };

    report(1, "gradient oracles", gradient_suite());
    report(2, "projection invariants", projection_invariants());

    // criteria 3, 5 and 6 share the per-seed default benchmarks
    let start = Instant::now();
    let mut lora = Vec::new();
    let mut largo = Vec::new();
    let mut seed0 = None;
    for seed in 0..10 {
        let s = seeded(seed);
        let cfg = |method| RunConfig { method, seed, ..RunConfig::default() };
        let lo = train_run(&cfg(Method::Lora), &s.bundle, &s.base).unwrap();
        let la = train_run(&cfg(Method::Largo), &s.bundle, &s.base).unwrap();
        lora.push(final_accuracies(&lo.rows));
        largo.push(final_accuracies(&la.rows));
        if seed == 0 {
            seed0 = Some((s, la));
        }
    }
    let elapsed = start.elapsed();
    let (s0, largo0) = seed0.unwrap();

    report(3, "largo constraint bound", largo_bound(&largo0));
    report(4, "svd init identity", svd_init_identity());
    report(5, "directional ood result", directional(&lora, &largo, elapsed));
    let tpgm = train_run(&RunConfig { method: Method::Tpgm, ..RunConfig::default() }, &s0.bundle, &s0.base).unwrap();
    report(6, "tpgm feasibility", tpgm_feasibility(&s0.base, &tpgm));
    report(7, "ablation grids", ablations());
    report(8, "determinism", determinism());
    report(9, "scale invariance", scale_invariance());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
