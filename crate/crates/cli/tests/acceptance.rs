//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use apcjust_core::bayes::{weight_sm, BmeReport, LikelihoodSpec};
use apcjust_core::justifiability::ConfusionMatrix;
use apcjust_core::runner::toy::column_grid;
use apcjust_core::{
    basis_size, bme_monte_carlo, build_family, confusion_matrix, initial_collocation, initial_surrogate, loocv_error,
    solve_coefficients, CandidateModel, CollocationSet, ConfusionSettings, DataSubset, ModelKind, ModelSpec,
    MultivariateBasis, ObservationSet, OutputCoordinate, OutputGrid, ParameterSpace, Prior1D, Provenance, Runner,
    ToyModel, UpdateTrace,
};

type ToyFn = fn(&[f64]) -> Vec<f64>;

const BIN: &str = env!("CARGO_BIN_EXE_apcjust");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn column_priors() -> ParameterSpace {
    ParameterSpace::new(vec![
        ("c_a1".into(), Prior1D::uniform(1e-10, 1e-7).unwrap()),
        ("c_a2".into(), Prior1D::uniform(1e-10, 1e-6).unwrap()),
        ("rho_f".into(), Prior1D::uniform(1.0, 15.0).unwrap()),
        ("k_ub".into(), Prior1D::uniform(1e-5, 5e-4).unwrap()),
    ])
    .unwrap()
}

fn grid(n: usize) -> OutputGrid {
    OutputGrid::new(
        (0..n)
            .map(|i| OutputCoordinate::new(format!("{i}"), "0", "q"))
            .collect(),
    )
    .unwrap()
}

fn outputs_at<F: Fn(&[f64]) -> Vec<f64>>(set: &CollocationSet, f: F) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = set.points().iter().map(|p| f(p)).collect();
    DMatrix::from_fn(cols[0].len(), cols.len(), |r, c| cols[c][r])
}

fn expansion_size() -> Outcome {
    let space = column_priors();
    let basis = MultivariateBasis::new(&space, 2).unwrap();
    let set = initial_collocation(&basis, &space, basis.len()).unwrap();
    let d = basis_size(4, 2) - 1;
    outcome(
        d == 14 && basis.len() == 15 && basis.expansion_size() == 14 && set.len() == 15,
        format!("D={d} terms={} collocation={}", basis.len(), set.len()),
    )
}

fn orthonormality() -> Outcome {
    use rand::{Rng, SeedableRng};
    let n = 1_000_000;
    let mut worst = 0.0f64;
    for (i, prior) in column_priors().priors().iter().enumerate() {
        let fam = build_family(prior, 3).unwrap();
        let (lo, hi) = prior.bounds();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut sum = [[0.0f64; 4]; 4];
        let mut sum_sq = [[0.0f64; 4]; 4];
        for _ in 0..n {
            let x = rng.random_range(lo..hi);
            let psi = fam.evaluate_all(x, 3);
            for a in 0..4 {
                for b in a..4 {
                    let v = psi[a] * psi[b];
                    sum[a][b] += v;
                    sum_sq[a][b] += v * v;
                }
            }
        }
        for a in 0..4 {
            for b in a..4 {
                let mean = sum[a][b] / n as f64;
                let var = (sum_sq[a][b] / n as f64 - mean * mean).max(0.0);
                let se = (var / n as f64).sqrt();
                let delta = if a == b { 1.0 } else { 0.0 };
                if se > 0.0 {
                    worst = worst.max((mean - delta).abs() / se);
                } else if (mean - delta).abs() > 1e-12 {
                    worst = f64::INFINITY;
                }
            }
        }
    }
    outcome(worst <= 3.0, format!("max deviation {worst:.2} standard errors"))
}

fn collocation_interpolation() -> Outcome {
    let space = column_priors();
    let g = column_grid();
    let runner = Runner::new(4).unwrap();
    let mut worst = 0.0f64;
    let models = [
        ("FC", ToyModel::FullComplexity, vec!["c_a1", "c_a2", "rho_f", "k_ub"]),
        ("IB", ToyModel::InitialBiofilm, vec!["rho_f", "k_ub"]),
        ("SC", ToyModel::SimpleChemistry, vec!["c_a1", "c_a2", "rho_f", "k_ub"]),
    ];
    for (id, toy, params) in models {
        let spec = ModelSpec::new(
            id,
            ModelKind::Toy(toy),
            params.into_iter().map(String::from).collect(),
            &space,
            g.clone(),
        )
        .unwrap();
        let sur = initial_surrogate(&spec, &runner, &space, 2).unwrap();
        let fitted = sur.evaluate(&sur.collocation().to_matrix());
        let cached = sur.model_outputs();
        for p in 0..cached.ncols() {
            for j in 0..cached.nrows() {
                let rel = (fitted[(p, j)] - cached[(j, p)]).abs() / cached[(j, p)].abs().max(f64::MIN_POSITIVE);
                worst = worst.max(rel);
            }
        }
    }
    outcome(worst < 1e-8, format!("max relative residual {worst:.2e}"))
}

fn loocv_oracle() -> Outcome {
    let space = ParameterSpace::new(vec![
        ("x".into(), Prior1D::uniform(-1.0, 2.0).unwrap()),
        ("y".into(), Prior1D::uniform(0.0, 3.0).unwrap()),
    ])
    .unwrap();
    let basis = MultivariateBasis::new(&space, 2).unwrap();
    let samples = space.sample(12, 5).unwrap();
    let points: Vec<Vec<f64>> = samples.row_iter().map(|r| r.iter().copied().collect()).collect();
    let set = CollocationSet::from_points(points, vec![Provenance::Initial; 12]).unwrap();
    let poly = |p: &[f64]| vec![1.0 + p[0] - 2.0 * p[1] + 0.5 * p[0] * p[1] + 0.25 * p[1] * p[1]];
    let mut y = outputs_at(&set, poly);
    let clean = loocv_error(&basis, &set, &y).unwrap();
    let delta = 0.123;
    y[(0, 4)] += delta;
    let perturbed = loocv_error(&basis, &set, &y).unwrap();
    let fold_err = (perturbed.fold_squared_errors[4][0] - delta * delta).abs();
    outcome(
        clean.mean_mse < 1e-12 && fold_err < 1e-10,
        format!(
            "clean LOOCV {:.2e}, perturbed fold error {fold_err:.2e}",
            clean.mean_mse
        ),
    )
}

/// Evidence of `y_i = c_i θ + noise`, `θ ~ U(lo, hi)`, in closed form.
fn linear_gaussian_evidence(c: &[f64], y: &[f64], sigma: &[f64], lo: f64, hi: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let a: f64 = c.iter().zip(sigma).map(|(c, s)| c * c / (s * s)).sum();
    let b: f64 = c.iter().zip(y).zip(sigma).map(|((c, y), s)| c * y / (s * s)).sum();
    let yy: f64 = y.iter().zip(sigma).map(|(y, s)| y * y / (s * s)).sum();
    let two_pi = 2.0 * std::f64::consts::PI;
    let log_norm: f64 = sigma.iter().map(|s| -(s * two_pi.sqrt()).ln()).sum();
    let n = Normal::new(b / a, 1.0 / a.sqrt()).unwrap();
    (log_norm - 0.5 * (yy - b * b / a)).exp() * (two_pi / a).sqrt() * (n.cdf(hi) - n.cdf(lo)) / (hi - lo)
}

fn bme_oracle() -> Outcome {
    let (lo, hi) = (-1.0, 3.0);
    let space = ParameterSpace::new(vec![("theta".into(), Prior1D::uniform(lo, hi).unwrap())]).unwrap();
    let c = [1.0, 0.4, -1.5, 2.0];
    let g = grid(c.len());
    let y = vec![0.9, 0.2, -1.1, 1.8];
    let sigma = vec![0.9, 0.5, 1.1, 1.4];
    let obs = ObservationSet::new(g.clone(), y.clone(), sigma.clone()).unwrap();
    let basis = MultivariateBasis::new(&space, 1).unwrap();
    let set = initial_collocation(&basis, &space, 2).unwrap();
    let sur = solve_coefficients(
        &basis,
        &set,
        &outputs_at(&set, |p| c.iter().map(|ci| ci * p[0]).collect()),
    )
    .unwrap();
    let exact = linear_gaussian_evidence(&c, &y, &sigma, lo, hi);
    let subset = DataSubset::full(&g);
    let hits = (0..20u64)
        .filter(|&seed| {
            let est = bme_monte_carlo(&sur, &space, &obs, 100_000, 1000 + seed, &subset).unwrap();
            (est.bme().unwrap() / exact - 1.0).abs() < 0.02
        })
        .count();
    outcome(hits >= 18, format!("{hits}/20 seeds within 2% of {exact:.4e}"))
}

fn correction_identities() -> Outcome {
    let space = ParameterSpace::new(vec![
        ("a".into(), Prior1D::uniform(0.0, 1.0).unwrap()),
        ("b".into(), Prior1D::uniform(-1.0, 1.0).unwrap()),
    ])
    .unwrap();
    let g = grid(3);
    let obs = ObservationSet::with_relative_error(g.clone(), vec![1.2, 0.4, 0.9], 0.2).unwrap();
    let subset = DataSubset::full(&g);
    let basis = MultivariateBasis::new(&space, 2).unwrap();
    let set = initial_collocation(&basis, &space, basis.len()).unwrap();
    let exact_models: [ToyFn; 3] = [
        |p| vec![1.0 + p[0], 0.5 * p[1] * p[1], p[0] * p[1] + 0.8],
        |p| vec![1.1 + 0.3 * p[1], 0.2 + p[0] * p[0], 0.9],
        |p| vec![0.6 + p[0] * p[1], 0.4 + 0.1 * p[0], 1.0 - 0.2 * p[1]],
    ];
    let surrogates: Vec<_> = exact_models
        .iter()
        .map(|f| solve_coefficients(&basis, &set, &outputs_at(&set, f)).unwrap())
        .collect();
    let shared = vec![0.05, 0.02, 0.07];
    let s = LikelihoodSpec::new(shared.clone()).unwrap();

    // (a) exact surrogate: Weight_SM is the zero-residual density constant
    let w = weight_sm(&surrogates[0], surrogates[0].model_outputs(), &obs, &s, &subset).unwrap();
    let constant = (2.0 * std::f64::consts::PI).powf(-1.5) / shared.iter().product::<f64>().sqrt();
    let err_a = (w.log_weight.exp() / constant - 1.0).abs();

    // (b) BME_OM = BME_SM * Weight_SM as stored
    let entries: Vec<_> = surrogates
        .iter()
        .enumerate()
        .map(|(i, sur)| {
            let est = bme_monte_carlo(sur, &space, &obs, 5000, 3, &subset).unwrap();
            let w = weight_sm(sur, sur.model_outputs(), &obs, &s, &subset).unwrap();
            (format!("m{i}"), est, w)
        })
        .collect();
    let report = BmeReport::new(&subset, &entries, None).unwrap();
    let b_ok = report.models.iter().all(|m| match (m.bme_sm, m.weight_sm, m.bme_om) {
        (Some(b), Some(w), Some(o)) => o == b * w && m.log_bme_om == m.log_bme_sm + m.log_weight_sm,
        _ => false,
    });

    // (c) argmax invariant under correction
    let candidates: Vec<_> = surrogates
        .iter()
        .enumerate()
        .map(|(i, sur)| CandidateModel::new(format!("m{i}"), sur.clone(), shared.clone()).unwrap())
        .collect();
    let settings = ConfusionSettings {
        n_mc: 1000,
        seed: 5,
        include_measurement: false,
    };
    let m = confusion_matrix(&candidates, &space, &obs, &subset, &settings).unwrap();
    let c_ok = m.column_argmax(false) == m.column_argmax(true);
    outcome(
        err_a < 1e-10 && b_ok && c_ok,
        format!("(a) rel err {err_a:.1e}, (b) {b_ok}, (c) {c_ok}"),
    )
}

fn confusion_structure() -> Outcome {
    let space = column_priors();
    let g = column_grid();
    let runner = Runner::new(4).unwrap();
    let spec = |id: &str, toy| {
        ModelSpec::new(
            id,
            ModelKind::Toy(toy),
            ["c_a1", "c_a2", "rho_f", "k_ub"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            &space,
            g.clone(),
        )
        .unwrap()
    };
    let fc = initial_surrogate(&spec("FC", ToyModel::FullComplexity), &runner, &space, 2).unwrap();
    let sc = initial_surrogate(&spec("SC", ToyModel::SimpleChemistry), &runner, &space, 2).unwrap();
    let values = ToyModel::FullComplexity
        .evaluate(&[5e-8, 5e-7, 8.0, 2.55e-4], &g)
        .unwrap();
    let obs = ObservationSet::with_relative_error(g.clone(), values, 0.2).unwrap();
    let var = vec![1e-4; g.len()];
    let subset = DataSubset::new(&g, "calcite_content", 2).unwrap();

    // column sums, with the measurement row and column
    let models = vec![
        CandidateModel::new("FC", fc.clone(), var.clone()).unwrap(),
        CandidateModel::new("SC", sc, var.clone()).unwrap(),
    ];
    let settings = ConfusionSettings {
        n_mc: 2000,
        seed: 17,
        include_measurement: true,
    };
    let m = confusion_matrix(&models, &space, &obs, &subset, &settings).unwrap();
    let sum_err = m
        .column_sums(false)
        .into_iter()
        .chain(m.column_sums(true))
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);

    // identical pair
    let pair = vec![
        CandidateModel::new("A", fc.clone(), var.clone()).unwrap(),
        CandidateModel::new("B", fc, var).unwrap(),
    ];
    let settings = ConfusionSettings {
        n_mc: 10_000,
        seed: 23,
        include_measurement: false,
    };
    let p = confusion_matrix(&pair, &space, &obs, &subset, &settings).unwrap();
    let mut worst = 0.0f64;
    for r in 0..2 {
        for c in 0..2 {
            let tol = (3.0 * p.std_errors[r][c]).max(1e-12);
            worst = worst.max((p.raw[r][c] - 0.5).abs() / tol);
        }
    }
    outcome(
        sum_err < 1e-12 && worst <= 1.0,
        format!("max |column sum - 1| {sum_err:.1e}; pair block deviation {worst:.2} of tolerance"),
    )
}

struct DemoRun {
    out: PathBuf,
    first: Duration,
    second: Duration,
    identical: Result<usize, String>,
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        if name == "output" || name == "cache" {
            continue;
        }
        let target = to.join(&name);
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn csv_files(dir: &Path, acc: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            csv_files(&p, acc);
        } else if p.extension().is_some_and(|e| e == "csv") {
            acc.push(p);
        }
    }
}

fn run_demo(work: &Path) -> DemoRun {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo");
    copy_dir(&demo, work);
    let config = work.join("toy_analysis.toml");
    let out = work.join("output");
    let all = || {
        let t = Instant::now();
        let status = Command::new(BIN)
            .args(["all", config.to_str().unwrap()])
            .env_remove("APCJUST_CACHE_DIR")
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        t.elapsed()
    };
    let first = all();
    let mut files = Vec::new();
    csv_files(&out, &mut files);
    files.sort();
    let snapshot: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    let second = all();
    let identical = files
        .iter()
        .zip(&snapshot)
        .find(|(f, bytes)| fs::read(f).ok().as_ref() != Some(*bytes))
        .map_or(Ok(files.len()), |(f, _)| Err(format!("{} differs", f.display())));
    DemoRun {
        out,
        first,
        second,
        identical,
    }
}

fn matrix(out: &Path, label: &str) -> ConfusionMatrix {
    let text = fs::read_to_string(out.join("confusion").join(format!("{label}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

const SWEEPS: [(&str, [usize; 3]); 2] = [("calcite_content", [1, 4, 8]), ("calcium_concentration", [1, 3, 5])];

fn parsimony(out: &Path, corrected: bool) -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for (q, sizes) in SWEEPS {
        let ms: Vec<ConfusionMatrix> = sizes.iter().map(|n| matrix(out, &format!("{q}_n{n}"))).collect();
        let d = ms[0].diagonal(corrected);
        let (fc, ib, sc) = (
            ms[0].index_of("FC").unwrap(),
            ms[0].index_of("IB").unwrap(),
            ms[0].index_of("SC").unwrap(),
        );
        let sc_wins = d[sc] > d[fc] && d[sc] > d[ib];
        let mut monotone = true;
        for i in [fc, ib, sc] {
            for w in ms.windows(2) {
                let (a, b) = (w[0].diagonal(corrected)[i], w[1].diagonal(corrected)[i]);
                let (sa, sb) = (w[0].std_errors[i][i], w[1].std_errors[i][i]);
                if b < a - 2.0 * (sa * sa + sb * sb).sqrt() {
                    monotone = false;
                }
            }
        }
        ok &= sc_wins && monotone;
        notes.push(format!(
            "{q}: SC {:.3} vs FC {:.3} / IB {:.3}, monotone {monotone}",
            d[sc], d[fc], d[ib]
        ));
    }
    (ok, notes.join("; "))
}

fn similarity(out: &Path, corrected: bool) -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for (q, sizes) in SWEEPS {
        let m = matrix(out, &format!("{q}_n{}", sizes[0]));
        let (fc, ib) = (m.index_of("FC").unwrap(), m.index_of("IB").unwrap());
        let cells = if corrected { &m.corrected } else { &m.raw };
        let (a, b) = (cells[fc][ib], cells[ib][fc]);
        ok &= a > 0.25 && b > 0.25;
        notes.push(format!("{q}: FC|IB {a:.3}, IB|FC {b:.3}"));
    }
    (ok, notes.join("; "))
}

fn bapc_trace(out: &Path) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for id in ["FC", "IB", "SC"] {
        let text = fs::read_to_string(out.join("traces").join(format!("{id}.json"))).unwrap();
        let t: UpdateTrace = serde_json::from_str(&text).unwrap();
        let first = t.records.first().map(|r| r.loocv.mean_mse).unwrap_or(f64::NAN);
        let last = t.records.last().map(|r| r.loocv.mean_mse).unwrap_or(f64::NAN);
        let grown = t.initial_points == 15 && t.final_points() == 25 && t.records.len() == 10;
        ok &= grown && last <= first;
        notes.push(format!(
            "{id} {}->{} LOOCV {first:.3e}->{last:.3e}",
            t.initial_points,
            t.final_points()
        ));
    }
    outcome(ok, notes.join("; "))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome, Duration, Duration)> = Vec::new();
    let mut timed = |n: u32, name: &'static str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((n, name, o, t.elapsed(), limit));
    };
    timed(1, "expansion size", Duration::from_secs(1), &mut expansion_size);
    timed(2, "orthonormality", Duration::from_secs(10), &mut orthonormality);
    timed(
        3,
        "collocation interpolation",
        Duration::from_secs(10),
        &mut collocation_interpolation,
    );
    timed(4, "LOOCV oracle", Duration::from_secs(10), &mut loocv_oracle);
    timed(5, "BME oracle", Duration::from_secs(60), &mut bme_oracle);
    timed(
        6,
        "correction identities",
        Duration::from_secs(30),
        &mut correction_identities,
    );
    timed(
        7,
        "confusion structure",
        Duration::from_secs(300),
        &mut confusion_structure,
    );

    let work = tempfile::tempdir().unwrap();
    let demo = run_demo(work.path());
    let (p8, n8) = parsimony(&demo.out, false);
    let (c8, _) = parsimony(&demo.out, true);
    results.push((
        8,
        "parsimony",
        outcome(
            p8,
            format!("{n8}; corrected matrix {}", if c8 { "agrees" } else { "does not" }),
        ),
        demo.first,
        Duration::from_secs(600),
    ));
    let (p9, n9) = similarity(&demo.out, false);
    let (c9, _) = similarity(&demo.out, true);
    results.push((
        9,
        "similarity",
        outcome(
            p9,
            format!("{n9}; corrected matrix {}", if c9 { "agrees" } else { "does not" }),
        ),
        demo.first,
        Duration::from_secs(600),
    ));
    results.push((
        10,
        "BaPC trace",
        bapc_trace(&demo.out),
        demo.first,
        Duration::from_secs(300),
    ));
    let detail = match &demo.identical {
        Ok(n) => format!("{n} CSV files byte-identical"),
        Err(e) => e.clone(),
    };
    results.push((
        11,
        "determinism",
        outcome(demo.identical.is_ok(), detail),
        demo.first + demo.second,
        Duration::from_secs(900),
    ));

    let mut failed = 0;
    for (n, name, o, elapsed, limit) in &results {
        let pass = o.pass && elapsed <= limit;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {n:>2} {name}: {} [{:.2}s / {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
