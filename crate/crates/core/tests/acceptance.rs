//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test --release --test acceptance`. A failing
//! criterion sets the exit status only when `ACCEPTANCE_STRICT` is set.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use remshift::baseline::{breslow_cumulative, estimate_lambda0};
use remshift::config::Manifest;
use remshift::fitter::{fit_degenerate_logistic, observed_information_row, FitOptions, SmoothingPolicy};
use remshift::fixture::planted_time_of_day;
use remshift::fullik::{compare_bias_replicates, summarize_bias, BiasSummary, CompareConfig};
use remshift::intensity::CompiledIntensity;
use remshift::pipeline::{Command, Run};
use remshift::scenario::{simulate_homogeneous, CovariateScenario};
use remshift::study::{box_stats, run_setting, StudyRecord, StudySetting};
use remshift::{assemble_difference_design, CovariateCatalog, DesignOptions, RiskPolicy};

const STUDY_SEED: u64 = 2024;
const TRUE_BETA0: f64 = -0.7;

type Outcome = Result<String, String>;

fn setting(label: &str, n: usize, p: usize, nu: f64) -> StudySetting {
    StudySetting { label: label.into(), n, p, nu }
}

fn records(s: &StudySetting, reps: usize) -> Vec<StudyRecord> {
    run_setting(s, reps, STUDY_SEED, 1, &SmoothingPolicy::default()).expect("study setting runs")
}

fn median(v: &[f64]) -> f64 {
    box_stats(v).3
}

fn iqr(v: &[f64]) -> f64 {
    let (_, _, q25, _, q75, _) = box_stats(v);
    q75 - q25
}

fn beta0s(r: &[StudyRecord]) -> Vec<f64> {
    r.iter().map(|r| r.beta0).collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (mut checked, mut worst) = (0, 0.0f64);
    for seed in 0..200u64 {
        let Some((lib, oracle)) = tiny_oracle_instance(seed) else { continue };
        worst = worst.max(max_abs_diff(&lib, &oracle));
        checked += 1;
        if checked == 40 {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{checked} instances, max |dtheta| {worst:.2e}, {secs:.1}s");
    if checked >= 20 && worst < 1e-6 && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn coefficient_recovery(base: &[StudyRecord]) -> Outcome {
    let truth = CovariateScenario::default().truth();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, value) in truth {
        let v: Vec<f64> = base.iter().map(|r| r.estimate(name).unwrap()).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z = (mean - value) / (sd / n.sqrt());
        ok &= z.abs() < 3.0;
        parts.push(format!("{name} {mean:.3} (z {z:+.2})"));
    }
    let unconverged = base.iter().filter(|r| !r.converged).count();
    let detail = format!("{} reps, {unconverged} unconverged: {}", base.len(), parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sample_size_trend(by_n: &[(usize, Vec<StudyRecord>)]) -> Outcome {
    let l2: Vec<f64> = by_n.iter().map(|(_, r)| median(&r.iter().map(|r| r.l2_g0).collect::<Vec<_>>())).collect();
    let spread: Vec<f64> = by_n.iter().map(|(_, r)| iqr(&beta0s(r))).collect();
    let ok = l2.windows(2).all(|w| w[1] < w[0]) && spread.windows(2).all(|w| w[1] < w[0]);
    let detail = format!("median L2(g0) {l2:.3?}, IQR(beta0) {spread:.4?} over n {:?}", by_n.iter().map(|x| x.0).collect::<Vec<_>>());
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn node_count_insensitivity(by_p: &[(usize, Vec<StudyRecord>)]) -> Outcome {
    let spread: Vec<f64> = by_p.iter().map(|(_, r)| iqr(&beta0s(r))).collect();
    let (lo, hi) = spread.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let change = hi / lo - 1.0;
    let detail = format!("IQR(beta0) {spread:.4?} over p {:?}, largest change {:.0}%", by_p.iter().map(|x| x.0).collect::<Vec<_>>(), 100.0 * change);
    if change < 0.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shift_size_u_shape(by_nu: &[(f64, Vec<StudyRecord>)]) -> Outcome {
    let err: Vec<f64> = by_nu
        .iter()
        .map(|(_, r)| median(&r.iter().map(|r| (r.beta0 - TRUE_BETA0).abs()).collect::<Vec<_>>()))
        .collect();
    let drop_high = by_nu[2].1.iter().map(|r| r.dropped_fraction).sum::<f64>() / by_nu[2].1.len() as f64;
    let ok = err[1] < err[0] && err[1] < err[2] && drop_high > 0.5;
    let detail = format!("median |beta0 error| {err:.4?} at nu 0.001, 1, 1000; dropped at nu 1000 {:.0}%", 100.0 * drop_high);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn full_likelihood_bias() -> Outcome {
    let cfg = CompareConfig { seed: 6, ..CompareConfig::default() };
    let rows = summarize_bias(&compare_bias_replicates(&cfg).map_err(|e| e.to_string())?);
    let get = |m: &str, n: usize| -> &BiasSummary { rows.iter().find(|r| r.method == m && r.n == n).unwrap() };
    let mut ok = true;
    let mut parts = Vec::new();
    for &n in &cfg.ns {
        let (fl, pl) = (get("full-likelihood", n), get("shifted-PL", n));
        ok &= fl.sd < pl.sd;
        parts.push(format!("n {n}: sd FL {:.4} vs PL {:.4}", fl.sd, pl.sd));
    }
    let (fl, firth) = (get("full-likelihood", 2000), get("shifted-PL+Firth", 2000));
    let truth = -(1.0 - cfg.shape);
    ok &= (fl.mean - truth).abs() > (firth.mean - truth).abs();
    let z = (firth.mean - truth) / (firth.sd / (firth.count as f64).sqrt());
    ok &= z.abs() < 3.0;
    parts.push(format!("n 2000: mean FL {:.4}, PL+Firth {:.4} (z {z:+.2})", fl.mean, firth.mean));
    let detail = format!("{} reps; {}", cfg.replications, parts.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lambda0_recovery() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (k, lambda0) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let seq = simulate_homogeneous(10, lambda0, 5000, 70 + k as u64).map_err(|e| e.to_string())?;
        let model = CompiledIntensity::new(0.0, vec![], RiskPolicy::NoSelfLoops);
        let curve = breslow_cumulative(&seq, &model, &CovariateCatalog::new()).map_err(|e| e.to_string())?;
        let est = estimate_lambda0(&curve).map_err(|e| e.to_string())?.lambda0;
        let rel = (est / lambda0 - 1.0).abs();
        ok &= rel < 0.1;
        parts.push(format!("{lambda0} -> {est:.4}"));
    }
    let detail = parts.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn information_identity() -> Outcome {
    let scenario = CovariateScenario { events: 1000, ..CovariateScenario::default() };
    let inst = scenario.realize(13).map_err(|e| e.to_string())?;
    let ccs = shifted_sample(&inst.sequence, 1.0, 13);
    let design = assemble_difference_design(
        &ccs,
        &inst.catalog,
        inst.sequence.history(),
        &CovariateScenario::fitted_terms(),
        DesignOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let fit = fit_degenerate_logistic(&design, &SmoothingPolicy::default(), FitOptions::default()).map_err(|e| e.to_string())?;
    let p = design.ncols();
    let theta = fit.coefficients.clone();
    let mut summed = vec![0.0; p];
    let (mut zero_entries, mut zero_violations) = (0, 0);
    for i in 0..design.nrows() {
        let row: Vec<f64> = design.x.row(i).iter().copied().collect();
        let info = observed_information_row(&fit, &row);
        for j in 0..p {
            summed[j] += info[j];
            if row[j] == 0.0 {
                zero_entries += 1;
                if info[j] != 0.0 {
                    zero_violations += 1;
                }
            }
        }
    }
    // Central differences of the score of Σ log(1 + exp(−xθ)).
    let score = |th: &nalgebra::DVector<f64>, j: usize| -> f64 {
        (0..design.nrows())
            .map(|i| {
                let row = design.x.row(i);
                let eta = row.transpose().dot(th);
                -row[j] / (1.0 + eta.exp())
            })
            .sum()
    };
    let mut worst = 0.0f64;
    for j in 0..p {
        let h = 1e-5 * (1.0 + theta[j].abs());
        let (mut up, mut dn) = (theta.clone(), theta.clone());
        up[j] += h;
        dn[j] -= h;
        let fd = (score(&up, j) - score(&dn, j)) / (2.0 * h);
        worst = worst.max((summed[j] - fd).abs() / fd.abs());
    }
    let detail = format!("{p} coefficients, max relative gap {worst:.2e}; {zero_entries} structural zeros, {zero_violations} nonzero contributions");
    if worst < 1e-6 && zero_entries > 0 && zero_violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn invariant_suites() -> Outcome {
    let cases = 64u64;
    let mut failures = Vec::new();
    let mut note = |what: &str, r: Check| {
        if let Err(e) = r {
            failures.push(format!("{what}: {e}"));
        }
    };
    for case in 0..cases {
        let seed = 9000 + case;
        let mut r = rng(seed);
        use rand::Rng;
        let nodes = r.random_range(3..7);
        let n = r.random_range(30..250);
        let seq = random_sequence(seed, nodes, n);
        note("count", check_count_preservation(&seq, 10f64.powf(r.random_range(-3.0..3.0)), seed));
        let cov = TinyCovariates::draw(seed, nodes, seq.horizon());
        let catalog = cov.catalog();
        let ccs = shifted_sample(&seq, 1.0, seed);
        let terms = vec![
            remshift::TermSpec::smooth("g0", "time").unwrap().with_rank(8),
            remshift::TermSpec::linear("a", "sender:a").unwrap(),
            remshift::TermSpec::linear("w", "dyad:w").unwrap(),
            remshift::TermSpec::linear("rep", "endo:rep").unwrap(),
        ];
        note("row antisymmetry", check_row_antisymmetry(&ccs, &catalog, &seq, &terms));
        let design = assemble_difference_design(&ccs, &catalog, seq.history(), &terms, DesignOptions::default()).unwrap();
        note("theta antisymmetry", check_theta_antisymmetry(&design, vec![1.0]));
        let k = [-2, -1, 1, 2, 3][case as usize % 5];
        note("lambda0 scale", check_lambda0_invariance(seed, 5, 300, 2f64.powi(k)));
        let fit = fit_fixed(&design, vec![1.0]);
        note("centering", check_centering(&fit, &ccs, &catalog, &seq));
    }
    let detail = format!("{cases} random cases per suite, {} failures", failures.len());
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; first: {}", failures[0]))
    }
}

fn bike_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bike/bike.toml")
}

fn read_curve(path: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("no `{name}` column"));
    let (cx, cf) = (col("x")?, col("fit")?);
    let (mut x, mut f) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        x.push(rec[cx].parse::<f64>().map_err(|e| e.to_string())?);
        f.push(rec[cf].parse::<f64>().map_err(|e| e.to_string())?);
    }
    Ok((x, f))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn bike_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut run = Run::from_file(&bike_config()).map_err(|e| e.to_string())?;
    run.out_dir = tmp.path().join("first");
    let first = run.execute(Command::Fit).map_err(|e| e.to_string())?;

    let mut rerun = Run::from_file(&run.out_dir.join("config.resolved.toml")).map_err(|e| e.to_string())?;
    rerun.out_dir = tmp.path().join("second");
    let second = rerun.execute(Command::Fit).map_err(|e| e.to_string())?;
    let reproduced = first.outputs == second.outputs && first.details == second.details && first.seed == second.seed;

    let smooths = ["g0", "temp", "prec", "tod", "dist", "rep", "rec"];
    let missing: Vec<&str> = smooths.iter().copied().filter(|s| first.output(&format!("curves/{s}.csv")).is_none()).collect();
    let mut rdr = csv::Reader::from_path(run.out_dir.join("fit_summary.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<remshift::fitter::SummaryRow> = rdr.deserialize().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let competition: Vec<String> = ["comp_s", "comp_r"]
        .iter()
        .filter_map(|t| rows.iter().find(|r| r.term == *t))
        .filter_map(|r| Some(format!("{} {:.3} (se {:.3})", r.term, r.estimate?, r.std_error?)))
        .collect();

    let (x, f) = read_curve(&run.out_dir.join("curves/tod.csv"))?;
    let planted: Vec<f64> = x.iter().map(|&h| planted_time_of_day(h)).collect();
    let r = correlation(&f, &planted);

    let manifest_ok = Manifest::read(&run.out_dir.join("manifest.json")).map(|m| m == first).unwrap_or(false);
    let detail = format!(
        "curves missing {missing:?}; {}; rerun identical {reproduced}; time-of-day correlation {r:.3}",
        competition.join(", ")
    );
    if missing.is_empty() && competition.len() == 2 && reproduced && manifest_ok && r > 0.8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{id}] {name}: {detail}");
    };

    report(1, "oracle equivalence", oracle_equivalence());

    let base = records(&setting("n", 3000, 15, 1.0), 100);
    report(2, "coefficient recovery", coefficient_recovery(&base));

    let paired = &base[..50];
    let by_n = vec![
        (1000, records(&setting("n", 1000, 15, 1.0), 50)),
        (3000, paired.to_vec()),
        (9000, records(&setting("n", 9000, 15, 1.0), 50)),
    ];
    report(3, "sample-size trend", sample_size_trend(&by_n));

    let by_p = vec![
        (5, records(&setting("p", 3000, 5, 1.0), base.len())),
        (15, base.clone()),
        (45, records(&setting("p", 3000, 45, 1.0), base.len())),
    ];
    report(4, "node-count insensitivity", node_count_insensitivity(&by_p));

    let by_nu = vec![
        (0.001, records(&setting("nu", 3000, 15, 0.001), 50)),
        (1.0, paired.to_vec()),
        (1000.0, records(&setting("nu", 3000, 15, 1000.0), 50)),
    ];
    report(5, "shift-size U-shape", shift_size_u_shape(&by_nu));

    report(6, "full-likelihood bias", full_likelihood_bias());
    report(7, "lambda0 recovery", lambda0_recovery());
    report(8, "information identity", information_identity());
    report(9, "invariant suites", invariant_suites());
    report(10, "bike pipeline", bike_pipeline());

    println!("{} of 10 criteria failed ({:.0}s)", failed, started.elapsed().as_secs_f64());
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
