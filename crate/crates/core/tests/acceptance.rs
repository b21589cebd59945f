//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one pass/fail line per criterion and exits nonzero if any failed.
//!
//! `cargo test -p agm-mcmc --test acceptance`

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use agm_mcmc::diagnostics::alpha_trace_average;
use agm_mcmc::experiment::{derive_seed, run_chain, ExperimentOutcome};
use agm_mcmc::targets::{bin_probabilities, quartic_bimodal};
use agm_mcmc::{run_experiment, ExperimentConfig, MixtureProposal, SamplerKind};
use nalgebra::DMatrix;

struct Verdict {
    pass: bool,
    detail: String,
}

fn config_dir() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "configs"].iter().collect()
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(config_dir().join(name)).unwrap()
}

fn run_as(name: &str, kind: SamplerKind) -> ExperimentOutcome {
    let mut cfg = config(name);
    cfg.sampler = kind;
    run_experiment(&cfg).unwrap()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (i, d) in [1usize, 2, 5].into_iter().enumerate() {
        for s in 0..50u64 {
            let err = common::recursive_vs_block(d, 3, 1000, 100, 10_000 * (i as u64 + 1) + s);
            worst = worst.max(err);
        }
    }
    let t = start.elapsed();
    Verdict {
        pass: worst <= 1e-9 && t < Duration::from_secs(10),
        detail: format!(
            "recursive vs block, 150 streams x 1000 points, worst rel. error {worst:.3e} (<= 1e-9), {:.1} s (< 10 s)",
            secs(t)
        ),
    }
}

fn sorted_means_1d(q: &MixtureProposal) -> Vec<f64> {
    let mut m: Vec<f64> = q.components().iter().map(|c| c.mean()[0]).collect();
    m.sort_by(f64::total_cmp);
    m
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let agm = run_as("example1.toml", SamplerKind::Agm);
    let base = run_as("example1.toml", SamplerKind::Baseline);
    let t = start.elapsed();

    let runs = agm.summaries.len() as f64;
    let (mut lo, mut hi, mut var) = (0.0, 0.0, 0.0);
    for s in &agm.summaries {
        let m = sorted_means_1d(&s.final_proposal);
        lo += m[0] / runs;
        hi += m[1] / runs;
        var += s.final_proposal.components().iter().map(|c| c.cov().matrix()[(0, 0)]).sum::<f64>()
            / (2.0 * runs);
    }
    let mse = agm.aggregate.mse_mean[0];
    let corr = agm.aggregate.mean_lag1[0];
    let base_corr = base.aggregate.mean_lag1[0];
    let pass = mse <= 5e-3
        && (0.08..=0.35).contains(&corr)
        && base_corr >= 0.55
        && (lo + 1.88).abs() <= 0.25
        && (hi - 1.88).abs() <= 0.25
        && (0.08..=0.30).contains(&var)
        && t <= Duration::from_secs(120);
    Verdict {
        pass,
        detail: format!(
            "quartic, 200 runs: MSE {mse:.3e} (<= 5e-3), corr {corr:.3} ([0.08, 0.35]), baseline corr {base_corr:.3} (>= 0.55), \
             means {lo:.3}/{hi:.3} (+-1.88 +- 0.25), sigma^2 {var:.3} ([0.08, 0.30]), {:.1} s (<= 120 s)",
            secs(t)
        ),
    }
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (m, name) in [(2, "example2_m2.toml"), (3, "example2_m3.toml"), (6, "example2_m6.toml")] {
        let agm = run_as(name, SamplerKind::Agm);
        let base = run_as(name, SamplerKind::Baseline);
        let corr = agm.aggregate.mean_lag1[0];
        let base_corr = base.aggregate.mean_lag1[0];
        let mse_z = agm.aggregate.mse_z;
        let ok = corr <= 0.30 && base_corr >= corr + 0.2 && mse_z <= 1e-3;
        pass &= ok;
        parts.push(format!(
            "M={m}: corr {corr:.3}, baseline {base_corr:.3}, Z-MSE {mse_z:.2e}{}",
            if ok { "" } else { " [miss]" }
        ));
    }
    let t = start.elapsed();
    pass &= t <= Duration::from_secs(300);
    Verdict {
        pass,
        detail: format!(
            "1-D mixtures, 200 runs (corr <= 0.30, baseline >= corr + 0.2, Z-MSE <= 1e-3): {}; {:.1} s (<= 300 s)",
            parts.join("; "),
            secs(t)
        ),
    }
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let cfg = config("example3_n2.toml");
    let spec = cfg.target.mixture_spec().unwrap().unwrap();
    let out = run_experiment(&cfg).unwrap();
    let t = start.elapsed();

    let mut failed = Vec::new();
    let (mut worst_dist, mut worst_w, mut worst_frob) = (0.0f64, 0.0f64, 0.0f64);
    for s in &out.summaries {
        let q = &s.final_proposal;
        // best of the two one-to-one matchings by worst mean distance
        let dist = |i: usize, j: usize| (q.component(i).mean() - &spec.means[j]).norm();
        let perm = if dist(0, 0).max(dist(1, 1)) <= dist(0, 1).max(dist(1, 0)) {
            [0, 1]
        } else {
            [1, 0]
        };
        let mut d_max = 0.0f64;
        let mut f_max = 0.0f64;
        for (i, &j) in perm.iter().enumerate() {
            d_max = d_max.max(dist(i, j));
            let diff: DMatrix<f64> = q.component(i).cov().matrix() - &spec.covariances[j];
            f_max = f_max.max(diff.norm());
        }
        let w_max = q.weights().iter().map(|w| (w - 0.5).abs()).fold(0.0, f64::max);
        worst_dist = worst_dist.max(d_max);
        worst_w = worst_w.max(w_max);
        worst_frob = worst_frob.max(f_max);
        if d_max > 0.3 || w_max > 0.1 || f_max > 0.3 {
            failed.push(s.run_id);
        }
    }
    Verdict {
        pass: failed.is_empty() && t <= Duration::from_secs(120),
        detail: format!(
            "2-D target, N=2, 50 runs: {} runs out of tolerance; worst mean distance {worst_dist:.3} (<= 0.3), \
             weight error {worst_w:.3} (<= 0.1), Frobenius error {worst_frob:.3} (<= 0.3); {:.1} s (<= 120 s)",
            failed.len(),
            secs(t)
        ),
    }
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let out = run_experiment(&config("example3_n10.toml")).unwrap();
    let t = start.elapsed();

    let mut too_many = 0;
    let mut moved_runs = 0;
    let mut worst_live = 0;
    let mut worst_move = 0.0f64;
    for s in &out.summaries {
        let q = &s.final_proposal;
        let live = q.weights().iter().filter(|&&w| w > 0.05).count();
        worst_live = worst_live.max(live);
        if live > 3 {
            too_many += 1;
        }
        let mut moved = false;
        for (i, &w) in q.weights().iter().enumerate() {
            if w <= 0.05 {
                let shift = (q.component(i).mean() - s.initial_proposal.component(i).mean()).norm();
                worst_move = worst_move.max(shift);
                moved |= shift >= 0.1;
            }
        }
        if moved {
            moved_runs += 1;
        }
    }
    Verdict {
        pass: too_many == 0 && moved_runs == 0 && t <= Duration::from_secs(120),
        detail: format!(
            "2-D target, N=10, 50 runs: {too_many} runs with > 3 components above weight 0.05 (max {worst_live}), \
             {moved_runs} runs with a small-weight mean moved >= 0.1 (max shift {worst_move:.3}); {:.1} s (<= 120 s)",
            secs(t)
        ),
    }
}

fn criterion_6() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (m, name) in [(2, "example2_m2.toml"), (3, "example2_m3.toml"), (6, "example2_m6.toml")] {
        let cfg = config(name);
        let built = cfg.target.build().unwrap();
        let mut chain = cfg.chain.clone();
        chain.t_tot = 2000;
        let traces: Vec<Vec<f64>> = (0..100)
            .map(|r| {
                let seed = derive_seed(cfg.master_seed, r);
                let out = run_chain(built.target.as_ref(), SamplerKind::Agm, &chain, seed).unwrap();
                out.records.iter().map(|rec| rec.alpha).collect()
            })
            .collect();
        let avg = alpha_trace_average(&traces).unwrap();
        // iterations are numbered from 1: [1, 200] and [1000, 2000]
        let early = avg[..200].iter().sum::<f64>() / 200.0;
        let late = avg[999..2000].iter().sum::<f64>() / 1001.0;
        let gain = late - early;
        pass &= gain >= 0.05;
        parts.push(format!("M={m}: {early:.3} -> {late:.3} (+{gain:.3})"));
    }
    Verdict {
        pass,
        detail: format!("acceptance growth over 100 runs (>= 0.05): {}", parts.join("; ")),
    }
}

fn criterion_7() -> Verdict {
    let cfg = config("example1.toml");
    let mut chain = cfg.chain.clone();
    chain.t_stop = Some(2000);
    chain.t_tot = 200_000;
    let out = run_chain(quartic_bimodal(), SamplerKind::Agm, &chain, derive_seed(cfg.master_seed, 0)).unwrap();

    let (lo, hi, bins) = (-5.0, 5.0, 100usize);
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for rec in out.records.iter().filter(|r| r.t >= 2000) {
        let x = rec.state[0];
        if (lo..hi).contains(&x) {
            counts[((x - lo) / (hi - lo) * bins as f64) as usize] += 1;
            total += 1;
        }
    }
    let expected = bin_probabilities(&quartic_bimodal(), lo, hi, bins, 20);
    let tv = 0.5
        * counts
            .iter()
            .zip(&expected)
            .map(|(&c, p)| (c as f64 / total as f64 - p).abs())
            .sum::<f64>();
    Verdict {
        pass: tv <= 0.05,
        detail: format!("frozen chain on quartic, {total} post-freeze samples: TV {tv:.4} (<= 0.05)"),
    }
}

fn run_binary(config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_agm-mcmc"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<(PathBuf, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (PathBuf::from(p.file_name().unwrap()), bytes)
        })
        .collect();
    v.sort();
    v
}

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut configs: Vec<PathBuf> = std::fs::read_dir(config_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    configs.sort();
    let mut mismatched = Vec::new();
    for c in &configs {
        let stem = c.file_stem().unwrap().to_string_lossy().into_owned();
        let a = tmp.path().join(format!("{stem}_a"));
        let b = tmp.path().join(format!("{stem}_b"));
        let same = match run_binary(c, &a).and_then(|_| run_binary(c, &b)) {
            Ok(()) => {
                let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
                !fa.is_empty() && fa == fb
            }
            Err(e) => {
                eprintln!("{stem}: {e}");
                false
            }
        };
        if !same {
            mismatched.push(stem);
        }
    }
    Verdict {
        pass: mismatched.is_empty() && configs.len() == 6,
        detail: format!(
            "{} bundled configs run twice through the binary, {} with differing outputs{}",
            configs.len(),
            mismatched.len(),
            if mismatched.is_empty() {
                String::new()
            } else {
                format!(" ({})", mismatched.join(", "))
            }
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [(usize, fn() -> Verdict); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failures = 0;
    for (n, f) in criteria {
        let v = f();
        if !v.pass {
            failures += 1;
        }
        println!("[{}] criterion {n}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failures} failed", 8 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
