//! Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. The simulation criteria share one 50-replicate grid over
//! every strong-instrument cell plus the weak-instrument cell.

mod common;

use std::time::Instant;

use ovmr_core::experiment::write_results;
use ovmr_core::*;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, ok: bool, what: &str, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} criterion {id} ({what}): {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn find<'a>(rows: &'a [MetricsRow], overlap: f64, alpha: f64, delta: f64, beta: f64, method: Method) -> &'a MetricsRow {
    rows.iter()
        .find(|r| {
            let p = &r.point;
            p.overlap == overlap && p.alpha == alpha && p.delta == delta && p.beta == beta && r.method == method
        })
        .expect("cell is part of the acceptance grid")
}

fn fmt(v: impl IntoIterator<Item = f64>) -> String {
    let parts: Vec<String> = v.into_iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn strong_grid() -> GridConfig {
    GridConfig {
        alpha_levels: vec![0.5],
        replicates: 50,
        ..GridConfig::default()
    }
}

fn weak_grid() -> GridConfig {
    GridConfig {
        overlap_rates: vec![0.0],
        alpha_levels: vec![0.1],
        delta_levels: vec![1.0],
        beta_levels: vec![0.3],
        replicates: 50,
        ..GridConfig::default()
    }
}

fn criterion_1(r: &mut Report, rows: &[MetricsRow]) {
    let row = find(rows, 1.0, 0.5, 1.0, 0.3, Method::Bayesian);
    let means: Vec<f64> = row.params.iter().map(|p| p.mean).collect();
    let powers: Vec<f64> = row.params.iter().map(|p| p.power.unwrap()).collect();
    let cover: Vec<f64> = row.params.iter().map(|p| p.coverage).collect();
    let ok = means.iter().all(|m| (m - 0.3).abs() <= 0.03)
        && powers.iter().all(|&p| p == 1.0)
        && cover.iter().all(|&c| c >= 0.85);
    let detail = format!("mean {} power {} coverage {}", fmt(means), fmt(powers), fmt(cover));
    r.line(1, ok, "one-sample alternative", detail);
}

fn criterion_2(r: &mut Report, rows: &[MetricsRow], delta_levels: &[f64]) {
    let mut ok = true;
    let mut parts = Vec::new();
    for &delta in delta_levels {
        let row = find(rows, 0.0, 0.5, delta, 0.0, Method::Bayesian);
        let means: Vec<f64> = row.params.iter().map(|p| p.mean).collect();
        let cover: Vec<f64> = row.params.iter().map(|p| p.coverage).collect();
        ok &= means.iter().all(|m| m.abs() <= 0.03) && cover.iter().all(|&c| c >= 0.88);
        parts.push(format!("delta {delta}: mean {} coverage {}", fmt(means), fmt(cover)));
    }
    r.line(2, ok, "two-sample null", parts.join("; "));
}

fn criterion_3(r: &mut Report, rows: &[MetricsRow]) {
    let sd = |overlap| -> Vec<f64> {
        find(rows, overlap, 0.5, 1.0, 0.3, Method::Bayesian)
            .params
            .iter()
            .map(|p| p.sd)
            .collect()
    };
    let (one, zero) = (sd(1.0), sd(0.0));
    let ok = one.iter().zip(&zero).all(|(a, b)| a < b);
    r.line(3, ok, "overlap precision trend", format!("sd at overlap 1 {} vs overlap 0 {}", fmt(one), fmt(zero)));
}

fn criterion_4(r: &mut Report, rows: &[MetricsRow]) {
    let row = find(rows, 0.0, 0.1, 1.0, 0.3, Method::Bayesian);
    let pw: Vec<f64> = row.params.iter().map(|p| p.power.unwrap()).collect();
    let ok = pw[1] < pw[0] && pw[1] < pw[2] && pw.iter().all(|&p| p < 1.0);
    r.line(4, ok, "weak-instrument power", format!("power {}", fmt(pw)));
}

fn criterion_5(r: &mut Report, rows: &[MetricsRow]) {
    let mut worse = Vec::new();
    let mut cells = 0;
    for b in rows.iter().filter(|r| r.method == Method::Bayesian && r.point.alpha == 0.5) {
        cells += 1;
        let p = &b.point;
        let c = find(rows, p.overlap, p.alpha, p.delta, p.beta, Method::Classic);
        for (pb, pc) in b.params.iter().zip(&c.params) {
            if pb.sd >= pc.sd {
                worse.push(format!(
                    "{} at ({}, {}, {}, {}) {:.3} >= {:.3}",
                    pb.param, p.overlap, p.alpha, p.delta, p.beta, pb.sd, pc.sd
                ));
            }
        }
    }
    let detail = if worse.is_empty() {
        format!("Bayesian sd below classic sd for every effect in {cells} cells")
    } else {
        format!("{} of {} comparisons fail: {}", worse.len(), cells * 3, worse.join("; "))
    };
    r.line(5, worse.is_empty(), "precision dominance", detail);
}

fn criterion_6(r: &mut Report) {
    let (t, w, v) = (common::tsls_gap(), common::wald_gap(), common::wls_gap());
    let ok = t < 1e-10 && w < 1e-12 && v < 1e-10;
    r.line(6, ok, "classic comparators", format!("2SLS gap {t:.1e}, Wald gap {w:.1e}, WLS gap {v:.1e}"));
}

fn criterion_7(r: &mut Report) {
    let worst = (0..1000u64).map(common::conditional_joint_gap).fold(0.0, f64::max);
    let priors = PriorSpec::default();
    let t = common::tiny_instance();
    let oracle = common::tiny_grid_mean(&t, &priors);
    let got = common::tiny_sampler_mean(&t, &priors, 3);
    let ok = worst < 1e-8 && (got - oracle).abs() < 0.02;
    let detail = format!("max gap over 1000 states {worst:.1e}; tiny instance {got:.4} vs grid {oracle:.4}");
    r.line(7, ok, "sampler exactness", detail);
}

fn criterion_8(r: &mut Report) {
    let grid = GridConfig {
        overlap_rates: vec![1.0, 0.0],
        alpha_levels: vec![0.5],
        delta_levels: vec![1.0],
        beta_levels: vec![0.3],
        replicates: 10,
        base_seed: 99,
        ..GridConfig::default()
    };
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut bytes = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("results{run}.csv"));
        let rows = run_grid(&grid).expect("desk grid runs");
        write_results(&rows, std::fs::File::create(&path).expect("results file")).expect("results written");
        bytes.push(std::fs::read(&path).expect("results read back"));
    }
    let ok = bytes[0] == bytes[1] && !bytes[0].is_empty();
    r.line(8, ok, "determinism", format!("two runs wrote {} and {} bytes, identical: {}", bytes[0].len(), bytes[1].len(), bytes[0] == bytes[1]));
}

fn main() {
    let start = Instant::now();
    let mut report = Report { failed: 0 };

    let strong = strong_grid();
    let mut rows = run_grid(&strong).expect("strong-instrument grid runs");
    rows.extend(run_grid(&weak_grid()).expect("weak-instrument cell runs"));
    let table = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-results.csv");
    if let Ok(f) = std::fs::File::create(&table) {
        let _ = write_results(&rows, f);
    }

    criterion_1(&mut report, &rows);
    criterion_2(&mut report, &rows, &strong.delta_levels);
    criterion_3(&mut report, &rows);
    criterion_4(&mut report, &rows);
    criterion_5(&mut report, &rows);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);

    println!(
        "{} of 8 criteria passed in {:.0} s; grid table at {}",
        8 - report.failed,
        start.elapsed().as_secs_f64(),
        table.display()
    );
    if report.failed > 0 {
        std::process::exit(1);
    }
}
