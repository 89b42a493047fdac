//! Calibrates on one synthetic database and evaluates on a disjoint one,
//! printing the candidate table, coefficients and test agreement.
//!
//! Usage: cargo run --release -p csm-tools --example rehearsal [TRAIN_SEED TEST_SEED]

use csm_tools::batch::extract_synthetic;
use csm_tools::calibration::{calibrate, CalibrationConfig};
use csm_tools::evaluation::{evaluate, fit_mars_baseline, item_mean_row, pearson_r, DEFAULT_BOOTSTRAP_SEED};
use csm_tools::features::FeatureExtractor;
use csm_tools::pipeline::PipelineConfig;
use csm_tools::synth::{synth_database, DatabaseSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (train_seed, test_seed) = (args.first().copied().unwrap_or(1), args.get(1).copied().unwrap_or(2));
    let ex = FeatureExtractor::default();
    let pc = PipelineConfig::default();
    let t0 = std::time::Instant::now();
    let train_db = synth_database(&DatabaseSpec { seed: train_seed, ..DatabaseSpec::default() })?;
    let test_db = synth_database(&DatabaseSpec { seed: test_seed, ..DatabaseSpec::default() })?;
    let train = extract_synthetic(&train_db, &pc, &ex)?;
    let test = extract_synthetic(&test_db, &pc, &ex)?;
    eprintln!("extraction {:.1}s", t0.elapsed().as_secs_f64());

    let out = calibrate(&train, &CalibrationConfig::default())?;
    for row in &out.report.candidates {
        println!(
            "{:6} {:10} {:13} before {:>7.3} after {:>7.3} signed {:>7.3} inv {:?} {}",
            row.id,
            row.cem,
            row.dm,
            row.c_before.unwrap_or(f64::NAN),
            row.c_after.unwrap_or(f64::NAN),
            row.signed_c.unwrap_or(f64::NAN),
            row.inverted,
            row.status
        );
    }
    if std::env::var_os("REHEARSAL_SALIENCE").is_some() {
        for bf in &out.model.basis_functions {
            println!("{}", serde_json::to_string(bf)?);
        }
        for r in &out.report.salience {
            println!("{} S={:?} cem={:?}", r.signal_id, r.salience.map(|v| v.map(|x| (x * 100.0).round() / 100.0)), r.cem_means.map(|x| (x * 1000.0).round() / 1000.0));
        }
    }
    for c in &out.report.coefficients {
        println!("{:4} {:40} {:>8.3} p={:?}", c.id, c.expression, c.coefficient, c.p_value);
    }
    println!("fit {:?}", out.report.fit);
    println!("params {:?}", out.model.count_parameters());
    for w in &out.report.warnings {
        println!("warning: {w}");
    }
    let rep = evaluate(&out.model, &test, DEFAULT_BOOTSTRAP_SEED)?;
    println!("test r {:.4} rmse {:.2} ci {:?} mapped r {:.4}", rep.r, rep.rmse, rep.r_ci, rep.mapped_r);
    let mars = fit_mars_baseline(&train)?;
    let pred: Vec<f64> = test.iter().map(|it| mars.predict(&item_mean_row(it))).collect();
    let y: Vec<f64> = test.iter().map(|it| it.score).collect();
    println!("mars r {:.4}", pearson_r(&pred, &y)?);
    eprintln!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
