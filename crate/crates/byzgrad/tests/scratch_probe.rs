//! Temporary probes; removed before release.

use byzgrad::conclab::{fit_scaling, spectral_norm_trials, EntryDist, TrialGrid};
use std::time::Instant;

#[test]
fn slope_at_acceptance_settings() {
    let grid = TrialGrid {
        dims: vec![50],
        widths: vec![100, 400, 1600, 6400],
        dist: EntryDist::Laplace,
        trials: 100,
        seed: 20_250_817,
    };
    let t0 = Instant::now();
    let out = spectral_norm_trials(&grid).unwrap();
    for cell in &out.table {
        let reference = (cell.m as f64).sqrt() + (cell.d as f64).sqrt();
        println!(
            "d={} m={}: median {:.4} ref {:.4} ratio {:.4}",
            cell.d,
            cell.m,
            cell.median,
            reference,
            cell.median / reference
        );
    }
    let fit = fit_scaling(&out.table, 1600);
    println!(
        "top-two slope {:.6} stderr {:.4} ({:.1}s)",
        fit.per_d[0].slope,
        fit.per_d[0].stderr,
        t0.elapsed().as_secs_f64()
    );
    let all = fit_scaling(&out.table, 0);
    println!("four-point slope {:.6}", all.per_d[0].slope);
}
