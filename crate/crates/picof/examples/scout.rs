// Temporary development probe for full-scale scenario behavior.
use picof::experiments::{run_fuelcell, run_toy, FcScenario, ToyScenario};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "toy".into());
    if which == "toy" {
        let sc = ToyScenario::default();
        for seed in 0..10u64 {
            let t0 = std::time::Instant::now();
            let p = run_toy(&sc, seed, true).unwrap();
            let b = run_toy(&sc, seed, false).unwrap();
            // overestimation at initial state (seed 0's grid_first)
            let over = p
                .grid_first_csv
                .lines()
                .skip(1)
                .filter(|l| {
                    let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
                    f[4] > f[1]
                })
                .count();
            let final_x_p = p.trace.records.last().unwrap().x[0];
            let final_x_b = b.trace.records.last().unwrap().x[0];
            println!(
                "seed {seed}: viol picof={} baseline={} | overest {over}/101 | final x: {final_x_p:.4} vs {final_x_b:.4} | audit max incr {:.2e} calls {} | {:.1}s",
                p.trace.violations(),
                b.trace.violations(),
                p.summary.reconcile.max_sq_residual_increase,
                p.summary.reconcile.calls,
                t0.elapsed().as_secs_f64(),
            );
        }
    } else {
        let sc = FcScenario::default();
        let seeds: Vec<u64> = std::env::args()
            .nth(2)
            .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
            .unwrap_or_else(|| vec![0]);
        for seed in seeds {
            let t0 = std::time::Instant::now();
            let p = run_fuelcell(&sc, seed, true).unwrap();
            let tp = t0.elapsed().as_secs_f64();
            let t1 = std::time::Instant::now();
            let b = run_fuelcell(&sc, seed, false).unwrap();
            let tb = t1.elapsed().as_secs_f64();
            println!(
                "seed {seed}: PICOF viol={} maxth={:.2} (lim {:.2}) p10={:.2} h2={:.1} | BASE viol={} maxth={:.2} p10={:.2} h2={:.1} | h2 ratio {:.4} | wall ratio {:.2} ({:.1}s/{:.1}s)",
                p.trace.violations(),
                p.summary.max_total_thermal_kw.unwrap(),
                sc.thermal_limit_kw,
                p.summary.mean_total_power_last10_kw.unwrap(),
                p.summary.cumulative_h2_mol.unwrap(),
                b.trace.violations(),
                b.summary.max_total_thermal_kw.unwrap(),
                b.summary.mean_total_power_last10_kw.unwrap(),
                b.summary.cumulative_h2_mol.unwrap(),
                p.summary.cumulative_h2_mol.unwrap() / b.summary.cumulative_h2_mol.unwrap(),
                tp / tb,
                tp,
                tb,
            );
        }
    }
}
