// Temporary: per-step inspection of the fc run
use picof::experiments::{run_fuelcell, FcScenario};
fn main() {
    let sc = FcScenario::default();
    for picof in [true, false] {
        let r = run_fuelcell(&sc, 0, picof).unwrap();
        println!("=== mode {} ===", if picof { "picof" } else { "baseline" });
        for rec in &r.trace.records {
            let tot_th = rec.extras[6];
            let tot_p = rec.extras[5];
            println!(
                "t={:2} x=[{}] P={:7.2} TH={:7.2} {} pred_g={:8.2} truth_g={:8.2} iters={}",
                rec.t,
                rec.x.iter().map(|v| format!("{v:5.1}")).collect::<Vec<_>>().join(" "),
                tot_p, tot_th,
                if rec.violation { "VIOL" } else { "    " },
                rec.constraint_pred[0], rec.constraint_truth[0], rec.inner_iterations,
            );
        }
    }
}
