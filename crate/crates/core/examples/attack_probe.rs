use crusader_core::experiment::*;
use crusader_core::rational::Rat;

fn main() {
    let config = ExperimentConfig {
        mode: "attack".into(),
        n: 3,
        corrupted: vec![],
        theta: Rat::new(101, 100),
        d: Rat::new(1, 1),
        u: Rat::new(0, 1),
        u_tilde: Some(Rat::new(3, 10)),
        t_scale: Rat::one(),
        adversary: "none".into(),
        drift: "none".into(),
        delay_policy: "max".into(),
        delay_steps: 64,
        seed: 0,
        pulses: 20,
        ell: Rat::one(),
        eps: Rat::new(1, 8),
        runs: 1,
        behavior: "cps".into(),
        free_run_period: Rat::new(2, 1),
    };
    match run_attack_experiment(&config) {
        Ok(outcome) => {
            let lb = &outcome.report.lower_bound;
            println!("r_star = {}", outcome.report.r_star);
            println!("sum_identity_ok = {}", lb.sum_identity_ok);
            println!("telescoping_sum = {}", lb.telescoping_sum);
            println!("max_skew = {} (~{:.4})", lb.max_skew, lb.max_skew.to_f64_lossy());
            println!("bound = {} (~{:.4})", lb.bound, lb.bound.to_f64_lossy());
            println!("bound_met = {}", lb.bound_met);
            println!("shift_identity_ok = {}", lb.shift_identity_ok);
            println!("faulty_sends = {}", lb.faulty_sends);
            for (e, tr) in outcome.traces.iter().enumerate() {
                println!("exec {}: {} events", e, tr.events.len());
            }
        }
        Err(e) => {
            println!("ATTACK FAILED: {e}");
            std::process::exit(1);
        }
    }
}
