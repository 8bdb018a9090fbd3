use ambivol_core::pde::*;
use ambivol_core::scenario::VolatilitySet;
use std::time::Instant;

fn main() {
    let problem = BSBProblem::with_default_domain(
        Payoff::Call { strike: 100.0 },
        100.0, 0.05,
        VolatilitySet::interval(0.1, 0.3).unwrap(),
        1.0, 400, 400,
    ).unwrap();
    let t0 = Instant::now();
    let iv = hedge_interval(&problem, 0.0, 100.0).unwrap();
    let dt = t0.elapsed();
    println!("super = {:.6} (target 14.231255, err {:+.2e})", iv.superhedge, iv.superhedge - 14.231_254_785_985_83);
    println!("sub   = {:.6} (target  6.804958, err {:+.2e})", iv.subhedge, iv.subhedge - 6.804_957_708_822_153);
    println!("elapsed: {dt:?} (debug build)");
}
