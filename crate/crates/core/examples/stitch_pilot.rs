//! Pilot for the stitching experiment: prints per-seed success rates of
//! SSD, one-step BC and a random policy.
//!
//! cargo run --release --example stitch_pilot -- [seeds] [iterations]

use anyhow::Result;
use ssd_core::harness::eval::mean_se;
use ssd_core::harness::stitch::{head_tail_means, run_stitch_seed, StitchConfig};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(Ok(5), |s| s.parse())?;
    let mut cfg = StitchConfig::default();
    if let Some(k) = args.get(2) {
        cfg.run.iterations = k.parse()?;
    }
    println!(
        "seed,ssd_success,bc_success,random_success,ssd_return,bc_return,critic_loss_head,critic_loss_tail,seconds"
    );
    let mut results = Vec::new();
    for seed in 0..seeds {
        let r = run_stitch_seed(&cfg, seed)?;
        let (head, tail) = head_tail_means(&r.critic_loss, 0.1);
        println!(
            "{},{},{},{},{:.4},{:.4},{:.5},{:.5},{:.1}",
            r.seed, r.ssd_success, r.bc_success, r.random_success, r.ssd_return, r.bc_return, head, tail, r.seconds
        );
        results.push(r);
    }
    let col = |f: fn(&ssd_core::harness::stitch::StitchSeedResult) -> f64| {
        mean_se(&results.iter().map(f).collect::<Vec<_>>())
    };
    let (s, s_se) = col(|r| r.ssd_success);
    let (b, b_se) = col(|r| r.bc_success);
    let (q, q_se) = col(|r| r.random_success);
    println!("ssd {s:.3} ± {s_se:.3}, bc {b:.3} ± {b_se:.3}, random {q:.3} ± {q_se:.3}");
    Ok(())
}
