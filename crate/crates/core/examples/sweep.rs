//! Compares variants on the VOC-style preset across seeds.
//! `cargo run --release -p adasup-core --example sweep -- [seeds] [strategy]`

use adasup_core::config::{preset, Variant};
use adasup_core::engine::NoopObserver;
use adasup_core::results::{hours_to_target, series};

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().unwrap());
    let strategy = args.next().unwrap_or_else(|| "avg_entropy".into());
    let mut base = preset("voc2007").unwrap();
    base.synthetic_images = 5000;
    base.strategy = strategy.parse().unwrap();
    for (k, v) in std::env::vars().filter(|(k, _)| k.starts_with("SWEEP_")) {
        let v: f64 = v.parse().unwrap();
        match k.as_str() {
            "SWEEP_Q_MIN" => base.q_min = v,
            "SWEEP_TAU" => base.tau = Some(v),
            "SWEEP_ALPHA" => base.alpha = v,
            "SWEEP_DELTA" => base.delta = v,
            "SWEEP_TRACE" => {}
            "SWEEP_ALLPOINT" => base.ap_protocol = adasup_core::evaluator::ApProtocol::AllPoint,
            "SWEEP_KAPPA" => base.label_confusion = v,
            "SWEEP_MISS" => base.miss_rate = v,
            "SWEEP_FP" => base.false_positive_rate = v,
            "SWEEP_JITTER" => base.jitter = v,
            _ => panic!("unknown {k}"),
        }
    }
    let t0 = std::time::Instant::now();
    let mut sums = [0.0f64; 4];
    let (mut wins_soft, mut wins_hard) = (0, 0);
    let (mut map0, mut map_end) = (0.0, 0.0);
    for seed in 0..seeds {
        let mut line = format!("seed {seed}:");
        let mut runs = Vec::new();
        for variant in [Variant::StrongOnly, Variant::Soft, Variant::Hard, Variant::None] {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.variant = variant;
            let r = adasup_core::simulate(&cfg, &NoopObserver).unwrap();
            if std::env::var("SWEEP_TRACE").is_ok() && seed == 0 {
                let params = cfg.surrogate_params();
                for e in &r.episodes {
                    println!(
                        "  {variant} ep{} {} h={:.2} map={:.4} strong={} weak={} high={} low={} q~{:.3}",
                        e.index,
                        e.mode,
                        e.cum_seconds.hours(),
                        e.map(),
                        e.n_strong_total,
                        e.n_weak_total,
                        e.s_high.len(),
                        e.s_low.len(),
                        params.quality(e.n_strong_total, e.n_weak_total, params.effective_tau(4000)),
                    );
                }
            }
            runs.push((variant, series(&r.episodes), r.episodes.len(), r.stop_reason));
        }
        let target = runs[0].1.last().unwrap().map - 0.02;
        map0 += runs[0].1[0].map;
        map_end += runs[0].1.last().unwrap().map;
        line += &format!(" target {target:.4}");
        let hs: Vec<f64> = runs.iter().map(|r| hours_to_target(&r.1, target).unwrap_or(f64::INFINITY)).collect();
        for (i, h) in hs.iter().enumerate() {
            sums[i] += h;
        }
        wins_soft += (hs[1] < hs[0]) as usize;
        wins_hard += (hs[2] <= hs[0]) as usize;
        for (v, s, n, stop) in &runs {
            let h = hours_to_target(s, target);
            line += &format!(
                " | {v}: {} ep={n} final={:.4} stop={stop:?}",
                h.map_or("never".into(), |h| format!("{h:.2}h")),
                s.last().unwrap().map
            );
        }
        println!("{line}");
    }
    let n = seeds as f64;
    println!(
        "pbal map {:.3}->{:.3}; mean hours pbal {:.2} soft {:.2} hard {:.2} none {:.2}; soft savings {:.1}%; soft wins {wins_soft}/{seeds}; hard<=pbal {wins_hard}/{seeds}",
        map0 / n,
        map_end / n,
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n,
        100.0 * (sums[0] - sums[1]) / sums[0]
    );
    println!("elapsed {:?}", t0.elapsed());
}
