//! Sweeps driven through experiment files.

use lbsim::experiment::{run_experiment, ExperimentConfig};

const LOG_SWEEP: &str = r#"
seed = 99
replications = 2
horizon = 1500.0
warmup = 300.0
n = [40, 50, 60, 100, 140, 150, 200]

[load]
rule = "fluid"
lambda = 0.9

[[policy]]
tag = "jsqd"
d = "log_n"
"#;

/// Mean wait at the JSQ(d) fluid fixed point, `Σ_{i≥2} λ^{(d^i - 1)/(d - 1)} / λ`.
fn fluid_wait(lambda: f64, d: u32) -> f64 {
    let d = d as f64;
    (2..40).map(|i| lambda.powf((d.powi(i) - 1.0) / (d - 1.0))).sum::<f64>() / lambda
}

#[test]
fn log_d_sweep_steps_with_d() {
    let cfg = ExperimentConfig::from_toml_str(LOG_SWEEP, "sweep").unwrap();
    let res = run_experiment(&cfg, None).unwrap();
    let mut by_n: Vec<(usize, u32, f64)> = Vec::new();
    for (c, s) in res.cells.iter().zip(&res.summaries) {
        match by_n.iter_mut().find(|(n, _, _)| *n == c.n) {
            Some(e) => e.2 += s.mean_wait.value / 2.0,
            None => by_n.push((c.n, c.d.unwrap(), s.mean_wait.value / 2.0)),
        }
    }
    let ds: Vec<u32> = by_n.iter().map(|e| e.1).collect();
    assert_eq!(ds, vec![3, 3, 4, 4, 4, 5, 5]);
    for &(n, d, w) in &by_n {
        let f = fluid_wait(0.9, d);
        // Finite-N bias is O(1/N) and positive.
        let rel = (w - f).abs() / f;
        assert!(rel < 0.03 + 4.0 / n as f64, "N={n} d={d}: {w} vs {f}");
    }
    // Flat within a value of d, a clear drop when d increases.
    let spread = |d: u32| {
        let ws: Vec<f64> = by_n.iter().filter(|e| e.1 == d).map(|e| e.2).collect();
        ws.iter().cloned().fold(f64::MIN, f64::max) - ws.iter().cloned().fold(f64::MAX, f64::min)
    };
    let jump34 = by_n[1].2 - by_n[2].2;
    let jump45 = by_n[4].2 - by_n[5].2;
    assert!(jump34 > 2.0 * spread(3).max(spread(4)), "{by_n:?}");
    assert!(jump45 > 2.0 * spread(4).max(spread(5)), "{by_n:?}");
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
            assert!(!cfg.cells().unwrap().is_empty());
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
