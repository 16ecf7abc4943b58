use super::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

fn eval(model: FluidModel, q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    model.rhs(q, &mut out);
    out
}

#[test]
fn jsqd_rhs_examples() {
    let fp = fixed_point_jsqd(0.9, 2, None).unwrap();
    assert!(eval(FluidModel::Jsqd { lambda: 0.9, d: 2 }, &fp).iter().all(|x| x.abs() < 1e-12));
    let r = eval(FluidModel::Jsqd { lambda: 0.9, d: 2 }, &[0.0; 4]);
    assert_eq!(r, vec![0.9, 0.0, 0.0, 0.0]);
    // d = 1 is the M/M/1 mean-field drift.
    let q = [0.7, 0.4, 0.1];
    let r = eval(FluidModel::Jsqd { lambda: 0.8, d: 1 }, &q);
    let expect = [0.8 * (1.0 - 0.7) - (0.7 - 0.4), 0.8 * (0.7 - 0.4) - (0.4 - 0.1), 0.8 * (0.4 - 0.1) - 0.1];
    assert!(sup_dist(&r, &expect) < 1e-15);
}

#[test]
fn jsq_rhs_examples() {
    let m = FluidModel::Jsq { lambda: 0.9 };
    assert!(eval(m, &[0.9, 0.0, 0.0]).iter().all(|&x| x == 0.0));
    let r = eval(m, &[0.6, 0.2, 0.0]);
    assert!((r[0] - (0.9 - 0.4)).abs() < 1e-15);
    let r = eval(m, &[1.0, 0.5, 0.0, 0.0]);
    assert!(r[0].abs() < 1e-15);
    assert!((r[1] + 0.1).abs() < 1e-15);
    assert_eq!(min_queue_level(&[1.0, 0.5]), 1);
    assert_eq!(min_queue_level(&[0.99, 0.5]), 0);
    // No arrivals: weights are irrelevant but well defined.
    let r = eval(FluidModel::Jsq { lambda: 0.0 }, &[1.0, 0.5]);
    assert!(r.iter().all(|x| x.is_finite()));
}

#[test]
fn pool_rhs_examples() {
    let m = FluidModel::JsqPool { lambda: 2.5 };
    let fp = fixed_point_pool(2.5, Some(10), None).unwrap();
    assert!(eval(m, &fp.q).iter().all(|x| x.abs() < 1e-12));
    let r = eval(m, &[1.0, 1.0, 0.3, 0.0, 0.0]);
    assert!(r[1].abs() < 1e-12);
    assert!((r[2] - 0.2).abs() < 1e-12);
    let r = eval(FluidModel::JsqPool { lambda: 1.5 }, &[0.5, 0.2, 0.0]);
    assert!((r[0] - (1.5 - 0.3)).abs() < 1e-15);
}

#[test]
fn fixed_point_values() {
    let q = fixed_point_jsqd(0.9, 2, None).unwrap();
    assert!((q[0] - 0.9).abs() < 1e-15);
    assert!((q[1] - 0.729).abs() < 1e-15);
    assert!((q[2] - 0.478_296_9).abs() < 1e-7);
    assert!((fixed_point_jsqd(0.5, 3, None).unwrap()[1] - 0.0625).abs() < 1e-15);
    let q = fixed_point_jsqd(0.5, 1, Some(4)).unwrap();
    assert!(sup_dist(&q, &[0.5, 0.25, 0.125, 0.0625]) < 1e-15);
    assert!(fixed_point_jsqd(1e-9, 2, None).unwrap().iter().all(|&x| x < 1e-8));
    assert!(fixed_point_jsqd(1.0, 2, None).is_err());
    // Truncation: entry below 1e-12 plus five.
    let q = fixed_point_jsqd(0.9, 2, None).unwrap();
    let first_small = q.iter().position(|&x| x < 1e-12).unwrap();
    assert_eq!(q.len(), first_small + 1 + 5);

    assert_eq!(fixed_point_jsq(0.9, Some(3)).unwrap(), vec![0.9, 0.0, 0.0]);
    let p = fixed_point_pool(2.5, Some(4), Some(4)).unwrap();
    assert_eq!((p.k, p.f, p.q.clone()), (2, 0.5, vec![1.0, 1.0, 0.5, 0.0]));
    let p = fixed_point_pool(3.0, None, Some(5)).unwrap();
    assert_eq!(p.q, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
    assert_eq!(p.f, 0.0);
    assert!(fixed_point_pool(4.0, Some(4), None).is_err());
}

#[test]
fn integration_converges_to_fixed_points() {
    let fp = fixed_point_jsqd(0.9, 2, None).unwrap();
    let m = FluidModel::Jsqd { lambda: 0.9, d: 2 };
    let traj = integrate_fluid(|q, o| m.rhs(q, o), &fp, 10.0, 0.01, 1.0).unwrap();
    assert!(traj.q.iter().all(|q| sup_dist(q, &fp) < 1e-9));

    let traj = integrate_fluid(|q, o| m.rhs(q, o), &vec![0.0; fp.len()], 300.0, 0.01, 0.0).unwrap();
    let gap = sup_dist(traj.last(), &fp);
    assert!(gap < 1e-6, "gap {gap}");

    let m = FluidModel::Jsq { lambda: 0.9 };
    let traj = integrate_fluid(|q, o| m.rhs(q, o), &[0.0; 6], 50.0, 0.01, 0.0).unwrap();
    assert!(sup_dist(traj.last(), &fixed_point_jsq(0.9, Some(6)).unwrap()) < 1e-6);

    let m = FluidModel::Jsqd { lambda: 0.7, d: 1 };
    let traj = integrate_fluid(|q, o| m.rhs(q, o), &[0.0; 80], 1000.0, 0.02, 0.0).unwrap();
    let geometric: Vec<f64> = (1..=80).map(|i| 0.7f64.powi(i)).collect();
    assert!(sup_dist(traj.last(), &geometric) < 1e-6);

    assert!(integrate_fluid(|q, o| m.rhs(q, o), &[0.0], 1.0, 0.0, 0.0).is_err());
}

#[test]
fn rk4_step_halving_ratio() {
    let m = FluidModel::Jsqd { lambda: 0.9, d: 2 };
    let q0 = vec![0.5, 0.2, 0.05, 0.0, 0.0, 0.0];
    let solve = |h: f64| integrate_fluid(|q, o| m.rhs(q, o), &q0, 2.0, h, 0.0).unwrap().last().to_vec();
    let reference = solve(0.0025);
    let e1 = sup_dist(&solve(0.2), &reference);
    let e2 = sup_dist(&solve(0.1), &reference);
    let ratio = e1 / e2;
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn heavy_traffic_examples() {
    let traj = heavy_traffic_jsqd_ode(&[0.0; 4], 2, 5.0, 0.01, 1.0).unwrap();
    assert!(traj.q.iter().all(|q| q.iter().all(|&x| x == 0.0)));
    let mut out = vec![0.0; 3];
    heavy_traffic_rhs(&[1.0, 0.0, 0.0], 1, &mut out);
    assert_eq!(out[0], -2.0);
    for d in [1, 2, 5] {
        let traj = heavy_traffic_jsqd_ode(&[1.0, 2.0, 0.5, 0.0], d, 200.0, 0.01, 0.0).unwrap();
        assert!(traj.last().iter().all(|x| x.abs() < 1e-6));
    }
}

#[test]
fn jsq_diffusion_drift_limit_and_regulator() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = simulate_diffusion_jsq(1.0, &[0.0, 0.0, 0.0], 30.0, 0.001, 1.0, 0.0, &mut rng).unwrap();
    assert!((p.qbar.last().unwrap()[0] + 1.0).abs() < 1e-6);
    let p = simulate_diffusion_jsq(1.0, &[0.0, 0.5, 0.0], 50.0, 0.01, 0.01, 1.0, &mut rng).unwrap();
    assert!(p.regulator.windows(2).all(|w| w[1] >= w[0]));
    assert!(p.regulator[0] >= 0.0 && *p.regulator.last().unwrap() > 0.0);
    assert!(p.qbar.iter().all(|q| q[0] <= 0.0 && q[1..].iter().all(|&x| x >= 0.0)));
    assert!(simulate_diffusion_jsq(1.0, &[0.5, 0.0], 1.0, 0.01, 0.0, 1.0, &mut rng).is_err());
    assert!(simulate_diffusion_jsq(1.0, &[0.0, 0.0], 1.0, -0.01, 0.0, 1.0, &mut rng).is_err());
}

#[test]
fn pool_diffusion_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = simulate_diffusion_pool(PoolDiffusionCase::Integral { k: 2, beta: 0.5 }, &[0.0, 0.0], 100.0, 0.01, 0.01, &mut rng)
        .unwrap();
    assert!(p.state.iter().all(|s| s[0] >= 0.0 && s[1] >= 0.0));
    assert!(p.regulator.windows(2).all(|w| w[1] >= w[0]));
    assert!(*p.regulator.last().unwrap() > 0.0);

    let p = simulate_diffusion_pool(PoolDiffusionCase::Fractional { lambda: 2.0 }, &[0.0], 200.0, 0.01, 0.01, &mut rng)
        .unwrap();
    let xs: Vec<f64> = p.state.iter().skip(1000).map(|s| s[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(mean.abs() < 0.5, "OU mean {mean}");
}

proptest! {
    #[test]
    fn fluid_paths_stay_in_s(raw in proptest::collection::vec(0.0f64..1.0, 1..8), lambda in 0.05f64..0.99, d in 1u32..4) {
        let mut q0 = raw.clone();
        q0.sort_by(|a, b| b.total_cmp(a));
        for model in [FluidModel::Jsqd { lambda, d }, FluidModel::Jsq { lambda }, FluidModel::JsqPool { lambda: lambda * 3.0 }] {
            let traj = integrate_fluid(|q, o| model.rhs(q, o), &q0, 5.0, 0.05, 0.5).unwrap();
            for q in &traj.q {
                prop_assert!(in_s(q));
            }
        }
    }
}
