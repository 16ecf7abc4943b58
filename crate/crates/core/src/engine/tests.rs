use super::*;
use crate::policies::{Enhancement, Scenario};

fn cfg(n: usize, lambda: f64, policy: PolicySpec, horizon: f64, seed: u64) -> SimConfig {
    SimConfig::new(n, lambda, policy, horizon, seed)
}

#[test]
fn no_arrivals_means_no_events() {
    for policy in [PolicySpec::Random, PolicySpec::Jsq, PolicySpec::Jiq, PolicySpec::Jsqd { d: 2, replacement: false }]
    {
        let s = run(&cfg(10, 0.0, policy, 100.0, 1)).unwrap();
        assert_eq!(s.events, 0);
        assert_eq!(s.mean_wait, crate::stats::Estimate::default());
        assert_eq!(s.p_wait, crate::stats::Estimate::default());
        assert_eq!(s.p_block, crate::stats::Estimate::default());
        assert!(s.q_stationary.is_empty());
        assert_eq!(s.max_queue, 0);
    }
}

#[test]
fn rejects_bad_configs() {
    let c = cfg(4, 2.0, PolicySpec::Random, 10.0, 0).with_warmup(10.0);
    assert!(matches!(run(&c), Err(Error::InvalidParameter { name: "horizon", .. })));
    let c = cfg(4, 2.0, PolicySpec::Jsw, 10.0, 0).with_dynamics(Dynamics::ServerPool { capacity: Capacity::Finite(3) });
    assert!(matches!(run(&c), Err(Error::UnsupportedDynamics { .. })));
    let c = cfg(4, 2.0, PolicySpec::Redundancy { d: 2, abort: Abort::OnStart }, 10.0, 0)
        .with_dynamics(Dynamics::ServerPool { capacity: Capacity::Infinite });
    assert!(matches!(run(&c), Err(Error::UnsupportedDynamics { .. })));
    assert!(run(&cfg(4, 4.0, PolicySpec::Random, 10.0, 0)).is_err());
    assert!(run(&cfg(4, 1.0, PolicySpec::GraphJsq, 10.0, 0)).is_err());
    let c = cfg(4, 1.0, PolicySpec::Random, 10.0, 0).with_dispatchers(MultiDispatcherSpec::single());
    assert!(run(&c).is_err());
}

#[test]
fn capacity_serde_forms() {
    let d: Dynamics = serde_json::from_str(r#"{"kind":"server_pool","capacity":10}"#).unwrap();
    assert_eq!(d, Dynamics::ServerPool { capacity: Capacity::Finite(10) });
    let d: Dynamics = serde_json::from_str(r#"{"kind":"server_pool","capacity":"infinite"}"#).unwrap();
    assert_eq!(d, Dynamics::ServerPool { capacity: Capacity::Infinite });
    assert!(serde_json::from_str::<Dynamics>(r#"{"kind":"server_pool","capacity":"lots"}"#).is_err());
    assert_eq!(serde_json::to_string(&Capacity::Infinite).unwrap(), r#""infinite""#);
}

#[test]
fn jiq_token_created_when_station_empties() {
    let mut sim = Simulation::new(&cfg(3, 1.5, PolicySpec::Jiq, 50.0, 7)).unwrap();
    assert_eq!(sim.tokens().unwrap().total(), 3);
    let mut idle_transitions = 0;
    while let Some(ev) = sim.next_event() {
        let before_idle = sim.counts().iter().filter(|&&c| c == 0).count();
        let before_tokens = sim.tokens().unwrap().total();
        let station_count = match ev.kind {
            EventKind::Departure { station, .. } => Some(sim.counts()[station as usize]),
            _ => None,
        };
        sim.advance(ev);
        let book = sim.tokens().unwrap();
        if station_count == Some(1) {
            idle_transitions += 1;
            assert_eq!(book.total(), before_tokens + 1);
        }
        // Token holders are exactly the idle stations.
        let idle = sim.counts().iter().filter(|&&c| c == 0).count();
        assert_eq!(book.total(), idle);
        for (s, &c) in sim.counts().iter().enumerate() {
            assert_eq!(book.holder(s).is_some(), c == 0);
        }
        let _ = before_idle;
    }
    assert!(idle_transitions > 10);
}

#[test]
fn full_pool_blocks_without_scheduling() {
    let c = cfg(2, 6.0, PolicySpec::Random, 30.0, 3).with_dynamics(Dynamics::ServerPool { capacity: Capacity::Finite(2) });
    let mut sim = Simulation::new(&c).unwrap();
    let mut blocked_seen = 0;
    while let Some(ev) = sim.next_event() {
        let flow = sim.flow();
        let pending = sim.pending_events();
        let counts = sim.counts().to_vec();
        sim.advance(ev);
        if sim.flow().blocked > flow.blocked {
            blocked_seen += 1;
            assert_eq!(ev.kind, EventKind::Arrival);
            assert_eq!(sim.counts(), counts.as_slice());
            assert!(counts.contains(&2));
            // Only the next arrival was added.
            assert_eq!(sim.pending_events(), pending + 1);
        }
        assert!(sim.counts().iter().all(|&c| c <= 2));
    }
    assert!(blocked_seen > 0);
}

#[test]
fn identical_seeds_give_identical_event_sequences() {
    let policies = [
        PolicySpec::Jsqd { d: 2, replacement: false },
        PolicySpec::Jiq,
        PolicySpec::Redundancy { d: 2, abort: Abort::OnComplete },
        PolicySpec::SparseFeedback { update_rate: 0.5, report_mode: ReportMode::ZeroOnly },
    ];
    for policy in policies {
        let c = cfg(20, 14.0, policy, 40.0, 99);
        let trace = |c: &SimConfig| {
            let mut sim = Simulation::new(c).unwrap();
            std::iter::from_fn(|| sim.step()).collect::<Vec<_>>()
        };
        let a = trace(&c);
        assert!(!a.is_empty());
        assert_eq!(a, trace(&c));
        assert_eq!(run(&c).unwrap(), run(&c).unwrap());
        assert_ne!(a, trace(&c.clone().with_seed(100)));
    }
}

#[test]
fn flow_is_conserved_at_every_event() {
    let pool = Dynamics::ServerPool { capacity: Capacity::Finite(3) };
    let cases = vec![
        cfg(10, 8.0, PolicySpec::Jsq, 30.0, 1),
        cfg(10, 25.0, PolicySpec::Jsqd { d: 2, replacement: true }, 30.0, 2).with_dynamics(pool),
        cfg(10, 8.0, PolicySpec::Redundancy { d: 3, abort: Abort::OnStart }, 30.0, 3),
        cfg(10, 8.0, PolicySpec::Redundancy { d: 3, abort: Abort::OnComplete }, 30.0, 4),
        cfg(10, 8.0, PolicySpec::Rsq { d: 2 }, 30.0, 5),
        cfg(10, 9.0, PolicySpec::Jiq, 30.0, 6).with_dispatchers(MultiDispatcherSpec {
            alpha: vec![0.7, 0.3],
            scenario: Scenario::Blocking,
            enhancement: Enhancement::B { nu: 2.0 },
        }),
    ];
    for c in cases {
        let mut sim = Simulation::new(&c).unwrap();
        while sim.step().is_some() {
            assert!(sim.flow().is_conserved(), "{:?}", sim.flow());
            let occ = sim.occupancy();
            assert!(occ.get(1) <= c.n_stations as u64);
            assert!(occ.counts.windows(2).all(|w| w[0] >= w[1]));
        }
        let s = sim.finish();
        assert!(s.flow.is_conserved());
        assert!(s.q_stationary.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }
}

#[test]
fn redundancy_effort_accounting() {
    let s = run(&cfg(12, 8.0, PolicySpec::Redundancy { d: 3, abort: Abort::OnStart }, 400.0, 11)).unwrap();
    assert_eq!(s.max_concurrent_clones, Some(1));
    assert!((s.effort_ratio.unwrap() - 1.0).abs() < 1e-9);

    let s = run(&cfg(12, 6.0, PolicySpec::Redundancy { d: 3, abort: Abort::OnComplete }, 400.0, 11)).unwrap();
    assert!(s.effort_ratio.unwrap() >= 1.0);
    assert!(s.max_concurrent_clones.unwrap() > 1);

    let s = run(&cfg(12, 8.0, PolicySpec::Rsq { d: 2 }, 400.0, 11)).unwrap();
    assert_eq!(s.max_concurrent_clones, Some(1));
}

#[test]
fn single_clone_redundancy_is_random_assignment() {
    let base = run(&cfg(8, 6.0, PolicySpec::Random, 2_000.0, 5)).unwrap();
    for abort in [Abort::OnStart, Abort::OnComplete] {
        let s = run(&cfg(8, 6.0, PolicySpec::Redundancy { d: 1, abort }, 2_000.0, 5)).unwrap();
        // Same random numbers drive the same sample paths; only censoring at
        // the horizon differs.
        assert!((s.mean_wait.value - base.mean_wait.value).abs() < 0.01 * base.mean_wait.value);
        assert_eq!(s.q_stationary.len(), base.q_stationary.len());
    }
}

#[test]
fn path_sampling_and_station_tracking() {
    let mut c = cfg(16, 12.0, PolicySpec::Jsq, 20.0, 8);
    c.path = Some(PathSpec { interval: 1.0, levels: 2 });
    c.track_stations = true;
    let s = run(&c).unwrap();
    let path = s.qbar_path.as_ref().unwrap();
    assert_eq!(path.len(), 21);
    assert!(path.iter().all(|p| p.qbar.len() == 2 && p.qbar[0] <= 0.0 && p.qbar[1] >= 0.0));
    let per_station = s.station_mean_tasks.as_ref().unwrap();
    let total: f64 = per_station.iter().sum();
    assert!((total / 16.0 - s.mean_tasks_per_station()).abs() < 1e-9);
}
