use covband::env::MachineSpec;
use covband::harness::{
    run_many, run_once, run_once_as, run_with, HorizonMode, RunConfig,
};
use covband::policies::{PolicyKind, PolicySpec};
use covband::suites::doubling_overhead;
use covband::StaticMachine;

fn constant_machine() -> MachineSpec {
    serde_json::from_value(serde_json::json!({
        "family": "constant", "params": {"values": [0.4, 0.6]}, "d": 1, "K": 2
    }))
    .unwrap()
}

#[test]
fn doubled_bse_within_constant_factor() {
    let n = 1 << 14;
    let mut known = RunConfig::new(constant_machine(), PolicySpec::new(PolicyKind::Bse), n);
    known.reps = 40;
    known.base_seed = 3;
    let mut doubled = known.clone();
    doubled.policy.params.doubling = true;
    let a = run_many(&known).unwrap().final_regret.mean;
    let b = run_many(&doubled).unwrap().final_regret.mean;
    assert!(b <= 4.0 * a && a <= 4.0 * b, "known {a}, doubled {b}");
}

#[test]
fn doubled_se_within_constant_factor() {
    let machine = StaticMachine::bernoulli(vec![0.5, 0.7]).unwrap();
    let (known, doubled) = doubling_overhead(machine, 1 << 14, 40, 9).unwrap();
    assert!(doubled <= 4.0 * known && known <= 4.0 * doubled, "known {known}, doubled {doubled}");
}

#[test]
fn outputs_depend_only_on_the_past() {
    // Same streams, two horizons: the shorter trace is a prefix of the longer.
    for kind in [PolicyKind::Bse, PolicyKind::Abse, PolicyKind::Se] {
        let spec = MachineSpec::proposition(1.0, 1.0, 2, 1);
        let machine = spec.build::<f64>().unwrap();
        let cp: Vec<u64> = (1..=40).map(|i| i * 100).collect();
        let mut short = PolicySpec::new(kind).build(&machine, 8000).unwrap();
        let mut long = PolicySpec::new(kind).build(&machine, 8000).unwrap();
        let a = run_with(&machine, &mut short, 2000, HorizonMode::Fixed, &cp[..20], 5, 0, false).unwrap();
        let b = run_with(&machine, &mut long, 8000, HorizonMode::Fixed, &cp, 5, 0, false).unwrap();
        assert_eq!(a.regret[..], b.regret[..20], "{kind:?}");
    }
}

#[test]
fn poisson_prefix_matches_fixed() {
    let mut fixed = RunConfig::new(MachineSpec::proposition(1.0, 1.0, 2, 1), PolicySpec::new(PolicyKind::Abse), 4000);
    fixed.checkpoints = Some(vec![500, 1000, 2000, 3000, 4000]);
    let mut poisson = fixed.clone();
    poisson.horizon_mode = HorizonMode::Poisson;
    let f = run_once(&fixed, 2).unwrap();
    let p = run_once(&poisson, 2).unwrap();
    for (j, &t) in f.checkpoints.iter().enumerate() {
        if t <= p.horizon.min(f.horizon) {
            assert_eq!(f.regret[j], p.regret[j]);
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let mut config = RunConfig::new(MachineSpec::static_means(vec![0.3, 0.8]), PolicySpec::new(PolicyKind::Se), 5000);
    config.reps = 1;
    let a = run_once_as::<f64>(&config, 0).unwrap();
    let b = run_once_as::<f32>(&config, 0).unwrap();
    let rel = (a.final_regret - b.final_regret).abs() / a.final_regret;
    assert!(rel < 0.05, "f64 {} vs f32 {}", a.final_regret, b.final_regret);
}

#[test]
fn regret_grows_with_n() {
    let mut prev = 0.0;
    for n in [1000, 4000, 16000] {
        let mut config = RunConfig::new(MachineSpec::static_means(vec![0.5, 0.7]), PolicySpec::new(PolicyKind::Se), n);
        config.reps = 100;
        let s = run_many(&config).unwrap().final_regret;
        assert!(s.ci_high >= prev);
        prev = s.mean;
    }
}
