use cachebench::catalog::{build_catalog, expand_cases, CaseOptions, Catalog, Scheduling};
use cachebench::geometry::CacheGeometry;
use cachebench::harness::{collect_samples, run_suite, SuiteOptions};
use cachebench::machine::{Candidate, MachineConfig, MemOp};

fn catalog() -> Catalog {
    build_catalog(0).unwrap().catalog
}

#[test]
fn flush_reload_gap_is_dram_minus_l1_per_line() {
    let cfg = MachineConfig::default();
    let cat = catalog();
    let p = cat.get(5).unwrap();
    assert_eq!(p.name.as_deref(), Some("Flush+Reload"));
    let case = expand_cases(p, CaseOptions::default(), 1)
        .into_iter()
        .find(|c| c.ops == [Some(MemOp::Flush), Some(MemOp::Read), Some(MemOp::Read)] && c.scheduling == Scheduling::TimeSliced)
        .unwrap();
    let s = collect_samples(&cfg, p, &case, 1000, 7).unwrap().unwrap();
    let lanes = 8.0;
    let runs = 4.0;
    let per_line = (cfg.latency.t_dram - cfg.latency.t_l1) as f64;
    for other in [Candidate::AAlias, Candidate::Nib] {
        let gap = s.mean(other) - s.mean(Candidate::A);
        assert!((gap - per_line * lanes * runs).abs() < 2.0, "gap {gap}");
    }
    // one noise draw per timed window: variance runs * sigma^2
    let a = s.of(Candidate::A);
    let m = s.mean(Candidate::A);
    let var = a.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
    let want = runs * cfg.noise.sigma.powi(2);
    assert!((var / want - 1.0).abs() < 0.15, "variance {var}, expected about {want}");
}

#[test]
fn noise_free_suite_reproduces_every_label() {
    let mut cfg = MachineConfig::default();
    cfg.noise.sigma = 0.0;
    let cat = catalog();
    let r = run_suite(&cfg, &cat, &SuiteOptions { n_trials: 30, ..SuiteOptions::default() }).unwrap();
    for p in &r.patterns {
        assert!(p.effective, "pattern {} ineffective", p.pattern_id);
        assert_eq!(p.observed, Some(p.label), "pattern {}", p.pattern_id);
    }
    for c in &r.cases {
        if let Some(v) = c.verdict() {
            assert!(v.p_values().iter().all(|&p| p == 0.0 || p == 1.0));
        }
    }
}

#[test]
fn direct_mapped_bench_leaves_eviction_cases_untestable() {
    let cfg = MachineConfig::default();
    let cat = catalog();
    let opts = SuiteOptions {
        n_trials: 30,
        bench_geometry: Some(CacheGeometry::new(32 * 1024, 1, 64).unwrap()),
        ..SuiteOptions::default()
    };
    let r = run_suite(&cfg, &cat, &opts).unwrap();
    let untestable: Vec<_> = r.cases.iter().filter(|c| c.verdict().is_none()).collect();
    assert!(!untestable.is_empty());
    for c in untestable {
        let p = cat.get(c.case.pattern_id).unwrap();
        assert!(p.notation().ends_with("_alias"), "{}", p.notation());
    }
}

#[test]
fn too_few_trials_is_a_config_error() {
    let r = run_suite(&MachineConfig::default(), &catalog(), &SuiteOptions { n_trials: 10, ..SuiteOptions::default() });
    assert!(matches!(r, Err(cachebench::Error::Config(_))));
}
