//! Mapping diagnosis against plain modular arithmetic.

use std::collections::BTreeSet;

use cachebench::geometry::CacheGeometry;
use cachebench::sensitivity::{diagnose_mapping_rep, generate_addresses, Situation};
use proptest::prelude::*;

fn set_of(addr: u64, total: u64, ways: u64, line: u64) -> u64 {
    (addr / line) % (total / (ways * line))
}

fn geometry() -> impl Strategy<Value = (u64, u64, u64)> {
    (0u32..6, 4u32..9, 12u32..18).prop_filter_map("size too small", |(w, l, t)| {
        let (ways, line, total) = (1u64 << w, 1u64 << l, 1u64 << t);
        (total >= ways * line).then_some((total, ways, line))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bench_addresses_fill_one_bench_set((bt, bw, bl) in geometry(), rep in 1usize..9) {
        let bench = CacheGeometry::new(bt, bw, bl).unwrap();
        prop_assume!(rep as u64 <= bench.num_sets() / 2);
        let addrs = generate_addresses(&bench, rep).unwrap();
        prop_assert_eq!(addrs.set_groups.len(), rep);
        let mut lane_sets = BTreeSet::new();
        for (g, (&a, &nib)) in addrs.set_groups.iter().zip(addrs.a.iter().zip(&addrs.nib)) {
            prop_assert_eq!(g[0], a);
            prop_assert_eq!(g.len() as u64, bw);
            let s = set_of(a, bt, bw, bl);
            prop_assert!(g.iter().all(|&x| set_of(x, bt, bw, bl) == s));
            let lines: BTreeSet<u64> = g.iter().map(|x| x / bl).collect();
            prop_assert_eq!(lines.len(), g.len());
            prop_assert!(set_of(nib, bt, bw, bl) != s);
            lane_sets.insert(s);
        }
        prop_assert_eq!(lane_sets.len(), rep);
    }

    #[test]
    fn diagnosis_matches_brute_force((bt, bw, bl) in geometry(), (dt, dw, dl) in geometry(), rep in 1usize..9) {
        let bench = CacheGeometry::new(bt, bw, bl).unwrap();
        let device = CacheGeometry::new(dt, dw, dl).unwrap();
        prop_assume!(rep as u64 <= bench.num_sets() / 2);
        let d = diagnose_mapping_rep(&bench, &device, rep).unwrap();
        let addrs = generate_addresses(&bench, rep).unwrap();

        let mut want = BTreeSet::new();
        let mut counts = Vec::new();
        for g in &addrs.set_groups {
            let target = set_of(g[0], dt, dw, dl);
            let mut lines = BTreeSet::new();
            let mut split = false;
            for &x in g {
                if set_of(x, dt, dw, dl) == target {
                    lines.insert(x / dl);
                } else {
                    split = true;
                }
            }
            if (lines.len() as u64) < dw {
                want.insert(Situation::FewerLines);
            }
            if split {
                want.insert(Situation::SetSplit);
            }
            counts.push(lines.len());
        }
        let mut seen = BTreeSet::new();
        if !addrs.a.iter().all(|&a| seen.insert(set_of(a, dt, dw, dl))) {
            want.insert(Situation::SetCollision);
        }
        let wrap = addrs.a.iter().zip(&addrs.nib).any(|(&a, &n)| set_of(a, dt, dw, dl) == set_of(n, dt, dw, dl));

        prop_assert_eq!(&d.situations, &want);
        prop_assert_eq!(&d.lines_in_target_set, &counts);
        prop_assert_eq!(d.wrap_back, wrap);
        prop_assert_eq!(d.c_prime, bt as f64 / dt as f64);
    }
}

#[test]
fn matching_geometry_has_no_situation() {
    let g = CacheGeometry::new(32 * 1024, 4, 64).unwrap();
    let d = diagnose_mapping_rep(&g, &g, 8).unwrap();
    assert!(d.situations.is_empty() && !d.wrap_back);
}
