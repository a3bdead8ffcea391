//! Welch's unequal-variance t-test and the per-case effectiveness verdict.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::catalog::{label_from_pairs, PairSet, VulnType};
use crate::machine::Candidate;

pub const DEFAULT_P_THRESHOLD: f64 = 0.00049;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// Both samples constant with different means.
    pub degenerate: bool,
}

/// Mean and unbiased variance. Deviations are taken from the first element
/// so that integer-valued samples shifted by an integer give bit-identical
/// variances.
fn moments(x: &[f64]) -> (f64, f64) {
    let pivot = x[0];
    let n = x.len() as f64;
    let d_mean = x.iter().map(|v| v - pivot).sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - pivot - d_mean).powi(2)).sum();
    (pivot + d_mean, ss / (n - 1.0))
}

/// Two-sided survival `P(|T| >= |t|)` of Student's t with `df` degrees of
/// freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// # Panics
/// If either sample has fewer than two values.
pub fn welch_t_test(x: &[f64], y: &[f64]) -> WelchResult {
    assert!(x.len() >= 2 && y.len() >= 2, "welch_t_test needs two values per sample");
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mx, vx) = moments(x);
    let (my, vy) = moments(y);
    let (ex, ey) = (vx / nx, vy / ny);
    let se2 = ex + ey;
    if se2 == 0.0 {
        let df = nx + ny - 2.0;
        return if mx == my {
            WelchResult { t_statistic: 0.0, degrees_of_freedom: df, p_value: 1.0, degenerate: false }
        } else {
            let t = if mx > my { f64::INFINITY } else { f64::NEG_INFINITY };
            WelchResult { t_statistic: t, degrees_of_freedom: df, p_value: 0.0, degenerate: true }
        };
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2 / (ex * ex / (nx - 1.0) + ey * ey / (ny - 1.0));
    WelchResult { t_statistic: t, degrees_of_freedom: df, p_value: t_two_sided_p(t, df), degenerate: false }
}

/// Candidate pairs in the order used by verdicts and CSVs.
pub const PAIRS: [(Candidate, Candidate); 3] = [
    (Candidate::A, Candidate::AAlias),
    (Candidate::A, Candidate::Nib),
    (Candidate::AAlias, Candidate::Nib),
];

pub fn pair_name(i: usize) -> &'static str {
    ["a_alias", "a_nib", "alias_nib"][i]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub case_id: u32,
    pub effective: bool,
    pub matched_type: Option<VulnType>,
    /// Significance pattern that is not a partition of the candidates.
    pub inconsistent: bool,
    /// Separable pairs, bit i for `PAIRS[i]`.
    pub pairs: PairSet,
    pub tests: [WelchResult; 3],
}

impl Verdict {
    pub fn p_values(&self) -> [f64; 3] {
        self.tests.map(|t| t.p_value)
    }

    /// Whether the case shows at least the information the label promises.
    pub fn covers(&self, label: VulnType) -> bool {
        self.effective
            && match label {
                VulnType::AO => self.pairs == 0b011 || self.pairs == 0b111,
                VulnType::SO => matches!(self.pairs, 0b110 | 0b101 | 0b111),
                VulnType::SA => self.pairs == 0b111,
            }
    }
}

/// Judge one case from its three pairwise tests. The pattern label does not
/// change the decision; a case of an SA pattern may show only its AO or SO
/// half.
pub fn judge(case_id: u32, tests: [WelchResult; 3], p_threshold: f64) -> Verdict {
    let mut pairs: PairSet = 0;
    for (i, t) in tests.iter().enumerate() {
        if t.p_value < p_threshold {
            pairs |= 1 << i;
        }
    }
    let matched_type = label_from_pairs(pairs);
    Verdict {
        case_id,
        effective: matched_type.is_some(),
        matched_type,
        inconsistent: pairs != 0 && matched_type.is_none(),
        pairs,
        tests,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(p: f64) -> WelchResult {
        WelchResult { t_statistic: 0.0, degrees_of_freedom: 10.0, p_value: p, degenerate: false }
    }

    #[test]
    fn identical_samples() {
        let x = [3.0, 1.0, 4.0, 1.0, 5.0];
        let r = welch_t_test(&x, &x);
        assert_eq!(r.t_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn shifted_samples_separate() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = x.map(|v| v + 100.0);
        assert!(welch_t_test(&x, &y).p_value < 1e-6);
    }

    #[test]
    fn constant_samples() {
        let r = welch_t_test(&[4.0; 5], &[4.0; 7]);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.degenerate);
        let r = welch_t_test(&[4.0; 5], &[200.0; 7]);
        assert_eq!(r.p_value, 0.0);
        assert!(r.degenerate);
        assert!(r.degrees_of_freedom > 0.0);
    }

    #[test]
    fn one_constant_sample() {
        let r = welch_t_test(&[4.0; 5], &[1.0, 2.0, 3.0]);
        assert!((r.degrees_of_freedom - 2.0).abs() < 1e-12);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
    }

    #[test]
    fn known_value() {
        // two-sided p for t = 2.0 at 10 df
        assert!((t_two_sided_p(2.0, 10.0) - 0.073388034770740).abs() < 1e-9);
        // t = 1 with 1 df is the Cauchy distribution: p = 0.5
        assert!((t_two_sided_p(1.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table_partitions() {
        let thr = DEFAULT_P_THRESHOLD;
        let v = judge(1, [w(1.0), w(1.0), w(1.0)], thr);
        assert!(!v.effective && !v.inconsistent);
        let v = judge(1, [w(1e-5), w(1e-5), w(0.9)], thr);
        assert_eq!(v.matched_type, Some(VulnType::AO));
        let v = judge(1, [w(1e-5), w(1e-5), w(1e-5)], thr);
        assert_eq!(v.matched_type, Some(VulnType::SA));
        let v = judge(1, [w(0.5), w(1e-5), w(1e-5)], thr);
        assert_eq!(v.matched_type, Some(VulnType::SO));
        let v = judge(1, [w(1e-9), w(0.5), w(0.5)], thr);
        assert!(!v.effective && v.inconsistent);
        assert_eq!(v.matched_type, None);
    }

    #[test]
    fn coverage() {
        let v = judge(1, [w(1e-5), w(1e-5), w(0.9)], DEFAULT_P_THRESHOLD);
        assert!(v.covers(VulnType::AO));
        assert!(!v.covers(VulnType::SA));
    }
}
