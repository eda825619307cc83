use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// mean(a) > mean(b).
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    /// Both samples have zero variance; the p-value follows a convention.
    pub degenerate: bool,
}

/// Welch's unequal-variance t-test with Satterthwaite degrees of freedom.
///
/// When both variances are zero the result is flagged degenerate: equal
/// means give `t = 0, p = 1`, different means give an infinite `t` and the
/// limiting p-value.
pub fn welch_ttest(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("t-test samples must be finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let (sa, sb) = (
        stats::sample_variance(a) / na,
        stats::sample_variance(b) / nb,
    );
    let se2 = sa + sb;
    if se2 == 0.0 {
        let t = if ma == mb {
            0.0
        } else if ma > mb {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        let p = match (alternative, t) {
            (_, t) if t == 0.0 => 1.0,
            (Alternative::TwoSided, _) => 0.0,
            (Alternative::Greater, t) if t > 0.0 => 0.0,
            (Alternative::Greater, _) => 1.0,
        };
        return Ok(TTestResult {
            t_stat: t,
            dof: na + nb - 2.0,
            p_value: p,
            alternative,
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Numerical(format!("t distribution with dof {dof}: {e}")))?;
    let p = match alternative {
        Alternative::TwoSided => (2.0 * dist.cdf(-t.abs())).min(1.0),
        Alternative::Greater => dist.cdf(-t),
    };
    Ok(TTestResult {
        t_stat: t,
        dof,
        p_value: p.clamp(0.0, 1.0),
        alternative,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let r = welch_ttest(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.t_stat, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_convention() {
        let r = welch_ttest(&[2.0, 2.0], &[2.0, 2.0, 2.0], Alternative::TwoSided).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        let r = welch_ttest(&[3.0, 3.0], &[2.0, 2.0], Alternative::Greater).unwrap();
        assert!(r.degenerate && r.p_value == 0.0);
    }

    #[test]
    fn too_small() {
        assert!(welch_ttest(&[1.0], &[1.0, 2.0], Alternative::TwoSided).is_err());
    }

    #[test]
    fn swap_antisymmetry() {
        let a = [1.5, 2.0, 7.25, 3.0];
        let b = [0.1, 0.4, 0.2, 9.0, 3.3];
        let r1 = welch_ttest(&a, &b, Alternative::TwoSided).unwrap();
        let r2 = welch_ttest(&b, &a, Alternative::TwoSided).unwrap();
        assert_eq!(r1.t_stat, -r2.t_stat);
        assert_eq!(r1.p_value, r2.p_value);
        assert_eq!(r1.dof, r2.dof);
    }

    #[test]
    fn shift_monotonicity() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let mut last = 1.0;
        for k in 0..10 {
            let b: Vec<f64> = [1.5, 2.5, 2.0, 4.5]
                .iter()
                .map(|v| v + 4.0 * k as f64)
                .collect();
            let p = welch_ttest(&b, &a, Alternative::Greater).unwrap().p_value;
            assert!(p <= last);
            last = p;
        }
        assert!(last < 1e-6);
    }
}
