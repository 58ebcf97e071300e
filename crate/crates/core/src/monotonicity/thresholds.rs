//! Closed-form well-posedness thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn require(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg.into()))
    }
}

/// Lower bound on `Lambda_beta` for global solvability given `(T, K_beta, Gamma_beta)`:
/// `4 T(T+1) K^2 e^{2T(T+1)K^2} [1 + T(T+1) K^2 e^{2T(T+1)K^2}] Gamma`.
pub fn threshold_big_lambda(t: f64, k_beta: f64, gamma_beta: f64) -> Result<f64> {
    require(
        t > 0.0 && k_beta > 0.0 && gamma_beta >= 0.0,
        "need T > 0, K_beta > 0, Gamma_beta >= 0",
    )?;
    if gamma_beta == 0.0 {
        return Ok(0.0);
    }
    let a = t * (t + 1.0) * k_beta * k_beta;
    let e = (2.0 * a).exp();
    Ok(4.0 * a * e * (1.0 + a * e) * gamma_beta)
}

/// The small-constant form `2 T(T+1) K^2 Gamma`.
pub fn threshold_big_lambda_reduced(t: f64, k_beta: f64, gamma_beta: f64) -> Result<f64> {
    require(
        t > 0.0 && k_beta > 0.0 && gamma_beta >= 0.0,
        "need T > 0, K_beta > 0, Gamma_beta >= 0",
    )?;
    Ok(2.0 * t * (t + 1.0) * k_beta * k_beta * gamma_beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CltVariant {
    /// `4 L^2 T(T+1) exp(4 L^2 T(T+1))`
    MpFull,
    /// `2 L^2 T(T+1)`
    MpReduced,
    /// `A + sqrt(A^2 + 4A)` with the exponential `A`
    FbsdeLocal,
    /// `A + sqrt(A^2 + 4A)` with `A = 2 T(T+1) L^3`
    FbsdeLocalReduced,
}

impl std::str::FromStr for CltVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mp_full" => Ok(Self::MpFull),
            "mp_reduced" => Ok(Self::MpReduced),
            "fbsde_local" => Ok(Self::FbsdeLocal),
            "fbsde_local_reduced" => Ok(Self::FbsdeLocalReduced),
            _ => Err(Error::InvalidInput(format!("unknown c(L,T) variant {s}"))),
        }
    }
}

/// The constant `c(L, T)` bounding how much mean field dependence the
/// convexity can absorb.
pub fn threshold_c_lt(l: f64, t: f64, variant: CltVariant) -> Result<f64> {
    require(l > 0.0 && t >= 0.0, "need L > 0 and T >= 0")?;
    let tt = t * (t + 1.0);
    let from_a = |a: f64| a + (a * a + 4.0 * a).sqrt();
    Ok(match variant {
        CltVariant::MpFull => {
            let a = 4.0 * l * l * tt;
            a * a.exp()
        }
        CltVariant::MpReduced => 2.0 * l * l * tt,
        CltVariant::FbsdeLocal => {
            let e = (32.0 * tt * l * l).exp();
            from_a(64.0 * tt * l.powi(3) * e * (1.0 + 16.0 * tt * l * l * e))
        }
        CltVariant::FbsdeLocalReduced => from_a(2.0 * tt * l.powi(3)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(rename = "A")]
    pub a: f64,
    /// `2 lambda_x - lambda_m - L_x - (L_v + 3 l_x)^2 / (4 lambda_v)`
    pub denominator: f64,
    pub budget_ok: bool,
}

/// How much anti-monotonicity `l_g` of the terminal cost the running cost
/// convexity can compensate: `A l_g < 1`.
#[allow(clippy::too_many_arguments)]
pub fn anti_monotonicity_budget(
    lambda_v: f64,
    lambda_x: f64,
    lambda_m: f64,
    l_x_cap: f64,
    l_v_cap: f64,
    l_x: f64,
    l: f64,
    l_g: f64,
) -> Result<Budget> {
    let inputs = [lambda_v, lambda_x, lambda_m, l_x_cap, l_v_cap, l_x, l, l_g];
    require(
        inputs.iter().all(|v| v.is_finite()),
        "budget inputs must be finite",
    )?;
    require(lambda_v > 0.0, "lambda_v must be positive")?;
    let d = 2.0 * lambda_x - lambda_m - l_x_cap - (l_v_cap + 3.0 * l_x).powi(2) / (4.0 * lambda_v);
    if !(d > 0.0) {
        return Err(Error::NonPositiveDenominator(d));
    }
    Ok(budget_from_denominator(lambda_v, d, l, l_g))
}

/// Same constant from `D` directly.
pub fn budget_from_denominator(lambda_v: f64, d: f64, l: f64, l_g: f64) -> Budget {
    let a = (l * lambda_v + l * (lambda_v * lambda_v + lambda_v * d).sqrt()) / (lambda_v * d);
    Budget {
        a,
        denominator: d,
        budget_ok: a * l_g < 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn big_lambda_values() {
        // independent evaluation with a = 0.5, e = exp(1)
        let e1 = 1f64.exp();
        let expect = 4.0 * 0.5 * e1 * (1.0 + 0.5 * e1) * 0.1;
        let got = threshold_big_lambda(1.0, 0.5, 0.1).unwrap();
        assert!((got - expect).abs() < 1e-14);
        assert!((got - 1.28255).abs() < 1e-4);
        assert_eq!(threshold_big_lambda(1.0, 0.5, 0.0).unwrap(), 0.0);
        assert!((threshold_big_lambda_reduced(1.0, 0.5, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!(threshold_big_lambda(0.0, 0.5, 0.1).is_err());
    }

    #[test]
    fn c_lt_values() {
        assert_eq!(
            threshold_c_lt(1.0, 1.0, CltVariant::MpReduced).unwrap(),
            4.0
        );
        let full = threshold_c_lt(1.0, 1.0, CltVariant::MpFull).unwrap();
        assert!((full - 8.0 * 8f64.exp()).abs() < 1e-9);
        assert!((full - 23847.66).abs() < 0.01);
        for v in [
            CltVariant::MpFull,
            CltVariant::MpReduced,
            CltVariant::FbsdeLocal,
            CltVariant::FbsdeLocalReduced,
        ] {
            assert_eq!(threshold_c_lt(2.0, 0.0, v).unwrap(), 0.0);
        }
        // A = 4 for L = T = 1 in the reduced local form
        let red = threshold_c_lt(1.0, 1.0, CltVariant::FbsdeLocalReduced).unwrap();
        assert!((red - (4.0 + 32f64.sqrt())).abs() < 1e-12);
        assert!(threshold_c_lt(1.0, 0.1, CltVariant::FbsdeLocal).unwrap() > 0.0);
        assert_eq!("mp_full".parse::<CltVariant>().unwrap(), CltVariant::MpFull);
    }

    #[test]
    fn budget_values() {
        // D = 2 * 0.5 = 1 with L = lambda_v = 1
        let b = anti_monotonicity_budget(1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.4).unwrap();
        assert!((b.a - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!(b.budget_ok);
        let b = anti_monotonicity_budget(1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.42).unwrap();
        assert!(!b.budget_ok);
        assert!(
            anti_monotonicity_budget(1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)
                .unwrap()
                .budget_ok
        );
        assert!(matches!(
            anti_monotonicity_budget(1.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
            Err(Error::NonPositiveDenominator(_))
        ));
    }
}
