//! Deterministic equivalent of the aggregate supply chance constraint under
//! independent Gaussian net-demand, and the standard normal quantile.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::grid::{Bus, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochasticError {
    #[error("probability {0} is outside the open interval (0, 1)")]
    Probability(f64),
    #[error("unknown area `{0}`")]
    UnknownArea(String),
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`normal_cdf`].
///
/// A rational approximation with relative error around 1e-9 is polished by a
/// single Halley step, which brings the result to working precision.
pub fn normal_quantile(p: f64) -> Result<f64, StochasticError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StochasticError::Probability(p));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] =
        [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };

    // Halley refinement on Phi(x) - p
    let e = normal_cdf(x) - p;
    let u = e / normal_pdf(x);
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Aggregate supply an area must hold to cover its net demand with
/// probability `1 - t_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRequirement {
    pub area_id: String,
    pub mean_total: f64,
    pub std_total: f64,
    pub z: f64,
    pub requirement: f64,
}

/// Builds the requirement from independent per-bus `(mean, std)` pairs.
pub fn requirement_from_moments(
    area_id: &str,
    moments: impl IntoIterator<Item = (f64, f64)>,
    t_a: f64,
) -> Result<AggregateRequirement, StochasticError> {
    let z = normal_quantile(1.0 - t_a)?;
    let (mean_total, var_total) = moments.into_iter().fold((0.0, 0.0), |(m, v), (mean, std)| (m + mean, v + std * std));
    let std_total = var_total.sqrt();
    Ok(AggregateRequirement {
        area_id: area_id.to_string(),
        mean_total,
        std_total,
        z,
        requirement: mean_total + z * std_total,
    })
}

/// Requirement for `area_id` using the buses of `net` and the given tail.
pub fn aggregate_requirement(net: &Network, area_id: &str, t_a: f64) -> Result<AggregateRequirement, StochasticError> {
    let area = net.area(area_id).ok_or_else(|| StochasticError::UnknownArea(area_id.to_string()))?;
    let moments = area.buses.iter().filter_map(|b| net.bus(b)).map(|b| (b.mean_net_demand, b.demand_std));
    requirement_from_moments(area_id, moments, t_a)
}

/// Requirement for an area at its own configured confidence tail.
pub fn area_requirement(net: &Network, area_id: &str) -> Result<AggregateRequirement, StochasticError> {
    let t_a = net.area(area_id).ok_or_else(|| StochasticError::UnknownArea(area_id.to_string()))?.confidence_tail;
    aggregate_requirement(net, area_id, t_a)
}

/// Right-hand side of a bus's nodal balance: the forecast mean. Uncertainty
/// enters only through the aggregate requirement.
pub fn nodal_requirement(bus: &Bus) -> f64 {
    bus.mean_net_demand
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson integral of the pdf from -12 to z, with enough panels
    /// to push quadrature error far below the tolerances used here.
    fn oracle_cdf(z: f64) -> f64 {
        let lo = -12.0;
        let n = 20_000;
        let h = (z - lo) / n as f64;
        let mut acc = normal_pdf(lo) + normal_pdf(z);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * normal_pdf(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    pub(crate) fn oracle_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if oracle_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn median_is_zero() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn upper_quantiles_match_oracle() {
        let z95 = oracle_quantile(0.95);
        let z975 = oracle_quantile(0.975);
        assert!((z95 - 1.644854).abs() < 1e-4);
        assert!((z975 - 1.959964).abs() < 1e-4);
        assert!((normal_quantile(0.95).unwrap() - z95).abs() < 1e-8);
        assert!((normal_quantile(0.975).unwrap() - z975).abs() < 1e-8);
    }

    #[test]
    fn cdf_inverts_quantile_to_1e9() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let z = normal_quantile(p).unwrap();
            assert!((normal_cdf(z) - p).abs() <= 1e-9, "p={p}");
        }
        for p in [1e-10, 1e-6, 1e-3, 0.999_999] {
            let z = normal_quantile(p).unwrap();
            assert!((normal_cdf(z) - p).abs() <= 1e-9 * p.max(1e-3), "p={p}");
        }
    }

    #[test]
    fn rejects_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(normal_quantile(p).is_err());
        }
    }

    #[test]
    fn median_tail_requirement_is_the_mean() {
        let r = requirement_from_moments("a", [(10.0, 3.0), (20.0, 4.0)], 0.5).unwrap();
        assert_eq!(r.requirement, 30.0);
        assert_eq!(r.std_total, 5.0);
    }

    #[test]
    fn five_percent_tail_requirement() {
        let r = requirement_from_moments("a", [(10.0, 3.0), (20.0, 4.0)], 0.05).unwrap();
        let expected = 30.0 + oracle_quantile(0.95) * 5.0;
        assert!((r.requirement - expected).abs() < 1e-6);
        assert!((r.requirement - 38.2243).abs() < 1e-3);
    }

    #[test]
    fn six_percent_variation_single_bus() {
        let r = requirement_from_moments("a", [(100.0, 6.0)], 0.05).unwrap();
        assert!((r.requirement - 109.869).abs() < 1e-2);
    }

    #[test]
    fn nodal_requirement_is_mean() {
        let mut bus = Bus { id: "n".into(), area_id: "a".into(), mean_net_demand: 0.0, demand_std: 0.0 };
        assert_eq!(nodal_requirement(&bus), 0.0);
        bus.mean_net_demand = 55.0;
        assert_eq!(nodal_requirement(&bus), 55.0);
        bus.demand_std = 0.3 * 55.0;
        assert_eq!(nodal_requirement(&bus), 55.0);
    }

    proptest! {
        #[test]
        fn quantile_is_increasing(p in 1e-6f64..0.999_99, dp in 1e-6f64..1e-2) {
            let q = (p + dp).min(1.0 - 1e-7);
            prop_assume!(q > p);
            prop_assert!(normal_quantile(q).unwrap() > normal_quantile(p).unwrap());
        }

        #[test]
        fn quantile_is_odd(p in 1e-6f64..0.999_999) {
            let a = normal_quantile(p).unwrap();
            let b = normal_quantile(1.0 - p).unwrap();
            prop_assert!((a + b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn requirement_decreases_with_tail(
            means in proptest::collection::vec(0.0f64..200.0, 1..5),
            cov in 0.0f64..0.3,
            t1 in 0.01f64..0.98,
            dt in 0.001f64..0.01,
        ) {
            let m: Vec<(f64, f64)> = means.iter().map(|m| (*m, cov * m)).collect();
            let r1 = requirement_from_moments("a", m.clone(), t1).unwrap();
            let r2 = requirement_from_moments("a", m, t1 + dt).unwrap();
            prop_assert!(r2.requirement <= r1.requirement + 1e-12);
            if t1 <= 0.5 {
                prop_assert!(r1.requirement >= r1.mean_total - 1e-12);
            }
        }
    }
}
