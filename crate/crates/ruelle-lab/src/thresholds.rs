//! Growth-factor estimation.
//!
//! The continuation half-plane is controlled by the exponential rates of the
//! weighted cocycle `|det dphi^t|^{1/2} ||T^t|| ||dphi^t|_{E_s}||^{-m_u}`
//! (unstable side) and its stable mirror. Rates are estimated by taking the
//! sup of the log-functional over a deterministic sample set at a ladder of
//! horizons and extrapolating the O(1/t) prefactor away.

use crate::error::Error;
use crate::flows::{
    compute_splitting, exact_splitting, invariant_restricted_log_sv, log_abs_det_jacobian,
    InvariantSubspace, ModelSystem, PhasePoint, Splitting,
};
use crate::lifts::{transport_scaled, sigma_max, BundleLift, FlowDirection};
use crate::sampling::phase_samples;
use crate::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which side of the dual splitting a growth factor controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `r_u(m_u)`, `m_u <= 0`.
    Unstable,
    /// `r_s(m_s)`, `m_s >= 0`.
    Stable,
}

/// Sampling and extrapolation parameters for rate estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub horizons: Vec<f64>,
    pub base_samples: usize,
    pub fiber_samples: usize,
    pub seed: u64,
    /// `NonConvergence` above this residual.
    pub residual_ceiling: f64,
    /// Cone-iteration horizon for models without exact splittings.
    pub splitting_horizon: f64,
    pub splitting_tol: f64,
    /// Optional diagonal fiber metric weights for transport norms.
    pub fiber_metric: Option<Vec<f64>>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            horizons: vec![5.0, 10.0, 20.0, 40.0],
            base_samples: 24,
            fiber_samples: 4,
            seed: 0,
            residual_ceiling: 0.05,
            splitting_horizon: 20.0,
            splitting_tol: 1e-6,
            fiber_metric: None,
        }
    }
}

/// Finite-horizon estimate of a growth factor with extrapolation diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthFactorEstimate {
    pub side: Side,
    pub m: f64,
    pub horizons: Vec<f64>,
    /// `sup_x F(x, t) / t` per horizon.
    pub sup_rates: Vec<f64>,
    pub extrapolated_rate: f64,
    /// Spread of leave-one-out extrapolations over the fitted horizons.
    pub residual: f64,
    pub sample_count: usize,
    pub seed: u64,
}

/// Both sides plus their maximum, the continuation threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub unstable: GrowthFactorEstimate,
    pub stable: GrowthFactorEstimate,
}

/// Fitted contraction rates of the splitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionRates {
    pub theta_u: f64,
    pub theta_s: f64,
    pub residual_u: f64,
    pub residual_s: f64,
}

/// Fitted transport growth `||T^t|| <= C_1 e^{C_X t}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportGrowth {
    /// Exponential rate `C_X`.
    pub rate: f64,
    /// `log C_1`, maximal log-prefactor seen over the sample table.
    pub log_prefactor: f64,
    pub residual: f64,
}

fn splitting_for(sys: &ModelSystem, x: &PhasePoint, config: &EstimateConfig) -> Result<Splitting> {
    match exact_splitting(sys, x) {
        Some(sp) => Ok(sp),
        None => compute_splitting(sys, x, config.splitting_horizon, config.splitting_tol),
    }
}

/// `log ||T^t(x)||` under an optional diagonal fiber metric.
fn transport_log_norm_weighted(
    lift: &BundleLift,
    sys: &ModelSystem,
    x: &PhasePoint,
    t: f64,
    metric: Option<&[f64]>,
) -> Result<f64> {
    let (scaled, log_scale) = transport_scaled(lift, sys, x, t)?;
    let m = match metric {
        None => scaled,
        Some(w) => {
            let n = scaled.nrows();
            if w.len() != n {
                return Err(Error::config(
                    "/estimate/fiber_metric",
                    format!("metric has {} weights, fiber rank is {n}", w.len()),
                ));
            }
            if w.iter().any(|&v| v <= 0.0) {
                return Err(Error::config("/estimate/fiber_metric", "weights must be positive"));
            }
            // || W^{1/2} T W^{-1/2} ||
            nalgebra::DMatrix::from_fn(n, n, |i, j| {
                scaled[(i, j)] * (w[i].sqrt() / w[j].sqrt())
            })
        }
    };
    Ok(sigma_max(&m).ln() + log_scale)
}

/// The log growth functional `F(x, t)` of one cocycle side.
///
/// Unstable side: `1/2 log|det dphi^t| + log||T^t|| - m log||dphi^t|_{E_s}||`.
/// Stable side: the last term becomes `+ m log||(dphi^t)^{-1}|_{E_u}||`.
/// Reversed lifts evaluate the same functional along the reversed flow, with
/// the roles of the stable and unstable spaces exchanged.
pub fn log_growth_functional(
    sys: &ModelSystem,
    lift: &BundleLift,
    splitting: &Splitting,
    t: f64,
    side: Side,
    m: f64,
) -> Result<f64> {
    log_growth_functional_weighted(sys, lift, splitting, t, side, m, None)
}

// The subordinate norms run in the moving frame of the splitting (see
// `invariant_restricted_log_sv`); the `splitting` argument pins the base
// point and certifies that a splitting was accepted there.

fn log_growth_functional_weighted(
    sys: &ModelSystem,
    lift: &BundleLift,
    splitting: &Splitting,
    t: f64,
    side: Side,
    m: f64,
    metric: Option<&[f64]>,
) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::config("/growth/t", "time must be positive"));
    }
    let x = &splitting.x;
    let dir = match lift.direction {
        FlowDirection::Forward => 1.0,
        FlowDirection::Reversed => -1.0,
    };
    let flow_t = dir * t;
    let det_term = 0.5 * log_abs_det_jacobian(sys, x, flow_t);
    let transport_term = transport_log_norm_weighted(lift, sys, x, t, metric)?;
    // under time reversal the stable and unstable spaces trade places
    let (stable_sub, unstable_sub) = if dir > 0.0 {
        (InvariantSubspace::Stable, InvariantSubspace::Unstable)
    } else {
        (InvariantSubspace::Unstable, InvariantSubspace::Stable)
    };
    let frame_horizon = 25.0;
    let side_term = match side {
        Side::Unstable => {
            let (lmax, _) = invariant_restricted_log_sv(sys, x, flow_t, stable_sub, frame_horizon);
            -m * lmax
        }
        Side::Stable => {
            let (_, lmin) = invariant_restricted_log_sv(sys, x, flow_t, unstable_sub, frame_horizon);
            // log ||(dphi^t|_{E_u})^{-1}|| = -log sigma_min
            -m * lmin
        }
    };
    Ok(det_term + transport_term + side_term)
}

/// Least squares fit of `y = r + c / t`; returns `r`.
fn fit_rate_intercept(ts: &[f64], ys: &[f64]) -> f64 {
    // regress on z = 1/t
    let n = ts.len() as f64;
    let zs: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
    let mean_z = zs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut szz = 0.0;
    let mut szy = 0.0;
    for (z, y) in zs.iter().zip(ys) {
        szz += (z - mean_z) * (z - mean_z);
        szy += (z - mean_z) * (y - mean_y);
    }
    if szz == 0.0 {
        return mean_y;
    }
    let slope = szy / szz;
    mean_y - slope * mean_z
}

/// Extrapolate a rate table: fit over the top half of the horizons (at least
/// three points when available) and report the spread of leave-one-out fits.
fn extrapolate(horizons: &[f64], rates: &[f64]) -> (f64, f64) {
    let n = horizons.len();
    let fit_len = n.div_ceil(2).max(3).min(n);
    let ts = &horizons[n - fit_len..];
    let ys = &rates[n - fit_len..];
    let r = fit_rate_intercept(ts, ys);
    if fit_len < 3 {
        return (r, f64::INFINITY);
    }
    let mut loo = Vec::with_capacity(fit_len);
    for skip in 0..fit_len {
        let ts2: Vec<f64> = ts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, v)| *v)
            .collect();
        let ys2: Vec<f64> = ys
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, v)| *v)
            .collect();
        loo.push(fit_rate_intercept(&ts2, &ys2));
    }
    let mut spread = 0.0_f64;
    for a in &loo {
        for b in &loo {
            spread = spread.max((a - b).abs());
        }
    }
    (r, spread)
}

/// Sup of a per-sample log functional divided by t, per horizon, followed by
/// extrapolation. The closure returns `F(x, t)`.
fn sup_rate_table<F>(
    sys: &ModelSystem,
    config: &EstimateConfig,
    eval: F,
) -> Result<(Vec<f64>, f64, f64, usize)>
where
    F: Fn(&Splitting, f64) -> Result<f64> + Sync,
{
    if config.horizons.len() < 3 {
        return Err(Error::config("/estimate/horizons", "need at least 3 horizons"));
    }
    if config.horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("/estimate/horizons", "horizons must be increasing"));
    }
    if config.base_samples == 0 {
        return Err(Error::config("/estimate/base_samples", "need at least one sample"));
    }
    let points = phase_samples(sys, config.base_samples, config.fiber_samples, config.seed);
    let splittings: Vec<Splitting> = points
        .iter()
        .map(|x| splitting_for(sys, x, config))
        .collect::<Result<_>>()?;
    let mut sup_rates = Vec::with_capacity(config.horizons.len());
    for &t in &config.horizons {
        let sup = splittings
            .par_iter()
            .map(|sp| eval(sp, t).map(|f| f / t))
            .try_reduce(|| f64::NEG_INFINITY, |a, b| Ok(a.max(b)))?;
        sup_rates.push(sup);
    }
    let (rate, residual) = extrapolate(&config.horizons, &sup_rates);
    Ok((sup_rates, rate, residual, splittings.len()))
}

/// Estimate a growth factor by finite-horizon sampling and extrapolation.
pub fn estimate_growth_factor(
    sys: &ModelSystem,
    lift: &BundleLift,
    side: Side,
    m: f64,
    config: &EstimateConfig,
) -> Result<GrowthFactorEstimate> {
    match side {
        Side::Unstable if m > 0.0 => {
            return Err(Error::config("/estimate/m", "unstable side requires m <= 0"));
        }
        Side::Stable if m < 0.0 => {
            return Err(Error::config("/estimate/m", "stable side requires m >= 0"));
        }
        _ => {}
    }
    let metric = config.fiber_metric.as_deref();
    let (sup_rates, rate, residual, samples) = sup_rate_table(sys, config, |sp, t| {
        log_growth_functional_weighted(sys, lift, sp, t, side, m, metric)
    })?;
    if residual > config.residual_ceiling {
        return Err(Error::NonConvergence(format!(
            "growth-factor residual {residual:e} exceeds ceiling {:e}; extend the horizons",
            config.residual_ceiling
        )));
    }
    Ok(GrowthFactorEstimate {
        side,
        m,
        horizons: config.horizons.clone(),
        sup_rates,
        extrapolated_rate: rate,
        residual,
        sample_count: samples,
        seed: config.seed,
    })
}

/// Threshold of the continuation half-plane: `max(r_u(m_u), r_s(m_s))`.
pub fn threshold_halfplane(
    sys: &ModelSystem,
    lift: &BundleLift,
    m_u: f64,
    m_s: f64,
    config: &EstimateConfig,
) -> Result<ThresholdReport> {
    if m_u > 0.0 || m_s < 0.0 {
        return Err(Error::config("/threshold/m", "orders must satisfy m_u <= 0 <= m_s"));
    }
    let unstable = estimate_growth_factor(sys, lift, Side::Unstable, m_u, config)?;
    let stable = estimate_growth_factor(sys, lift, Side::Stable, m_s, config)?;
    Ok(ThresholdReport {
        threshold: unstable.extrapolated_rate.max(stable.extrapolated_rate),
        unstable,
        stable,
    })
}

/// Fitted decay rates of `||dphi^t|_{E_s}||` and `||dphi^{-t}|_{E_u}||`.
pub fn contraction_rates(sys: &ModelSystem, config: &EstimateConfig) -> Result<ContractionRates> {
    let fh = config.splitting_horizon.max(25.0);
    let (_, rate_s, res_s, _) = sup_rate_table(sys, config, |sp, t| {
        let (lmax, _) = invariant_restricted_log_sv(sys, &sp.x, t, InvariantSubspace::Stable, fh);
        Ok(lmax)
    })?;
    let (_, rate_u, res_u, _) = sup_rate_table(sys, config, |sp, t| {
        let (lmax, _) = invariant_restricted_log_sv(sys, &sp.x, -t, InvariantSubspace::Unstable, fh);
        Ok(lmax)
    })?;
    let check = |r: f64, res: f64, which: &str| -> Result<()> {
        if res > config.residual_ceiling {
            return Err(Error::NonConvergence(format!(
                "{which} contraction residual {res:e} exceeds ceiling"
            )));
        }
        if r >= 0.0 {
            return Err(Error::NonConvergence(format!(
                "{which} direction does not contract (rate {r})"
            )));
        }
        Ok(())
    };
    check(rate_s, res_s, "stable")?;
    check(rate_u, res_u, "unstable")?;
    Ok(ContractionRates {
        theta_u: -rate_u,
        theta_s: -rate_s,
        residual_u: res_u,
        residual_s: res_s,
    })
}

/// Fitted transport growth constants for the resolvent tail bound.
pub fn transport_growth(
    sys: &ModelSystem,
    lift: &BundleLift,
    config: &EstimateConfig,
) -> Result<TransportGrowth> {
    let metric = config.fiber_metric.as_deref();
    let (sup_rates, rate, residual, _) = sup_rate_table(sys, config, |sp, t| {
        transport_log_norm_weighted(lift, sys, &sp.x, t, metric)
    })?;
    // log prefactor: worst excess of the table over the fitted exponential
    let mut log_prefactor = 0.0_f64;
    for (t, r) in config.horizons.iter().zip(&sup_rates) {
        log_prefactor = log_prefactor.max((r - rate) * t);
    }
    Ok(TransportGrowth {
        rate,
        log_prefactor,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::{CosinePoly, TrigPoly};
    use num_complex::Complex64;

    fn unit_cat() -> ModelSystem {
        ModelSystem::cat_suspension([[2, 1], [1, 1]], CosinePoly::constant(1.0)).unwrap()
    }

    fn theta_cat() -> f64 {
        ((3.0 + 5.0_f64.sqrt()) / 2.0).ln()
    }

    fn quick_config() -> EstimateConfig {
        EstimateConfig {
            horizons: vec![5.0, 10.0, 20.0, 40.0],
            base_samples: 12,
            fiber_samples: 2,
            ..Default::default()
        }
    }

    #[test]
    fn growth_functional_zero_for_trivial_lift() {
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::zero_scalar();
        let x = PhasePoint::cat(0.3, 0.8, 0.4);
        let sp = exact_splitting(&sys, &x).unwrap();
        let f = log_growth_functional(&sys, &lift, &sp, 5.0, Side::Unstable, 0.0).unwrap();
        assert!(f.abs() < 1e-9);
    }

    #[test]
    fn growth_functional_fixed_point_oracle() {
        // at the origin with s = 0 the walk crosses exactly k roofs in time k
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::zero_scalar();
        let x = PhasePoint::cat(0.0, 0.0, 0.0);
        let sp = exact_splitting(&sys, &x).unwrap();
        for k in [1.0, 3.0, 7.0] {
            let f = log_growth_functional(&sys, &lift, &sp, k, Side::Unstable, -1.0).unwrap();
            assert!(
                (f + k * theta_cat()).abs() < 1e-9,
                "F = {f}, expected {}",
                -k * theta_cat()
            );
        }
    }

    #[test]
    fn growth_functional_rate_model_perp_forms() {
        let sys = ModelSystem::hyperbolic_model(1).unwrap();
        let lift = crate::lifts::BundleLift::perp_forms(1);
        let x = PhasePoint::orbit(0.2);
        let sp = exact_splitting(&sys, &x).unwrap();
        // side s, m = 2, t = 1: min(1,1) - 2 = -1
        let f = log_growth_functional(&sys, &lift, &sp, 1.0, Side::Stable, 2.0).unwrap();
        assert!((f + 1.0).abs() < 1e-9, "F = {f}");
    }

    #[test]
    fn estimate_matches_eigenvalue_rate() {
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::zero_scalar();
        let est =
            estimate_growth_factor(&sys, &lift, Side::Unstable, -1.0, &quick_config()).unwrap();
        let expect = -theta_cat();
        assert!(
            (est.extrapolated_rate - expect).abs() < 0.02 * expect.abs(),
            "rate {} expected {expect}",
            est.extrapolated_rate
        );
        // m = 0 must give zero for the volume-preserving trivial lift
        let est0 =
            estimate_growth_factor(&sys, &lift, Side::Unstable, 0.0, &quick_config()).unwrap();
        assert!(est0.extrapolated_rate.abs() < 1e-6 + est0.residual);
    }

    #[test]
    fn estimate_rejects_wrong_sign() {
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::zero_scalar();
        assert!(estimate_growth_factor(&sys, &lift, Side::Unstable, 0.5, &quick_config()).is_err());
        assert!(estimate_growth_factor(&sys, &lift, Side::Stable, -0.5, &quick_config()).is_err());
    }

    #[test]
    fn rate_model_perp_forms_threshold_exact() {
        let sys = ModelSystem::hyperbolic_model(1).unwrap();
        for (k, rate) in [(0usize, 0.0), (1, 1.0), (2, 0.0)] {
            let lift = crate::lifts::BundleLift::perp_forms(k);
            let report = threshold_halfplane(&sys, &lift, -2.0, 2.0, &quick_config()).unwrap();
            let expect = (-2.0_f64).max(-2.0) + rate;
            assert!(
                (report.threshold - expect).abs() < 0.02 * expect.abs().max(0.5),
                "k={k}: threshold {} expected {expect}",
                report.threshold
            );
            // per-side decomposition r_u = m_u + rate
            assert!((report.unstable.extrapolated_rate - (-2.0 + rate)).abs() < 0.05);
        }
    }

    #[test]
    fn scalar_threshold_matches_contraction_formula() {
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::zero_scalar();
        let rates = contraction_rates(&sys, &quick_config()).unwrap();
        let report = threshold_halfplane(&sys, &lift, -1.0, 1.0, &quick_config()).unwrap();
        let expect = (rates.theta_s * -1.0_f64).max(-rates.theta_u * 1.0);
        assert!(
            (report.threshold - expect).abs() < 0.02 * expect.abs(),
            "threshold {} expected {expect}",
            report.threshold
        );
        // zero orders: threshold 0
        let zero = threshold_halfplane(&sys, &lift, 0.0, 0.0, &quick_config()).unwrap();
        assert!(zero.threshold.abs() < 1e-6 + zero.unstable.residual + zero.stable.residual);
    }

    #[test]
    fn contraction_rates_match_models() {
        let cfg = quick_config();
        let sys = unit_cat();
        let rates = contraction_rates(&sys, &cfg).unwrap();
        assert!((rates.theta_u - theta_cat()).abs() < 0.02 * theta_cat());
        assert!((rates.theta_s - theta_cat()).abs() < 0.02 * theta_cat());

        let hyp = ModelSystem::hyperbolic_model(1).unwrap();
        let hr = contraction_rates(&hyp, &cfg).unwrap();
        assert!((hr.theta_u - 1.0).abs() < 1e-9);
        assert!((hr.theta_s - 1.0).abs() < 1e-9);

        // doubled roof halves the rates
        let slow = ModelSystem::cat_suspension([[2, 1], [1, 1]], CosinePoly::constant(2.0)).unwrap();
        let sr = contraction_rates(&slow, &cfg).unwrap();
        assert!(
            (sr.theta_u - theta_cat() / 2.0).abs() < 0.02 * theta_cat(),
            "theta_u {} expected {}",
            sr.theta_u,
            theta_cat() / 2.0
        );
    }

    #[test]
    fn growth_factor_monotone_in_order() {
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::zero_scalar();
        let cfg = quick_config();
        let mut last = f64::INFINITY;
        for m in [0.0, -1.0, -2.0] {
            let est = estimate_growth_factor(&sys, &lift, Side::Unstable, m, &cfg).unwrap();
            assert!(
                est.extrapolated_rate <= last + est.residual + 1e-9,
                "rate at m={m} is {} > previous {last}",
                est.extrapolated_rate
            );
            last = est.extrapolated_rate;
        }
    }

    #[test]
    fn rates_are_metric_independent() {
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::forms(1);
        let plain = estimate_growth_factor(&sys, &lift, Side::Unstable, -1.0, &quick_config()).unwrap();
        let mut weighted_cfg = quick_config();
        weighted_cfg.fiber_metric = Some(vec![1.0, 6.0, 0.5]);
        let weighted =
            estimate_growth_factor(&sys, &lift, Side::Unstable, -1.0, &weighted_cfg).unwrap();
        // sup rates differ by O(1/t) but the extrapolated rate agrees
        let tol = plain.residual + weighted.residual + 5e-3;
        assert!(
            (plain.extrapolated_rate - weighted.extrapolated_rate).abs() < tol,
            "plain {} weighted {}",
            plain.extrapolated_rate,
            weighted.extrapolated_rate
        );
        // and the finite-horizon tables do feel the metric
        let felt = plain
            .sup_rates
            .iter()
            .zip(&weighted.sup_rates)
            .any(|(a, b)| (a - b).abs() > 1e-6);
        assert!(felt);
    }

    #[test]
    fn rus_big_bound_holds() {
        // r_u(m) <= C_1 + theta m + residual slack
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::scalar(TrigPoly::constant(Complex64::new(0.25, 0.0), 2));
        let cfg = quick_config();
        let growth = transport_growth(&sys, &lift, &cfg).unwrap();
        let rates = contraction_rates(&sys, &cfg).unwrap();
        for m in [0.0, -1.0, -2.0] {
            let est = estimate_growth_factor(&sys, &lift, Side::Unstable, m, &cfg).unwrap();
            let bound = growth.rate + rates.theta_s * m;
            assert!(
                est.extrapolated_rate <= bound + est.residual + growth.residual + 1e-6,
                "m={m}: rate {} bound {bound}",
                est.extrapolated_rate
            );
        }
    }

    #[test]
    fn side_symmetry_under_time_reversal() {
        // r_s for (sys, lift) equals r_u for the reversed system with the
        // adjoint lift and negated order
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::scalar(TrigPoly::constant(Complex64::new(0.3, 0.0), 2));
        let adj = crate::lifts::adjoint_lift(&lift, &sys).unwrap();
        let cfg = quick_config();
        let m_s = 1.5;
        let stable = estimate_growth_factor(&sys, &lift, Side::Stable, m_s, &cfg).unwrap();
        let reversed = estimate_growth_factor(&sys, &adj, Side::Unstable, -m_s, &cfg).unwrap();
        let tol = stable.residual + reversed.residual + 0.02 * stable.extrapolated_rate.abs().max(0.1);
        assert!(
            (stable.extrapolated_rate - reversed.extrapolated_rate).abs() < tol,
            "stable {} reversed {}",
            stable.extrapolated_rate,
            reversed.extrapolated_rate
        );
    }

    #[test]
    fn nonconvergent_horizons_detected() {
        let sys = unit_cat();
        let lift = crate::lifts::BundleLift::zero_scalar();
        let cfg = EstimateConfig {
            horizons: vec![0.25, 0.5, 0.75],
            base_samples: 6,
            fiber_samples: 2,
            residual_ceiling: 1e-9,
            ..Default::default()
        };
        // fractional horizons see wildly different crossing counts per
        // sample, so the leave-one-out spread stays large
        match estimate_growth_factor(&sys, &lift, Side::Unstable, -1.0, &cfg) {
            Err(Error::NonConvergence(_)) => {}
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }
}
