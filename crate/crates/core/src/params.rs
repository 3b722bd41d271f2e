//! Threshold schedule and every leading constant of the streaming pipeline.
//!
//! Capacities, rates and sample counts follow the analysed formulas with each
//! leading constant multiplied by a field of [`Scaling`]. `Scaling::uniform(κ)`
//! applies one multiplier everywhere; the individual fields exist because the
//! formulas differ by many orders of magnitude, so a single κ that brings one
//! quantity to desk scale leaves another at zero or far too large.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::ClusteringInstance;

/// Upper bound on any sketch capacity, to keep tables addressable.
pub const MAX_CAPACITY: f64 = (1u64 << 40) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scaling {
    /// Coarse estimation capacity `α = 10¹¹·kLd·log(1/δ)`.
    pub alpha: f64,
    /// Fine estimation capacity `α' = 10¹⁶·ε⁻³kL²d⁴`.
    pub alpha_fine: f64,
    /// Sampler cell capacity `kε⁻³L³d⁷·log(dLk/δ)/δ`.
    pub sampler_alpha: f64,
    /// Sampler per-cell capacity `ε⁻³L³d⁷·log(dLk/δ)/δ`.
    pub sampler_beta: f64,
    /// Labels per level `m̂ = kε⁻³L⁴d⁷·log(dLk/δ)/δ`.
    pub labels: f64,
    /// Draws `m = t'ε⁻²Ld·log(t'/δ)` (streaming) or `t'ε⁻²Ld·log t'` (offline).
    pub samples: f64,
    /// Driver size threshold `h = kε⁻²L²d⁴·log(kLd)`.
    pub size_threshold: f64,
    /// Shortcut capacity `10000k`.
    pub shortcut: f64,
    /// The constant `4·10⁴` in the estimation rates.
    pub estimation_rate: f64,
    /// The constant `10⁴` in the sampler label rate.
    pub sampling_rate: f64,
    /// The factor 10 in `λ = 10·ceil(dL + log(1/δ) + 1)`.
    pub independence: f64,
}

impl Scaling {
    pub fn uniform(kappa: f64) -> Self {
        Self {
            alpha: kappa,
            alpha_fine: kappa,
            sampler_alpha: kappa,
            sampler_beta: kappa,
            labels: kappa,
            samples: kappa,
            size_threshold: kappa,
            shortcut: kappa,
            estimation_rate: kappa,
            sampling_rate: kappa,
            independence: kappa,
        }
    }

    /// Constants that bring the d=2, L=6, k≤8 pipeline to a few hundred MB:
    /// about 400 sampler cells, 70 pairs per cell and 1000 labels at k=3, with
    /// roughly 30 stored labels per point on each live level.
    pub fn desk() -> Self {
        Self {
            alpha: 2e-11,
            alpha_fine: 1.6e-18,
            sampler_alpha: 5.8e-10,
            sampler_beta: 3e-10,
            labels: 2.4e-10,
            samples: 2.4e-5,
            size_threshold: 8e-3,
            shortcut: 5e-3,
            estimation_rate: 1.0,
            sampling_rate: 1.84e-4,
            independence: 1.0 / 70.0,
        }
    }

    /// Multiplies every capacity and count constant by `kappa`, leaving the
    /// rate constants and the independence factor alone.
    pub fn scaled(self, kappa: f64) -> Self {
        Self {
            alpha: self.alpha * kappa,
            alpha_fine: self.alpha_fine * kappa,
            sampler_alpha: self.sampler_alpha * kappa,
            sampler_beta: self.sampler_beta * kappa,
            labels: self.labels * kappa,
            samples: self.samples * kappa,
            size_threshold: self.size_threshold * kappa,
            shortcut: self.shortcut * kappa,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("alpha_fine", self.alpha_fine),
            ("sampler_alpha", self.sampler_alpha),
            ("sampler_beta", self.sampler_beta),
            ("labels", self.labels),
            ("samples", self.samples),
            ("size_threshold", self.size_threshold),
            ("shortcut", self.shortcut),
            ("estimation_rate", self.estimation_rate),
            ("sampling_rate", self.sampling_rate),
            ("independence", self.independence),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return domain(format!("scaling.{name} = {v} must be positive and finite"));
            }
        }
        Ok(())
    }
}

impl Default for Scaling {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

fn capacity(x: f64, what: &str) -> Result<usize> {
    let c = x.ceil().max(1.0);
    if c > MAX_CAPACITY {
        return domain(format!("{what} = {c:e} exceeds the supported capacity; lower the scaling"));
    }
    Ok(c as usize)
}

/// Thresholds `T_i(o) = (d/g_i)²·o/(100k)` and `γ = ε/(40²·L·d³)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSchedule {
    pub o: f64,
    inst: ClusteringInstance,
}

impl ThresholdSchedule {
    pub fn new(inst: &ClusteringInstance, o: f64) -> Result<Self> {
        if !(o > 0.0 && o.is_finite()) {
            return domain(format!("guess {o} must be positive"));
        }
        Ok(Self { o, inst: *inst })
    }

    pub fn instance(&self) -> &ClusteringInstance {
        &self.inst
    }

    /// `T_i(o)` for `i ∈ 0..=L`.
    pub fn t(&self, level: usize) -> f64 {
        let d = self.inst.d as f64;
        let g = (self.inst.side() >> level) as f64;
        (d / g).powi(2) * self.o / (100.0 * self.inst.k as f64)
    }

    pub fn gamma(&self) -> f64 {
        gamma(&self.inst)
    }

    /// `s' = 10d³/T_i(o)`.
    pub fn sensitivity(&self, level: usize) -> f64 {
        10.0 * (self.inst.d as f64).powi(3) / self.t(level)
    }
}

pub fn gamma(inst: &ClusteringInstance) -> f64 {
    inst.epsilon / (1600.0 * inst.levels() as f64 * (inst.d as f64).powi(3))
}

pub fn independence(inst: &ClusteringInstance, delta: f64, s: &Scaling) -> usize {
    crate::hashing::default_independence(inst, delta, 10.0 * s.independence)
}

/// Constants of one estimation instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationParams {
    pub lambda: usize,
    pub alpha: usize,
    pub alpha_fine: usize,
    pub storing_delta: f64,
    /// `4·10⁴λ` after scaling.
    pub rate_constant: f64,
}

impl EstimationParams {
    pub fn new(inst: &ClusteringInstance, delta: f64, s: &Scaling) -> Result<Self> {
        check_delta(delta)?;
        s.validate()?;
        let (k, l, d, eps) = dims(inst);
        let lambda = independence(inst, delta, s);
        Ok(Self {
            lambda,
            alpha: capacity(1e11 * k * l * d * (1.0 / delta).log2() * s.alpha, "alpha")?,
            alpha_fine: capacity(1e16 * eps.powi(-3) * k * l * l * d.powi(4) * s.alpha_fine, "alpha'")?,
            storing_delta: 0.1 * delta / l,
            rate_constant: 4e4 * s.estimation_rate * lambda as f64,
        })
    }

    /// Coarse rate `min(4·10⁴λ/T, 1)`.
    pub fn rate(&self, t: f64) -> f64 {
        (self.rate_constant / t).min(1.0)
    }

    /// Fine rate `min(4·10⁴ε⁻²γ⁻¹λ/T, 1)`.
    pub fn rate_fine(&self, t: f64, sched: &ThresholdSchedule) -> f64 {
        let eps = sched.instance().epsilon;
        (self.rate_constant / (eps * eps * sched.gamma() * t)).min(1.0)
    }

    /// Inverse coarse rate `max(T/(4·10⁴λ), 1)`.
    pub fn count_scale(&self, t: f64) -> f64 {
        (t / self.rate_constant).max(1.0)
    }

    /// Inverse fine rate `max(ε²γT/(4·10⁴λ), 1)`.
    pub fn mass_scale(&self, t: f64, sched: &ThresholdSchedule) -> f64 {
        let eps = sched.instance().epsilon;
        (eps * eps * sched.gamma() * t / self.rate_constant).max(1.0)
    }
}

/// Constants of one sampler instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerParams {
    pub lambda: usize,
    pub labels: usize,
    pub alpha: usize,
    pub beta: usize,
    pub storing_delta: f64,
    pub estimation_delta: f64,
    /// `10⁴kL` after scaling.
    pub rate_constant: f64,
    pub delta: f64,
    pub samples: f64,
}

/// Upper bound on `m̂`, so that label hashes fit in memory.
pub const MAX_LABELS: usize = 1 << 22;

impl SamplerParams {
    pub fn new(inst: &ClusteringInstance, delta: f64, s: &Scaling) -> Result<Self> {
        check_delta(delta)?;
        s.validate()?;
        let (k, l, d, eps) = dims(inst);
        let poly = eps.powi(-3) * l.powi(3) * d.powi(7) * (d * l * k / delta).log2() / delta;
        let labels = capacity(k * l * poly * s.labels, "m̂")?;
        if labels > MAX_LABELS {
            return domain(format!("m̂ = {labels} exceeds {MAX_LABELS}; lower scaling.labels"));
        }
        Ok(Self {
            lambda: independence(inst, delta, s),
            labels,
            alpha: capacity(k * poly * s.sampler_alpha, "sampler alpha")?,
            beta: capacity(poly * s.sampler_beta, "sampler beta")?,
            storing_delta: 0.1 * delta / l,
            estimation_delta: delta / 2.0,
            rate_constant: 1e4 * s.sampling_rate * k * l,
            delta,
            samples: s.samples,
        })
    }

    /// Label rate `min(1/(10⁴kL·T), 1)`.
    pub fn rate(&self, t: f64) -> f64 {
        (1.0 / (self.rate_constant * t)).min(1.0)
    }

    /// Draws `ceil(t'ε⁻²Ld·log(t'/δ))`, zero when `t' = 0`.
    pub fn sample_count(&self, inst: &ClusteringInstance, total: f64) -> usize {
        if total <= 0.0 {
            return 0;
        }
        let (_, l, d, eps) = dims(inst);
        (total * eps.powi(-2) * l * d * (total / self.delta).log2().max(1.0) * self.samples).ceil() as usize
    }
}

/// Offline draws `ceil(t'ε⁻²Ld·log t')`, zero when `t' = 0`.
pub fn offline_sample_count(inst: &ClusteringInstance, total: f64, s: &Scaling) -> usize {
    if total <= 0.0 {
        return 0;
    }
    let (_, l, d, eps) = dims(inst);
    (total * eps.powi(-2) * l * d * total.log2().max(1.0) * s.samples).ceil() as usize
}

/// Sweep and shortcut constants of the driver.
#[derive(Clone, Debug, PartialEq)]
pub struct DriverParams {
    pub guesses: Vec<f64>,
    pub guess_delta: f64,
    pub shortcut_capacity: usize,
    pub shortcut_delta: f64,
    pub size_threshold: usize,
}

impl DriverParams {
    pub fn new(inst: &ClusteringInstance, s: &Scaling) -> Result<Self> {
        s.validate()?;
        let (k, l, d, eps) = dims(inst);
        let count = 2 * inst.d * inst.levels() as usize;
        let guesses = (1..=count).map(|u| 2f64.powi(u as i32) * 50.0 * k).collect();
        let h = (k * eps.powi(-2) * l * l * d.powi(4) * (k * l * d).log2().max(1.0) * s.size_threshold).ceil();
        Ok(Self {
            guesses,
            guess_delta: 0.001 / (d * l),
            shortcut_capacity: capacity(1e4 * k * s.shortcut, "shortcut capacity")?,
            shortcut_delta: 0.001,
            size_threshold: h.max(1.0) as usize,
        })
    }
}

fn dims(inst: &ClusteringInstance) -> (f64, f64, f64, f64) {
    (inst.k as f64, inst.levels() as f64, inst.d as f64, inst.epsilon)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 0.5) {
        return domain(format!("failure budget {delta} outside (0, 1/2)"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst() -> ClusteringInstance {
        ClusteringInstance::new(2, 6, 3, 0.3).unwrap()
    }

    #[test]
    fn thresholds_quadruple() {
        let s = ThresholdSchedule::new(&inst(), 1000.0).unwrap();
        for i in 1..=6 {
            assert!((s.t(i) / s.t(i - 1) - 4.0).abs() < 1e-12);
        }
        // (2/64)²·1000/300.
        assert!((s.t(0) - 4.0 * 1000.0 / (4096.0 * 300.0)).abs() < 1e-15);
        assert!((s.gamma() - 0.3 / (1600.0 * 6.0 * 8.0)).abs() < 1e-18);
    }

    #[test]
    fn gamma_decreases_in_l_and_d() {
        let a = gamma(&ClusteringInstance::new(2, 6, 3, 0.3).unwrap());
        let b = gamma(&ClusteringInstance::new(2, 7, 3, 0.3).unwrap());
        let c = gamma(&ClusteringInstance::new(3, 6, 3, 0.3).unwrap());
        assert!(a > b && a > c && b > 0.0);
    }

    #[test]
    fn guesses_double() {
        let p = DriverParams::new(&inst(), &Scaling::default()).unwrap();
        assert_eq!(p.guesses.len(), 24);
        assert_eq!(p.guesses[0], 300.0);
        assert!(p.guesses.windows(2).all(|w| w[1] == 2.0 * w[0]));
        assert_eq!(p.shortcut_capacity, 30_000);
    }

    #[test]
    fn full_constants_are_rejected_for_labels() {
        assert!(SamplerParams::new(&inst(), 1e-4, &Scaling::default()).is_err());
    }

    #[test]
    fn scaling_validation() {
        assert!(Scaling::uniform(0.0).validate().is_err());
        let json = r#"{"labels": 0.5}"#;
        let s: Scaling = serde_json::from_str(json).unwrap();
        assert_eq!(s.labels, 0.5);
        assert_eq!(s.alpha, 1.0);
    }
}
