//! Per-dwell photon statistics for signal, idler and coincidence channels.
//!
//! An entangled source emits `M ~ Poisson(mu_spdc)` pairs per dwell. Each pair
//! survives the object on the signal side with some probability, survives the
//! (optional) idler analyser with another, and is detected on each side with
//! efficiency `eta`. Splitting a Poisson number of pairs into disjoint outcome
//! classes gives independent Poisson counts per class, which is how
//! [`sample_pairs`] draws them: four Poisson variates per dwell regardless of
//! the pair number.
//!
//! Stray light adds independent Poisson counts to both singles channels and
//! reaches the coincidence channel only through accidentals, drawn with the
//! window formula `n_s * n_i * tau_c / t_dwell`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{poisson, StreamRng};

/// Planck constant (J s), exact SI value.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum (m/s), exact SI value.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    /// Spatially entangled pairs; coincidences are true pairs plus accidentals.
    Entangled,
    /// A classical beam chopped with a 50 % duty square wave and split onto
    /// both arms. Coincidences are accidentals only.
    ClassicalSplit,
    /// Entangled pairs, but the counter only registers accidental
    /// coincidences (wide window with the true-pair channel disabled).
    AccidentalOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Mean number of pairs (or classical photons per arm) per dwell.
    pub mu_spdc: f64,
    /// Mean stray photons per dwell per detector, before detection efficiency.
    pub mu_stray: f64,
    /// Detection efficiency of each detector.
    pub eta: f64,
    /// Coincidence window in seconds.
    pub tau_c: f64,
    /// Pixel dwell time in seconds.
    pub t_dwell: f64,
    pub mode: SourceMode,
}

impl SourceParams {
    pub fn entangled(mu_spdc: f64, mu_stray: f64, eta: f64) -> Self {
        SourceParams {
            mu_spdc,
            mu_stray,
            eta,
            tau_c: 8e-9,
            t_dwell: 1.0,
            mode: SourceMode::Entangled,
        }
    }

    /// Operating point resembling the benchtop system: roughly 19 kHz of
    /// signal singles and 485 Hz of coincidences at full transmittance with
    /// an 8 ns window and 1 s dwell.
    pub fn benchtop() -> Self {
        let eta = 485.0 / 19_000.0;
        SourceParams {
            mu_spdc: 19_000.0 / eta,
            mu_stray: 0.0,
            eta,
            tau_c: 8e-9,
            t_dwell: 1.0,
            mode: SourceMode::Entangled,
        }
    }

    pub fn with_mode(mut self, mode: SourceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_window(mut self, tau_c: f64) -> Self {
        self.tau_c = tau_c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        finite_nonneg("mu_spdc", self.mu_spdc)?;
        finite_nonneg("mu_stray", self.mu_stray)?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.t_dwell.is_finite() && self.t_dwell > 0.0) {
            return Err(Error::param(format!("t_dwell must be > 0, got {}", self.t_dwell)));
        }
        if !(self.tau_c.is_finite() && self.tau_c > 0.0) {
            return Err(Error::param(format!("tau_c must be > 0, got {}", self.tau_c)));
        }
        if self.tau_c > self.t_dwell {
            return Err(Error::param(format!(
                "tau_c ({}) must not exceed t_dwell ({})",
                self.tau_c, self.t_dwell
            )));
        }
        Ok(())
    }

    fn window_fraction(&self) -> f64 {
        self.tau_c / self.t_dwell
    }
}

/// Counts recorded in one dwell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CountSample {
    pub n_s: u64,
    pub n_i: u64,
    pub n_c: u64,
}

/// Per-pair survival probabilities before detection.
///
/// `signal` and `idler` are the marginal probabilities that each photon of a
/// pair reaches its detector and `both` that both photons do. `joint` is the
/// probability that the pair also registers as a true coincidence, which
/// through the pinhole-filtered channel can be smaller than `both`.
/// `joint <= both <= min(signal, idler)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairChannel {
    pub signal: f64,
    pub idler: f64,
    pub both: f64,
    pub joint: f64,
}

impl PairChannel {
    /// Object in the signal arm, no analysers. The coincidence survival uses
    /// the pinhole-filtered transmittance but can never exceed the signal's.
    pub fn transmittance(t_classical: f64, t_quantum: f64) -> Self {
        PairChannel {
            signal: t_classical,
            idler: 1.0,
            both: t_classical,
            joint: t_quantum.min(t_classical),
        }
    }

    /// Channel whose true coincidences are exactly the doubly surviving
    /// pairs.
    pub fn correlated(signal: f64, idler: f64, joint: f64) -> Self {
        PairChannel { signal, idler, both: joint, joint }
    }

    fn clamped(self) -> Self {
        let both = self.both.min(self.signal).min(self.idler);
        PairChannel { both, joint: self.joint.min(both), ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal", self.signal),
            ("idler", self.idler),
            ("both", self.both),
            ("joint", self.joint),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!(
                    "{name} survival probability must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.both > self.signal.min(self.idler) + 1e-12 {
            return Err(Error::param(format!(
                "double survival {} exceeds a marginal ({}, {})",
                self.both, self.signal, self.idler
            )));
        }
        if self.joint > self.both + 1e-12 {
            return Err(Error::param(format!(
                "coincidence survival {} exceeds the double survival {}",
                self.joint, self.both
            )));
        }
        Ok(())
    }
}

/// Draws one dwell of an entangled (or accidental-only) source through the
/// given pair channel. `extra_stray` is sample-side stray light: it reaches
/// the signal detector only.
pub fn sample_pairs<R: Rng + ?Sized>(
    source: &SourceParams,
    channel: PairChannel,
    extra_stray: f64,
    rng: &mut R,
) -> CountSample {
    let eta = source.eta;
    let mu = source.mu_spdc;
    let ch = channel.clamped();
    let eta2 = eta * eta;

    // Accidentals draw from their own stream so that a sweep over the stray
    // level reuses the same random numbers for them.
    let accidental_key: u64 = rng.random();
    // Pair classes before stray light, so that they too are unaffected by it.
    let coincident = poisson(rng, mu * ch.joint * eta2);
    let signal_only = poisson(rng, (mu * (ch.signal * eta - ch.both * eta2)).max(0.0));
    let idler_only = poisson(rng, (mu * (ch.idler * eta - ch.both * eta2)).max(0.0));
    let unmatched = poisson(rng, mu * (ch.both - ch.joint) * eta2);

    let stray = eta * source.mu_stray;
    let n_s = coincident + unmatched + signal_only + poisson(rng, stray + eta * extra_stray);
    let n_i = coincident + unmatched + idler_only + poisson(rng, stray);

    let true_c = match source.mode {
        SourceMode::AccidentalOnly => 0,
        _ => coincident,
    };
    let mut acc_rng = StreamRng::seed_from_u64(accidental_key);
    let accidentals = poisson(&mut acc_rng, n_s as f64 * n_i as f64 * source.window_fraction());
    CountSample {
        n_s,
        n_i,
        n_c: (true_c + accidentals).min(n_s).min(n_i),
    }
}

fn check_fraction(name: &str, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must lie in [0, 1], got {t}")))
    }
}

/// One dwell of the entangled source with an object of classical and
/// pinhole-filtered transmittance `t_classical` / `t_quantum` in the signal arm.
pub fn sample_entangled<R: Rng + ?Sized>(
    source: &SourceParams,
    t_classical: f64,
    t_quantum: f64,
    rng: &mut R,
) -> Result<CountSample> {
    source.validate()?;
    if source.mode == SourceMode::ClassicalSplit {
        return Err(Error::param("sample_entangled called with a classical_split source"));
    }
    check_fraction("t_eff_classical", t_classical)?;
    check_fraction("t_eff_quantum", t_quantum)?;
    Ok(sample_pairs(
        source,
        PairChannel::transmittance(t_classical, t_quantum),
        0.0,
        rng,
    ))
}

/// One dwell of the chopped, split classical beam.
///
/// All source photons arrive during the on half of the chopper cycle, so the
/// photon flux on the object matches the entangled source for equal
/// `mu_spdc`. Stray light is continuous and splits evenly across both halves.
pub fn sample_classical<R: Rng + ?Sized>(
    source: &SourceParams,
    t_eff: f64,
    extra_stray: f64,
    rng: &mut R,
) -> Result<CountSample> {
    source.validate()?;
    if source.mode != SourceMode::ClassicalSplit {
        return Err(Error::param("sample_classical requires a classical_split source"));
    }
    check_fraction("t_eff", t_eff)?;
    let eta = source.eta;
    let half_stray = 0.5 * eta * source.mu_stray;
    let half_extra = 0.5 * eta * extra_stray;
    let t_half = 0.5 * source.t_dwell;

    let s_on = poisson(rng, eta * source.mu_spdc * t_eff) + poisson(rng, half_stray + half_extra);
    let i_on = poisson(rng, eta * source.mu_spdc) + poisson(rng, half_stray);
    let s_off = poisson(rng, half_stray + half_extra);
    let i_off = poisson(rng, half_stray);

    let acc_on = poisson(rng, s_on as f64 * i_on as f64 * source.tau_c / t_half);
    let acc_off = poisson(rng, s_off as f64 * i_off as f64 * source.tau_c / t_half);
    let n_s = s_on + s_off;
    let n_i = i_on + i_off;
    Ok(CountSample {
        n_s,
        n_i,
        n_c: (acc_on + acc_off).min(n_s).min(n_i),
    })
}

/// Dispatches on the source mode. `extra_stray` reaches the signal arm only.
pub fn sample_dwell<R: Rng + ?Sized>(
    source: &SourceParams,
    channel: PairChannel,
    extra_stray: f64,
    rng: &mut R,
) -> CountSample {
    match source.mode {
        SourceMode::ClassicalSplit => {
            sample_classical(source, channel.signal, extra_stray, rng).expect("validated source")
        }
        _ => sample_pairs(source, channel, extra_stray, rng),
    }
}

/// Mean counts `(s, i, c)` of one dwell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedCounts {
    pub s: f64,
    pub i: f64,
    pub c: f64,
}

/// Exact means of [`sample_dwell`] before the `n_c <= min(n_s, n_i)` clamp.
///
/// The accidental term uses `E[n_s n_i] = E[n_s] E[n_i] + Cov(n_s, n_i)`;
/// for an entangled source the covariance is `mu * both * eta^2`.
pub fn expected_for_channel(
    source: &SourceParams,
    channel: PairChannel,
    extra_stray: f64,
) -> ExpectedCounts {
    let eta = source.eta;
    let mu = source.mu_spdc;
    let stray = eta * source.mu_stray;
    let stray_s = stray + eta * extra_stray;
    match source.mode {
        SourceMode::ClassicalSplit => {
            let (half_s, half_i) = (0.5 * stray_s, 0.5 * stray);
            let t_half = 0.5 * source.t_dwell;
            let s_on = eta * mu * channel.signal + half_s;
            let i_on = eta * mu + half_i;
            ExpectedCounts {
                s: s_on + half_s,
                i: i_on + half_i,
                c: (s_on * i_on + half_s * half_i) * source.tau_c / t_half,
            }
        }
        mode => {
            let ch = channel.clamped();
            let pair_c = mu * ch.joint * eta * eta;
            let s = eta * mu * ch.signal + stray_s;
            let i = eta * mu * ch.idler + stray;
            let acc = (s * i + mu * ch.both * eta * eta) * source.window_fraction();
            let true_c = if mode == SourceMode::AccidentalOnly { 0.0 } else { pair_c };
            ExpectedCounts { s, i, c: true_c + acc }
        }
    }
}

/// Closed-form means for an object of transmittance `t` (same value for
/// both the classical and the pinhole-filtered channel).
pub fn expected_counts(source: &SourceParams, t: f64) -> Result<ExpectedCounts> {
    source.validate()?;
    check_fraction("t", t)?;
    Ok(expected_for_channel(source, PairChannel::transmittance(t, t), 0.0))
}

/// Optical power carried by a photon flux `rate` (photons/s) at `wavelength`
/// (m).
pub fn photon_flux_power(rate: f64, wavelength: f64) -> Result<f64> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::param(format!("wavelength must be > 0, got {wavelength}")));
    }
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(Error::param(format!("photon rate must be >= 0, got {rate}")));
    }
    Ok(rate * PLANCK * SPEED_OF_LIGHT / wavelength)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn src(mu: f64, stray: f64, eta: f64, tau_c: f64) -> SourceParams {
        SourceParams {
            mu_spdc: mu,
            mu_stray: stray,
            eta,
            tau_c,
            t_dwell: 1.0,
            mode: SourceMode::Entangled,
        }
    }

    /// Literal per-pair sampler: one uniform triple per pair. Independent of
    /// the Poisson-splitting path used by the library.
    fn per_pair_oracle<R: Rng>(s: &SourceParams, t_cl: f64, t_q: f64, rng: &mut R) -> (u64, u64, u64) {
        let m = poisson(rng, s.mu_spdc);
        let (mut ns, mut ni, mut nc) = (0, 0, 0);
        for _ in 0..m {
            let (ut, us, ui): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let sig = ut < t_cl && us < s.eta;
            let idl = ui < s.eta;
            ns += sig as u64;
            ni += idl as u64;
            nc += (sig && idl && ut < t_q) as u64;
        }
        (ns, ni, nc)
    }

    struct Moments {
        mean: [f64; 3],
        cov_si: f64,
        cov_ci: f64,
    }

    fn moments(samples: &[[f64; 3]]) -> Moments {
        let n = samples.len() as f64;
        let mut mean = [0.0; 3];
        for s in samples {
            for k in 0..3 {
                mean[k] += s[k] / n;
            }
        }
        let cov = |a: usize, b: usize| {
            samples.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / (n - 1.0)
        };
        Moments { mean, cov_si: cov(0, 1), cov_ci: cov(2, 1) }
    }

    #[test]
    fn entangled_means_match_example() {
        let s = src(10.0, 0.0, 0.5, 1e-12);
        let n = 200_000;
        let mut rng = stream(11, Domain::Synthetic, 0, 0);
        let mut acc = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for _ in 0..n {
            let c = sample_entangled(&s, 1.0, 1.0, &mut rng).unwrap();
            for (k, v) in [c.n_s, c.n_i, c.n_c].into_iter().enumerate() {
                acc[k] += v as f64;
                sq[k] += (v * v) as f64;
            }
        }
        for (k, want) in [5.0, 5.0, 2.5].into_iter().enumerate() {
            let mean = acc[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - want).abs() < 3.0 * se, "channel {k}: {mean} vs {want}");
        }
    }

    #[test]
    fn stray_only_gives_no_true_coincidences() {
        let s = src(0.0, 4.0, 0.5, 1e-15);
        let mut rng = stream(3, Domain::Synthetic, 0, 0);
        let n = 100_000;
        let mut sums = [0u64; 3];
        for _ in 0..n {
            let c = sample_entangled(&s, 1.0, 1.0, &mut rng).unwrap();
            sums[0] += c.n_s;
            sums[1] += c.n_i;
            sums[2] += c.n_c;
        }
        assert_eq!(sums[2], 0);
        let se = (2.0f64 / n as f64).sqrt();
        assert!((sums[0] as f64 / n as f64 - 2.0).abs() < 3.0 * se);
        assert!((sums[1] as f64 / n as f64 - 2.0).abs() < 3.0 * se);
    }

    #[test]
    fn splitting_matches_per_pair_oracle() {
        let s = src(6.0, 0.0, 0.7, 1e-15);
        let (t_cl, t_q) = (0.6, 0.35);
        let n = 100_000;
        let mut r1 = stream(5, Domain::Synthetic, 1, 0);
        let mut r2 = stream(5, Domain::Synthetic, 2, 0);
        let lib: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let c = sample_entangled(&s, t_cl, t_q, &mut r1).unwrap();
                [c.n_s as f64, c.n_i as f64, c.n_c as f64]
            })
            .collect();
        let ora: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let (a, b, c) = per_pair_oracle(&s, t_cl, t_q, &mut r2);
                [a as f64, b as f64, c as f64]
            })
            .collect();
        let (ml, mo) = (moments(&lib), moments(&ora));
        for k in 0..3 {
            assert!((ml.mean[k] - mo.mean[k]).abs() < 0.03, "mean {k}");
        }
        assert!((ml.cov_si - mo.cov_si).abs() < 0.04);
        assert!((ml.cov_ci - mo.cov_ci).abs() < 0.04);
        // Analytic covariances of the pair model.
        assert!((ml.cov_si - 6.0 * 0.6 * 0.49).abs() < 0.04);
        assert!((ml.cov_ci - 6.0 * 0.35 * 0.49).abs() < 0.04);
    }

    #[test]
    fn correlation_grows_with_efficiency() {
        let mut last = 0.0;
        for (k, eta) in [0.1, 0.5, 0.9].into_iter().enumerate() {
            let s = src(20.0, 0.0, eta, 1e-15);
            let mut rng = stream(9, Domain::Synthetic, k as u64, 0);
            let samples: Vec<[f64; 3]> = (0..50_000)
                .map(|_| {
                    let c = sample_entangled(&s, 1.0, 1.0, &mut rng).unwrap();
                    [c.n_s as f64, c.n_i as f64, c.n_c as f64]
                })
                .collect();
            let m = moments(&samples);
            let var = |idx: usize| {
                samples.iter().map(|x| (x[idx] - m.mean[idx]).powi(2)).sum::<f64>()
                    / (samples.len() - 1) as f64
            };
            let rho = m.cov_si / (var(0) * var(1)).sqrt();
            assert!(rho > last, "eta {eta}: rho {rho} <= {last}");
            last = rho;
        }
    }

    #[test]
    fn expected_count_examples() {
        let e = expected_counts(&src(10.0, 0.0, 0.5, 1e-30), 1.0).unwrap();
        assert_relative_eq!(e.s, 5.0);
        assert_relative_eq!(e.i, 5.0);
        assert_relative_eq!(e.c, 2.5, epsilon = 1e-20);
        let e = expected_counts(&src(0.0, 4.0, 0.5, 1e-30), 1.0).unwrap();
        assert_relative_eq!(e.s, 2.0);
        assert_relative_eq!(e.i, 2.0);
        assert!(e.c < 1e-25);
        // Accidental term alone: 100 * 100 * 8e-9.
        let e = expected_counts(&src(0.0, 200.0, 0.5, 8e-9), 1.0).unwrap();
        assert_relative_eq!(e.c, 8e-5, max_relative = 1e-12);
    }

    #[test]
    fn classical_source_edges() {
        let mut s = src(100.0, 0.0, 0.5, 8e-9);
        s.mode = SourceMode::ClassicalSplit;
        let mut rng = stream(1, Domain::Synthetic, 0, 0);
        for _ in 0..1000 {
            let c = sample_classical(&s, 0.0, 0.0, &mut rng).unwrap();
            assert_eq!(c.n_s, 0);
            assert_eq!(c.n_c, 0);
        }
        s.tau_c = 1e-300;
        let e = expected_for_channel(&s, PairChannel::transmittance(1.0, 1.0), 0.0);
        assert!(e.c < 1e-290);
        // Entangled sampler refuses a classical source and vice versa.
        assert!(sample_entangled(&s, 1.0, 1.0, &mut rng).is_err());
        let ent = src(1.0, 0.0, 0.5, 1e-9);
        assert!(sample_classical(&ent, 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn classical_means_match_closed_form() {
        let mut s = src(3000.0, 2000.0, 0.5, 1e-5);
        s.mode = SourceMode::ClassicalSplit;
        let e = expected_for_channel(&s, PairChannel::transmittance(0.4, 0.4), 0.0);
        let mut rng = stream(2, Domain::Synthetic, 0, 0);
        let n = 40_000;
        let mut sums = [0.0f64; 3];
        for _ in 0..n {
            let c = sample_classical(&s, 0.4, 0.0, &mut rng).unwrap();
            sums[0] += c.n_s as f64;
            sums[1] += c.n_i as f64;
            sums[2] += c.n_c as f64;
        }
        assert!((sums[0] / n as f64 / e.s - 1.0).abs() < 2e-3);
        assert!((sums[1] / n as f64 / e.i - 1.0).abs() < 2e-3);
        assert!((sums[2] / n as f64 / e.c - 1.0).abs() < 1e-2);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut rng = stream(0, Domain::Synthetic, 0, 0);
        let good = src(1.0, 0.0, 0.5, 1e-9);
        assert!(sample_entangled(&good, 1.2, 1.0, &mut rng).is_err());
        assert!(sample_entangled(&good, 1.0, -0.1, &mut rng).is_err());
        let mut bad = good;
        bad.eta = 1.5;
        assert!(bad.validate().is_err());
        bad = good;
        bad.mu_stray = -1.0;
        assert!(bad.validate().is_err());
        bad = good;
        bad.tau_c = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn photon_power() {
        let p = photon_flux_power(2e4, 810e-9).unwrap();
        assert!((p / 4.9e-15 - 1.0).abs() < 0.02);
        assert_eq!(photon_flux_power(0.0, 810e-9).unwrap(), 0.0);
        assert_relative_eq!(photon_flux_power(1.0, 810e-9).unwrap(), 2.4524e-19, max_relative = 1e-3);
        assert!(photon_flux_power(1.0, 0.0).is_err());
    }

    #[test]
    fn identical_seed_identical_sequence() {
        let s = src(50.0, 10.0, 0.6, 1e-3);
        let draw = || {
            let mut rng = stream(42, Domain::PixelCounts, 7, 1);
            (0..100).map(|_| sample_entangled(&s, 0.7, 0.5, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    proptest! {
        #![proptest_config(ProptestConfig {
            cases: 32,
            rng_seed: proptest::test_runner::RngSeed::Fixed(0x1CE),
            ..ProptestConfig::default()
        })]

        #[test]
        fn coincidences_never_exceed_singles(
            mu in 0.0f64..200.0,
            stray in 0.0f64..200.0,
            eta in 0.0f64..=1.0,
            t_cl in 0.0f64..=1.0,
            t_q in 0.0f64..=1.0,
            window in 1e-9f64..1.0,
            seed in any::<u64>(),
        ) {
            let s = src(mu, stray, eta, window);
            let mut rng = stream(seed, Domain::Synthetic, 0, 0);
            for _ in 0..20 {
                let c = sample_entangled(&s, t_cl, t_q, &mut rng).unwrap();
                prop_assert!(c.n_c <= c.n_s.min(c.n_i));
            }
        }

        #[test]
        fn empirical_means_track_expected(
            mu in 0.5f64..30.0,
            stray in 0.0f64..30.0,
            eta in 0.05f64..=1.0,
            t in 0.0f64..=1.0,
            log_window in -9.0f64..-3.0,
            seed in any::<u64>(),
        ) {
            let s = src(mu, stray, eta, 10f64.powf(log_window));
            let e = expected_counts(&s, t).unwrap();
            let mut rng = stream(seed, Domain::Synthetic, 1, 0);
            let n = 100_000usize;
            let mut sum = [0.0f64; 3];
            let mut sq = [0.0f64; 3];
            for _ in 0..n {
                let c = sample_entangled(&s, t, t, &mut rng).unwrap();
                for (k, v) in [c.n_s, c.n_i, c.n_c].into_iter().enumerate() {
                    sum[k] += v as f64;
                    sq[k] += (v as f64).powi(2);
                }
            }
            for (k, want) in [e.s, e.i, e.c].into_iter().enumerate() {
                let mean = sum[k] / n as f64;
                let var = (sq[k] / n as f64 - mean * mean).max(0.0);
                let se = (var / n as f64).sqrt().max(1e-12);
                prop_assert!((mean - want).abs() <= 3.0 * se, "channel {} mean {} want {} se {}", k, mean, want, se);
            }
        }
    }
}
