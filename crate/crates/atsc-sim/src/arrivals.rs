//! Boundary demand: Poisson or strictly periodic arrivals, with
//! piecewise-constant rate profiles per entry class.

use rand::RngCore;

use crate::topology::DemandClass;
use crate::{Result, SimError};

/// Counting process used at every boundary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalModel {
    /// Independent Poisson counts with mean rate × Δt per step.
    Poisson,
    /// Exactly one vehicle every round(1/rate) steps — a deterministic
    /// drip used by oracle tests that need a hand-checkable demand.
    Periodic,
}

/// Piecewise-constant rate schedule. Each piece `(from_s, rate)` applies
/// from `from_s` (inclusive) until the next piece starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub pieces: Vec<(f64, f64)>,
}

impl Profile {
    pub fn constant(rate: f64) -> Profile {
        Profile {
            pieces: vec![(0.0, rate)],
        }
    }

    pub fn validate(&self, label: &str) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(SimError::BadConfig(format!("{label} profile is empty")));
        }
        if self.pieces[0].0 != 0.0 {
            return Err(SimError::BadConfig(format!(
                "{label} profile must start at t=0"
            )));
        }
        for w in self.pieces.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SimError::BadConfig(format!(
                    "{label} profile breakpoints must be strictly increasing"
                )));
            }
        }
        if self.pieces.iter().any(|&(_, r)| r < 0.0) {
            return Err(SimError::BadConfig(format!(
                "{label} profile has a negative rate"
            )));
        }
        Ok(())
    }

    /// Rate in effect at time `t` seconds.
    pub fn rate_at(&self, t: f64) -> f64 {
        let mut rate = self.pieces[0].1;
        for &(from, r) in &self.pieces {
            if t >= from {
                rate = r;
            } else {
                break;
            }
        }
        rate
    }
}

/// Demand for the whole network: one profile per entry class, in veh/s per
/// lane (an entry link's arrival rate is its per-lane rate × lane count).
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    pub model: ArrivalModel,
    pub main: Profile,
    pub side: Profile,
}

impl DemandSpec {
    pub fn validate(&self) -> Result<()> {
        self.main.validate("main demand")?;
        self.side.validate("side demand")
    }

    pub fn rate_for(&self, class: DemandClass, t: f64) -> f64 {
        match class {
            DemandClass::Main => self.main.rate_at(t),
            DemandClass::Side => self.side.rate_at(t),
        }
    }

    /// Zero demand everywhere (handy for kinematics tests).
    pub fn silent() -> DemandSpec {
        DemandSpec {
            model: ArrivalModel::Poisson,
            main: Profile::constant(0.0),
            side: Profile::constant(0.0),
        }
    }
}

/// Poisson sample via Knuth's product-of-uniforms method. Exact for the
/// small means used here (rate × Δt ≪ 10); draws a variable number of
/// uniforms, which is fine because each entry consumes from one dedicated
/// stream in a fixed order.
pub fn poisson_knuth(rng: &mut impl RngCore, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let limit = (-mean).exp();
    let mut k = 0u32;
    let mut p = 1.0f64;
    loop {
        // Uniform in (0, 1]: never exactly 0, so the product strictly
        // decreases and the loop terminates.
        let u = ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        p *= u;
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Arrival count for one entry link at one step.
pub fn arrival_count(
    model: ArrivalModel,
    rng: &mut impl RngCore,
    rate_per_lane: f64,
    lanes: usize,
    clock: u32,
    dt: f64,
) -> u32 {
    let link_rate = rate_per_lane * lanes as f64;
    if link_rate <= 0.0 {
        return 0;
    }
    match model {
        ArrivalModel::Poisson => poisson_knuth(rng, link_rate * dt),
        ArrivalModel::Periodic => {
            let period = (1.0 / (link_rate * dt)).round().max(1.0) as u32;
            u32::from(clock % period == 0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_rate_never_arrives() {
        let mut rng = stream(1, "arrivals.ep0");
        for clock in 0..1000 {
            assert_eq!(
                arrival_count(ArrivalModel::Poisson, &mut rng, 0.0, 2, clock, 1.0),
                0
            );
        }
    }

    /// Sample mean over 1e5 steps at rate 0.2 must land within 3 standard
    /// errors of the Poisson mean: 0.2 ± 3·sqrt(0.2/1e5).
    #[test]
    fn poisson_mean_matches_rate() {
        let mut rng = stream(42, "arrivals.ep0");
        let steps = 100_000u32;
        let rate = 0.2;
        let total: u64 = (0..steps)
            .map(|_| poisson_knuth(&mut rng, rate) as u64)
            .sum();
        let mean = total as f64 / steps as f64;
        let tol = 3.0 * (rate / steps as f64).sqrt();
        assert!(
            (mean - rate).abs() <= tol,
            "sample mean {mean} outside {rate} ± {tol}"
        );
    }

    /// Variance should also match the mean (Poisson dispersion), a sharper
    /// distributional check than the mean alone.
    #[test]
    fn poisson_dispersion_is_near_one() {
        let mut rng = stream(7, "arrivals.ep1");
        let steps = 100_000;
        let rate = 0.5;
        let counts: Vec<f64> = (0..steps)
            .map(|_| poisson_knuth(&mut rng, rate) as f64)
            .collect();
        let mean: f64 = counts.iter().sum::<f64>() / steps as f64;
        let var: f64 =
            counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / steps as f64;
        let dispersion = var / mean;
        assert!(
            (dispersion - 1.0).abs() < 0.05,
            "dispersion {dispersion} too far from 1"
        );
    }

    #[test]
    fn identical_streams_give_identical_sequences() {
        let mut a = stream(9, "arrivals.ep3");
        let mut b = stream(9, "arrivals.ep3");
        for _ in 0..200 {
            assert_eq!(poisson_knuth(&mut a, 0.3), poisson_knuth(&mut b, 0.3));
        }
    }

    #[test]
    fn periodic_drips_on_schedule() {
        let mut rng = stream(1, "unused");
        // rate 0.25/s on one lane → one vehicle every 4 steps, at clock % 4 == 0.
        let counts: Vec<u32> = (0..9)
            .map(|c| arrival_count(ArrivalModel::Periodic, &mut rng, 0.25, 1, c, 1.0))
            .collect();
        assert_eq!(counts, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn profile_lookup_is_piecewise_constant() {
        let p = Profile {
            pieces: vec![(0.0, 0.1), (600.0, 0.4), (1200.0, 0.05)],
        };
        p.validate("test").unwrap();
        assert_eq!(p.rate_at(0.0), 0.1);
        assert_eq!(p.rate_at(599.0), 0.1);
        assert_eq!(p.rate_at(600.0), 0.4);
        assert_eq!(p.rate_at(5000.0), 0.05);
    }

    #[test]
    fn bad_profiles_rejected() {
        assert!(Profile { pieces: vec![] }.validate("x").is_err());
        assert!(Profile {
            pieces: vec![(5.0, 0.1)]
        }
        .validate("x")
        .is_err());
        assert!(Profile {
            pieces: vec![(0.0, 0.1), (0.0, 0.2)]
        }
        .validate("x")
        .is_err());
        assert!(Profile {
            pieces: vec![(0.0, -0.1)]
        }
        .validate("x")
        .is_err());
    }
}
