//! Participants, calendar-time censoring and analysis snapshots.

use alloc::borrow::Cow;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Days per year used to convert outcome delays.
pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub id: u64,
    /// Years since the first enrollment.
    pub enroll_time: f64,
    pub w: Vec<f64>,
    pub a: u8,
    pub l: u8,
    pub y: u8,
}

impl ParticipantRecord {
    pub fn validate(&self) -> Result<()> {
        if self.a > 1 || self.l > 1 || self.y > 1 {
            return Err(invalid("a, l and y must be 0 or 1"));
        }
        if !(self.enroll_time >= 0.0) || !self.enroll_time.is_finite() {
            return Err(invalid("enroll_time must be finite and non-negative"));
        }
        if self.w.is_empty() {
            return Err(invalid("at least one baseline covariate is required"));
        }
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("baseline covariates"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayConfig {
    /// Years from enrollment until the short-term outcome is measured.
    pub d_l: f64,
    /// Years from enrollment until the primary outcome is measured.
    pub d_y: f64,
    /// Participants per year.
    pub enroll_rate: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self { d_l: 30.0 / DAYS_PER_YEAR, d_y: 180.0 / DAYS_PER_YEAR, enroll_rate: 140.0 }
    }
}

impl DelayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_l > 0.0 && self.d_l <= self.d_y && self.d_y.is_finite()) {
            return Err(invalid("delays must satisfy 0 < d_l <= d_y"));
        }
        if !(self.enroll_rate > 0.0 && self.enroll_rate.is_finite()) {
            return Err(invalid("enroll_rate must be positive"));
        }
        Ok(())
    }
}

/// The data visible at one calendar time.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSnapshot<'a> {
    pub records: Cow<'a, [ParticipantRecord]>,
    pub c_l: Vec<bool>,
    pub c_y: Vec<bool>,
    pub analysis_time: f64,
    pub p_l: f64,
    pub p_y: f64,
}

impl<'a> AnalysisSnapshot<'a> {
    /// Builds a snapshot from explicit censoring flags.
    pub fn from_flags(records: Cow<'a, [ParticipantRecord]>, c_l: Vec<bool>, c_y: Vec<bool>, analysis_time: f64) -> Result<Self> {
        let n = records.len();
        if n == 0 {
            return Err(Error::EmptyRecords);
        }
        if c_l.len() != n || c_y.len() != n {
            return Err(invalid("censoring flags do not match record count"));
        }
        if c_y.iter().zip(&c_l).any(|(&y, &l)| y && !l) {
            return Err(invalid("censoring must be monotone: c_y = 1 requires c_l = 1"));
        }
        let n_y = c_y.iter().filter(|&&c| c).count();
        if n_y == 0 {
            return Err(Error::NoPrimaryOutcome);
        }
        let n_l = c_l.iter().filter(|&&c| c).count();
        Ok(Self {
            p_l: n_l as f64 / n as f64,
            p_y: n_y as f64 / n as f64,
            records,
            c_l,
            c_y,
            analysis_time,
        })
    }

    /// Snapshot with every outcome observed.
    pub fn complete(records: impl Into<Cow<'a, [ParticipantRecord]>>) -> Result<Self> {
        let records = records.into();
        let n = records.len();
        Self::from_flags(records, alloc::vec![true; n], alloc::vec![true; n], f64::INFINITY)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Applies administrative censoring at calendar time `t`.
pub fn snapshot_at<'a>(records: impl Into<Cow<'a, [ParticipantRecord]>>, t: f64, cfg: &DelayConfig) -> Result<AnalysisSnapshot<'a>> {
    cfg.validate()?;
    let records = records.into();
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    if records.iter().any(|r| r.enroll_time > t) {
        return Err(invalid("record enrolled after the analysis time"));
    }
    let c_l = records.iter().map(|r| t >= r.enroll_time + cfg.d_l).collect();
    let c_y = records.iter().map(|r| t >= r.enroll_time + cfg.d_y).collect();
    AnalysisSnapshot::from_flags(records, c_l, c_y, t)
}

/// Returns `(p_y, p_l)`.
pub fn observed_fractions(s: &AnalysisSnapshot<'_>) -> (f64, f64) {
    (s.p_y, s.p_l)
}

/// Number of leading records (sorted by enrollment time) enrolled by `t`.
pub fn enrolled_by(records: &[ParticipantRecord], t: f64) -> usize {
    records.partition_point(|r| r.enroll_time <= t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnrollmentSchedule {
    /// Participant `i` enrolls at `i / rate`.
    #[default]
    EquallySpaced,
    /// Exponential inter-arrival times with the given rate.
    Poisson,
}

/// Enrollment times for `n` participants starting at time zero.
pub fn enrollment_times<R: Rng + ?Sized>(n: usize, rate: f64, schedule: EnrollmentSchedule, rng: &mut R) -> Vec<f64> {
    match schedule {
        EnrollmentSchedule::EquallySpaced => (0..n).map(|i| i as f64 / rate).collect(),
        EnrollmentSchedule::Poisson => {
            let mut t = 0.0;
            (0..n)
                .map(|i| {
                    if i > 0 {
                        let u: f64 = rng.gen();
                        t += -libm::log1p(-u) / rate;
                    }
                    t
                })
                .collect()
        }
    }
}

/// Assigns enrollment times in order and sets ids to the row index.
pub fn assign_enrollment<R: Rng + ?Sized>(records: &mut [ParticipantRecord], rate: f64, schedule: EnrollmentSchedule, rng: &mut R) {
    let times = enrollment_times(records.len(), rate, schedule, rng);
    for (i, (r, t)) in records.iter_mut().zip(times).enumerate() {
        r.id = i as u64;
        r.enroll_time = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(t: f64) -> ParticipantRecord {
        ParticipantRecord { id: 0, enroll_time: t, w: vec![0.0], a: 0, l: 0, y: 0 }
    }

    #[test]
    fn delay_boundary_counts_as_observed() {
        let cfg = DelayConfig::default();
        let recs = [rec(0.0)];
        let s = snapshot_at(&recs[..], cfg.d_y, &cfg).unwrap();
        assert_eq!((s.c_l[0], s.c_y[0]), (true, true));
        assert_eq!(observed_fractions(&s), (1.0, 1.0));
    }

    #[test]
    fn l_only_participant() {
        let cfg = DelayConfig::default();
        let t = cfg.d_y;
        let recs = [rec(0.0), rec(t - cfg.d_l)];
        let s = snapshot_at(&recs[..], t, &cfg).unwrap();
        assert_eq!(s.c_l, vec![true, true]);
        assert_eq!(s.c_y, vec![true, false]);
        assert_eq!(observed_fractions(&s), (0.5, 1.0));
    }

    #[test]
    fn errors() {
        let cfg = DelayConfig::default();
        let empty: [ParticipantRecord; 0] = [];
        assert_eq!(snapshot_at(&empty[..], 1.0, &cfg), Err(Error::EmptyRecords));
        let recs = [rec(0.0)];
        assert_eq!(snapshot_at(&recs[..], 0.1, &cfg), Err(Error::NoPrimaryOutcome));
        assert!(snapshot_at(&recs[..], -1.0, &cfg).is_err());
    }

    #[test]
    fn uniform_enrollment_counts() {
        let cfg = DelayConfig::default();
        let recs: Vec<_> = (0..165).map(|i| rec(i as f64 * 1.2 / 165.0)).collect();
        let s = snapshot_at(&recs[..], 1.2, &cfg).unwrap();
        let full = s.c_y.iter().filter(|&&c| c).count() as i64;
        let l_only = s.c_l.iter().zip(&s.c_y).filter(|(&l, &y)| l && !y).count() as i64;
        let pipeline = 165 - full - l_only;
        assert!((full - 96).abs() <= 3, "{full}");
        assert!((l_only - 57).abs() <= 3, "{l_only}");
        assert!((pipeline - 12).abs() <= 3, "{pipeline}");
    }

    #[test]
    fn interim_three_fractions() {
        let c_y: Vec<bool> = (0..357).map(|i| i < 288).collect();
        let c_l: Vec<bool> = (0..357).map(|i| i < 345).collect();
        let recs: Vec<_> = (0..357).map(|_| rec(0.0)).collect();
        let s = AnalysisSnapshot::from_flags(Cow::Owned(recs), c_l, c_y, 0.0).unwrap();
        let (py, pl) = observed_fractions(&s);
        assert!((py - 0.807).abs() < 1e-3 && (pl - 0.966).abs() < 1e-3);
    }

    #[test]
    fn schedules() {
        let mut rng = crate::rng::stream(1, crate::rng::domain::ENROLLMENT, 0);
        let eq = enrollment_times(3, 140.0, EnrollmentSchedule::EquallySpaced, &mut rng);
        assert_eq!(eq, vec![0.0, 1.0 / 140.0, 2.0 / 140.0]);
        let po = enrollment_times(20_000, 140.0, EnrollmentSchedule::Poisson, &mut rng);
        assert!(po.windows(2).all(|w| w[1] >= w[0]));
        assert!((po[19_999] - 19_999.0 / 140.0).abs() < 5.0);
        assert_eq!(enrolled_by(&[rec(0.0), rec(1.0), rec(2.0)], 1.0), 2);
    }
}
