//! Real time, hardware-clock time, and piecewise-linear clock schedules.
//!
//! Real time ([`TimePoint`]) and a node's hardware-clock reading
//! ([`LocalTime`]) are kept as distinct newtypes so that protocol code cannot
//! accidentally mix the two axes. Durations and offsets are plain [`Rat`]s.
//!
//! A [`ClockSchedule`] is the hardware clock H_v of one node: a finite list
//! of rate segments (the last one extends to infinity), each rate drawn from
//! `[1, theta]`, so H_v is continuous, strictly increasing, and piecewise
//! linear. All evaluation and inversion is exact.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::Rat;

/// A point in real (true) time. Always `>= 0`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimePoint(Rat);

/// A hardware-clock reading. Always `>= 0` for schedules with a nonnegative
/// initial offset.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocalTime(Rat);

impl TimePoint {
    pub fn zero() -> Self {
        TimePoint(Rat::zero())
    }

    /// Wraps a rational real time; panics on negative input (event times and
    /// schedule breakpoints are nonnegative by construction).
    pub fn new(value: Rat) -> Self {
        assert!(!value.is_negative(), "negative TimePoint: {value}");
        TimePoint(value)
    }

    pub fn as_rat(&self) -> &Rat {
        &self.0
    }

    pub fn into_rat(self) -> Rat {
        self.0
    }
}

impl LocalTime {
    pub fn zero() -> Self {
        LocalTime(Rat::zero())
    }

    pub fn new(value: Rat) -> Self {
        LocalTime(value)
    }

    pub fn as_rat(&self) -> &Rat {
        &self.0
    }

    pub fn into_rat(self) -> Rat {
        self.0
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t:{}", self.0)
    }
}

impl fmt::Display for LocalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for LocalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h:{}", self.0)
    }
}

impl Add<&Rat> for &TimePoint {
    type Output = TimePoint;
    fn add(self, rhs: &Rat) -> TimePoint {
        TimePoint::new(&self.0 + rhs)
    }
}

impl Sub<&TimePoint> for &TimePoint {
    type Output = Rat;
    fn sub(self, rhs: &TimePoint) -> Rat {
        &self.0 - &rhs.0
    }
}

impl Add<&Rat> for &LocalTime {
    type Output = LocalTime;
    fn add(self, rhs: &Rat) -> LocalTime {
        LocalTime(&self.0 + rhs)
    }
}

impl Sub<&LocalTime> for &LocalTime {
    type Output = Rat;
    fn sub(self, rhs: &LocalTime) -> Rat {
        &self.0 - &rhs.0
    }
}

/// One rate segment of a hardware clock: from `start` onward the clock runs
/// at `rate`, until the next segment's start (the last segment is unbounded).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockSegment {
    pub start: TimePoint,
    pub rate: Rat,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("schedule has no segments")]
    NoSegments,
    #[error("first segment must start at time 0, got {0}")]
    FirstSegmentNonzero(Rat),
    #[error("segment starts must be strictly increasing (segment {0})")]
    NonIncreasingStarts(usize),
    #[error("segment {index} rate {rate} outside [1, {theta}]")]
    RateOutOfBounds { index: usize, rate: Rat, theta: Rat },
    #[error("negative initial offset {0}")]
    NegativeOffset(Rat),
    #[error("local time {h} below initial clock value {h0}")]
    BelowInitialValue { h: Rat, h0: Rat },
}

/// Hardware clock H_v: `H(t) = offset + integral of the segment rates`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockSchedule {
    /// H(0).
    offset: Rat,
    segments: Vec<ClockSegment>,
}

impl ClockSchedule {
    /// Validates segment layout and `1 <= rate <= theta` for every segment.
    pub fn new(offset: Rat, segments: Vec<ClockSegment>, theta: &Rat) -> Result<Self, ClockError> {
        if segments.is_empty() {
            return Err(ClockError::NoSegments);
        }
        if offset.is_negative() {
            return Err(ClockError::NegativeOffset(offset));
        }
        if !segments[0].start.as_rat().is_zero() {
            return Err(ClockError::FirstSegmentNonzero(
                segments[0].start.as_rat().clone(),
            ));
        }
        for i in 1..segments.len() {
            if segments[i].start <= segments[i - 1].start {
                return Err(ClockError::NonIncreasingStarts(i));
            }
        }
        let one = Rat::one();
        for (i, seg) in segments.iter().enumerate() {
            if seg.rate < one || &seg.rate > theta {
                return Err(ClockError::RateOutOfBounds {
                    index: i,
                    rate: seg.rate.clone(),
                    theta: theta.clone(),
                });
            }
        }
        Ok(ClockSchedule { offset, segments })
    }

    /// Rate-1 clock with H(0) = 0.
    pub fn identity() -> Self {
        ClockSchedule {
            offset: Rat::zero(),
            segments: vec![ClockSegment {
                start: TimePoint::zero(),
                rate: Rat::one(),
            }],
        }
    }

    /// Single-rate clock with the given initial offset. The rate is not
    /// validated here; use [`ClockSchedule::new`] when theta matters.
    pub fn constant(offset: Rat, rate: Rat) -> Self {
        assert!(rate.is_positive(), "clock rate must be positive");
        assert!(!offset.is_negative(), "clock offset must be nonnegative");
        ClockSchedule {
            offset,
            segments: vec![ClockSegment {
                start: TimePoint::zero(),
                rate,
            }],
        }
    }

    /// Rate `theta` on `[0, breakpoint)`, rate 1 afterwards, offset 0. This is
    /// the two-segment clock used by the shifting construction.
    pub fn fast_then_nominal(theta: &Rat, breakpoint: &TimePoint) -> Self {
        if breakpoint.as_rat().is_zero() {
            return ClockSchedule::identity();
        }
        ClockSchedule {
            offset: Rat::zero(),
            segments: vec![
                ClockSegment {
                    start: TimePoint::zero(),
                    rate: theta.clone(),
                },
                ClockSegment {
                    start: breakpoint.clone(),
                    rate: Rat::one(),
                },
            ],
        }
    }

    pub fn initial_offset(&self) -> &Rat {
        &self.offset
    }

    pub fn max_rate(&self) -> &Rat {
        self.segments
            .iter()
            .map(|s| &s.rate)
            .max()
            .expect("validated schedule has segments")
    }

    /// H(t), by exact piecewise-linear evaluation.
    pub fn local_time_at(&self, t: &TimePoint) -> LocalTime {
        let mut acc = self.offset.clone();
        for (i, seg) in self.segments.iter().enumerate() {
            if &seg.start >= t {
                break;
            }
            let upper = match self.segments.get(i + 1) {
                Some(next) if &next.start < t => next.start.clone(),
                _ => t.clone(),
            };
            acc += &(&seg.rate * &(&upper - &seg.start));
        }
        LocalTime(acc)
    }

    /// The unique t with H(t) = h; exists for all `h >= H(0)` because rates
    /// are at least 1.
    pub fn time_at(&self, h: &LocalTime) -> Result<TimePoint, ClockError> {
        let target = h.as_rat();
        if target < &self.offset {
            return Err(ClockError::BelowInitialValue {
                h: target.clone(),
                h0: self.offset.clone(),
            });
        }
        let mut seg_start_local = self.offset.clone();
        for (i, seg) in self.segments.iter().enumerate() {
            match self.segments.get(i + 1) {
                Some(next) => {
                    let end_local =
                        &seg_start_local + &(&seg.rate * &(&next.start - &seg.start));
                    if target < &end_local {
                        let dt = &(target - &seg_start_local) / &seg.rate;
                        return Ok(&seg.start + &dt);
                    }
                    seg_start_local = end_local;
                }
                None => {
                    let dt = &(target - &seg_start_local) / &seg.rate;
                    return Ok(&seg.start + &dt);
                }
            }
        }
        unreachable!("final segment is unbounded");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::r;

    fn tp(num: i64, den: i64) -> TimePoint {
        TimePoint::new(r(num, den))
    }

    fn lt(num: i64, den: i64) -> LocalTime {
        LocalTime::new(r(num, den))
    }

    #[test]
    fn identity_clock_is_identity() {
        let c = ClockSchedule::identity();
        assert_eq!(c.local_time_at(&tp(5, 1)), lt(5, 1));
        assert_eq!(c.time_at(&lt(7, 1)).unwrap(), tp(7, 1));
    }

    #[test]
    fn constant_rate_scales() {
        let c = ClockSchedule::constant(Rat::zero(), r(11, 10));
        assert_eq!(c.local_time_at(&tp(4, 1)), lt(22, 5));
        assert_eq!(c.time_at(&lt(22, 5)).unwrap(), tp(4, 1));
    }

    #[test]
    fn two_segment_shift_clock() {
        // theta = 3/2, u_tilde = 9/10: rate theta until 2*u_tilde/(3(theta-1))
        // = 6/5, rate 1 after. H(6/5) = 9/5, H(2) = 13/5.
        let theta = r(3, 2);
        let breakpoint = tp(6, 5);
        let c = ClockSchedule::fast_then_nominal(&theta, &breakpoint);
        assert_eq!(c.local_time_at(&tp(6, 5)), lt(9, 5));
        assert_eq!(c.local_time_at(&tp(2, 1)), lt(13, 5));
        assert_eq!(c.time_at(&lt(13, 5)).unwrap(), tp(2, 1));
        // After the breakpoint the clock is a pure shift by 2*u_tilde/3.
        assert_eq!(c.local_time_at(&tp(10, 1)), lt(53, 5));
    }

    #[test]
    fn inverse_below_initial_value_is_rejected() {
        let c = ClockSchedule::constant(r(3, 1), Rat::one());
        assert!(matches!(
            c.time_at(&lt(2, 1)),
            Err(ClockError::BelowInitialValue { .. })
        ));
        assert_eq!(c.time_at(&lt(3, 1)).unwrap(), TimePoint::zero());
    }

    #[test]
    fn validation_rejects_bad_schedules() {
        let theta = r(3, 2);
        assert_eq!(
            ClockSchedule::new(Rat::zero(), vec![], &theta),
            Err(ClockError::NoSegments)
        );
        let bad_rate = ClockSchedule::new(
            Rat::zero(),
            vec![ClockSegment {
                start: TimePoint::zero(),
                rate: r(2, 1),
            }],
            &theta,
        );
        assert!(matches!(bad_rate, Err(ClockError::RateOutOfBounds { .. })));
        let slow = ClockSchedule::new(
            Rat::zero(),
            vec![ClockSegment {
                start: TimePoint::zero(),
                rate: r(9, 10),
            }],
            &theta,
        );
        assert!(matches!(slow, Err(ClockError::RateOutOfBounds { .. })));
        let nonzero_start = ClockSchedule::new(
            Rat::zero(),
            vec![ClockSegment {
                start: tp(1, 1),
                rate: Rat::one(),
            }],
            &theta,
        );
        assert!(matches!(
            nonzero_start,
            Err(ClockError::FirstSegmentNonzero(_))
        ));
    }

    #[test]
    fn evaluation_at_breakpoints_is_continuous() {
        let theta = r(2, 1);
        let c = ClockSchedule::new(
            r(1, 2),
            vec![
                ClockSegment {
                    start: TimePoint::zero(),
                    rate: r(3, 2),
                },
                ClockSegment {
                    start: tp(2, 1),
                    rate: Rat::one(),
                },
                ClockSegment {
                    start: tp(3, 1),
                    rate: r(2, 1),
                },
            ],
            &theta,
        )
        .unwrap();
        // H(2) = 1/2 + 3 = 7/2, H(3) = 9/2, H(4) = 13/2.
        assert_eq!(c.local_time_at(&tp(2, 1)), lt(7, 2));
        assert_eq!(c.local_time_at(&tp(3, 1)), lt(9, 2));
        assert_eq!(c.local_time_at(&tp(4, 1)), lt(13, 2));
        for (t, h) in [(tp(2, 1), lt(7, 2)), (tp(3, 1), lt(9, 2)), (tp(4, 1), lt(13, 2))] {
            assert_eq!(c.time_at(&h).unwrap(), t);
        }
    }
}
