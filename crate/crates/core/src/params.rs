//! Validated protocol constants shared by the protocol, the simulator, the
//! solver, and the checkers.

use serde::{Deserialize, Serialize};

use crate::rational::Rat;

/// All protocol constants in one record. `delta` is the measurement error
/// bound implied by `(u, d, theta, s)` and must satisfy its defining formula
/// exactly; `validate` re-derives it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Node count.
    pub n: usize,
    /// Fault budget, always `ceil(n/2) - 1`.
    pub f: usize,
    /// Maximum message delay.
    pub d: Rat,
    /// Delay uncertainty on links between honest nodes: delays in `[d-u, d]`.
    pub u: Rat,
    /// Delay uncertainty on links with a faulty endpoint: delays in
    /// `[d-u_tilde, d]`.
    pub u_tilde: Rat,
    /// Maximum hardware clock rate (minimum normalized to 1).
    pub theta: Rat,
    /// Skew bound maintained by the protocol; also bounds initial offsets.
    pub s: Rat,
    /// Nominal round length.
    pub t: Rat,
    /// Offset-estimate error bound: `2u + (theta^2-1)d + 2(theta^3-theta^2)s`.
    pub delta: Rat,
}

/// One violated constraint, with a stable key for tests and a human-readable
/// inequality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub key: String,
    pub detail: String,
}

/// Everything that failed validation; empty means the record is valid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("invalid parameters: {}", self.summary())]
pub struct RejectionReport {
    pub violations: Vec<ConstraintViolation>,
}

impl RejectionReport {
    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| v.key.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn names(&self, key: &str) -> bool {
        self.violations.iter().any(|v| v.key == key)
    }
}

/// Fault budget for a system of `n` nodes: `ceil(n/2) - 1`.
pub fn fault_budget(n: usize) -> usize {
    n.div_ceil(2) - 1
}

/// `2u + (theta^2 - 1)d + 2(theta^3 - theta^2)s`, exactly.
pub fn delta_formula(d: &Rat, u: &Rat, theta: &Rat, s: &Rat) -> Rat {
    let two = Rat::from_int(2);
    let theta2 = theta * theta;
    let theta3 = &theta2 * theta;
    &(&(&two * u) + &(&(&theta2 - &Rat::one()) * d)) + &(&(&two * &(&theta3 - &theta2)) * s)
}

/// `(theta^2 + theta + 1)s + (theta + 1)d - 2u`: the smallest round length
/// that leaves room for every broadcast instance to finish before the next
/// pulse.
pub fn min_round_length(d: &Rat, u: &Rat, theta: &Rat, s: &Rat) -> Rat {
    let theta2 = theta * theta;
    let poly = &(&theta2 + theta) + &Rat::one();
    &(&(&poly * s) + &(&(theta + &Rat::one()) * d)) - &(&Rat::from_int(2) * u)
}

impl SystemParams {
    /// Assembles a record, deriving `f` and `delta`. Call `validate` (or use
    /// `validated`) before trusting it.
    pub fn new(n: usize, d: Rat, u: Rat, u_tilde: Rat, theta: Rat, s: Rat, t: Rat) -> Self {
        let delta = delta_formula(&d, &u, &theta, &s);
        SystemParams {
            n,
            f: fault_budget(n.max(1)),
            d,
            u,
            u_tilde,
            theta,
            s,
            t,
            delta,
        }
    }

    /// Checks every invariant; returns a report naming each violated
    /// inequality.
    pub fn validate(&self) -> Result<(), RejectionReport> {
        let mut violations = Vec::new();
        let mut fail = |key: &str, detail: String| {
            violations.push(ConstraintViolation {
                key: key.to_string(),
                detail,
            })
        };

        if !self.d.is_positive() {
            fail("d_positive", format!("d = {} must be > 0", self.d));
        }
        if self.u.is_negative() {
            fail("u_nonnegative", format!("u = {} must be >= 0", self.u));
        }
        if self.u > self.u_tilde {
            fail(
                "u_le_u_tilde",
                format!("u = {} must be <= u_tilde = {}", self.u, self.u_tilde),
            );
        }
        if self.u_tilde > self.d {
            fail(
                "u_tilde_le_d",
                format!("u_tilde = {} must be <= d = {}", self.u_tilde, self.d),
            );
        }
        if self.u > self.d {
            fail("u_le_d", format!("u = {} must be <= d = {}", self.u, self.d));
        }
        // The quiet window has length d - 2u; a negative length makes the
        // conflict check meaningless.
        if &Rat::from_int(2) * &self.u > self.d {
            fail(
                "quiet_window",
                format!("2u = {} must be <= d = {}", &Rat::from_int(2) * &self.u, self.d),
            );
        }
        if self.theta <= Rat::one() {
            fail("theta_gt_1", format!("theta = {} must be > 1", self.theta));
        }
        if self.theta >= Rat::from_int(2) {
            fail(
                "theta_lt_2",
                format!("theta = {} must be < 2 for the skew budget", self.theta),
            );
        }
        if self.n < 3 {
            fail("n_ge_3", format!("n = {} must be >= 3", self.n));
        }
        if self.n >= 3 && self.f != fault_budget(self.n) {
            fail(
                "fault_budget",
                format!(
                    "f = {} must equal ceil(n/2) - 1 = {}",
                    self.f,
                    fault_budget(self.n)
                ),
            );
        }
        if self.s.is_negative() {
            fail("s_nonnegative", format!("s = {} must be >= 0", self.s));
        }

        let expected_delta = delta_formula(&self.d, &self.u, &self.theta, &self.s);
        if self.delta != expected_delta {
            fail(
                "delta_formula",
                format!(
                    "delta = {} must equal 2u + (theta^2-1)d + 2(theta^3-theta^2)s = {}",
                    self.delta, expected_delta
                ),
            );
        }

        let t_min = min_round_length(&self.d, &self.u, &self.theta, &self.s);
        if self.t < t_min {
            fail(
                "round_length",
                format!(
                    "t = {} must be >= (theta^2+theta+1)s + (theta+1)d - 2u = {}",
                    self.t, t_min
                ),
            );
        }

        // S(2 - theta) >= 2(2*theta - 1)*delta + 2(theta - 1)*T, written
        // multiplied out so it needs no sign assumption beyond theta < 2.
        if self.theta < Rat::from_int(2) {
            let lhs = &self.s * &(&Rat::from_int(2) - &self.theta);
            let rhs = &(&(&Rat::from_int(2)
                * &(&(&Rat::from_int(2) * &self.theta) - &Rat::one()))
                * &expected_delta)
                + &(&(&Rat::from_int(2) * &(&self.theta - &Rat::one())) * &self.t);
            if lhs < rhs {
                fail(
                    "skew_budget",
                    format!(
                        "s(2-theta) = {} must be >= 2(2theta-1)delta + 2(theta-1)t = {}",
                        lhs, rhs
                    ),
                );
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(RejectionReport { violations })
        }
    }

    /// `validate`, but by value.
    pub fn validated(self) -> Result<Self, RejectionReport> {
        self.validate()?;
        Ok(self)
    }

    /// `theta * s`: how long after its pulse a dealer waits before
    /// broadcasting.
    pub fn dealer_send_offset(&self) -> Rat {
        &self.theta * &self.s
    }

    /// `theta * (d + (theta+1)s)`: length of the local-time window in which a
    /// dealer's message can be accepted.
    pub fn acceptance_window(&self) -> Rat {
        &self.theta * &(&self.d + &(&(&self.theta + &Rat::one()) * &self.s))
    }

    /// `d - 2u`: length of the local-time window after acceptance during
    /// which a third-party copy of the dealer's signature forces rejection.
    pub fn quiet_window(&self) -> Rat {
        &self.d - &(&Rat::from_int(2) * &self.u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::r;

    fn base() -> SystemParams {
        // theta = 101/100, d = 1, u = 0, s = 1, t = 6.
        // delta = (theta^2-1) + 2 theta^2 (theta-1) = 405020/10^7;
        // round-length bound: (theta^2+theta+1) + (theta+1) = 50401/10^4 <= 6;
        // skew budget: 0.99 >= 2(2theta-1)delta + 2(theta-1)*6 ~ 0.2026.
        SystemParams::new(4, r(1, 1), r(0, 1), r(0, 1), r(101, 100), r(1, 1), r(6, 1))
    }

    #[test]
    fn fault_budget_matches_definition() {
        assert_eq!(fault_budget(3), 1);
        assert_eq!(fault_budget(4), 1);
        assert_eq!(fault_budget(5), 2);
        assert_eq!(fault_budget(7), 3);
        assert_eq!(fault_budget(8), 3);
    }

    #[test]
    fn valid_record_passes() {
        let p = base();
        assert!(p.validate().is_ok(), "{:?}", p.validate());
    }

    #[test]
    fn u_greater_than_d_is_rejected() {
        let mut p = base();
        p.u = r(2, 1);
        p.u_tilde = r(2, 1);
        p.delta = delta_formula(&p.d, &p.u, &p.theta, &p.s);
        let report = p.validate().unwrap_err();
        assert!(report.names("u_le_d"), "{report:?}");
    }

    #[test]
    fn zero_round_length_names_the_round_length_bound() {
        let mut p = base();
        p.t = Rat::zero();
        let report = p.validate().unwrap_err();
        assert!(report.names("round_length"), "{report:?}");
    }

    #[test]
    fn wrong_delta_is_rejected() {
        let mut p = base();
        p.delta = r(1, 1);
        let report = p.validate().unwrap_err();
        assert!(report.names("delta_formula"), "{report:?}");
    }

    #[test]
    fn theta_at_most_one_is_rejected() {
        let mut p = base();
        p.theta = Rat::one();
        p.delta = delta_formula(&p.d, &p.u, &p.theta, &p.s);
        let report = p.validate().unwrap_err();
        assert!(report.names("theta_gt_1"), "{report:?}");
    }

    #[test]
    fn skew_budget_violation_is_named() {
        let mut p = base();
        p.s = r(1, 1000);
        p.delta = delta_formula(&p.d, &p.u, &p.theta, &p.s);
        // t large makes the right-hand side exceed s(2-theta).
        p.t = r(1000, 1);
        let report = p.validate().unwrap_err();
        assert!(report.names("skew_budget"), "{report:?}");
    }

    #[test]
    fn delta_formula_positive_when_any_source_positive() {
        // u > 0
        assert!(delta_formula(&r(1, 1), &r(1, 100), &r(101, 100), &Rat::zero()).is_positive());
        // theta > 1 alone
        assert!(delta_formula(&r(1, 1), &Rat::zero(), &r(101, 100), &Rat::zero()).is_positive());
        // s > 0 with theta > 1
        assert!(delta_formula(&r(1, 1), &Rat::zero(), &r(101, 100), &r(1, 2)).is_positive());
    }
}
