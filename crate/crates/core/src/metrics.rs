//! Communication and randomness rates, and the optimal region they are held to.
//!
//! Messages and keys are uniform over `Z_p`, so every entropy is a symbol
//! count times `log p`. Rates normalised by `L log q` therefore carry the unit
//! `log p / log q`; it is kept symbolic and only like units are compared.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{HsaError, Result};
use crate::scheme::Scheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "log p / log q")]
    LogPOverLogQ,
}

/// Exact rational times a unit factor. Serialises as `{num, den, unit}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rate {
    pub value: Ratio<u64>,
    pub unit: Unit,
}

impl Rate {
    pub fn new(num: u64, den: u64, unit: Unit) -> Self {
        Self { value: Ratio::new(num, den), unit }
    }

    /// `None` when the units differ.
    pub fn compare(&self, other: &Rate) -> Option<Ordering> {
        (self.unit == other.unit).then(|| self.value.cmp(&other.value))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)?;
        if self.unit == Unit::LogPOverLogQ {
            write!(f, " log p/log q")?;
        }
        Ok(())
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire {
            num: u64,
            den: u64,
            unit: Unit,
        }
        Wire { num: *self.value.numer(), den: *self.value.denom(), unit: self.unit }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            num: u64,
            den: u64,
            unit: Unit,
        }
        let w = Wire::deserialize(d)?;
        if w.den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Rate::new(w.num, w.den, w.unit))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rates {
    #[serde(rename = "R1")]
    pub r1: Rate,
    #[serde(rename = "R2")]
    pub r2: Rate,
    #[serde(rename = "RS")]
    pub rs: Rate,
    #[serde(rename = "RSsum")]
    pub rs_sum: Rate,
}

impl Rates {
    fn all(&self) -> [Rate; 4] {
        [self.r1, self.r2, self.rs, self.rs_sum]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerRate {
    #[serde(rename = "R1")]
    pub r1: bool,
    #[serde(rename = "R2")]
    pub r2: bool,
    #[serde(rename = "RS")]
    pub rs: bool,
    #[serde(rename = "RSsum")]
    pub rs_sum: bool,
}

impl PerRate {
    fn from_array(a: [bool; 4]) -> Self {
        Self { r1: a[0], r2: a[1], rs: a[2], rs_sum: a[3] }
    }

    pub fn all(&self) -> bool {
        self.r1 && self.r2 && self.rs && self.rs_sum
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateReport {
    pub measured: Rates,
    pub bounds: Rates,
    pub achieves_optimum: PerRate,
    /// Relay and server audits were clean, which is what licenses counting symbols.
    pub uniformity_verified: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCheck {
    pub in_region: PerRate,
    pub equal: PerRate,
}

/// Rates from symbol counts. Every client must upload the same number of
/// symbols; this is checked rather than assumed.
pub fn measured_rates(scheme: &Scheme) -> Result<RateReport> {
    let k = scheme.cfg.clients();
    let l = scheme.model_len as u64;
    let segments = scheme.segments() as u64;
    let uploads: Vec<u64> = (0..k).map(|c| scheme.topology.relays_of(c).len() as u64 * segments).collect();
    if uploads.windows(2).any(|w| w[0] != w[1]) {
        return Err(HsaError::ShapeMismatch(format!("clients upload unequal symbol counts {uploads:?}")));
    }
    let key_len = scheme.schedule.keys.first().map_or(0, |s| s.len() as u64);
    let measured = Rates {
        r1: Rate::new(uploads[0], l, Unit::One),
        r2: Rate::new(segments, l, Unit::One),
        rs: Rate::new(key_len, l, Unit::LogPOverLogQ),
        rs_sum: Rate::new(scheme.schedule.source_len as u64, l, Unit::LogPOverLogQ),
    };
    let bounds = region_bounds(k, scheme.topology.degree(), scheme.code.stragglers())?;
    let cmp = compare_all(&measured, &bounds);
    let achieves_optimum = PerRate::from_array(cmp.map(|c| c == Some(Ordering::Equal)));
    Ok(RateReport { measured, bounds, achieves_optimum, uniformity_verified: crate::audit::scheme_is_secure(scheme)? })
}

/// Lower bounds of the optimal region for `(K, d, s)`. `s = 0` is accepted.
pub fn region_bounds(clients: usize, degree: usize, stragglers: usize) -> Result<Rates> {
    if degree == 0 || degree >= clients || stragglers >= degree {
        return Err(HsaError::InvalidParams(format!(
            "need 0 <= s < d <= K-1, got K={clients}, d={degree}, s={stragglers}"
        )));
    }
    let (k, d, s) = (clients as u64, degree as u64, stragglers as u64);
    let per = Ratio::new(1, d - s).max(Ratio::new(1, k - 1));
    Ok(Rates {
        r1: Rate::new(d, d - s, Unit::One),
        r2: Rate { value: per, unit: Unit::One },
        rs: Rate { value: per, unit: Unit::LogPOverLogQ },
        rs_sum: Rate::new(d.max(k - d), d - s, Unit::LogPOverLogQ),
    })
}

/// `measured >= bound` for every rate, with equality flags.
pub fn check_in_region(report: &RateReport) -> RegionCheck {
    let cmp = compare_all(&report.measured, &report.bounds);
    RegionCheck {
        in_region: PerRate::from_array(cmp.map(|c| matches!(c, Some(Ordering::Equal | Ordering::Greater)))),
        equal: PerRate::from_array(cmp.map(|c| c == Some(Ordering::Equal))),
    }
}

fn compare_all(measured: &Rates, bounds: &Rates) -> [Option<Ordering>; 4] {
    let (m, b) = (measured.all(), bounds.all());
    std::array::from_fn(|i| m[i].compare(&b[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::SchemeParams;
    use crate::vectors::ExampleVectors;

    fn r(n: u64, d: u64) -> Ratio<u64> {
        Ratio::new(n, d)
    }

    #[test]
    fn example_rates() {
        let s = Scheme::from_example(&ExampleVectors::bundled().unwrap(), 0).unwrap();
        let rep = measured_rates(&s).unwrap();
        assert_eq!(rep.measured.r1.value, r(3, 2));
        assert_eq!(rep.measured.r2.value, r(1, 2));
        assert_eq!(rep.measured.rs.value, r(1, 2));
        assert_eq!(rep.measured.rs_sum.value, r(3, 2));
        assert_eq!(rep.measured.rs_sum.unit, Unit::LogPOverLogQ);
        assert!(rep.achieves_optimum.all());
        assert!(rep.uniformity_verified);
        let c = check_in_region(&rep);
        assert!(c.in_region.all() && c.equal.all());
    }

    #[test]
    fn scalar_segment_rates() {
        let s = Scheme::build(&SchemeParams::new(3, 2, 1, 3, 3), 1).unwrap();
        let m = measured_rates(&s).unwrap().measured;
        assert_eq!([m.r1.value, m.r2.value, m.rs.value, m.rs_sum.value], [r(2, 1), r(1, 1), r(1, 1), r(2, 1)]);
    }

    #[test]
    fn bounds_by_hand() {
        let b = region_bounds(5, 3, 1).unwrap();
        assert_eq!([b.r1.value, b.r2.value, b.rs.value, b.rs_sum.value], [r(3, 2), r(1, 2), r(1, 2), r(3, 2)]);
        assert_eq!(region_bounds(5, 3, 0).unwrap().r2.value, r(1, 3));
        assert_eq!(region_bounds(4, 2, 1).unwrap().rs_sum.value, r(2, 1));
        assert!(region_bounds(5, 5, 1).is_err());
        assert!(region_bounds(5, 3, 3).is_err());
    }

    #[test]
    fn extra_source_symbol_lifts_only_rssum() {
        let mut s = Scheme::from_example(&ExampleVectors::bundled().unwrap(), 0).unwrap();
        s.schedule.source_len += 1;
        let c = check_in_region(&measured_rates(&s).unwrap());
        assert!(c.in_region.all());
        assert_eq!(c.equal, PerRate { r1: true, r2: true, rs: true, rs_sum: false });
    }

    #[test]
    fn bounds_against_themselves() {
        let b = region_bounds(7, 4, 2).unwrap();
        let rep = RateReport {
            measured: b,
            bounds: b,
            achieves_optimum: PerRate::from_array([true; 4]),
            uniformity_verified: false,
        };
        assert!(check_in_region(&rep).equal.all());
    }

    #[test]
    fn units_never_mix() {
        assert_eq!(Rate::new(1, 2, Unit::One).compare(&Rate::new(1, 2, Unit::LogPOverLogQ)), None);
    }

    #[test]
    fn padded_model_exceeds_bounds() {
        let s = Scheme::build(&SchemeParams::new(5, 4, 1, 3, 4), 2).unwrap();
        let rep = measured_rates(&s).unwrap();
        assert_eq!(rep.measured.r2.value, r(2, 4));
        assert!(check_in_region(&rep).in_region.all());
        assert!(!rep.achieves_optimum.r2);
    }

    #[test]
    fn rate_wire_format() {
        let j = serde_json::to_string(&Rate::new(6, 4, Unit::LogPOverLogQ)).unwrap();
        assert_eq!(j, r#"{"num":3,"den":2,"unit":"log p / log q"}"#);
        assert_eq!(serde_json::from_str::<Rate>(&j).unwrap(), Rate::new(3, 2, Unit::LogPOverLogQ));
    }
}
