use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::error::{Error, Result};

/// Exact rational used for ε and φ so that every threshold and every
/// classification is computed in integer arithmetic.
pub type Frac = Ratio<i64>;

/// Parses `0.05`, `1/20`, `1` or `5e-2` into an exact fraction.
pub fn parse_frac(s: &str) -> Result<Frac> {
    let s = s.trim();
    let bad = || Error::Config(format!("cannot parse fraction {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Frac::new(n, d));
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let mut num: i64 = digits.parse().map_err(|_| bad())?;
    let mut den: i64 = 1;
    let scale = frac.len() as i32 - exp;
    if scale >= 0 {
        den = 10i64.checked_pow(scale as u32).ok_or_else(bad)?;
    } else {
        num = num.checked_mul(10i64.checked_pow((-scale) as u32).ok_or_else(bad)?).ok_or_else(bad)?;
    }
    Ok(Frac::new(num, den))
}

pub fn to_f64(f: Frac) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

/// `max(1, ⌈frac · value / divisor⌉)`, computed exactly.
pub fn ceil_threshold(frac: Frac, value: u64, divisor: u64) -> u64 {
    let num = *frac.numer() as i128 * value as i128;
    let den = *frac.denom() as i128 * divisor as i128;
    let q = (num + den - 1).div_euclid(den);
    (q.max(1)) as u64
}

/// `⌈frac · value / divisor⌉` without the floor of one.
pub fn ceil_frac(frac: Frac, value: u64, divisor: u64) -> u64 {
    let num = *frac.numer() as i128 * value as i128;
    let den = *frac.denom() as i128 * divisor as i128;
    (num + den - 1).div_euclid(den).max(0) as u64
}

/// `⌊frac · value / divisor⌋`
pub fn floor_frac(frac: Frac, value: u64, divisor: u64) -> u64 {
    let num = *frac.numer() as i128 * value as i128;
    let den = *frac.denom() as i128 * divisor as i128;
    num.div_euclid(den).max(0) as u64
}

/// Whether `lhs ≤ frac · rhs`, exactly.
pub fn le_frac(lhs: i128, frac: Frac, rhs: i128) -> bool {
    lhs * *frac.denom() as i128 <= *frac.numer() as i128 * rhs
}

/// Whether `lhs ≥ frac · rhs`, exactly.
pub fn ge_frac(lhs: i128, frac: Frac, rhs: i128) -> bool {
    lhs * *frac.denom() as i128 >= *frac.numer() as i128 * rhs
}

/// Which tracker a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackerKind {
    HeavyHitters,
    Quantile,
    AllQuantiles,
}

impl TrackerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackerKind::HeavyHitters => "hh",
            TrackerKind::Quantile => "quantile",
            TrackerKind::AllQuantiles => "allq",
        }
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hh" => Ok(TrackerKind::HeavyHitters),
            "quantile" => Ok(TrackerKind::Quantile),
            "allq" => Ok(TrackerKind::AllQuantiles),
            _ => Err(Error::Config(format!("unknown tracker {s:?}"))),
        }
    }
}

/// Exact local state at every site, or small-space sketches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Exact,
    Sketch,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "sketch" => Ok(Mode::Sketch),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Sketch => "sketch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackerConfig {
    pub k: usize,
    pub eps: Frac,
    pub phi: Frac,
    /// Universe size; items are `1..=u`.
    pub u: u64,
    /// Forward the first ⌈k/ε⌉ arrivals verbatim before the protocol starts.
    pub warmup: bool,
}

impl TrackerConfig {
    pub fn new(k: usize, eps: Frac, phi: Frac, u: u64) -> Result<Self> {
        let cfg = TrackerConfig { k, eps, phi, u, warmup: true };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Convenience constructor from decimal strings.
    pub fn parse(k: usize, eps: &str, phi: &str, u: u64) -> Result<Self> {
        Self::new(k, parse_frac(eps)?, parse_frac(phi)?, u)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = Frac::from_integer(0);
        let one = Frac::from_integer(1);
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.eps <= zero || self.eps >= one {
            return Err(Error::Config(format!("eps must lie in (0,1), got {}", self.eps)));
        }
        if self.phi < zero || self.phi > one {
            return Err(Error::Config(format!("phi must lie in [0,1], got {}", self.phi)));
        }
        if self.u == 0 {
            return Err(Error::Config("universe size must be positive".into()));
        }
        Ok(())
    }

    /// Heavy-hitter tracking additionally needs φ ≥ ε.
    pub fn validate_hh(&self) -> Result<()> {
        self.validate()?;
        if self.phi < self.eps {
            return Err(Error::Config(format!(
                "heavy hitters need phi >= eps (phi = {}, eps = {})",
                self.phi, self.eps
            )));
        }
        Ok(())
    }

    pub fn eps_f64(&self) -> f64 {
        to_f64(self.eps)
    }

    pub fn phi_f64(&self) -> f64 {
        to_f64(self.phi)
    }

    /// Number of arrivals forwarded verbatim before the protocol starts.
    pub fn warmup_len(&self) -> u64 {
        if !self.warmup {
            return 0;
        }
        ceil_frac(self.eps.recip(), self.k as u64, 1)
    }

    /// Same configuration with a different ε.
    pub fn with_eps(&self, eps: Frac) -> Self {
        TrackerConfig { eps, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_and_ratios() {
        assert_eq!(parse_frac("0.05").unwrap(), Frac::new(1, 20));
        assert_eq!(parse_frac("1/3").unwrap(), Frac::new(1, 3));
        assert_eq!(parse_frac("1").unwrap(), Frac::from_integer(1));
        assert_eq!(parse_frac("5e-2").unwrap(), Frac::new(1, 20));
        assert_eq!(parse_frac(".5").unwrap(), Frac::new(1, 2));
        assert!(parse_frac("abc").is_err());
        assert!(parse_frac("1/0").is_err());
    }

    #[test]
    fn thresholds() {
        // ⌈0.3·100/6⌉ = 5
        assert_eq!(ceil_threshold(parse_frac("0.3").unwrap(), 100, 6), 5);
        assert_eq!(ceil_threshold(parse_frac("0.1").unwrap(), 3, 6), 1);
        assert_eq!(ceil_threshold(parse_frac("0.1").unwrap(), 1600, 16), 10);
    }

    #[test]
    fn validation() {
        assert!(TrackerConfig::parse(1, "0.1", "0.2", 10).is_err());
        assert!(TrackerConfig::parse(2, "0", "0.2", 10).is_err());
        assert!(TrackerConfig::parse(2, "1", "0.2", 10).is_err());
        assert!(TrackerConfig::parse(2, "0.1", "1.2", 10).is_err());
        let c = TrackerConfig::parse(2, "0.3", "0.2", 10).unwrap();
        assert!(c.validate_hh().is_err());
        let c = TrackerConfig::parse(4, "0.1", "0.2", 10).unwrap();
        assert_eq!(c.warmup_len(), 40);
        let c = TrackerConfig::parse(3, "0.07", "0.2", 10).unwrap();
        assert_eq!(c.warmup_len(), 43);
    }
}
