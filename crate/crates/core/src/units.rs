use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const PPM: u64 = 1_000_000;
const GWEI_PER_ETH: u128 = 1_000_000_000;

/// A fraction in `[0, 1]` stored in parts per million.
///
/// All fee and penalty arithmetic goes through [`Rate::apply_floor`], so
/// results are exact integers.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rate {
    ppm: u32,
}

impl Rate {
    pub const ZERO: Rate = Rate { ppm: 0 };
    pub const ONE: Rate = Rate { ppm: PPM as u32 };

    pub fn from_ppm(ppm: u32) -> Option<Self> {
        (u64::from(ppm) <= PPM).then_some(Rate { ppm })
    }

    /// Rounds to the nearest part per million.
    pub fn from_fraction(f: f64) -> Option<Self> {
        if !f.is_finite() || !(0.0..=1.0).contains(&f) {
            return None;
        }
        Self::from_ppm((f * PPM as f64).round() as u32)
    }

    pub fn ppm(self) -> u32 {
        self.ppm
    }

    pub fn as_fraction(self) -> f64 {
        f64::from(self.ppm) / PPM as f64
    }

    /// `floor(self × amount)`.
    pub fn apply_floor(self, amount: u64) -> u64 {
        (u128::from(amount) * u128::from(self.ppm) / u128::from(PPM)) as u64
    }

    pub fn apply_floor_u128(self, amount: u128) -> u128 {
        // amount ≤ u128::MAX / 1e6 in practice; saturate instead of wrapping.
        amount.saturating_mul(u128::from(self.ppm)) / u128::from(PPM)
    }
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rate({})", self.as_fraction())
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_fraction())
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_fraction())
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = f64::deserialize(d)?;
        Rate::from_fraction(f)
            .ok_or_else(|| serde::de::Error::custom(format!("rate {f} outside [0, 1]")))
    }
}

impl FromStr for Rate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let f: f64 = s
            .trim()
            .parse()
            .map_err(|e| format!("invalid rate {s:?}: {e}"))?;
        Rate::from_fraction(f).ok_or_else(|| format!("rate {s} outside [0, 1]"))
    }
}

/// Simulated ether, held in gwei so that fractional penalties stay exact.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Eth(u128);

impl Eth {
    pub const ZERO: Eth = Eth(0);

    pub fn from_eth(whole: u64) -> Self {
        Eth(u128::from(whole) * GWEI_PER_ETH)
    }

    pub fn from_gwei(gwei: u128) -> Self {
        Eth(gwei)
    }

    pub fn gwei(self) -> u128 {
        self.0
    }

    pub fn scaled(self, rate: Rate) -> Eth {
        Eth(rate.apply_floor_u128(self.0))
    }

    pub fn saturating_sub(self, other: Eth) -> Eth {
        Eth(self.0.saturating_sub(other.0))
    }
}

impl fmt::Debug for Eth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self} ETH")
    }
}

impl fmt::Display for Eth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / GWEI_PER_ETH;
        let frac = self.0 % GWEI_PER_ETH;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let s = format!("{frac:09}");
            write!(f, "{whole}.{}", s.trim_end_matches('0'))
        }
    }
}
