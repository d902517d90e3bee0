//! Integer-only arithmetic used by every fabric kernel.
//!
//! Coefficients are scaled by 256 and every equation divides once at the end,
//! truncating toward zero the way C integer division does.

use std::fmt;

use thiserror::Error;

/// Fixed-point scale shared by all conversion coefficients.
pub const SCALE: i32 = 256;

/// Largest coefficient magnitude a fabric multiplier accepts.
pub const MAX_COEFFICIENT: i32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("coefficient {0} outside [-{MAX_COEFFICIENT}, {MAX_COEFFICIENT}]")]
pub struct CoefficientRange(pub i32);

/// A coefficient interpreted as `value / 256`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ScaledCoefficient(i16);

impl ScaledCoefficient {
    pub fn new(value: i32) -> Result<Self, CoefficientRange> {
        if value.abs() > MAX_COEFFICIENT {
            return Err(CoefficientRange(value));
        }
        Ok(Self(value as i16))
    }

    /// Compile-time constructor for the built-in tables.
    pub const fn from_const(value: i32) -> Self {
        assert!(value >= -MAX_COEFFICIENT && value <= MAX_COEFFICIENT);
        Self(value as i16)
    }

    pub const fn value(self) -> i32 {
        self.0 as i32
    }
}

impl fmt::Display for ScaledCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `c0*s0 + c1*s1 + c2*s2`, exact in 32 bits for 9-bit samples.
#[inline]
pub fn mul_acc3(coeffs: [ScaledCoefficient; 3], samples: [i32; 3]) -> i32 {
    coeffs.iter().zip(samples).map(|(c, s)| c.value() * s).sum()
}

/// `x / 256` rounded toward zero.
///
/// Written as a biased arithmetic shift since the fabric has no divider:
/// negative numerators get 255 added before the shift.
#[inline]
pub fn div256_trunc(x: i32) -> i32 {
    (x + ((x >> 31) & 0xff)) >> 8
}

#[inline]
pub fn clamp_u8(x: i32) -> u8 {
    x.clamp(0, 255) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coeffs(a: i32, b: i32, c: i32) -> [ScaledCoefficient; 3] {
        [a, b, c].map(|v| ScaledCoefficient::new(v).unwrap())
    }

    #[test]
    fn mul_acc3_examples() {
        assert_eq!(mul_acc3(coeffs(77, 150, 29), [100, 50, 25]), 15925);
        assert_eq!(mul_acc3(coeffs(77, 150, 29), [0, 0, 0]), 0);
        assert_eq!(mul_acc3(coeffs(153, -70, -82), [255, 255, 255]), 255);
    }

    #[test]
    fn div256_examples() {
        assert_eq!(div256_trunc(15925), 62);
        assert_eq!(div256_trunc(0), 0);
        // floor would give -82
        assert_eq!(div256_trunc(-20910), -81);
        assert_eq!(div256_trunc(-255), 0);
        assert_eq!(div256_trunc(-256), -1);
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_u8(300), 255);
        assert_eq!(clamp_u8(-5), 0);
        assert_eq!(clamp_u8(128), 128);
    }

    #[test]
    fn coefficient_range() {
        assert!(ScaledCoefficient::new(436).is_ok());
        assert!(ScaledCoefficient::new(-512).is_ok());
        assert_eq!(ScaledCoefficient::new(513), Err(CoefficientRange(513)));
    }

    proptest! {
        #[test]
        fn div_matches_c_division(x in -(1i32 << 24)..(1i32 << 24)) {
            prop_assert_eq!(div256_trunc(x), x / 256);
        }

        #[test]
        fn div_is_odd(x in -(1i32 << 24)..(1i32 << 24)) {
            prop_assert_eq!(div256_trunc(x), -div256_trunc(-x));
        }

        #[test]
        fn div_is_shift_on_nonnegative(x in 0i32..(1 << 20)) {
            prop_assert_eq!(div256_trunc(x), x >> 8);
        }

        #[test]
        fn mul_acc3_is_linear(
            c in prop::array::uniform3(-512i32..=512),
            a in prop::array::uniform3(-256i32..=255),
            b in prop::array::uniform3(-256i32..=255),
        ) {
            let c = c.map(|v| ScaledCoefficient::new(v).unwrap());
            let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            prop_assert_eq!(mul_acc3(c, sum), mul_acc3(c, a) + mul_acc3(c, b));
        }
    }
}
