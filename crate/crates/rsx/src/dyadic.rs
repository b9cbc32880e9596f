//! Exact dyadic-rational arithmetic for the bit-encoding constants.
//!
//! A payload of k bits is packed into a single constant b whose binary
//! expansion carries one payload bit per position plus a guard bit at the
//! bottom. Multiplying b by 2^i and dropping the integer part is a pure
//! shift-and-mask on the numerator, so the argument of sin(2*pi*b*2^i) can be
//! reduced into [0, 1) without ever materializing 2^i as a float. Floats
//! enter only after the reduced argument has been folded into [0, 1/4] by
//! exact reflections.
//!
//! Error budget: after exact reduction the sine is evaluated in double
//! precision, so the returned value carries a relative error of a few 1e-16.
//! The consumer divides by 2*sin(2^-k), amplifying that error by roughly
//! 2^(k-1)/pi. For k up to 38 the amplified error stays below 1e-4, and the
//! band structure of the encoding leaves a factor-pi margin on top of that,
//! which is why downstream bit recovery is exact at every tested scale. For
//! larger k the evaluator switches to a scaled mantissa/exponent form instead
//! of raw doubles; see the evaluator module.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact binary fraction numerator/2^frac_bits, restricted to [0, 1).
///
/// frac_bits is structural, not normalized away: an encoding constant for a
/// k-bit payload always carries exactly k+2 fractional bits, and mod-1
/// reduction preserves the count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DyadicRational {
    num: BigUint,
    frac_bits: u64,
}

impl DyadicRational {
    pub fn new(num: BigUint, frac_bits: u64) -> Result<Self> {
        if num.bits() > frac_bits {
            return Err(Error::Invalid(format!(
                "dyadic numerator needs {} bits but only {} fractional bits were given; the value must stay below 1",
                num.bits(),
                frac_bits
            )));
        }
        Ok(Self { num, frac_bits })
    }

    pub fn zero() -> Self {
        Self { num: BigUint::zero(), frac_bits: 2 }
    }

    pub fn numerator(&self) -> &BigUint {
        &self.num
    }

    pub fn frac_bits(&self) -> u64 {
        self.frac_bits
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// Nearest-even conversion to double. Values below the subnormal range
    /// flush to zero, which is fine for every caller: anything that small is
    /// handled in scaled form before conversion.
    pub fn to_f64(&self) -> f64 {
        let nbits = self.num.bits();
        if nbits == 0 {
            return 0.0;
        }
        if nbits <= 53 {
            let m = self.num.to_u64().expect("fits in 53 bits") as f64;
            return ldexp(m, -(self.frac_bits as i64));
        }
        let shift = nbits - 54;
        let top = (&self.num >> shift).to_u64().expect("54 bits fit in u64");
        let sticky = {
            let mask = (BigUint::one() << shift) - BigUint::one();
            !(&self.num & mask).is_zero()
        };
        let mut mant = top >> 1;
        if top & 1 == 1 && (sticky || mant & 1 == 1) {
            mant += 1;
        }
        ldexp(mant as f64, shift as i64 + 1 - self.frac_bits as i64)
    }
}

/// Scale by a power of two using exact multiplications. Overflow saturates to
/// infinity and deep underflow to zero, matching IEEE semantics.
pub(crate) fn ldexp(m: f64, e: i64) -> f64 {
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    let mut x = m;
    let mut e = e.clamp(-4200, 4200) as i32;
    while e > 0 {
        let step = e.min(1000);
        x *= 2f64.powi(step);
        e -= step;
    }
    while e < 0 {
        let step = e.max(-1000);
        x *= 2f64.powi(step);
        e -= step;
    }
    x
}

/// Packs a payload into its encoding constant: bit i of the payload occupies
/// binary place i+1 below the point, and a guard 1 occupies place k+2. The
/// result has numerator 2*(payload as an integer) + 1 over 2^(k+2).
pub fn encode_bits(bits: &[u8]) -> Result<DyadicRational> {
    if bits.is_empty() {
        return Err(Error::Invalid("payload must contain at least one bit".into()));
    }
    let mut packed = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b > 1 {
            return Err(Error::Invalid(format!("payload entry {b} is not a bit")));
        }
        packed[i / 8] |= b << (7 - i % 8);
    }
    let int = BigUint::from_bytes_be(&packed) >> (8 * packed.len() - bits.len());
    let num = (int << 1u8) | BigUint::one();
    DyadicRational::new(num, bits.len() as u64 + 2)
}

/// Exact fractional part of b * 2^i. Keeps the low frac_bits - i bits of the
/// numerator and shifts them up, so the fractional bit count never changes.
pub fn reduce_mod_1(b: &DyadicRational, i: u64) -> DyadicRational {
    if i == 0 {
        return b.clone();
    }
    if i >= b.frac_bits {
        return DyadicRational { num: BigUint::zero(), frac_bits: b.frac_bits };
    }
    let keep = b.frac_bits - i;
    let mask = (BigUint::one() << keep) - BigUint::one();
    let num = (&b.num & &mask) << i;
    DyadicRational { num, frac_bits: b.frac_bits }
}

/// Splits t in [0, 1) into a sign and a reflected remainder u in [0, 1/4]
/// with sin(2*pi*t) = sign * sin(2*pi*u). Every reflection is exact.
pub fn fold_quarter(t: &DyadicRational) -> (i8, DyadicRational) {
    let mut num = t.num.clone();
    let mut fb = t.frac_bits;
    if fb < 2 {
        num <<= (2 - fb) as usize;
        fb = 2;
    }
    let quadrant = (&num >> (fb - 2)).to_u8().expect("quadrant in 0..4");
    let mask = (BigUint::one() << (fb - 2)) - BigUint::one();
    let r = &num & &mask;
    let quarter = BigUint::one() << (fb - 2);
    let (sign, u_num) = match quadrant {
        0 => (1, r),
        1 => (1, quarter - r),
        2 => (-1, r),
        _ => (-1, quarter - r),
    };
    let u = DyadicRational { num: u_num, frac_bits: fb };
    (sign, u)
}

/// sin(2*pi*t) with all argument reduction done exactly; the float sine only
/// ever sees arguments in [0, pi/2].
pub fn sine_2pi(t: &DyadicRational) -> f64 {
    let (sign, u) = fold_quarter(t);
    if u.is_zero() {
        return 0.0;
    }
    let s = (2.0 * std::f64::consts::PI * u.to_f64()).sin();
    sign as f64 * s
}

/// Saturation threshold sin(2^-k) of the recovery ramps, as a function of
/// the payload bit count k. Beyond 26 bits the sine of 2^-k equals 2^-k to
/// double precision, so the power is returned directly; beyond the double
/// exponent range the threshold flushes to zero and the corresponding ramp
/// slope becomes infinite, which the weight format represents faithfully.
pub fn threshold_from_bits(bits: u64) -> f64 {
    if bits <= 26 {
        2f64.powi(-(bits as i32)).sin()
    } else {
        ldexp(1.0, -(bits as i64))
    }
}

/// The value 2^exponent kept symbolic. Exponents come from code indices,
/// which are capped well below u64 range by the geometry module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolicPow2 {
    pub exponent: u64,
}

impl SymbolicPow2 {
    /// Materializes as a double for demonstration paths; saturates to
    /// infinity past the representable exponent range.
    pub fn to_f64(self) -> f64 {
        if self.exponent > 1023 {
            f64::INFINITY
        } else {
            2f64.powi(self.exponent as i32)
        }
    }
}

/// Wraps a code index as the symbolic power it selects.
pub fn pow2_add(code_index: u64) -> SymbolicPow2 {
    SymbolicPow2 { exponent: code_index }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dy(num: u64, fb: u64) -> DyadicRational {
        DyadicRational::new(BigUint::from(num), fb).unwrap()
    }

    #[test]
    fn threshold_values() {
        assert_eq!(threshold_from_bits(1), 0.5f64.sin());
        assert_eq!(threshold_from_bits(26), 2f64.powi(-26).sin());
        assert_eq!(threshold_from_bits(27), 2f64.powi(-27));
        assert_eq!(threshold_from_bits(1024), 2f64.powi(-1024));
        assert_eq!(threshold_from_bits(2000), 0.0);
        for k in 1..200 {
            assert!(threshold_from_bits(k) >= threshold_from_bits(k + 1));
        }
    }

    #[test]
    fn encode_examples() {
        let b = encode_bits(&[1, 0]).unwrap();
        assert_eq!(b.numerator(), &BigUint::from(5u8));
        assert_eq!(b.frac_bits(), 4);
        assert_eq!(b.to_f64(), 0.3125);

        let b = encode_bits(&[0]).unwrap();
        assert_eq!(b.numerator(), &BigUint::from(1u8));
        assert_eq!(b.frac_bits(), 3);
        assert_eq!(b.to_f64(), 0.125);

        let b = encode_bits(&[1, 1, 1]).unwrap();
        assert_eq!(b.to_f64(), 0.46875);
    }

    #[test]
    fn encode_rejects_junk() {
        assert!(encode_bits(&[]).is_err());
        assert!(encode_bits(&[2]).is_err());
    }

    #[test]
    fn reduce_examples() {
        let b = encode_bits(&[1, 0]).unwrap();
        assert_eq!(reduce_mod_1(&b, 1).to_f64(), 0.625);
        assert_eq!(reduce_mod_1(&b, 0), b);

        let b = encode_bits(&[1, 1, 1]).unwrap();
        assert_eq!(reduce_mod_1(&b, 3).to_f64(), 0.75);
        assert_eq!(reduce_mod_1(&b, 3).frac_bits(), b.frac_bits());
    }

    #[test]
    fn reduce_far_shift_is_zero() {
        let b = encode_bits(&[1, 0, 1]).unwrap();
        let r = reduce_mod_1(&b, 99);
        assert!(r.is_zero());
        assert_eq!(r.frac_bits(), b.frac_bits());
    }

    #[test]
    fn sine_quarter_points() {
        assert_eq!(sine_2pi(&dy(1, 2)), 1.0);
        assert_eq!(sine_2pi(&dy(0, 2)), 0.0);
        assert_eq!(sine_2pi(&dy(2, 2)), 0.0);
        let v = sine_2pi(&dy(5, 3));
        assert!((v + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15, "sin at 5/8 = {v}");
        assert_eq!(sine_2pi(&dy(3, 2)), -1.0);
    }

    #[test]
    fn fold_reflects_exactly() {
        let (s, u) = fold_quarter(&dy(5, 3));
        assert_eq!(s, -1);
        assert_eq!(u.to_f64(), 0.125);
        let (s, u) = fold_quarter(&dy(3, 3));
        assert_eq!(s, 1);
        assert_eq!(u.to_f64(), 0.125);
    }

    #[test]
    fn pow2_examples() {
        assert_eq!(pow2_add(1).to_f64(), 2.0);
        assert_eq!(pow2_add(4).to_f64(), 16.0);
        assert_eq!(pow2_add(6).to_f64(), 64.0);
        assert!(pow2_add(1024).to_f64().is_infinite());
    }

    #[test]
    fn to_f64_rounds_to_nearest() {
        let exact = dy((1u64 << 54) - 1, 60);
        let expected = ((1u64 << 54) - 1) as f64 / 2f64.powi(60);
        assert_eq!(exact.to_f64(), expected);
        let tiny = DyadicRational::new(BigUint::one(), 3000).unwrap();
        assert_eq!(tiny.to_f64(), 0.0);
    }
}
