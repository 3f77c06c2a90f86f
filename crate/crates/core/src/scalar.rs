//! Exact scalar helpers: rational powers, odd double factorials, and a
//! quadratic extension `q * sqrt(r)` for quantities whose squares are
//! rational (vertex-weight factors, Hermite normalizations).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// `base^exp` for integer exponents of either sign. `0^0 = 1`.
pub fn rat_pow(base: &BigRational, exp: i64) -> BigRational {
    if exp == 0 {
        return BigRational::one();
    }
    if base.is_zero() {
        assert!(exp > 0, "zero to a negative power");
        return BigRational::zero();
    }
    let p = base.pow(exp.unsigned_abs() as i32);
    if exp < 0 {
        p.recip()
    } else {
        p
    }
}

/// Odd double factorial, extended by `(-1)!! = 1`; zero for even or
/// negative-below(-1) arguments. Matches Gaussian moments via
/// `E[g^t] = (t-1)!!` for even `t`.
pub fn double_factorial_odd(t: i64) -> BigRational {
    if t == -1 {
        return BigRational::one();
    }
    if t < -1 || t % 2 == 0 {
        return BigRational::zero();
    }
    let mut acc = BigInt::one();
    let mut v = 1i64;
    while v <= t {
        acc *= BigInt::from(v);
        v += 2;
    }
    BigRational::from_integer(acc)
}

fn bigint_sqrt_exact(n: &BigInt) -> Option<BigInt> {
    if n.is_negative() {
        return None;
    }
    let r = n.sqrt();
    if &(&r * &r) == n {
        Some(r)
    } else {
        None
    }
}

/// Exact value `coeff * sqrt(radicand)` with `radicand >= 0` rational.
///
/// Closed under multiplication; conversion back to a rational succeeds
/// exactly when the radicand is a perfect square.
#[derive(Clone, Debug, PartialEq)]
pub struct SqrtRat {
    pub coeff: BigRational,
    pub radicand: BigRational,
}

impl SqrtRat {
    pub fn zero() -> Self {
        SqrtRat { coeff: BigRational::zero(), radicand: BigRational::one() }
    }

    pub fn one() -> Self {
        SqrtRat::from_rational(BigRational::one())
    }

    pub fn from_rational(q: BigRational) -> Self {
        SqrtRat { coeff: q, radicand: BigRational::one() }
    }

    pub fn sqrt_of(r: BigRational) -> Self {
        assert!(!r.is_negative(), "sqrt of negative rational");
        SqrtRat { coeff: BigRational::one(), radicand: r }.normalized()
    }

    /// `base^(half_exp / 2)` for a positive rational base.
    pub fn half_pow(base: &BigRational, half_exp: i64) -> Self {
        let whole = half_exp.div_euclid(2);
        let frac = half_exp.rem_euclid(2);
        let mut out = SqrtRat::from_rational(rat_pow(base, whole));
        if frac != 0 {
            out = out.mul(&SqrtRat::sqrt_of(base.clone()));
        }
        out
    }

    fn normalized(mut self) -> Self {
        if self.coeff.is_zero() {
            return SqrtRat::zero();
        }
        if self.radicand.is_zero() {
            return SqrtRat::zero();
        }
        // Pull perfect-square content out of the radicand when cheap.
        let num = self.radicand.numer().clone();
        let den = self.radicand.denom().clone();
        if let (Some(sn), Some(sd)) = (bigint_sqrt_exact(&num), bigint_sqrt_exact(&den)) {
            self.coeff *= BigRational::new(sn, sd);
            self.radicand = BigRational::one();
        }
        self
    }

    pub fn mul(&self, other: &SqrtRat) -> SqrtRat {
        SqrtRat {
            coeff: &self.coeff * &other.coeff,
            radicand: &self.radicand * &other.radicand,
        }
        .normalized()
    }

    pub fn mul_rat(&self, q: &BigRational) -> SqrtRat {
        SqrtRat { coeff: &self.coeff * q, radicand: self.radicand.clone() }.normalized()
    }

    pub fn is_zero(&self) -> bool {
        self.coeff.is_zero()
    }

    /// Exact rational value, when the radicand is a perfect square.
    pub fn to_rational(&self) -> Option<BigRational> {
        if self.coeff.is_zero() {
            return Some(BigRational::zero());
        }
        let sn = bigint_sqrt_exact(self.radicand.numer())?;
        let sd = bigint_sqrt_exact(self.radicand.denom())?;
        Some(&self.coeff * BigRational::new(sn, sd))
    }

    pub fn to_f64(&self) -> f64 {
        let c = self.coeff.to_f64().unwrap_or(f64::NAN);
        let r = self.radicand.to_f64().unwrap_or(f64::NAN);
        c * r.sqrt()
    }
}

pub fn rat_to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Parse an exact rational from "a/b", integer, decimal, or scientific
/// notation ("5e-13" becomes 5 / 10^13).
pub fn parse_rational(s: &str) -> crate::Result<BigRational> {
    let s = s.trim();
    let err = || crate::Error::Parse(format!("cannot parse rational: {s}"));
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().map_err(|_| err())?;
        let d: BigInt = den.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(BigRational::new(n, d));
    }
    let (mantissa, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i64>().map_err(|_| err())?),
        None => (s, 0i64),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    let digits = format!(
        "{}{}",
        if int_part.is_empty() || int_part == "-" { "0" } else { int_part },
        frac_part
    );
    let n: BigInt = digits.parse().map_err(|_| err())?;
    let ten = BigRational::from_integer(BigInt::from(10));
    Ok(BigRational::from_integer(n) * rat_pow(&ten, exp - frac_part.len() as i64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_factorials() {
        assert_eq!(double_factorial_odd(-1), rat_int(1));
        assert_eq!(double_factorial_odd(1), rat_int(1));
        assert_eq!(double_factorial_odd(3), rat_int(3));
        assert_eq!(double_factorial_odd(5), rat_int(15));
        assert_eq!(double_factorial_odd(4), rat_int(0));
    }

    #[test]
    fn sqrt_products_collapse() {
        let a = SqrtRat::half_pow(&rat(2, 1), 3); // 2^(3/2)
        let b = SqrtRat::half_pow(&rat(2, 1), 1); // 2^(1/2)
        let prod = a.mul(&b); // 2^2
        assert_eq!(prod.to_rational().unwrap(), rat_int(4));
        assert!(SqrtRat::half_pow(&rat(2, 1), 1).to_rational().is_none());
    }

    #[test]
    fn negative_half_powers() {
        let x = SqrtRat::half_pow(&rat(4, 1), -2);
        assert_eq!(x.to_rational().unwrap(), rat(1, 4));
        let y = SqrtRat::half_pow(&rat(9, 1), -1); // 1/3
        assert_eq!(y.to_rational().unwrap(), rat(1, 3));
    }
}
