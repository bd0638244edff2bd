//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s
//! carrying about 32 significant digits.
//!
//! Only what the finite-difference oracle needs is provided: the four
//! arithmetic operations, `exp`, `ln`, `tanh`, `sigmoid` and a stable
//! softplus. Algorithms follow the QD library (Hida, Li, Bailey).

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

const LN_2: DD = DD {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DD {
    pub const ZERO: DD = DD { hi: 0.0, lo: 0.0 };
    pub const ONE: DD = DD { hi: 1.0, lo: 0.0 };

    pub fn new(v: f64) -> DD {
        DD { hi: v, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> DD {
        let (hi, lo) = quick_two_sum(hi, lo);
        DD { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    fn scale_pow2(self, k: i32) -> DD {
        // split so neither factor overflows for |k| up to ~2000
        let a = 2f64.powi(k / 2);
        let b = 2f64.powi(k - k / 2);
        DD {
            hi: self.hi * a * b,
            lo: self.lo * a * b,
        }
    }

    pub fn square(self) -> DD {
        self * self
    }

    pub fn exp(self) -> DD {
        if self.hi > 709.0 {
            return DD::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return DD::ZERO;
        }
        let k = (self.hi / LN_2.hi).round();
        // |r| <= ln2 / 2, then scaled down by 2^10 so the series converges fast
        let r = (self - LN_2 * DD::new(k)).scale_pow2(-10);
        let mut term = r;
        let mut sum = r;
        for i in 2..=10 {
            term = term * r / DD::new(i as f64);
            sum = sum + term;
        }
        // expm1(2x) = 2 expm1(x) + expm1(x)^2
        for _ in 0..10 {
            sum = sum * DD::new(2.0) + sum.square();
        }
        (sum + DD::ONE).scale_pow2(k as i32)
    }

    /// Natural log by two Newton steps on `exp`.
    pub fn ln(self) -> DD {
        if self.hi <= 0.0 {
            return DD::new(f64::NAN);
        }
        let mut x = DD::new(self.hi.ln());
        for _ in 0..2 {
            x = x + self * (-x).exp() - DD::ONE;
        }
        x
    }

    pub fn tanh(self) -> DD {
        if self.hi < 0.0 {
            return -(-self).tanh();
        }
        let e = (self * DD::new(-2.0)).exp();
        (DD::ONE - e) / (DD::ONE + e)
    }

    pub fn sigmoid(self) -> DD {
        if self.hi >= 0.0 {
            DD::ONE / (DD::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (DD::ONE + e)
        }
    }

    /// `(1/beta) ln(1 + exp(beta * omega))`.
    pub fn softplus(self, beta: f64) -> DD {
        let z = self * DD::new(beta);
        if z.hi > 0.0 {
            self + (DD::ONE + (-z).exp()).ln() / DD::new(beta)
        } else {
            (DD::ONE + z.exp()).ln() / DD::new(beta)
        }
    }
}

impl From<f64> for DD {
    fn from(v: f64) -> DD {
        DD::new(v)
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, b: DD) -> DD {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        DD::norm(s, e + f)
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, b: DD) -> DD {
        self + (-b)
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, b: DD) -> DD {
        let (p, e) = two_prod(self.hi, b.hi);
        DD::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, b: DD) -> DD {
        let q1 = self.hi / b.hi;
        let r = self - b * DD::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * DD::new(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        DD { hi: q1, lo: q2 } + DD::new(q3)
    }
}

impl PartialOrd for DD {
    fn partial_cmp(&self, other: &DD) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            o => o,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(got: DD, want: (f64, f64)) -> f64 {
        let diff = (got
            - DD {
                hi: want.0,
                lo: want.1,
            })
        .to_f64();
        (diff / want.0).abs()
    }

    // references computed with 60-digit decimal arithmetic
    #[test]
    fn exp_reference() {
        let cases = [
            (0.3127, (1.3671113361006124, 3.9578513118905905e-17)),
            (-1.7, (0.18268352405273466, -5.430659906894856e-18)),
            (2.9, (18.17414536944306, -1.0319935825855902e-15)),
            (-0.0041, (0.995908393524931, 3.194012429658769e-17)),
            (30.5, (17619017951355.633, -0.001400339015239068)),
            (-50.25, (1.5021118919431522e-22, 1.2292264144650188e-39)),
        ];
        for (x, want) in cases {
            let r = rel(DD::new(x).exp(), want);
            assert!(r < 1e-30, "exp({x}): {r:e}");
        }
        assert_eq!(DD::ZERO.exp(), DD::ONE);
    }

    #[test]
    fn ln_reference() {
        let cases = [
            (0.3127, (-1.1625110145183415, -3.172058705016325e-17)),
            (1.7, (0.5306282510621704, -5.076541175216476e-18)),
            (2.9, (1.0647107369924282, 7.091773787274429e-17)),
            (0.0041, (-5.496768305271875, -8.187380503900982e-17)),
            (1e-9, (-20.72326583694641, -6.485730665985714e-16)),
            (123.5, (4.816241156068032, -1.6105375184037457e-16)),
        ];
        for (x, want) in cases {
            let r = rel(DD::new(x).ln(), want);
            assert!(r < 1e-30, "ln({x}): {r:e}");
        }
    }

    #[test]
    fn tanh_reference() {
        let cases = [
            (0.3127, (0.3028913916954469, -5.0530656893995695e-18)),
            (-1.7, (-0.935409070603099, -6.160665782786146e-18)),
            (2.9, (0.9939631673505831, 5.218429969538943e-17)),
            (-0.0041, (-0.004099977026487808, 3.5317438533510844e-19)),
        ];
        for (x, want) in cases {
            let r = rel(DD::new(x).tanh(), want);
            assert!(r < 1e-29, "tanh({x}): {r:e}");
        }
    }

    #[test]
    fn arithmetic_is_exact_beyond_f64() {
        let third = DD::ONE / DD::new(3.0);
        let back = third * DD::new(3.0) - DD::ONE;
        assert!(back.to_f64().abs() < 1e-31);
        // 1 + 2^-60 is not representable in f64 but is in double-double
        let tiny = DD::new(2f64.powi(-60));
        assert_eq!((DD::ONE + tiny - DD::ONE).to_f64(), 2f64.powi(-60));
    }

    #[test]
    fn sigmoid_and_softplus_match_f64() {
        for x in [-30.0, -2.5, 0.0, 0.7, 12.0] {
            let s = DD::new(x).sigmoid().to_f64();
            assert!((s - crate::math::sigmoid(x)).abs() <= 1e-15 * s);
            for beta in [1.0, 10.0] {
                let g = DD::new(x).softplus(beta).to_f64();
                let want = crate::math::softplus_g(x, beta).unwrap();
                assert!(
                    (g - want).abs() <= 1e-15 * want.abs().max(1e-300),
                    "{x} {beta}"
                );
            }
        }
    }
}
