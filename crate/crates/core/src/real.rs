//! Scalar abstraction shared by the field, the compositor and the optimizers.
//!
//! Training runs in `f32`, gradient checks in `f64`, and exact
//! Hessian-vector products run the ordinary reverse pass over [`Dual`]
//! numbers (forward-over-reverse).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Send
    + Sync
    + Debug
    + Default
    + PartialOrd
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;
    /// Primal value as `f64` (the real part for dual numbers).
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::from_f64(1.0)
    }

    #[inline]
    fn is_finite(self) -> bool {
        self.to_f64().is_finite()
    }

    #[inline]
    fn relu(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }

    #[inline]
    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    #[inline]
    fn softplus(self) -> Self {
        self.relu() + (Self::one() + (-self.abs()).exp()).ln()
    }

    /// Logistic function, evaluated without overflow.
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// A is `m x k`, B is `k x n`, C is `m x n`. `f32`/`f64` dispatch to an
    /// optimized kernel; other scalars use a plain loop. When `beta` is zero
    /// the previous contents of C are ignored.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    ) {
        naive_gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

#[allow(clippy::too_many_arguments)]
fn naive_gemm<R: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: R,
    a: &[R],
    rsa: usize,
    csa: usize,
    b: &[R],
    rsb: usize,
    csb: usize,
    beta: R,
    c: &mut [R],
    rsc: usize,
    csc: usize,
) {
    let zero_beta = beta == R::zero();
    for i in 0..m {
        for j in 0..n {
            let mut acc = R::zero();
            for p in 0..k {
                acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
            }
            let dst = &mut c[i * rsc + j * csc];
            *dst = if zero_beta {
                alpha * acc
            } else {
                alpha * acc + beta * *dst
            };
        }
    }
}

macro_rules! impl_primitive {
    ($t:ty, $kernel:ident) => {
        impl Real for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() >= last_index(m, k, rsa, csa));
                assert!(b.len() >= last_index(k, n, rsb, csb));
                assert!(c.len() >= last_index(m, n, rsc, csc));
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    matrixmultiply::$kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

impl_primitive!(f32, sgemm);
impl_primitive!(f64, dgemm);

/// First-order dual number `re + eps·ε` with `ε² = 0`.
///
/// Comparisons look only at the real part, so piecewise functions (ReLU,
/// the stable softplus/sigmoid branches) pick the same branch as `f64`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl PartialEq for Dual {
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl PartialOrd for Dual {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let re = self.re / o.re;
        Self::new(re, (self.eps - re * o.eps) / o.re)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for Dual {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Real for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::new(v, 0.0)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self.re
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, self.eps * e)
    }
    #[inline]
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.eps / (2.0 * s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_derivatives_match_closed_forms() {
        let x = Dual::new(0.7, 1.0);
        assert!((x.exp().eps - 0.7f64.exp()).abs() < 1e-15);
        assert!((x.ln().eps - 1.0 / 0.7).abs() < 1e-15);
        let s = 1.0 / (1.0 + (-0.7f64).exp());
        assert!((x.softplus().eps - s).abs() < 1e-15);
        assert!((x.sigmoid().eps - s * (1.0 - s)).abs() < 1e-15);
        let neg = Dual::new(-3.0, 1.0);
        let s = 1.0 / (1.0 + 3.0f64.exp());
        assert!((neg.softplus().eps - s).abs() < 1e-15);
        assert!((neg.sigmoid().eps - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn stable_activations_do_not_overflow() {
        assert_eq!(1000.0f32.sigmoid(), 1.0);
        assert_eq!((-1000.0f32).sigmoid(), 0.0);
        assert_eq!(1000.0f32.softplus(), 1000.0);
        assert!((0.0f64.softplus() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn optimized_gemm_agrees_with_loop() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut c1 = vec![1.0; 15];
        let mut c2 = c1.clone();
        // A: 3x4 row-major, B^T with B stored 5x4 row-major.
        f64::gemm(3, 4, 5, 1.5, &a, 4, 1, &b, 1, 4, 0.5, &mut c1, 5, 1);
        naive_gemm(3, 4, 5, 1.5, &a, 4, 1, &b, 1, 4, 0.5, &mut c2, 5, 1);
        for (x, y) in c1.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
