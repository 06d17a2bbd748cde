//! Error-free accumulation of squared spends.
//!
//! Squares are split with a fused multiply-add into their rounded value and
//! the exact rounding error, and both parts are fed into a Neumaier-style
//! running sum. The represented value is `sum + carry`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub const fn zero() -> Self {
        Self {
            sum: 0.0,
            carry: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        // two-sum error term, valid for any ordering of magnitudes
        let bp = t - self.sum;
        let err = (self.sum - (t - bp)) + (x - bp);
        self.sum = t;
        self.carry += err;
    }

    /// Adds `x * x` without losing the rounding error of the product.
    #[inline]
    pub fn add_square(&mut self, x: f64) {
        let sq = x * x;
        let err = x.mul_add(x, -sq);
        self.add(sq);
        self.carry += err;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }

    /// `c - value`, evaluated with the carry applied last.
    #[inline]
    pub fn residual_from(&self, c: f64) -> f64 {
        (c - self.sum) - self.carry
    }

    pub fn parts(&self) -> (f64, f64) {
        (self.sum, self.carry)
    }
}
