/// Double-double accumulator (Knuth two-sum); sums positive terms of very
/// different magnitudes without losing the small ones.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub const ZERO: DoubleDouble = DoubleDouble { hi: 0.0, lo: 0.0 };

    #[inline]
    pub fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        let lo = self.lo + err;
        let hi = s + lo;
        self.lo = lo - (hi - s);
        self.hi = hi;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.hi
    }

    /// `self - other` rounded to `f64`.
    pub fn diff(&self, other: &DoubleDouble) -> f64 {
        (self.hi - other.hi) + (self.lo - other.lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_small_terms() {
        let mut d = DoubleDouble::ZERO;
        d.add(1e20);
        for _ in 0..1000 {
            d.add(1.0);
        }
        d.add(-1e20);
        assert_eq!(d.value(), 1000.0);
    }
}
