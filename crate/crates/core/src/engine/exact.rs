//! Order-independent floating-point summation.
//!
//! Partials are kept as a list of non-overlapping doubles whose exact sum is
//! the exact sum of everything added (Shewchuk's algorithm, as used by
//! Python's `math.fsum`). Rounding happens once, at the end, so the result
//! does not depend on how the input was split into partitions.

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
    /// Set if an intermediate overflowed; the naive running total is used then.
    overflow: Option<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        if let Some(total) = &mut self.overflow {
            *total += x;
            return;
        }
        let mut x = x;
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        if !x.is_finite() {
            let naive: f64 = self.partials[..i].iter().sum::<f64>() + x;
            self.overflow = Some(naive);
            self.partials.clear();
            return;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    /// Folds another accumulator in; exact, so merge order is irrelevant.
    pub fn merge(&mut self, other: &ExactSum) {
        if let Some(t) = other.overflow {
            let mine = self.value();
            self.overflow = Some(mine + t);
            self.partials.clear();
            return;
        }
        for p in &other.partials {
            self.add(*p);
        }
    }

    /// The correctly rounded sum.
    pub fn value(&self) -> f64 {
        if let Some(t) = self.overflow {
            return t;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // round-half-even correction when the tail points the same way
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}
