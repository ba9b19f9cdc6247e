//! Banded LU factorization with partial pivoting, in compact row storage.
//!
//! Row `i` of an n x n matrix with `kl` subdiagonals and `ku` superdiagonals
//! stores the entries `A[i, i-kl] .. A[i, i+ku]` contiguously. Partial
//! pivoting swaps adjacent-ish rows only, so the factorization stays banded
//! with `kl` multipliers per column.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BandedError {
    #[error("zero pivot in column {column}: matrix is singular to working precision")]
    Singular { column: usize },
}

/// A square banded matrix in compact row storage.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major `n x (kl + ku + 1)`; entry (i, k) holds `A[i, i - kl + k]`.
    rows: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        assert!(n > 0);
        BandedMatrix {
            n,
            kl,
            ku,
            rows: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn offset(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n {
            return None;
        }
        let lo = i.saturating_sub(self.kl);
        if j < lo || j > i + self.ku {
            return None;
        }
        Some(i * self.width() + (j + self.kl - i))
    }

    /// Entry (i, j); zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.offset(i, j).map_or(0.0, |k| self.rows[k])
    }

    /// Sets entry (i, j). Panics outside the band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self
            .offset(i, j)
            .unwrap_or_else(|| panic!("({i}, {j}) outside band kl={} ku={}", self.kl, self.ku));
        self.rows[k] = value;
    }

    /// Adds to entry (i, j). Panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let k = self
            .offset(i, j)
            .unwrap_or_else(|| panic!("({i}, {j}) outside band kl={} ku={}", self.kl, self.ku));
        self.rows[k] += value;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (i, out_i) in out.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *out_i = (lo..=hi)
                .map(|j| self.rows[i * self.width() + (j + self.kl - i)] * x[j])
                .sum();
        }
        out
    }

    /// Factors `P A = L U` with partial pivoting.
    pub fn lu(&self) -> Result<BandedLu, BandedError> {
        let n = self.n;
        let kl = self.kl;
        let mm = self.width();
        let mut upper = vec![0.0; n * mm];
        let mut lower = vec![0.0; n * kl.max(1)];
        let mut pivots = vec![0usize; n];

        // Left-justify the first kl rows: row i has its diagonal in slot kl,
        // but elimination wants the leftmost in-band entry in slot 0.
        for i in 0..n {
            let src = &self.rows[i * mm..(i + 1) * mm];
            let dst = &mut upper[i * mm..(i + 1) * mm];
            if i < kl {
                let shift = kl - i;
                dst[..mm - shift].copy_from_slice(&src[shift..]);
            } else {
                dst.copy_from_slice(src);
            }
        }

        let mut reach = kl.min(n); // one past the last row that column k can touch
        for k in 0..n {
            if reach < n {
                reach += 1;
            }
            let mut pivot = upper[k * mm];
            let mut pivot_row = k;
            for j in (k + 1)..reach {
                if upper[j * mm].abs() > pivot.abs() {
                    pivot = upper[j * mm];
                    pivot_row = j;
                }
            }
            pivots[k] = pivot_row;
            if pivot == 0.0 {
                return Err(BandedError::Singular { column: k });
            }
            if pivot_row != k {
                for j in 0..mm {
                    upper.swap(k * mm + j, pivot_row * mm + j);
                }
            }
            for i in (k + 1)..reach {
                let factor = upper[i * mm] / upper[k * mm];
                lower[k * kl.max(1) + (i - k - 1)] = factor;
                for j in 1..mm {
                    upper[i * mm + j - 1] = upper[i * mm + j] - factor * upper[k * mm + j];
                }
                upper[i * mm + mm - 1] = 0.0;
            }
        }

        Ok(BandedLu {
            n,
            kl,
            mm,
            upper,
            lower,
            pivots,
        })
    }
}

/// The factored form of a [`BandedMatrix`].
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    mm: usize,
    upper: Vec<f64>,
    lower: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, mm) = (self.n, self.kl, self.mm);
        let mut reach = kl.min(n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            if reach < n {
                reach += 1;
            }
            for i in (k + 1)..reach {
                b[i] -= self.lower[k * kl.max(1) + (i - k - 1)] * b[k];
            }
        }
        let mut used = 1;
        for i in (0..n).rev() {
            let mut sum = b[i];
            for k in 1..used {
                sum -= self.upper[i * mm + k] * b[k + i];
            }
            b[i] = sum / self.upper[i * mm];
            if used < mm {
                used += 1;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
