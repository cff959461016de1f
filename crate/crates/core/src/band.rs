//! Symmetric banded matrices and the shifted `LDLᵀ` factorization used for
//! Sylvester inertia counts and shift-invert solves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Symmetric matrix with half-bandwidth `bw`, lower band stored row by row:
/// entry `(i, i - d)` lives at `data[i * (bw + 1) + d]` for `d <= bw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBand { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut a = SymBand::zeros(diag.len(), 0);
        for (i, &d) in diag.iter().enumerate() {
            a.set(i, i, d);
        }
        a
    }

    /// Lower band of a dense symmetric matrix; entries outside the band must vanish.
    pub fn from_dense(m: &DMatrix<f64>, bw: usize) -> Self {
        let n = m.nrows();
        let mut a = SymBand::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                a.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        a
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        (d <= self.bw).then(|| i * (self.bw + 1) + d)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside the band");
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside the band");
        self.data[s] += v;
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            y[i] += row[0] * x[i];
            for d in 1..=self.bw.min(i) {
                let v = row[d];
                y[i] += v * x[i - d];
                y[i - d] += v * x[i];
            }
        }
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// Principal submatrix on the contiguous index range `lo..hi`.
    pub fn principal(&self, lo: usize, hi: usize) -> SymBand {
        assert!(lo <= hi && hi <= self.n);
        let mut out = SymBand::zeros(hi - lo, self.bw);
        for i in lo..hi {
            for j in i.saturating_sub(self.bw).max(lo)..=i {
                out.set(i - lo, j - lo, self.get(i, j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Nonzero entries `(i, j, v)` with `i >= j`, row-major.
    pub fn lower_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (i.saturating_sub(self.bw)..=i)
                .rev()
                .map(move |j| (i, j, self.get(i, j)))
                .filter(|&(_, _, v)| v != 0.0)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Failure of a pivot-free factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPivot {
    pub index: usize,
}

/// `A - shift * M = L D Lᵀ` with unit lower-banded `L`.
#[derive(Debug, Clone)]
pub struct BandLdlt {
    n: usize,
    bw: usize,
    /// `l[i * bw + (d - 1)]` is `L(i, i - d)` for `1 <= d <= bw`.
    l: Vec<f64>,
    d: Vec<f64>,
}

/// Pivot magnitude below which the factorization is declared singular,
/// relative to the largest entry of the shifted matrix.
const PIVOT_FLOOR: f64 = 1e-300;

impl BandLdlt {
    /// Factor `A - shift * M` without pivoting.
    pub fn factor(a: &SymBand, m: &SymBand, shift: f64) -> Result<Self, ZeroPivot> {
        assert_eq!(a.n, m.n);
        let n = a.n;
        let bw = a.bw.max(m.bw);
        let entry = |i: usize, j: usize| a.get(i, j) - shift * m.get(i, j);
        if bw == 1 {
            return Self::factor_tridiagonal(n, entry);
        }
        let mut l = vec![0.0; n * bw.max(1)];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..i {
                // L(i,j) d_j = C(i,j) - Σ_{k<j} L(i,k) d_k L(j,k)
                let mut s = entry(i, j);
                for k in j0.max(j.saturating_sub(bw))..j {
                    s -= l[i * bw + (i - k - 1)] * d[k] * l[j * bw + (j - k - 1)];
                }
                l[i * bw + (i - j - 1)] = s / d[j];
            }
            let mut s = entry(i, i);
            for k in j0..i {
                let lik = l[i * bw + (i - k - 1)];
                s -= lik * lik * d[k];
            }
            if !(s.abs() > PIVOT_FLOOR) {
                return Err(ZeroPivot { index: i });
            }
            d[i] = s;
        }
        Ok(BandLdlt { n, bw, l, d })
    }

    fn factor_tridiagonal(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self, ZeroPivot> {
        let mut l = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let mut s = entry(i, i);
            if i > 0 {
                let off = entry(i, i - 1);
                let li = off / d[i - 1];
                l[i] = li;
                s -= li * off;
            }
            if !(s.abs() > PIVOT_FLOOR) {
                return Err(ZeroPivot { index: i });
            }
            d[i] = s;
        }
        Ok(BandLdlt { n, bw: 1, l, d })
    }

    /// Number of negative pivots, equal to the number of eigenvalues of the
    /// pencil below the shift (Sylvester's law of inertia).
    pub fn negative_count(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    /// Solve `(A - shift M) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * bw + (i - k - 1)] * x[k];
            }
            x[i] = s;
        }
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi /= di;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.l[k * bw + (k - i - 1)] * x[k];
            }
            x[i] = s;
        }
        x
    }
}

/// Number of eigenvalues of the pencil `(A, M)` strictly below `shift`.
///
/// A zero pivot means the shift sits (numerically) on an eigenvalue; the
/// count is then taken at a shift perturbed by a few ulps, alternating sides
/// and growing, which changes the count only for eigenvalues within that
/// perturbation of `shift`.
pub fn inertia_below(a: &SymBand, m: &SymBand, shift: f64) -> usize {
    let mut s = shift;
    let mut step = 4.0 * f64::EPSILON * shift.abs().max(f64::MIN_POSITIVE);
    for attempt in 0..64 {
        match BandLdlt::factor(a, m, s) {
            Ok(f) => return f.negative_count(),
            Err(_) => {
                s = if attempt % 2 == 0 { shift - step } else { shift + step };
                step *= 4.0;
            }
        }
    }
    panic!("no regular shift found near {shift}");
}
