//! Real nonsymmetric eigenvalues: balancing, reduction to upper Hessenberg
//! form by stabilized elementary similarity transforms, then the implicit
//! double-shift (Francis) QR iteration with Wilkinson-type shifts taken from
//! the trailing 2×2 block.

use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use crate::error::{Error, Result};

pub const MAX_EIG_DIM: usize = 256;

/// Relative subdiagonal size below which a block is deflated.
const DEFLATION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Eigenvalue>,
    pub iterations_used: usize,
}

impl Spectrum {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(Eigenvalue::modulus)
            .fold(0.0, f64::max)
    }

    /// Largest real part.
    pub fn abscissa(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn eig(a: &Matrix) -> Result<Spectrum> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "eig requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    if n > MAX_EIG_DIM {
        return Err(Error::invalid(format!(
            "eig supports dimension ≤ {MAX_EIG_DIM}, got {n}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::invalid("eig input is not finite"));
    }
    let mut h: Vec<Vec<f64>> = (0..n).map(|r| a.row(r).to_vec()).collect();
    balance(&mut h);
    reduce_to_hessenberg(&mut h);
    hessenberg_qr(h)
}

/// Parlett–Reinsch balancing by powers of two; leaves eigenvalues unchanged.
fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= g;
                    }
                    for row in a.iter_mut() {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

/// Gaussian elimination with pivoting, as similarity transforms.
fn reduce_to_hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    if n < 3 {
        return;
    }
    for m in 1..n - 1 {
        let mut x: f64 = 0.0;
        let mut i = m;
        for j in m..n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            a.swap(i, m);
            for row in a.iter_mut() {
                row.swap(i, m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        let t = y * a[m][j];
                        a[i][j] -= t;
                    }
                    for row in a.iter_mut() {
                        let t = y * row[i];
                        row[m] += t;
                    }
                }
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        for v in row.iter_mut().take(i.saturating_sub(1)) {
            *v = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

fn hessenberg_qr(mut a: Vec<Vec<f64>>) -> Result<Spectrum> {
    let n = a.len();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut found = vec![false; n];
    let max_sweeps = 100 * n * n;
    let mut sweeps = 0usize;

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0usize;
        loop {
            let nu = nn as usize;
            // Look for a single small subdiagonal element.
            let mut l = nu;
            while l >= 1 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() <= DEFLATION_TOL * s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                found[nu] = true;
                nn -= 1;
                break;
            }
            let mut y = a[nu - 1][nu - 1];
            let mut w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = x + z;
                    wr[nu] = if z != 0.0 { x - w / z } else { x + z };
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                found[nu] = true;
                found[nu - 1] = true;
                nn -= 2;
                break;
            }

            if sweeps >= max_sweeps {
                let eigenvalues = (0..n)
                    .filter(|&i| found[i])
                    .map(|i| Eigenvalue {
                        re: wr[i],
                        im: wi[i],
                    })
                    .collect();
                return Err(Error::EigNoConvergence {
                    sweeps,
                    partial: Box::new(Spectrum {
                        eigenvalues,
                        iterations_used: sweeps,
                    }),
                });
            }
            if its > 0 && its.is_multiple_of(10) {
                // Exceptional shift.
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            sweeps += 1;

            // Find two consecutive small subdiagonal elements.
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }

            // Double QR step on rows l..=nn, columns m..=nn.
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k != nu - 1 { a[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k != nu - 1 {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        let mut pp = x * row[k] + y * row[k + 1];
                        if k != nu - 1 {
                            pp += z * row[k + 2];
                            row[k + 2] -= pp * r;
                        }
                        row[k + 1] -= pp * q;
                        row[k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }

    Ok(Spectrum {
        eigenvalues: wr
            .into_iter()
            .zip(wi)
            .map(|(re, im)| Eigenvalue { re, im })
            .collect(),
        iterations_used: sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(s: &Spectrum) -> Vec<(f64, f64)> {
        let mut v: Vec<_> = s.eigenvalues.iter().map(|e| (e.re, e.im)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn diagonal() {
        let s = eig(&Matrix::diagonal(&[2.0, 3.0])).unwrap();
        let v = sorted(&s);
        assert!((v[0].0 - 2.0).abs() < 1e-12 && (v[1].0 - 3.0).abs() < 1e-12);
        assert!(v.iter().all(|e| e.1 == 0.0));
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let v = sorted(&eig(&a).unwrap());
        assert!(v[0].0.abs() < 1e-12 && (v[0].1 + 1.0).abs() < 1e-12);
        assert!(v[1].0.abs() < 1e-12 && (v[1].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jordan_block() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        for (re, im) in sorted(&eig(&a).unwrap()) {
            assert!((re - 1.0).abs() < 1e-12 && im == 0.0);
        }
    }

    #[test]
    fn companion_matrix_roots() {
        // x³ − 6x² + 11x − 6 = (x−1)(x−2)(x−3)
        let a = Matrix::from_rows(&[
            vec![6.0, -11.0, 6.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let v = sorted(&eig(&a).unwrap());
        for (got, want) in v.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got.0 - want).abs() < 1e-9, "{got:?}");
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(eig(&Matrix::zeros(2, 3)).is_err());
        assert!(eig(&Matrix::zeros(257, 257)).is_err());
    }

    #[test]
    fn empty_and_scalar() {
        assert!(eig(&Matrix::zeros(0, 0)).unwrap().eigenvalues.is_empty());
        let s = eig(&Matrix::diagonal(&[-4.5])).unwrap();
        assert_eq!(s.eigenvalues, vec![Eigenvalue { re: -4.5, im: 0.0 }]);
    }
}
