//! Dense real polynomials stored in descending powers of `s`.

use nalgebra::{Complex, DMatrix};

pub type C64 = Complex<f64>;

/// Horner evaluation at a complex point.
pub fn eval(coeffs: &[f64], s: C64) -> C64 {
    coeffs
        .iter()
        .fold(C64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

pub fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    multiply_into(a, b, &mut out);
    out
}

/// `out = a * b`, reusing `out`'s allocation.
pub fn multiply_into(a: &[f64], b: &[f64], out: &mut Vec<f64>) {
    out.clear();
    if a.is_empty() || b.is_empty() {
        return;
    }
    out.resize(a.len() + b.len() - 1, 0.0);
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
}

/// Sum of two polynomials aligned at the constant term.
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (k, &c) in a.iter().rev().enumerate() {
        out[n - 1 - k] += c;
    }
    for (k, &c) in b.iter().rev().enumerate() {
        out[n - 1 - k] += c;
    }
    out
}

/// Drop leading zeros, keeping at least one coefficient.
pub fn trim_leading_zeros(coeffs: &[f64]) -> Vec<f64> {
    let first = coeffs
        .iter()
        .position(|&c| c != 0.0)
        .unwrap_or(coeffs.len().saturating_sub(1));
    if coeffs.is_empty() {
        vec![0.0]
    } else {
        coeffs[first..].to_vec()
    }
}

/// Roots of a polynomial with nonzero leading coefficient.
///
/// The polynomial is first rescaled (`s = sigma * z`) so that the companion
/// matrix has entries of order one, which matters for fitted actuator models
/// whose constant terms reach 1e22. Each eigenvalue is then polished with a
/// few Newton steps on the original polynomial.
pub fn roots(coeffs: &[f64]) -> Vec<C64> {
    let coeffs = trim_leading_zeros(coeffs);
    let n = coeffs.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = coeffs[0];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();

    // Geometric-mean scale from the largest root bound per power.
    let sigma = (1..=n)
        .map(|k| monic[k].abs().powf(1.0 / k as f64))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        companion[(i, i + 1)] = 1.0;
    }
    for k in 1..=n {
        companion[(n - 1, n - k)] = -monic[k] / sigma.powi(k as i32);
    }
    let scaled = companion.complex_eigenvalues();

    let derivative: Vec<f64> = monic[..n]
        .iter()
        .enumerate()
        .map(|(i, &c)| c * (n - i) as f64)
        .collect();

    scaled
        .iter()
        .map(|z| {
            let mut s = z * sigma;
            for _ in 0..4 {
                let f = eval(&monic, s);
                let df = eval(&derivative, s);
                if df.norm() == 0.0 {
                    break;
                }
                let next = s - f / df;
                if !next.re.is_finite() || !next.im.is_finite() {
                    break;
                }
                // Newton can wander for clustered roots; only accept improvements.
                if eval(&monic, next).norm() <= f.norm() {
                    s = next;
                } else {
                    break;
                }
            }
            s
        })
        .collect()
}

/// Real polynomial with the given roots and leading coefficient.
///
/// Complex roots must come in conjugate pairs; the imaginary residue of the
/// expansion is discarded.
pub fn from_roots(lead: f64, roots: &[C64]) -> Vec<f64> {
    let mut acc = vec![C64::new(lead, 0.0)];
    for &r in roots {
        let mut next = vec![C64::new(0.0, 0.0); acc.len() + 1];
        for (i, &c) in acc.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        acc = next;
    }
    acc.into_iter().map(|c| c.re).collect()
}
