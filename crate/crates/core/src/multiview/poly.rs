use nalgebra::{DMatrix, Schur};

/// Real roots of `c[0] + c[1] x + ... + c[n] xⁿ`, from companion-matrix
/// eigenvalues polished by Newton iterations.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut degree = coeffs.len() - 1;
    while degree > 0 && coeffs[degree].abs() <= 1e-14 * scale {
        degree -= 1;
    }
    if degree == 0 {
        return Vec::new();
    }
    let c = &coeffs[..=degree];
    let lead = c[degree];
    let roots: Vec<f64> = if degree == 1 {
        vec![-c[0] / c[1]]
    } else {
        let mut comp = DMatrix::<f64>::zeros(degree, degree);
        for i in 1..degree {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..degree {
            comp[(i, degree - 1)] = -c[i] / lead;
        }
        let Some(schur) = Schur::try_new(comp, f64::EPSILON, 500) else {
            return Vec::new();
        };
        schur
            .complex_eigenvalues()
            .iter()
            .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
            .map(|z| z.re)
            .collect()
    };
    let eval = |x: f64| {
        let mut v = 0.0;
        let mut d = 0.0;
        for &ci in c.iter().rev() {
            d = d * x + v;
            v = v * x + ci;
        }
        (v, d)
    };
    let mut out: Vec<f64> = roots
        .into_iter()
        .map(|mut x| {
            for _ in 0..8 {
                let (v, d) = eval(x);
                if d == 0.0 || v == 0.0 {
                    break;
                }
                let step = v / d;
                x -= step;
                if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .filter(|x| x.is_finite())
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Dense polynomial helpers in one variable, coefficients lowest degree first.
pub(crate) fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub(crate) fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .collect()
}

pub(crate) fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}
