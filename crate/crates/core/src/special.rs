//! Special functions and small numerical kernels used by the lattice sums and
//! the dispersion solver.

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Scaled complementary error function `exp(x²) erfc(x)`, accurate for
/// large positive `x` where `erfc` underflows.
pub fn erfcx(x: f64) -> f64 {
    if x < 10.0 {
        return (x * x).exp() * erfc(x);
    }
    // asymptotic series; the first omitted term is below 1e-17 relative
    let inv2 = 1.0 / (2.0 * x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..8 {
        term *= -((2 * n - 1) as f64) * inv2;
        sum += term;
    }
    sum / (x * std::f64::consts::PI.sqrt())
}

/// `exp(a) · erfc(b)` without overflow or underflow in the intermediate.
#[inline]
pub fn exp_erfc(a: f64, b: f64) -> f64 {
    if b > 5.0 {
        (a - b * b).exp() * erfcx(b)
    } else {
        a.exp() * erfc(b)
    }
}

/// Entire exponential integral `Ein(x) = ∫₀ˣ (1 − e^{−t})/t dt`
/// `= E₁(x) + ln x + γ` for `x ≥ 0`.
pub fn ein(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 1.0 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for n in 1..40 {
            term *= -x / n as f64;
            let s = -term / n as f64;
            sum += s;
            if s.abs() < 1e-18 * sum.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        sum
    } else {
        e1(x) + x.ln() + EULER_GAMMA
    }
}

/// Exponential integral `E₁(x) = ∫ₓ^∞ e^{−t}/t dt`, `x > 0`.
pub fn e1(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 1.0 {
        return ein(x) - x.ln() - EULER_GAMMA;
    }
    // modified Lentz evaluation of the continued fraction
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..200 {
        let a = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Brent's bracketed root finder. Returns `None` when `f(a)` and `f(b)` have
/// the same sign.
pub fn brent<F: Fn(f64) -> f64>(
    f: F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Some(b)
}
