//! Small fixed-size vector helpers.

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm2(a: Vec3) -> f64 {
    dot(a, a)
}

/// Returns `a / |a|`, or the zero vector when `a` is zero.
#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        [0.0; 3]
    }
}

/// Signed volume of the tetrahedron `(a, b, c, d)`.
#[inline]
pub fn tet_signed_volume(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    dot(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}

/// Gradients of the four linear barycentric basis functions of a tetrahedron
/// together with its signed volume.
///
/// The gradients satisfy `Σ_i ∇φ_i = 0` and `∇φ_i · (x_j - x_0) = δ_ij - δ_i0`.
pub fn tet_basis_gradients(p: &[Vec3; 4]) -> ([Vec3; 4], f64) {
    let e1 = sub(p[1], p[0]);
    let e2 = sub(p[2], p[0]);
    let e3 = sub(p[3], p[0]);
    let c23 = cross(e2, e3);
    let det = dot(e1, c23);
    let inv = 1.0 / det;
    let g1 = scale(c23, inv);
    let g2 = scale(cross(e3, e1), inv);
    let g3 = scale(cross(e1, e2), inv);
    let g0 = scale(add(add(g1, g2), g3), -1.0);
    ([g0, g1, g2, g3], det / 6.0)
}
