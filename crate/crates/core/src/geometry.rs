//! Small dense primitives shared by every module: points, symmetric 2×2
//! tensors, local quadratic polynomials and the quadrature rules.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Midpoint of a segment. Every refinement path computes new vertices through
/// this function so that coordinates are reproducible bit for bit.
#[inline]
pub fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Signed area of the triangle (a, b, c); positive for counter-clockwise order.
#[inline]
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * cross(sub(b, a), sub(c, a))
}

/// Hashable identity of a point's exact bit pattern.
#[inline]
pub fn point_bits(p: Point) -> [u64; 2] {
    // +0.0 and -0.0 must coincide
    [(p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits()]
}

/// Symmetric 2×2 matrix, stored as (xx, xy, yy).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Frobenius inner product `A : B`.
    pub fn ddot(&self, o: &Sym2) -> f64 {
        self.xx * o.xx + 2.0 * self.xy * o.xy + self.yy * o.yy
    }

    pub fn frobenius(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn apply(&self, v: Point) -> Point {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.xx * s, self.xy * s, self.yy * s)
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }
}

/// A quadratic polynomial written around an expansion point:
/// `p(x) = value + grad·d + ½ dᵀ hess d` with `d = x - center`.
///
/// Centering on the element keeps the coefficients well scaled on tiny
/// elements deep in a refinement hierarchy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quadratic {
    pub center: Point,
    pub value: f64,
    pub grad: Point,
    pub hess: Sym2,
}

impl Quadratic {
    pub fn zero(center: Point) -> Self {
        Quadratic { center, ..Default::default() }
    }

    pub fn eval(&self, x: Point) -> f64 {
        let d = sub(x, self.center);
        let hd = self.hess.apply(d);
        self.value + dot(self.grad, d) + 0.5 * dot(d, hd)
    }

    pub fn gradient(&self, x: Point) -> Point {
        let d = sub(x, self.center);
        let hd = self.hess.apply(d);
        [self.grad[0] + hd[0], self.grad[1] + hd[1]]
    }

    /// Same polynomial expanded around another point.
    pub fn recentered(&self, c: Point) -> Quadratic {
        Quadratic { center: c, value: self.eval(c), grad: self.gradient(c), hess: self.hess }
    }

    /// `self + s * other`, expressed around `self.center`.
    pub fn axpy(&self, s: f64, other: &Quadratic) -> Quadratic {
        let o = if other.center == self.center { *other } else { other.recentered(self.center) };
        Quadratic {
            center: self.center,
            value: self.value + s * o.value,
            grad: [self.grad[0] + s * o.grad[0], self.grad[1] + s * o.grad[1]],
            hess: self.hess.add(&o.hess.scale(s)),
        }
    }

    pub fn scaled(&self, s: f64) -> Quadratic {
        Quadratic {
            center: self.center,
            value: self.value * s,
            grad: [self.grad[0] * s, self.grad[1] * s],
            hess: self.hess.scale(s),
        }
    }
}

/// 6-point symmetric triangle rule, exact for polynomials of degree 4.
/// Entries are (barycentric λ0, λ1, λ2, weight) with weights summing to one.
pub const TRI_RULE_6: [([f64; 3], f64); 6] = {
    const A: f64 = 0.445_948_490_915_964_9;
    const WA: f64 = 0.223_381_589_678_011_47;
    const B: f64 = 0.091_576_213_509_770_74;
    const WB: f64 = 0.109_951_743_655_321_87;
    [
        ([A, A, 1.0 - 2.0 * A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([1.0 - 2.0 * A, A, A], WA),
        ([B, B, 1.0 - 2.0 * B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([1.0 - 2.0 * B, B, B], WB),
    ]
};

/// 3-point Gauss–Legendre rule on [0, 1] (degree 5), as (t, weight).
pub const EDGE_RULE_3: [(f64, f64); 3] = {
    const S: f64 = 0.387_298_334_620_741_7; // ½·sqrt(3/5)
    [(0.5 - S, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + S, 5.0 / 18.0)]
};

/// Physical quadrature points and weights (already multiplied by the area)
/// of [`TRI_RULE_6`] on a triangle.
pub fn triangle_points(v: &[Point; 3]) -> [(Point, f64); 6] {
    let area = signed_area(v[0], v[1], v[2]).abs();
    let mut out = [([0.0; 2], 0.0); 6];
    for (q, (l, w)) in TRI_RULE_6.iter().enumerate() {
        let x = l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0];
        let y = l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1];
        out[q] = ([x, y], w * area);
    }
    out
}

/// 5-point Gauss-Legendre rule on [0, 1].
const GAUSS_5: [(f64, f64); 5] = {
    const X1: f64 = 0.538_469_310_105_683_1;
    const X2: f64 = 0.906_179_845_938_664;
    const W0: f64 = 0.568_888_888_888_888_9;
    const W1: f64 = 0.478_628_670_499_366_5;
    const W2: f64 = 0.236_926_885_056_189_1;
    [
        (0.5 * (1.0 - X2), 0.5 * W2),
        (0.5 * (1.0 - X1), 0.5 * W1),
        (0.5, 0.5 * W0),
        (0.5 * (1.0 + X1), 0.5 * W1),
        (0.5 * (1.0 + X2), 0.5 * W2),
    ]
};

/// 25-point collapsed Gauss rule, exact for polynomials of degree 8.
pub fn triangle_points_deg8(v: &[Point; 3]) -> [(Point, f64); 25] {
    let area = signed_area(v[0], v[1], v[2]).abs();
    let mut out = [([0.0; 2], 0.0); 25];
    for (i, (s, ws)) in GAUSS_5.iter().enumerate() {
        for (j, (t, wt)) in GAUSS_5.iter().enumerate() {
            // Duffy map of the unit square onto the reference triangle
            let (l1, l2) = (s, t * (1.0 - s));
            let l0 = 1.0 - l1 - l2;
            let x = l0 * v[0][0] + l1 * v[1][0] + l2 * v[2][0];
            let y = l0 * v[0][1] + l1 * v[1][1] + l2 * v[2][1];
            out[5 * i + j] = ([x, y], 2.0 * area * ws * wt * (1.0 - s));
        }
    }
    out
}

/// Physical points and weights (multiplied by the length) of [`EDGE_RULE_3`].
pub fn edge_points(a: Point, b: Point) -> [(Point, f64); 3] {
    let len = norm(sub(b, a));
    let mut out = [([0.0; 2], 0.0); 3];
    for (q, (t, w)) in EDGE_RULE_3.iter().enumerate() {
        out[q] = ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], w * len);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: i32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn triangle_rule_integrates_quartics() {
        // ∫_T x^a y^b = a! b! / (a+b+2)! on the unit reference triangle
        let v = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for a in 0..=4 {
            for b in 0..=(4 - a) {
                let q: f64 = triangle_points(&v).iter().map(|(x, w)| w * x[0].powi(a) * x[1].powi(b)).sum();
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                assert!((q - exact).abs() < 1e-15, "{a} {b}: {q} vs {exact}");
            }
        }
        let q5: f64 = triangle_points(&v).iter().map(|(x, w)| w * x[0].powi(5)).sum();
        assert!((q5 - factorial(5) / factorial(7)).abs() > 1e-8, "rule should not be exact at degree 5");
    }

    #[test]
    fn collapsed_rule_integrates_degree_eight() {
        let v = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for a in 0..=8 {
            for b in 0..=(8 - a) {
                let q: f64 = triangle_points_deg8(&v).iter().map(|(x, w)| w * x[0].powi(a) * x[1].powi(b)).sum();
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                assert!((q - exact).abs() < 1e-15, "{a} {b}: {q} vs {exact}");
            }
        }
        let w = [[1.0, 1.0], [3.0, 1.5], [0.5, 2.0]];
        let total: f64 = triangle_points_deg8(&w).iter().map(|p| p.1).sum();
        assert!((total - signed_area(w[0], w[1], w[2])).abs() < 1e-14);
    }

    #[test]
    fn edge_rule_integrates_quintics() {
        let (a, b) = ([0.0, 1.0], [2.0, 1.0]);
        let q: f64 = edge_points(a, b).iter().map(|(x, w)| w * x[0].powi(5)).sum();
        assert!((q - 64.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_recentering_preserves_values() {
        let p = Quadratic { center: [0.3, -0.2], value: 1.5, grad: [0.4, -2.0], hess: Sym2::new(1.0, 0.25, -3.0) };
        let r = p.recentered([5.0, 7.0]);
        for x in [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]] {
            assert!((p.eval(x) - r.eval(x)).abs() < 1e-11);
            let (g1, g2) = (p.gradient(x), r.gradient(x));
            assert!((g1[0] - g2[0]).abs() < 1e-12 && (g1[1] - g2[1]).abs() < 1e-12);
        }
    }
}
