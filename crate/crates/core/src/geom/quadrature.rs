//! Adaptive Gauss-Legendre quadrature of the unit tangent along a curve whose
//! heading is a quadratic polynomial of arclength.

/// Absolute tolerance on each position component, in meters.
pub(crate) const POSITION_TOLERANCE: f64 = 1e-10;

const MAX_DEPTH: u32 = 48;

// 8-point rule on [-1, 1].
const NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// `psi(u) = psi0 + k0 * u + c * u^2`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct QuadraticHeading {
    pub psi0: f64,
    pub k0: f64,
    pub c: f64,
}

impl QuadraticHeading {
    #[inline]
    pub fn at(&self, u: f64) -> f64 {
        self.psi0 + u * (self.k0 + self.c * u)
    }

    fn rule(&self, a: f64, b: f64) -> [f64; 2] {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut sx = 0.0;
        let mut sy = 0.0;
        for (node, w) in NODES.iter().zip(WEIGHTS.iter()) {
            let (s1, c1) = self.at(mid - half * node).sin_cos();
            let (s2, c2) = self.at(mid + half * node).sin_cos();
            sx += w * (c1 + c2);
            sy += w * (s1 + s2);
        }
        [sx * half, sy * half]
    }

    /// Displacement `int_a^b (cos psi(u), sin psi(u)) du`.
    pub fn displacement(&self, a: f64, b: f64) -> [f64; 2] {
        if b == a {
            return [0.0, 0.0];
        }
        let whole = self.rule(a, b);
        self.adapt(a, b, whole, POSITION_TOLERANCE, 0)
    }

    fn adapt(&self, a: f64, b: f64, whole: [f64; 2], tol: f64, depth: u32) -> [f64; 2] {
        let m = 0.5 * (a + b);
        let left = self.rule(a, m);
        let right = self.rule(m, b);
        let refined = [left[0] + right[0], left[1] + right[1]];
        let err = (refined[0] - whole[0]).abs().max((refined[1] - whole[1]).abs());
        if err <= tol || depth >= MAX_DEPTH {
            return refined;
        }
        let l = self.adapt(a, m, left, 0.5 * tol, depth + 1);
        let r = self.adapt(m, b, right, 0.5 * tol, depth + 1);
        [l[0] + r[0], l[1] + r[1]]
    }
}
