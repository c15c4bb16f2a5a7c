//! Quadrature rules on the reference triangle and on intervals.

/// Point of a triangle rule in barycentric coordinates with its weight.
/// Weights are normalized to sum to one; multiply by the triangle area.
#[derive(Debug, Clone, Copy)]
pub struct TriPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

const A1: f64 = 0.445_948_490_915_964_886_32;
const W1: f64 = 0.223_381_589_678_011_465_70;
const A2: f64 = 0.091_576_213_509_770_743_46;
const W2: f64 = 0.109_951_743_655_321_867_64;

/// 6-point rule, exact for polynomials of degree 4.
pub const TRI_ORDER4: [TriPoint; 6] = [
    TriPoint { bary: [A1, A1, 1.0 - 2.0 * A1], weight: W1 },
    TriPoint { bary: [A1, 1.0 - 2.0 * A1, A1], weight: W1 },
    TriPoint { bary: [1.0 - 2.0 * A1, A1, A1], weight: W1 },
    TriPoint { bary: [A2, A2, 1.0 - 2.0 * A2], weight: W2 },
    TriPoint { bary: [A2, 1.0 - 2.0 * A2, A2], weight: W2 },
    TriPoint { bary: [1.0 - 2.0 * A2, A2, A2], weight: W2 },
];

/// 3-point Gauss-Legendre rule on [0, 1] as (abscissa, weight).
pub const GAUSS3_UNIT: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// 5-point Gauss-Legendre rule on [0, 1], exact up to degree 9.
pub const GAUSS5_UNIT: [(f64, f64); 5] = [
    (0.046_910_077_030_668_004, 0.118_463_442_528_094_54),
    (0.230_765_344_947_158_45, 0.239_314_335_249_683_23),
    (0.5, 0.284_444_444_444_444_44),
    (0.769_234_655_052_841_6, 0.239_314_335_249_683_23),
    (0.953_089_922_969_332, 0.118_463_442_528_094_54),
];
