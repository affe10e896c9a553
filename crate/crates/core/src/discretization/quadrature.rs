//! Tensor-product Gauss-Legendre quadrature on axis-aligned boxes.

use crate::tensor_fields::Point3;

/// Nodes and weights on [-1, 1].
pub fn gauss_1d(order: usize) -> &'static [(f64, f64)] {
    const O1: [(f64, f64); 1] = [(0.0, 2.0)];
    const O2: [(f64, f64); 2] = [
        (-0.577_350_269_189_625_8, 1.0),
        (0.577_350_269_189_625_8, 1.0),
    ];
    const O3: [(f64, f64); 3] = [
        (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
        (0.0, 0.888_888_888_888_888_9),
        (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    ];
    const O4: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    ];
    const O5: [(f64, f64); 5] = [
        (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
        (0.0, 0.568_888_888_888_888_9),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
        (0.906_179_845_938_664, 0.236_926_885_056_189_08),
    ];
    match order {
        1 => &O1,
        2 => &O2,
        3 => &O3,
        4 => &O4,
        5 => &O5,
        _ => panic!("gauss order {} not tabulated", order),
    }
}

/// Tensor-product points and weights over [min, max]³-style boxes.
pub fn gauss_box(min: [f64; 3], max: [f64; 3], order: usize) -> Vec<(Point3, f64)> {
    let rule = gauss_1d(order);
    let half = [
        0.5 * (max[0] - min[0]),
        0.5 * (max[1] - min[1]),
        0.5 * (max[2] - min[2]),
    ];
    let mid = [
        0.5 * (max[0] + min[0]),
        0.5 * (max[1] + min[1]),
        0.5 * (max[2] + min[2]),
    ];
    let mut out = Vec::with_capacity(rule.len().pow(3));
    for &(ga, wa) in rule {
        for &(gb, wb) in rule {
            for &(gc, wc) in rule {
                let p = Point3::new(
                    mid[0] + half[0] * ga,
                    mid[1] + half[1] * gb,
                    mid[2] + half[2] * gc,
                );
                out.push((p, wa * wb * wc * half[0] * half[1] * half[2]));
            }
        }
    }
    out
}

/// Intersection of two boxes; None when the overlap has no volume.
pub fn box_intersection(
    a_min: [f64; 3],
    a_max: [f64; 3],
    b_min: [f64; 3],
    b_max: [f64; 3],
) -> Option<([f64; 3], [f64; 3])> {
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for k in 0..3 {
        lo[k] = a_min[k].max(b_min[k]);
        hi[k] = a_max[k].min(b_max[k]);
        if hi[k] - lo[k] <= 0.0 {
            return None;
        }
    }
    Some((lo, hi))
}
