use nalgebra::{Unit, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;

pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Horizontal (x-y) distance.
pub fn horizontal_distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Rotates `v` by `angle` about `axis`.
pub fn rotate(v: &Vec3, axis: &Unit<Vec3>, angle: f64) -> Vec3 {
    UnitQuaternion::from_axis_angle(axis, angle) * v
}

/// Any unit vector orthogonal to `v`.
pub fn any_orthogonal(v: &Vec3) -> Unit<Vec3> {
    let trial = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    Unit::new_normalize(v.cross(&trial))
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}
