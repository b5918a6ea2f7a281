use crate::geometry::{Ray, Vec3};

/// A single solid. Cylinder and torus are symmetric about `axis` (unit).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    Cylinder { center: Vec3, axis: Vec3, radius: f64, half_height: f64 },
    Torus { center: Vec3, axis: Vec3, major: f64, minor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Outward unit normal in world space.
    pub normal: Vec3,
    /// Hit point in the object frame (axis as second coordinate).
    pub local: Vec3,
}

/// Orthonormal frame `(u, axis, w)`.
#[derive(Clone, Copy, Debug)]
struct Frame {
    u: Vec3,
    a: Vec3,
    w: Vec3,
}

impl Frame {
    fn new(axis: &Vec3) -> Self {
        let a = axis.normalize();
        let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
        let u = helper.cross(&a).normalize();
        let w = u.cross(&a);
        Self { u, a, w }
    }

    fn to_local(&self, v: &Vec3) -> Vec3 {
        Vec3::new(v.dot(&self.u), v.dot(&self.a), v.dot(&self.w))
    }

    fn to_world(&self, v: &Vec3) -> Vec3 {
        self.u * v.x + self.a * v.y + self.w * v.z
    }
}

const EPS: f64 = 1e-9;

fn nearest(candidates: impl IntoIterator<Item = (f64, Vec3)>) -> Option<(f64, Vec3)> {
    candidates
        .into_iter()
        .filter(|(t, _)| *t > EPS)
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Roots of `a t² + 2 b t + c`, ascending.
fn quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let q = -(b + b.signum() * s);
    let (r0, r1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some(if r0 < r1 { (r0, r1) } else { (r1, r0) })
}

fn torus_sdf(p: &Vec3, major: f64, minor: f64) -> f64 {
    let ring = (p.x * p.x + p.z * p.z).sqrt() - major;
    (ring * ring + p.y * p.y).sqrt() - minor
}

impl Primitive {
    fn center(&self) -> Vec3 {
        match *self {
            Primitive::Sphere { center, .. }
            | Primitive::Box { center, .. }
            | Primitive::Cylinder { center, .. }
            | Primitive::Torus { center, .. } => center,
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let extent = match *self {
            Primitive::Sphere { radius, .. } => Vec3::repeat(radius),
            Primitive::Box { half_extents, .. } => half_extents,
            Primitive::Cylinder { axis, radius, half_height, .. } => {
                let a = axis.normalize();
                a.map(|ai| half_height * ai.abs() + radius * (1.0 - ai * ai).max(0.0).sqrt())
            }
            Primitive::Torus { axis, major, minor, .. } => {
                let a = axis.normalize();
                a.map(|ai| major * (1.0 - ai * ai).max(0.0).sqrt() + minor)
            }
        };
        let c = self.center();
        (c - extent, c + extent)
    }

    /// Nearest intersection with `t > 0`.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let c = self.center();
        let o = ray.origin - c;
        let d = ray.direction;
        match *self {
            Primitive::Sphere { radius, .. } => {
                let (t0, t1) = quadratic(d.dot(&d), o.dot(&d), o.dot(&o) - radius * radius)?;
                let t = if t0 > EPS { t0 } else { t1 };
                (t > EPS).then(|| {
                    let p = o + d * t;
                    Hit {
                        t,
                        normal: p / radius,
                        local: p,
                    }
                })
            }
            Primitive::Box { half_extents: h, .. } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut near_axis = 0;
                let mut far_axis = 0;
                for i in 0..3 {
                    if d[i].abs() < 1e-15 {
                        if o[i].abs() > h[i] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = (-h[i] - o[i]) / d[i];
                    let t1 = (h[i] - o[i]) / d[i];
                    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                    if lo > t_near {
                        t_near = lo;
                        near_axis = i;
                    }
                    if hi < t_far {
                        t_far = hi;
                        far_axis = i;
                    }
                }
                if t_far < t_near {
                    return None;
                }
                let (t, axis) = if t_near > EPS { (t_near, near_axis) } else { (t_far, far_axis) };
                (t > EPS).then(|| {
                    let p = o + d * t;
                    let mut normal = Vec3::zeros();
                    normal[axis] = p[axis].signum();
                    Hit { t, normal, local: p }
                })
            }
            Primitive::Cylinder { axis, radius, half_height, .. } => {
                let f = Frame::new(&axis);
                let (lo, ld) = (f.to_local(&o), f.to_local(&d));
                let mut candidates = Vec::with_capacity(4);
                if let Some((t0, t1)) = quadratic(
                    ld.x * ld.x + ld.z * ld.z,
                    lo.x * ld.x + lo.z * ld.z,
                    lo.x * lo.x + lo.z * lo.z - radius * radius,
                ) {
                    for t in [t0, t1] {
                        let p = lo + ld * t;
                        if p.y.abs() <= half_height {
                            candidates.push((t, Vec3::new(p.x, 0.0, p.z) / radius));
                        }
                    }
                }
                if ld.y.abs() > 1e-15 {
                    for cap in [-half_height, half_height] {
                        let t = (cap - lo.y) / ld.y;
                        let p = lo + ld * t;
                        if p.x * p.x + p.z * p.z <= radius * radius {
                            candidates.push((t, Vec3::new(0.0, cap.signum(), 0.0)));
                        }
                    }
                }
                let (t, n) = nearest(candidates)?;
                Some(Hit {
                    t,
                    normal: f.to_world(&n),
                    local: lo + ld * t,
                })
            }
            Primitive::Torus { axis, major, minor, .. } => {
                let f = Frame::new(&axis);
                let (lo, ld) = (f.to_local(&o), f.to_local(&d));
                let bound = major + minor;
                let (t_in, t_out) = quadratic(ld.dot(&ld), lo.dot(&ld), lo.dot(&lo) - bound * bound)?;
                if t_out <= EPS {
                    return None;
                }
                // Sphere tracing on the exact distance function never
                // steps past the first surface crossing.
                let mut t = t_in.max(0.0);
                for _ in 0..2000 {
                    let p = lo + ld * t;
                    let dist = torus_sdf(&p, major, minor);
                    if dist < 1e-10 {
                        let ring = (p.x * p.x + p.z * p.z).sqrt();
                        let core = Vec3::new(p.x / ring * major, 0.0, p.z / ring * major);
                        let n = (p - core).normalize();
                        return (t > EPS).then(|| Hit {
                            t,
                            normal: f.to_world(&n),
                            local: p,
                        });
                    }
                    t += dist;
                    if t > t_out {
                        return None;
                    }
                }
                None
            }
        }
    }
}
