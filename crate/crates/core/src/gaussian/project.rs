//! Perspective projection of one Gaussian to a 2D screen-space ellipse.

use nalgebra::{Matrix3, Vector3};

use super::jet::{Jet, Real};
use super::Gaussian3D;
use crate::pose::SceneCamera;

/// Screen-space dilation added to the projected covariance diagonal.
pub(crate) const COV_DILATION: f64 = 0.3;

/// Jacobian-clamp margin relative to the frustum half extent.
const FRUSTUM_CLAMP: f64 = 1.3;

/// Camera quantities shared by every Gaussian in one render.
pub(crate) struct CamConsts {
    world_to_cam: Matrix3<f64>,
    center: Vector3<f64>,
    focal: f64,
    half_w: f64,
    half_h: f64,
    lim_x: f64,
    lim_y: f64,
}

impl CamConsts {
    pub fn new(cam: &SceneCamera) -> Self {
        let focal = cam.focal();
        let half_w = 0.5 * cam.width() as f64;
        let half_h = 0.5 * cam.height() as f64;
        CamConsts {
            world_to_cam: cam.rotation().transpose(),
            center: *cam.center(),
            focal,
            half_w,
            half_h,
            lim_x: FRUSTUM_CLAMP * half_w / focal,
            lim_y: FRUSTUM_CLAMP * half_h / focal,
        }
    }

    /// View-space depth along the optical axis.
    pub fn view_z(&self, p: &Vector3<f64>) -> f64 {
        (self.world_to_cam * (p - self.center)).z
    }
}

/// A projected Gaussian: pixel-space mean, inverse covariance
/// `(a, b, c)` of `[[a, b], [b, c]]`, covariance, and ray distance.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat<T> {
    pub x: T,
    pub y: T,
    pub conic: [T; 3],
    pub cov: [T; 3],
    pub dist: T,
}

fn clamp_ratio<T: Real>(t: T, tz: T, lim: f64) -> T {
    let r = (t / tz).value();
    if r > lim {
        tz.scale(lim)
    } else if r < -lim {
        tz.scale(-lim)
    } else {
        t
    }
}

/// Projects `(μ, q, log s)`; the caller culls by view depth beforehand.
pub(crate) fn project<T: Real>(mu: [T; 3], q: [T; 4], log_s: [T; 3], cam: &CamConsts) -> Splat<T> {
    let w = &cam.world_to_cam;
    let d = [
        mu[0] - T::cst(cam.center.x),
        mu[1] - T::cst(cam.center.y),
        mu[2] - T::cst(cam.center.z),
    ];
    let row = |i: usize| d[0].scale(w[(i, 0)]) + d[1].scale(w[(i, 1)]) + d[2].scale(w[(i, 2)]);
    let (tx, ty, tz) = (row(0), row(1), row(2));
    let f = cam.focal;
    let x = (tx / tz).scale(f) + T::cst(cam.half_w);
    let y = -(ty / tz).scale(f) + T::cst(cam.half_h);

    let txc = clamp_ratio(tx, tz, cam.lim_x);
    let tyc = clamp_ratio(ty, tz, cam.lim_y);
    let inv_z = T::cst(1.0) / tz;
    let inv_z2 = inv_z * inv_z;
    // Rows of the 2x3 projection Jacobian.
    let j0 = [inv_z.scale(f), T::cst(0.0), -(txc * inv_z2).scale(f)];
    let j1 = [T::cst(0.0), -inv_z.scale(f), (tyc * inv_z2).scale(f)];

    // A = J · W.
    let mut a = [[T::cst(0.0); 3]; 2];
    for (ar, jr) in a.iter_mut().zip([j0, j1]) {
        for (c, slot) in ar.iter_mut().enumerate() {
            *slot = jr[0].scale(w[(0, c)]) + jr[1].scale(w[(1, c)]) + jr[2].scale(w[(2, c)]);
        }
    }

    let rot = quat_to_matrix(q);
    let s2 = [
        (log_s[0].scale(2.0)).exp(),
        (log_s[1].scale(2.0)).exp(),
        (log_s[2].scale(2.0)).exp(),
    ];
    // B = A · R, then Σ' = B diag(s²) Bᵀ.
    let mut b = [[T::cst(0.0); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            b[r][c] = a[r][0] * rot[0][c] + a[r][1] * rot[1][c] + a[r][2] * rot[2][c];
        }
    }
    let quad = |r: usize, s: usize| b[r][0] * b[s][0] * s2[0] + b[r][1] * b[s][1] * s2[1] + b[r][2] * b[s][2] * s2[2];
    let ca = quad(0, 0) + T::cst(COV_DILATION);
    let cb = quad(0, 1);
    let cc = quad(1, 1) + T::cst(COV_DILATION);
    let det = ca * cc - cb * cb;
    let conic = [cc / det, -cb / det, ca / det];
    let dist = (tx * tx + ty * ty + tz * tz).sqrt();
    Splat {
        x,
        y,
        conic,
        cov: [ca, cb, cc],
        dist,
    }
}

/// Rotation matrix (row-major) of the normalized quaternion `(w, x, y, z)`.
pub(crate) fn quat_to_matrix<T: Real>(q: [T; 4]) -> [[T; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let one = T::cst(1.0);
    let two = |v: T| v.scale(2.0);
    [
        [one - two(y * y + z * z), two(x * y - w * z), two(x * z + w * y)],
        [two(x * y + w * z), one - two(x * x + z * z), two(y * z - w * x)],
        [two(x * z - w * y), two(y * z + w * x), one - two(x * x + y * y)],
    ]
}

pub(crate) fn project_value(g: &Gaussian3D, cam: &CamConsts) -> Splat<f64> {
    project(
        [g.position.x, g.position.y, g.position.z],
        g.rotation,
        [g.log_scale.x, g.log_scale.y, g.log_scale.z],
        cam,
    )
}

/// Number of geometric parameters differentiated by the jet pass.
pub(crate) const GEOM_PARAMS: usize = 10;

pub(crate) fn project_jet(g: &Gaussian3D, cam: &CamConsts) -> Splat<Jet<GEOM_PARAMS>> {
    let v = |i: usize, x: f64| Jet::var(x, i);
    project(
        [v(0, g.position.x), v(1, g.position.y), v(2, g.position.z)],
        [v(3, g.rotation[0]), v(4, g.rotation[1]), v(5, g.rotation[2]), v(6, g.rotation[3])],
        [v(7, g.log_scale.x), v(8, g.log_scale.y), v(9, g.log_scale.z)],
        cam,
    )
}
