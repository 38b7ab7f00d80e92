use super::{Attributes, Mat3, Vec3};
use crate::error::{Error, Result};

/// Rotation quaternion stored `(w, x, y, z)`, the order of 3DGS `rot_0..rot_3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion(pub [f64; 4]);

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion([1.0, 0.0, 0.0, 0.0]);

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Quaternion> {
        let n = self.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("quaternion must be non-zero and finite"));
        }
        Ok(Quaternion(self.0.map(|c| c / n)))
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_rotation(&self) -> Mat3 {
        let [w, x, y, z] = self.0;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}

impl std::ops::Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion(self.0.map(|c| -c))
    }
}

fn check_scale(scale: &Vec3) -> Result<()> {
    if scale.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "gaussian scale must be positive, got ({}, {}, {})",
            scale.x, scale.y, scale.z
        )))
    }
}

/// `R diag(d) Rᵀ`, symmetrized by construction.
fn rotate_diagonal(r: &Mat3, d: &Vec3) -> Mat3 {
    let mut m = Mat3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let v = r[(i, 0)] * d.x * r[(j, 0)] + r[(i, 1)] * d.y * r[(j, 1)] + r[(i, 2)] * d.z * r[(j, 2)];
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Covariance `R·diag(scale²)·Rᵀ` of the standard 3DGS parameterization.
pub fn build_covariance(scale: &Vec3, rotation: &Quaternion) -> Result<Mat3> {
    check_scale(scale)?;
    let r = rotation.normalized()?.to_rotation();
    Ok(rotate_diagonal(&r, &scale.component_mul(scale)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    pub scale: Vec3,
    pub rotation: Quaternion,
    pub opacity: f64,
    covariance: Mat3,
    precision: Mat3,
}

impl Gaussian {
    /// `rotation` is normalized here; `opacity` must lie in `[0, 1]`.
    pub fn new(mean: Vec3, scale: Vec3, rotation: Quaternion, opacity: f64) -> Result<Self> {
        check_scale(&scale)?;
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::invalid(format!("opacity {opacity} outside [0, 1]")));
        }
        if !mean.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("gaussian mean must be finite"));
        }
        let rotation = rotation.normalized()?;
        let r = rotation.to_rotation();
        let covariance = rotate_diagonal(&r, &scale.component_mul(&scale));
        let inv_sq = scale.component_mul(&scale).map(|v| 1.0 / v);
        let precision = rotate_diagonal(&r, &inv_sq);
        Ok(Gaussian {
            mean,
            scale,
            rotation,
            opacity,
            covariance,
            precision,
        })
    }

    pub fn isotropic(mean: Vec3, sigma: f64, opacity: f64) -> Result<Self> {
        Gaussian::new(mean, Vec3::repeat(sigma), Quaternion::IDENTITY, opacity)
    }

    pub fn covariance(&self) -> &Mat3 {
        &self.covariance
    }

    /// Inverse covariance, assembled analytically from scale and rotation.
    pub fn precision(&self) -> &Mat3 {
        &self.precision
    }

    /// Spectral condition number of Σ.
    pub fn condition_number(&self) -> f64 {
        let max = self.scale.max();
        let min = self.scale.min();
        (max / min) * (max / min)
    }

    /// Unnormalized density `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
    pub fn density(&self, x: &Vec3) -> f64 {
        let d = x - self.mean;
        (-0.5 * d.dot(&(self.precision * d))).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian>,
    pub attributes: Option<Attributes>,
}

impl GaussianSet {
    pub fn new(gaussians: Vec<Gaussian>) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::Empty("gaussian set"));
        }
        Ok(GaussianSet {
            gaussians,
            attributes: None,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (a - b).iter().all(|v| v.abs() <= tol)
    }

    #[test]
    fn isotropic_unit_is_identity() {
        let s = build_covariance(&Vec3::new(1.0, 1.0, 1.0), &Quaternion::IDENTITY).unwrap();
        assert_eq!(s, Mat3::identity());
    }

    #[test]
    fn axis_aligned_scale() {
        let s = build_covariance(&Vec3::new(2.0, 1.0, 1.0), &Quaternion::IDENTITY).unwrap();
        assert_eq!(s, Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(build_covariance(&Vec3::new(0.0, 1.0, 1.0), &Quaternion::IDENTITY).is_err());
        assert!(build_covariance(&Vec3::new(1.0, -1.0, 1.0), &Quaternion::IDENTITY).is_err());
        assert!(build_covariance(&Vec3::new(1.0, 1.0, 1.0), &Quaternion([0.0; 4])).is_err());
    }

    fn arb_params() -> impl Strategy<Value = (Vec3, Quaternion)> {
        (
            (0.01f64..3.0, 0.01f64..3.0, 0.01f64..3.0),
            (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
        )
            .prop_filter("non-degenerate quaternion", |(_, q)| {
                q.0 * q.0 + q.1 * q.1 + q.2 * q.2 + q.3 * q.3 > 1e-3
            })
            .prop_map(|((a, b, c), (w, x, y, z))| (Vec3::new(a, b, c), Quaternion([w, x, y, z])))
    }

    proptest! {
        #[test]
        fn covariance_matches_eigen_oracle((scale, q) in arb_params()) {
            let s = build_covariance(&scale, &q).unwrap();
            prop_assert_eq!(s, s.transpose());
            let det = s.determinant();
            let expected = (scale.x * scale.y * scale.z).powi(2);
            prop_assert!((det - expected).abs() <= 1e-9 * expected.max(1.0));

            let eig = nalgebra::SymmetricEigen::new(s);
            let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = scale.iter().map(|v| v * v).collect();
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-9 * w.max(1.0));
                prop_assert!(*g > 0.0);
            }
        }

        #[test]
        fn quaternion_sign_does_not_matter((scale, q) in arb_params()) {
            prop_assert_eq!(build_covariance(&scale, &q).unwrap(), build_covariance(&scale, &-q).unwrap());
        }

        #[test]
        fn precision_inverts_covariance((scale, q) in arb_params()) {
            let g = Gaussian::new(Vec3::zeros(), scale, q, 0.5).unwrap();
            let prod = g.covariance() * g.precision();
            prop_assert!(close(&prod, &Mat3::identity(), 1e-8 * g.condition_number()));
        }
    }
}
