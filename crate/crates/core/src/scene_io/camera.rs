use nalgebra::{Matrix3, Vector3};

use super::SceneIoError;

/// Pinhole camera. `rotation` and `translation` map camera to world; the
/// camera looks down its +Z axis with +Y pointing down the image.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

/// Largest `‖RᵀR − I‖` that is repaired instead of rejected.
pub const ORTHONORMAL_REPAIR_TOLERANCE: f64 = 1e-3;

impl CameraPose {
    pub fn validate(&self) -> Result<(), SceneIoError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneIoError::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneIoError::InvalidCamera("empty image size".into()));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() >= 1e-5 {
            return Err(SceneIoError::Rotation(format!("determinant {det}")));
        }
        Ok(())
    }

    /// Builds a camera from a row-major camera-to-world matrix, repairing
    /// slightly non-orthonormal rotations.
    pub fn from_c2w(
        m: &[[f64; 4]; 4],
        intrinsics: [f64; 4],
        width: u32,
        height: u32,
    ) -> Result<Self, SceneIoError> {
        let r = Matrix3::from_fn(|i, j| m[i][j]);
        let rotation = orthonormalize(&r)?;
        let camera = Self {
            fx: intrinsics[0],
            fy: intrinsics[1],
            cx: intrinsics[2],
            cy: intrinsics[3],
            rotation,
            translation: Vector3::new(m[0][3], m[1][3], m[2][3]),
            width,
            height,
        };
        camera.validate()?;
        Ok(camera)
    }

    pub fn to_c2w(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.rotation[(i, j)];
            }
            m[i][3] = self.translation[i];
        }
        m[3][3] = 1.0;
        m
    }

    /// Camera at `eye` looking at `target`; `up` picks the roll.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, SceneIoError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| SceneIoError::InvalidCamera("eye coincides with target".into()))?;
        let right = forward.cross(&up).try_normalize(1e-9).ok_or_else(|| {
            SceneIoError::InvalidCamera("up is parallel to the view direction".into())
        })?;
        let down = forward.cross(&right);
        let camera = Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: eye,
            width,
            height,
        };
        camera.validate()?;
        Ok(camera)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// World-space viewing direction of the principal ray.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// The camera after box-downsampling its images by an integer `factor`.
    pub fn downsampled(&self, factor: u32) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
            ..self.clone()
        }
    }

    /// The same view rendered at a different resolution.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    /// Continuous pixel coordinates of a world point; pixel `(i, j)` spans
    /// `[i, i+1) × [j, j+1)`. `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        let c = self.rotation.transpose() * (p - self.translation);
        if c.z <= 0.0 {
            return None;
        }
        Some([self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy])
    }
}

/// Nearest rotation to `r`, or an error when `r` is too far from one.
pub fn orthonormalize(r: &Matrix3<f64>) -> Result<Matrix3<f64>, SceneIoError> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err >= ORTHONORMAL_REPAIR_TOLERANCE {
        return Err(SceneIoError::Rotation(format!("‖RᵀR − I‖ = {err:.3e}")));
    }
    if err < 1e-12 && (r.determinant() - 1.0).abs() < 1e-12 {
        return Ok(*r);
    }
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let fixed = u * vt;
    if fixed.determinant() < 0.0 {
        return Err(SceneIoError::Rotation("reflection, not a rotation".into()));
    }
    Ok(fixed)
}
