use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Differentiable toy renderer `g(θ, c)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Renderer<T> {
    /// `g(θ, c) = θ` for every pose in `0..num_poses`.
    Identity { dim: usize, num_poses: usize },
    /// Planar rotation `g(θ, c) = R(angle[c]) θ`.
    Rotation { angles: Vec<T> },
}

impl<T: Scalar> Renderer<T> {
    pub fn identity(dim: usize) -> Self {
        Renderer::Identity { dim, num_poses: 1 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Renderer::Identity { dim, .. } => *dim,
            Renderer::Rotation { .. } => 2,
        }
    }

    pub fn num_poses(&self) -> usize {
        match self {
            Renderer::Identity { num_poses, .. } => *num_poses,
            Renderer::Rotation { angles } => angles.len(),
        }
    }

    fn check(&self, theta: &[T], pose: usize) -> Result<()> {
        if pose >= self.num_poses() {
            return Err(Error::Argument(format!(
                "pose {pose} outside configured set of {}",
                self.num_poses()
            )));
        }
        if theta.len() != self.dim() {
            return Err(Error::Argument(format!(
                "parameter dimension {} does not match renderer dimension {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn rotation(angle: T) -> Matrix<T> {
        let (s, c) = angle.sin_cos();
        let mut m = Matrix::zeros(2, 2);
        m[(0, 0)] = c;
        m[(0, 1)] = -s;
        m[(1, 0)] = s;
        m[(1, 1)] = c;
        m
    }

    pub fn render(&self, theta: &[T], pose: usize) -> Result<Vec<T>> {
        self.check(theta, pose)?;
        Ok(match self {
            Renderer::Identity { .. } => theta.to_vec(),
            Renderer::Rotation { angles } => Self::rotation(angles[pose]).mul_vec(theta),
        })
    }

    /// `∂g/∂θ` as a `d × d` matrix.
    pub fn jacobian(&self, theta: &[T], pose: usize) -> Result<Matrix<T>> {
        self.check(theta, pose)?;
        Ok(match self {
            Renderer::Identity { dim, .. } => Matrix::identity(*dim),
            Renderer::Rotation { angles } => Self::rotation(angles[pose]),
        })
    }
}
