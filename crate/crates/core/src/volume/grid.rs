use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// 4×4 homogeneous voxel-index → world-mm transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine(pub Matrix4<f64>);

impl Affine {
    pub fn diagonal(spacing: [f64; 3], origin: [f64; 3]) -> Self {
        let mut m = Matrix4::identity();
        for a in 0..3 {
            m[(a, a)] = spacing[a];
            m[(a, 3)] = origin[a];
        }
        Affine(m)
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Self {
        Affine(Matrix4::from_fn(|r, c| rows[r][c]))
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.0[(r, c)];
            }
        }
        out
    }

    pub fn linear(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.0[(0, 3)], self.0[(1, 3)], self.0[(2, 3)]]
    }

    pub fn column_norms(&self) -> [f64; 3] {
        let l = self.linear();
        [l.column(0).norm(), l.column(1).norm(), l.column(2).norm()]
    }

    pub fn inverse(&self) -> Option<Affine> {
        self.0.try_inverse().map(Affine)
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.0 * Vector4::new(p[0], p[1], p[2], 1.0);
        [v[0], v[1], v[2]]
    }

    pub fn compose(&self, other: &Affine) -> Affine {
        Affine(self.0 * other.0)
    }
}

/// Shape plus voxel-to-world geometry; spacing is always the affine's column norms.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    shape: [usize; 3],
    spacing: [f64; 3],
    affine: Affine,
}

impl GridSpec {
    pub fn new(shape: [usize; 3], affine: Affine) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("grid shape must be positive, got {shape:?}")));
        }
        let lin = affine.linear();
        let det = lin.determinant();
        if !det.is_finite() || det.abs() < 1e-12 || affine.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine is not invertible"));
        }
        let spacing = affine.column_norms();
        Ok(Self { shape, spacing, affine })
    }

    /// Axis-aligned RAS grid with the first voxel at the world origin.
    pub fn from_spacing(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_origin(shape, spacing, [0.0; 3])
    }

    pub fn with_origin(shape: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")));
        }
        Self::new(shape, Affine::diagonal(spacing, origin))
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn linear_index(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.shape[0] * (j + self.shape[1] * k)
    }

    #[inline]
    pub fn coords(&self, li: usize) -> [usize; 3] {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [li % nx, (li / nx) % ny, li / (nx * ny)]
    }

    #[inline]
    pub fn index_to_world(&self, idx: [f64; 3]) -> [f64; 3] {
        self.affine.apply(idx)
    }

    pub fn world_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        self.affine
            .inverse()
            .expect("grid affine is invertible by construction")
            .apply(p)
    }

    /// Unit direction of each voxel axis in world space.
    pub fn direction(&self) -> Matrix3<f64> {
        let mut d = self.affine.linear();
        for a in 0..3 {
            let mut col = d.column_mut(a);
            col /= self.spacing[a];
        }
        d
    }

    /// Voxel axis most aligned with world `world_axis` (0=x, 1=y, 2=z), and
    /// whether increasing that index moves in the positive world direction.
    pub fn axis_along(&self, world_axis: usize) -> (usize, bool) {
        let d = self.direction();
        let mut best = 0;
        for a in 1..3 {
            if d[(world_axis, a)].abs() > d[(world_axis, best)].abs() {
                best = a;
            }
        }
        (best, d[(world_axis, best)] > 0.0)
    }

    /// Voxel axis running superior–inferior; the flag is true when increasing
    /// index moves superior.
    pub fn si_axis(&self) -> (usize, bool) {
        self.axis_along(2)
    }

    /// Voxel axis running left–right; the flag is true when increasing index
    /// moves toward the patient's right.
    pub fn lr_axis(&self) -> (usize, bool) {
        self.axis_along(0)
    }

    /// A grid covering the same physical field of view at a new spacing.
    ///
    /// The outer voxel boundaries are kept fixed: shape is rounded from the
    /// physical extent and the first voxel centre moves by half a voxel of
    /// the old minus half a voxel of the new spacing along each axis.
    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<GridSpec> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")));
        }
        let dir = self.direction();
        let mut shape = [0usize; 3];
        let mut m = Matrix4::identity();
        let mut origin = Vector3::from(self.affine.translation());
        for a in 0..3 {
            let extent = self.shape[a] as f64 * self.spacing[a];
            shape[a] = ((extent / spacing[a]).round() as usize).max(1);
            let col = dir.column(a);
            origin += col * (0.5 * (spacing[a] - self.spacing[a]));
            for r in 0..3 {
                m[(r, a)] = col[r] * spacing[a];
            }
        }
        for r in 0..3 {
            m[(r, 3)] = origin[r];
        }
        GridSpec::new(shape, Affine(m))
    }

    /// Grid of `shape` voxels sharing this grid's axes and spacing, whose
    /// index `offset` coincides with this grid's index 0.
    pub fn subgrid(&self, offset: [i64; 3], shape: [usize; 3]) -> Result<GridSpec> {
        let start = self.index_to_world([offset[0] as f64, offset[1] as f64, offset[2] as f64]);
        let mut m = self.affine.0;
        for r in 0..3 {
            m[(r, 3)] = start[r];
        }
        GridSpec::new(shape, Affine(m))
    }

    /// World coordinates of the eight corner voxel centres.
    pub fn corner_centres(&self) -> [[f64; 3]; 8] {
        let hi = self.shape.map(|n| (n - 1) as f64);
        let mut out = [[0.0; 3]; 8];
        for (c, o) in out.iter_mut().enumerate() {
            let idx = [
                if c & 1 == 0 { 0.0 } else { hi[0] },
                if c & 2 == 0 { 0.0 } else { hi[1] },
                if c & 4 == 0 { 0.0 } else { hi[2] },
            ];
            *o = self.index_to_world(idx);
        }
        out
    }

    pub fn approx_eq(&self, other: &GridSpec, tol: f64) -> bool {
        self.shape == other.shape
            && self
                .affine
                .0
                .iter()
                .zip(other.affine.0.iter())
                .all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())))
    }

    pub fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self.approx_eq(other, 1e-5) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: shape {:?} spacing {:?} vs shape {:?} spacing {:?}",
                self.shape, self.spacing, other.shape, other.spacing
            )))
        }
    }
}
