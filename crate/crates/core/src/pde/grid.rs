use crate::real::Real;

use super::PdeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BoundaryCondition {
    /// Zero flux, imposed with mirror ghost nodes.
    Neumann,
    /// Boundary nodes held at zero.
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TimeScheme {
    ForwardEuler,
    /// Classical fourth-order Runge-Kutta in time, for checking scheme independence.
    Rk4,
}

/// What to do when `dt` exceeds the explicit diffusion stability bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CflPolicy {
    Enforce,
    Warn,
}

/// Vertex-centred grid on `[0, lx]` or `[0, lx] x [0, ly]`, boundary nodes included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    dim: usize,
    lx: T,
    ly: T,
    nx: usize,
    ny: usize,
    dx: T,
    dy: T,
    dt: T,
    bc: BoundaryCondition,
    diffusion: [T; 3],
    scheme: TimeScheme,
    cfl_violated: bool,
}

/// Unvalidated grid parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBuilder<T> {
    pub dim: usize,
    pub lx: T,
    pub ly: T,
    pub nx: usize,
    pub ny: usize,
    pub dt: T,
    pub bc: BoundaryCondition,
    pub diffusion: [T; 3],
    pub scheme: TimeScheme,
    pub cfl: CflPolicy,
}

impl<T: Real> GridBuilder<T> {
    /// Domain `[0, pi]` (squared in 2D), Neumann, forward Euler, `dt = 0.01`,
    /// all diffusion coefficients `1e-3`.
    pub fn new(dim: usize, nx: usize) -> Self {
        Self {
            dim,
            lx: T::PI(),
            ly: T::PI(),
            nx,
            ny: if dim == 2 { nx } else { 1 },
            dt: T::lit(0.01),
            bc: BoundaryCondition::Neumann,
            diffusion: [T::lit(1e-3); 3],
            scheme: TimeScheme::ForwardEuler,
            cfl: CflPolicy::Enforce,
        }
    }

    pub fn build(self) -> Result<GridSpec<T>, PdeError> {
        let mut bad = Vec::new();
        if self.dim != 1 && self.dim != 2 {
            bad.push(format!("dimension must be 1 or 2 (got {})", self.dim));
        }
        if self.nx < 3 {
            bad.push(format!("nx must be at least 3 (got {})", self.nx));
        }
        let ny = if self.dim == 2 { self.ny } else { 1 };
        if self.dim == 2 && ny < 3 {
            bad.push(format!("ny must be at least 3 (got {})", self.ny));
        }
        for (name, v) in [("lx", self.lx), ("ly", self.ly), ("dt", self.dt)] {
            if !(v.is_finite() && v > T::zero()) {
                bad.push(format!("`{name}` must be finite and positive (got {v})"));
            }
        }
        for (name, v) in ["diff_u", "diff_v", "diff_r"].iter().zip(self.diffusion) {
            if !(v.is_finite() && v > T::zero()) {
                bad.push(format!("`{name}` must be finite and positive (got {v})"));
            }
        }
        if !bad.is_empty() {
            return Err(PdeError::InvalidGrid(bad));
        }
        let dx = self.lx / T::from_count(self.nx - 1);
        let dy = if self.dim == 2 {
            self.ly / T::from_count(ny - 1)
        } else {
            T::one()
        };
        let mut grid = GridSpec {
            dim: self.dim,
            lx: self.lx,
            ly: if self.dim == 2 { self.ly } else { T::zero() },
            nx: self.nx,
            ny,
            dx,
            dy,
            dt: self.dt,
            bc: self.bc,
            diffusion: self.diffusion,
            scheme: self.scheme,
            cfl_violated: false,
        };
        let limit = grid.stable_dt();
        if self.dt > limit {
            match self.cfl {
                CflPolicy::Enforce => {
                    return Err(PdeError::Cfl {
                        dt: self.dt.to_f64().unwrap_or(f64::NAN),
                        limit: limit.to_f64().unwrap_or(f64::NAN),
                    })
                }
                CflPolicy::Warn => grid.cfl_violated = true,
            }
        }
        Ok(grid)
    }
}

/// Node count `round(length / spacing) + 1` for a target spacing.
pub fn nodes_for_spacing<T: Real>(length: T, spacing: T) -> usize {
    (length / spacing).round().to_usize().unwrap_or(0) + 1
}

impl<T: Real> GridSpec<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> T {
        self.lx
    }
    pub fn ly(&self) -> T {
        self.ly
    }
    pub fn dx(&self) -> T {
        self.dx
    }
    pub fn dy(&self) -> T {
        self.dy
    }
    pub fn dt(&self) -> T {
        self.dt
    }
    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }
    pub fn diffusion(&self) -> [T; 3] {
        self.diffusion
    }
    pub fn scheme(&self) -> TimeScheme {
        self.scheme
    }
    pub fn cfl_violated(&self) -> bool {
        self.cfl_violated
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same grid with a different time step, revalidated under `policy`.
    pub fn with_dt(&self, dt: T, policy: CflPolicy) -> Result<Self, PdeError> {
        let mut b = self.builder(policy);
        b.dt = dt;
        b.build()
    }

    pub fn with_bc(&self, bc: BoundaryCondition) -> Self {
        Self { bc, ..*self }
    }

    pub fn with_scheme(&self, scheme: TimeScheme) -> Self {
        Self { scheme, ..*self }
    }

    fn builder(&self, cfl: CflPolicy) -> GridBuilder<T> {
        GridBuilder {
            dim: self.dim,
            lx: self.lx,
            ly: if self.dim == 2 { self.ly } else { T::PI() },
            nx: self.nx,
            ny: self.ny,
            dt: self.dt,
            bc: self.bc,
            diffusion: self.diffusion,
            scheme: self.scheme,
            cfl,
        }
    }

    /// Explicit diffusion limit `1 / (2 d_max sum_k 1/dx_k^2)`; equals `dx^2 / (2 dim d_max)`
    /// for equal spacings.
    pub fn stable_dt(&self) -> T {
        let dmax = self.diffusion.iter().copied().fold(T::zero(), T::max);
        let mut inv = (self.dx * self.dx).recip();
        if self.dim == 2 {
            inv = inv + (self.dy * self.dy).recip();
        }
        (T::two() * dmax * inv).recip()
    }

    /// Coordinates of node `(i, j)`.
    pub fn coords(&self, i: usize, j: usize) -> (T, T) {
        (T::from_count(i) * self.dx, T::from_count(j) * self.dy)
    }

    /// Trapezoidal quadrature weight of node `(i, j)`.
    pub fn weight(&self, i: usize, j: usize) -> T {
        let edge = |k: usize, n: usize| if k == 0 || k + 1 == n { T::half() } else { T::one() };
        let wx = edge(i, self.nx) * self.dx;
        if self.dim == 2 {
            wx * edge(j, self.ny) * self.dy
        } else {
            wx
        }
    }

    /// `|Omega|`.
    pub fn measure(&self) -> T {
        if self.dim == 2 {
            self.lx * self.ly
        } else {
            self.lx
        }
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || i + 1 == self.nx || (self.dim == 2 && (j == 0 || j + 1 == self.ny))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_from_length() {
        let g = GridBuilder::<f64>::new(1, 101).build().unwrap();
        assert!((g.dx() - std::f64::consts::PI / 100.0).abs() < 1e-15);
        assert_eq!(nodes_for_spacing(std::f64::consts::PI, 0.01), 315);
    }

    #[test]
    fn cfl_enforced_and_warned() {
        let mut b = GridBuilder::<f64>::new(2, 64);
        b.diffusion = [1.0; 3];
        assert!(matches!(b.build(), Err(PdeError::Cfl { .. })));
        b.cfl = CflPolicy::Warn;
        assert!(b.build().unwrap().cfl_violated());
    }

    #[test]
    fn stable_dt_matches_equal_spacing_formula() {
        let g = GridBuilder::<f64>::new(2, 64).build().unwrap();
        let d = 1e-3;
        let expected = g.dx() * g.dx() / (2.0 * 2.0 * d);
        assert!((g.stable_dt() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn weights_integrate_domain() {
        for dim in [1, 2] {
            let g = GridBuilder::<f64>::new(dim, 17).build().unwrap();
            let mut total = 0.0;
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    total += g.weight(i, j);
                }
            }
            assert!((total - g.measure()).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        let mut b = GridBuilder::<f64>::new(3, 2);
        b.dt = -1.0;
        match b.build() {
            Err(PdeError::InvalidGrid(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
