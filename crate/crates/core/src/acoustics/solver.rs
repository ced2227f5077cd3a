use crate::error::{dim_err, Error, Result};
use crate::tensor::{strides_of, Tensor};

use super::medium::{cfl_dt, Medium};

/// Pressure at cell centers and one particle-velocity component per axis at
/// the face between cell `i` and its successor (always zero on the last
/// cell of each axis: rigid wall).
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefield {
    pub p: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

/// Precomputed update coefficients of the staggered leapfrog scheme.
#[derive(Debug, Clone)]
pub struct Solver {
    extents: Vec<usize>,
    strides: Vec<usize>,
    dt: f64,
    dx: f64,
    /// `dt K / dx` per cell.
    pressure_coef: Vec<f64>,
    /// `dt / (rho_face dx)` per face and axis; zero on wall faces.
    velocity_coef: Vec<Vec<f64>>,
    /// Per-step multiplicative damping per cell, `None` without a sponge.
    damping: Option<Vec<f64>>,
    /// Damping per face and axis: mean of the two adjacent cells.
    face_damping: Vec<Vec<f64>>,
    bulk: Vec<f64>,
    face_density: Vec<Vec<f64>>,
}

impl Solver {
    pub fn new(medium: &Medium, dt: f64) -> Result<Solver> {
        let max_dt = cfl_dt(medium, 1.0);
        if !(dt > 0.0) || dt > max_dt {
            return Err(Error::Cfl { dt, max_dt });
        }
        let extents = medium.extents.clone();
        let strides = strides_of(&extents);
        let len: usize = extents.iter().product();
        let dx = medium.dx;
        let c = medium.sound_speed.data();
        let rho = medium.density.data();
        let bulk: Vec<f64> = (0..len).map(|i| rho[i] * c[i] * c[i]).collect();
        let pressure_coef = bulk.iter().map(|k| dt * k / dx).collect();
        let mut velocity_coef = Vec::with_capacity(extents.len());
        let mut face_density = Vec::with_capacity(extents.len());
        for (&n, &s) in extents.iter().zip(&strides) {
            let mut coef = vec![0.0; len];
            let mut dens = vec![0.0; len];
            for i in 0..len {
                if (i / s) % n + 1 < n {
                    dens[i] = 0.5 * (rho[i] + rho[i + s]);
                    coef[i] = dt / (dens[i] * dx);
                }
            }
            velocity_coef.push(coef);
            face_density.push(dens);
        }
        let damping: Option<Vec<f64>> = (medium.sponge_width > 0 && medium.sponge_strength > 0.0).then(|| {
            let w = medium.sponge_width as f64;
            (0..len)
                .map(|i| {
                    let edge = extents
                        .iter()
                        .zip(&strides)
                        .map(|(&n, &s)| {
                            let k = (i / s) % n;
                            k.min(n - 1 - k)
                        })
                        .min()
                        .unwrap_or(0) as f64;
                    if edge >= w {
                        1.0
                    } else {
                        let depth = (w - edge) / w;
                        (-medium.sponge_strength * depth * depth * dt).exp()
                    }
                })
                .collect()
        });
        let face_damping = match &damping {
            None => Vec::new(),
            Some(cell) => strides
                .iter()
                .map(|&s| {
                    (0..len)
                        .map(|i| if i + s < len { 0.5 * (cell[i] + cell[i + s]) } else { cell[i] })
                        .collect()
                })
                .collect(),
        };
        Ok(Solver {
            extents,
            strides,
            dt,
            dx,
            pressure_coef,
            velocity_coef,
            damping,
            face_damping,
            bulk,
            face_density,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    fn len(&self) -> usize {
        self.pressure_coef.len()
    }

    pub fn zero_field(&self) -> Wavefield {
        Wavefield {
            p: vec![0.0; self.len()],
            v: vec![vec![0.0; self.len()]; self.extents.len()],
        }
    }

    /// Field at t = 0 holding `p0`, with velocities at t = -dt/2 chosen so
    /// that the pressure starts at rest (dp/dt = 0).
    pub fn initial_field(&self, p0: &Tensor) -> Result<Wavefield> {
        if p0.shape() != self.extents.as_slice() {
            return Err(dim_err!(
                "initial pressure {:?} does not match the medium {:?}",
                p0.shape(),
                self.extents
            ));
        }
        let mut field = self.zero_field();
        field.p.copy_from_slice(p0.data());
        for (d, v) in field.v.iter_mut().enumerate() {
            let s = self.strides[d];
            let coef = &self.velocity_coef[d];
            for i in 0..self.len() - s {
                v[i] = 0.5 * coef[i] * (field.p[i + s] - field.p[i]);
            }
        }
        Ok(field)
    }

    fn update_velocity(&self, p: &[f64], v: &mut [f64], d: usize) {
        let s = self.strides[d];
        let coef = &self.velocity_coef[d];
        for i in 0..p.len() - s {
            v[i] -= coef[i] * (p[i + s] - p[i]);
        }
    }

    /// Advances velocities by one step, then pressure.
    pub fn step(&self, field: &mut Wavefield) {
        for d in 0..self.extents.len() {
            self.update_velocity(&field.p, &mut field.v[d], d);
            if let Some(damp) = self.face_damping.get(d) {
                field.v[d].iter_mut().zip(damp).for_each(|(v, k)| *v *= k);
            }
        }
        for d in 0..self.extents.len() {
            let s = self.strides[d];
            let v = &field.v[d];
            let p = &mut field.p;
            for i in 0..s.min(p.len()) {
                p[i] -= self.pressure_coef[i] * v[i];
            }
            for i in s..p.len() {
                p[i] -= self.pressure_coef[i] * (v[i] - v[i - s]);
            }
        }
        if let Some(damp) = &self.damping {
            field.p.iter_mut().zip(damp).for_each(|(p, k)| *p *= k);
        }
    }

    /// Discrete acoustic energy `sum(p^2 / 2K + rho v- . v+ / 2) dx^d`, using
    /// the velocities half a step either side of the pressure. Exactly
    /// invariant under [`Solver::step`] without a sponge.
    pub fn energy(&self, field: &Wavefield) -> f64 {
        let cell = self.dx.powi(self.extents.len() as i32);
        let potential: f64 = field.p.iter().zip(&self.bulk).map(|(p, k)| p * p / (2.0 * k)).sum();
        let mut kinetic = 0.0;
        for d in 0..self.extents.len() {
            let mut ahead = field.v[d].clone();
            self.update_velocity(&field.p, &mut ahead, d);
            kinetic += field.v[d]
                .iter()
                .zip(&ahead)
                .zip(&self.face_density[d])
                .map(|((a, b), rho)| 0.5 * rho * a * b)
                .sum::<f64>();
        }
        (potential + kinetic) * cell
    }
}
