use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CodanoError, Result};
use crate::field::fft::fft_axes;
use crate::field::{AxisKind, DomainBox, Mesh};
use crate::simdata::config::{RB_LX, RB_LY};
use crate::simdata::{DatasetContainer, SimConfig};

const T_BOTTOM: f64 = 1.0;
const T_TOP: f64 = 0.0;

/// Staggered (MAC) state on `nx × ny` cells, `x` periodic, no-slip walls at `y = 0, L_y`.
///
/// `u[i, j]` sits at `(i h, (j + ½) h)`, `v[i, j]` at `((i + ½) h, j h)` with
/// `j ∈ 0..=ny`, and `T` at cell centres. All arrays are x-major.
pub(crate) struct RbState {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: Vec<f64>,
}

impl RbState {
    fn c(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    fn e(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }

    fn left(&self, i: usize) -> usize {
        (i + self.nx - 1) % self.nx
    }

    fn right(&self, i: usize) -> usize {
        (i + 1) % self.nx
    }

    /// `u` with no-slip ghosts outside the walls.
    fn u_at(&self, i: usize, j: isize) -> f64 {
        if j < 0 {
            -self.u[self.c(i, 0)]
        } else if j as usize >= self.ny {
            -self.u[self.c(i, self.ny - 1)]
        } else {
            self.u[self.c(i, j as usize)]
        }
    }

    /// `T` with Dirichlet ghosts outside the walls.
    fn t_at(&self, i: usize, j: isize) -> f64 {
        if j < 0 {
            2.0 * T_BOTTOM - self.t[self.c(i, 0)]
        } else if j as usize >= self.ny {
            2.0 * T_TOP - self.t[self.c(i, self.ny - 1)]
        } else {
            self.t[self.c(i, j as usize)]
        }
    }

    pub fn max_speeds(&self) -> (f64, f64) {
        let m = |x: &[f64]| x.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        (m(&self.u), m(&self.v))
    }

    /// Largest absolute discrete divergence over cells.
    #[cfg(test)]
    pub fn max_divergence(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.nx {
            for j in 0..self.ny {
                worst = worst.max(self.divergence(i, j).abs());
            }
        }
        worst
    }

    fn divergence(&self, i: usize, j: usize) -> f64 {
        (self.u[self.c(self.right(i), j)] - self.u[self.c(i, j)] + self.v[self.e(i, j + 1)] - self.v[self.e(i, j)])
            / self.h
    }

    #[cfg(test)]
    pub fn kinetic_energy(&self) -> f64 {
        let s: f64 = self.u.iter().chain(&self.v).map(|x| x * x).sum();
        0.5 * s * self.h * self.h
    }

    /// Values on the node grid `x = i h`, `y = j h`, `j ∈ 0..=ny`, point-major `(u_x, u_y, T)`.
    pub fn nodes(&self) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = Vec::with_capacity(nx * (ny + 1) * 3);
        for i in 0..nx {
            let l = self.left(i);
            for j in 0..=ny {
                let (u, v, t) = if j == 0 {
                    (0.0, 0.0, T_BOTTOM)
                } else if j == ny {
                    (0.0, 0.0, T_TOP)
                } else {
                    let u = 0.5 * (self.u[self.c(i, j - 1)] + self.u[self.c(i, j)]);
                    let v = 0.5 * (self.v[self.e(l, j)] + self.v[self.e(i, j)]);
                    let t = 0.25
                        * (self.t[self.c(l, j - 1)]
                            + self.t[self.c(i, j - 1)]
                            + self.t[self.c(l, j)]
                            + self.t[self.c(i, j)]);
                    (u, v, t)
                };
                out.extend_from_slice(&[u, v, t]);
            }
        }
        out
    }
}

pub(crate) struct RbSolver {
    pub nu: f64,
    pub kappa: f64,
    pub alpha_g: f64,
    eig_x: Vec<f64>,
}

impl RbSolver {
    pub fn new(nu: f64, kappa: f64, alpha_g: f64, nx: usize, h: f64) -> Self {
        let eig_x = (0..nx)
            .map(|m| {
                let s = (std::f64::consts::PI * m as f64 / nx as f64).sin();
                -4.0 * s * s / (h * h)
            })
            .collect();
        Self {
            nu,
            kappa,
            alpha_g,
            eig_x,
        }
    }

    /// Stable explicit step size for the current velocities.
    pub fn stable_dt(&self, s: &RbState, cfl: f64) -> f64 {
        let (mu, mv) = s.max_speeds();
        let h = s.h;
        cfl / (2.0 * (mu + mv) / h + 5.0 * self.nu.max(self.kappa) / (h * h))
    }

    /// Upwind advection, explicit diffusion and buoyancy, then a pressure projection.
    pub fn step(&self, s: &mut RbState, dt: f64) {
        let (nx, ny, h) = (s.nx, s.ny, s.h);
        let h2 = h * h;
        let up = |vel: f64, back: f64, mid: f64, fwd: f64| {
            if vel > 0.0 {
                vel * (mid - back) / h
            } else {
                vel * (fwd - mid) / h
            }
        };
        let mut u = s.u.clone();
        let mut v = s.v.clone();
        let mut t = s.t.clone();
        for i in 0..nx {
            let (l, r) = (s.left(i), s.right(i));
            for j in 0..ny {
                let jj = j as isize;
                // u
                let uc = s.u[s.c(i, j)];
                let vc = 0.25 * (s.v[s.e(l, j)] + s.v[s.e(i, j)] + s.v[s.e(l, j + 1)] + s.v[s.e(i, j + 1)]);
                let (ul, ur) = (s.u[s.c(l, j)], s.u[s.c(r, j)]);
                let (ud, uu) = (s.u_at(i, jj - 1), s.u_at(i, jj + 1));
                let adv = up(uc, ul, uc, ur) + up(vc, ud, uc, uu);
                let lap = (ul + ur + ud + uu - 4.0 * uc) / h2;
                u[s.c(i, j)] = uc + dt * (self.nu * lap - adv);
                // T
                let tc = s.t[s.c(i, j)];
                let ut = 0.5 * (s.u[s.c(i, j)] + s.u[s.c(r, j)]);
                let vt = 0.5 * (s.v[s.e(i, j)] + s.v[s.e(i, j + 1)]);
                let (tl, tr) = (s.t[s.c(l, j)], s.t[s.c(r, j)]);
                let (td, tu) = (s.t_at(i, jj - 1), s.t_at(i, jj + 1));
                let adv = up(ut, tl, tc, tr) + up(vt, td, tc, tu);
                let lap = (tl + tr + td + tu - 4.0 * tc) / h2;
                t[s.c(i, j)] = tc + dt * (self.kappa * lap - adv);
            }
            for j in 1..ny {
                let vc = s.v[s.e(i, j)];
                let uc = 0.25 * (s.u[s.c(i, j - 1)] + s.u[s.c(r, j - 1)] + s.u[s.c(i, j)] + s.u[s.c(r, j)]);
                let (vl, vr) = (s.v[s.e(l, j)], s.v[s.e(r, j)]);
                let (vd, vu) = (s.v[s.e(i, j - 1)], s.v[s.e(i, j + 1)]);
                let adv = up(uc, vl, vc, vr) + up(vc, vd, vc, vu);
                let lap = (vl + vr + vd + vu - 4.0 * vc) / h2;
                let buoy = self.alpha_g * 0.5 * (s.t[s.c(i, j - 1)] + s.t[s.c(i, j)]);
                v[s.e(i, j)] = vc + dt * (self.nu * lap - adv + buoy);
            }
        }
        s.u = u;
        s.v = v;
        s.t = t;
        self.project(s);
    }

    /// Remove the discrete gradient part of `(u, v)` so every cell is divergence-free.
    pub fn project(&self, s: &mut RbState) {
        let (nx, ny, h) = (s.nx, s.ny, s.h);
        let mut rhs: Vec<Complex64> = (0..nx * ny)
            .map(|p| Complex64::new(s.divergence(p / ny, p % ny), 0.0))
            .collect();
        fft_axes(&mut rhs, &[nx, ny], false, Some(&[0]));
        let h2 = h * h;
        let mut diag = vec![0.0; ny];
        let mut cp = vec![0.0; ny];
        let mut dp = vec![Complex64::new(0.0, 0.0); ny];
        for m in 0..nx {
            let row = &mut rhs[m * ny..(m + 1) * ny];
            for (j, d) in diag.iter_mut().enumerate() {
                let walls = (j == 0) as usize + (j == ny - 1) as usize;
                *d = -(2.0 - walls as f64) / h2 + self.eig_x[m];
            }
            let off = 1.0 / h2;
            if m == 0 {
                // pin the constant null mode
                diag[0] = 1.0;
                row[0] = Complex64::new(0.0, 0.0);
            }
            let upper0 = if m == 0 { 0.0 } else { off };
            // Thomas sweep with symmetric off-diagonals
            cp[0] = upper0 / diag[0];
            dp[0] = row[0] / diag[0];
            for j in 1..ny {
                let denom = diag[j] - off * cp[j - 1];
                cp[j] = off / denom;
                dp[j] = (row[j] - dp[j - 1] * off) / denom;
            }
            row[ny - 1] = dp[ny - 1];
            for j in (0..ny - 1).rev() {
                row[j] = dp[j] - row[j + 1] * cp[j];
            }
        }
        fft_axes(&mut rhs, &[nx, ny], true, Some(&[0]));
        let scale = 1.0 / nx as f64;
        let phi: Vec<f64> = rhs.iter().map(|z| z.re * scale).collect();
        for i in 0..nx {
            let l = s.left(i);
            for j in 0..ny {
                let k = s.c(i, j);
                s.u[k] -= (phi[k] - phi[s.c(l, j)]) / h;
            }
            for j in 1..ny {
                let k = s.e(i, j);
                s.v[k] -= (phi[s.c(i, j)] - phi[s.c(i, j - 1)]) / h;
            }
        }
    }
}

pub(crate) fn initial_state(cfg: &SimConfig) -> RbState {
    let nx = cfg.resolution;
    let ny = nx / 2;
    let h = RB_LX / nx as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = RB_LY / 8.0;
    let hot = (RB_LX / 4.0, RB_LY / 4.0);
    let cold = (RB_LX / 2.0, RB_LY / 2.0);
    let inside = |x: f64, y: f64, c: (f64, f64)| (x - c.0).powi(2) + (y - c.1).powi(2) <= r * r;
    let mut t = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            let noise = cfg.temperature_noise * (2.0 * rng.random::<f64>() - 1.0);
            let lin = T_BOTTOM + (T_TOP - T_BOTTOM) * y / RB_LY;
            t.push(if inside(x, y, hot) {
                1.0
            } else if inside(x, y, cold) {
                -1.0
            } else {
                (lin + noise).clamp(0.0, 1.0)
            });
        }
    }
    RbState {
        nx,
        ny,
        h,
        u: vec![0.0; nx * ny],
        v: vec![0.0; nx * (ny + 1)],
        t,
    }
}

/// Node mesh of the `2π × π` box, periodic in `x` and closed in `y`.
pub fn rb_mesh(nx: usize) -> Result<Mesh> {
    Mesh::uniform_with_axes(
        DomainBox::new(vec![0.0, 0.0], vec![RB_LX, RB_LY])?,
        vec![nx, nx / 2 + 1],
        vec![AxisKind::Periodic, AxisKind::Closed],
    )
}

/// Rayleigh-Bénard convection with hot bottom (`T = 1`) and cold top (`T = 0`) walls.
///
/// Snapshots hold `u_x`, `u_y`, `T` on the node grid of [`rb_mesh`].
pub fn simulate_rayleigh_benard(cfg: &SimConfig) -> Result<DatasetContainer> {
    cfg.validate()?;
    let (nu, kappa) = cfg.diffusivities();
    let mut state = initial_state(cfg);
    let solver = RbSolver::new(nu, kappa, cfg.alpha_g, state.nx, state.h);
    let advance = |s: &mut RbState, span: f64| -> Result<()> {
        let mut left = span;
        while left > 0.0 {
            let (mu, mv) = s.max_speeds();
            if !(mu.max(mv) <= cfg.max_speed) {
                return Err(CodanoError::Stability {
                    bound: "max_speed".into(),
                    detail: format!("speed {:e} exceeds {:e}", mu.max(mv), cfg.max_speed),
                });
            }
            let dt = solver.stable_dt(s, cfg.cfl).min(left);
            if dt < 1e-9 && dt < left {
                return Err(CodanoError::Stability {
                    bound: "cfl".into(),
                    detail: format!("time step {dt:e} collapsed"),
                });
            }
            solver.step(s, dt);
            left -= dt;
            if left < 1e-12 * span {
                break;
            }
        }
        if s.t.iter().chain(&s.u).chain(&s.v).any(|x| !x.is_finite()) {
            return Err(CodanoError::Stability {
                bound: "finite state".into(),
                detail: "non-finite values".into(),
            });
        }
        Ok(())
    };
    advance(&mut state, cfg.burn_in_time())?;
    let mut snapshots = Vec::with_capacity(cfg.snapshots);
    for k in 0..cfg.snapshots {
        if k > 0 {
            advance(&mut state, cfg.snapshot_interval())?;
        }
        snapshots.push(state.nodes());
    }
    DatasetContainer::new(
        Arc::new(rb_mesh(state.nx)?),
        vec!["u_x".into(), "u_y".into(), "T".into()],
        snapshots,
        cfg.snapshot_interval(),
        serde_json::to_value(cfg).map_err(|e| CodanoError::Format(e.to_string()))?,
    )
}
