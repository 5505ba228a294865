//! Fixed-step classical Runge–Kutta integration for autonomous systems.

use crate::error::Result;

/// Scratch buffers for the four RK4 stages of an `n`-dimensional system.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            stage: vec![0.0; n],
        }
    }

    /// Advances `y` by one step of size `dt` under `y' = f(y)`.
    ///
    /// `f` writes the derivative of its first argument into the second and is
    /// called once per stage; any error it returns aborts the step with `y`
    /// untouched.
    pub fn step<F>(&mut self, y: &mut [f64], dt: f64, mut f: F) -> Result<()>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        debug_assert_eq!(y.len(), self.k1.len());
        f(y, &mut self.k1)?;
        axpy_into(&mut self.stage, y, 0.5 * dt, &self.k1);
        f(&self.stage, &mut self.k2)?;
        axpy_into(&mut self.stage, y, 0.5 * dt, &self.k2);
        f(&self.stage, &mut self.k3)?;
        axpy_into(&mut self.stage, y, dt, &self.k3);
        f(&self.stage, &mut self.k4)?;
        let w = dt / 6.0;
        for i in 0..y.len() {
            y[i] += w * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

fn axpy_into(out: &mut [f64], y: &[f64], a: f64, k: &[f64]) {
    for ((o, &yi), &ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}
