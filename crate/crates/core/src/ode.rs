//! Fixed-step explicit integrators over flat state vectors.

/// Scratch buffers reused across steps.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn resize(&mut self, n: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(n, 0.0);
        }
    }
}

/// Classic fourth-order Runge-Kutta step, in place.
pub fn rk4_step<F, E>(y: &mut [f64], t: f64, dt: f64, ws: &mut Workspace, mut f: F) -> Result<(), E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    let n = y.len();
    ws.resize(n);
    let Workspace { k1, k2, k3, k4, tmp } = ws;

    f(t, y, k1)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    f(t + dt, tmp, k4)?;
    for i in 0..n {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// Explicit Euler step, in place.
pub fn euler_step<F, E>(y: &mut [f64], t: f64, dt: f64, ws: &mut Workspace, mut f: F) -> Result<(), E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    ws.resize(y.len());
    f(t, y, &mut ws.k1)?;
    for (yi, ki) in y.iter_mut().zip(&ws.k1) {
        *yi += dt * ki;
    }
    Ok(())
}
