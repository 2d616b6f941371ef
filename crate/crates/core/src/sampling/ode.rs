//! Adaptive Dormand–Prince 5(4) integrator with the step-size controller and
//! initial-step heuristic of the usual RK45 implementations.

use crate::error::{Error, Result};

const C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
];
const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
// difference between the 5th- and 4th-order weights, stages 1..=7 (7 = FSAL)
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeTolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeTolerance {
    fn default() -> Self {
        OdeTolerance {
            rtol: 1e-5,
            atol: 1e-5,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

fn rms_norm(v: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(x, s)| (x / s).powi(2)).sum();
    (s / v.len() as f64).sqrt()
}

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1 > t0`.
pub fn dopri5<F>(mut f: F, t0: f64, t1: f64, y0: &[f64], tol: OdeTolerance) -> Result<(Vec<f64>, OdeStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(t1 > t0) {
        return Err(Error::contract(format!("integration interval [{t0}, {t1}] is empty")));
    }
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut eval = |t: f64, y: &[f64], out: &mut [f64], stats: &mut OdeStats| -> Result<()> {
        stats.evaluations += 1;
        f(t, y, out).map_err(|e| Error::Integrator {
            t_reached: t,
            reason: e.to_string(),
        })?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrator {
                t_reached: t,
                reason: "non-finite derivative".into(),
            });
        }
        Ok(())
    };
    eval(t, &y, &mut k[0], &mut stats)?;

    // initial step
    let scale: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
    let d0 = rms_norm(&y, &scale);
    let d1 = rms_norm(&k[0], &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(&k[0]).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    eval(t + h0, &y1, &mut f1, &mut stats)?;
    let diff: Vec<f64> = f1.iter().zip(&k[0]).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&diff, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let mut h = (100.0 * h0).min(h1).min(t1 - t0);

    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut sc = vec![0.0; n];
    while t < t1 {
        if stats.accepted + stats.rejected >= tol.max_steps {
            return Err(Error::Integrator {
                t_reached: t,
                reason: format!("exceeded {} steps", tol.max_steps),
            });
        }
        let min_step = 10.0 * ((t.abs() * f64::EPSILON).max(f64::MIN_POSITIVE));
        if h < min_step {
            return Err(Error::Integrator {
                t_reached: t,
                reason: "step size underflow".into(),
            });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..6 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += h * a * k[j][i];
                }
                ytmp[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            eval(t + C[s] * h, &ytmp, &mut tail[0], &mut stats)?;
        }
        for i in 0..n {
            let mut acc = y[i];
            for (j, b) in B.iter().enumerate() {
                acc += h * b * k[j][i];
            }
            ynew[i] = acc;
        }
        let t_new = if last { t1 } else { t + h };
        {
            let (head, tail) = k.split_at_mut(6);
            let _ = head;
            eval(t_new, &ynew, &mut tail[0], &mut stats)?;
        }
        for i in 0..n {
            let mut e = 0.0;
            for (j, w) in E.iter().enumerate() {
                e += w * k[j][i];
            }
            err[i] = h * e;
            sc[i] = tol.atol + tol.rtol * y[i].abs().max(ynew[i].abs());
        }
        let norm = rms_norm(&err, &sc);
        if norm < 1.0 {
            stats.accepted += 1;
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            let factor = if norm == 0.0 { 10.0 } else { (0.9 * norm.powf(-0.2)).min(10.0) };
            h *= factor;
        } else {
            stats.rejected += 1;
            h *= (0.9 * norm.powf(-0.2)).max(0.2);
        }
    }
    Ok((y, stats))
}
