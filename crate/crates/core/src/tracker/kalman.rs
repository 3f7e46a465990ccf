//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)`.
//!
//! Process and measurement noise scale with the box height, as in SORT and
//! ByteTrack.

use crate::geometry::BBox;

pub type Vec8 = [f64; 8];
pub type Mat8 = [[f64; 8]; 8];
type Vec4 = [f64; 4];
type Mat4 = [[f64; 4]; 4];

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

/// Mean and covariance of one track's motion state.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vec8,
    pub covariance: Mat8,
}

impl KalmanState {
    pub fn bbox(&self) -> BBox {
        BBox::from_xyah(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }
}

fn diag8(d: &Vec8) -> Mat8 {
    let mut m = [[0.0; 8]; 8];
    for i in 0..8 {
        m[i][i] = d[i];
    }
    m
}

fn symmetrize(p: &mut Mat8) {
    for i in 0..8 {
        for j in (i + 1)..8 {
            let avg = 0.5 * (p[i][j] + p[j][i]);
            p[i][j] = avg;
            p[j][i] = avg;
        }
    }
}

/// Cholesky factor of a symmetric positive definite 4×4 matrix.
fn cholesky4(a: &Mat4) -> Mat4 {
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = libm::sqrt((a[i][i] - s).max(f64::MIN_POSITIVE));
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Solves `A x = b` given the Cholesky factor of `A`.
fn cho_solve(l: &Mat4, b: &Vec4) -> Vec4 {
    let mut y = [0.0; 4];
    for i in 0..4 {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        x[i] = (y[i] - ((i + 1)..4).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KalmanFilter;

impl KalmanFilter {
    pub fn initiate(&self, measurement: &BBox) -> KalmanState {
        let z = measurement.to_xyah();
        let h = z[3];
        let mut mean = [0.0; 8];
        mean[..4].copy_from_slice(&z);
        let std = [
            2.0 * STD_WEIGHT_POSITION * h,
            2.0 * STD_WEIGHT_POSITION * h,
            1e-2,
            2.0 * STD_WEIGHT_POSITION * h,
            10.0 * STD_WEIGHT_VELOCITY * h,
            10.0 * STD_WEIGHT_VELOCITY * h,
            1e-5,
            10.0 * STD_WEIGHT_VELOCITY * h,
        ];
        KalmanState {
            mean,
            covariance: diag8(&std.map(|s| s * s)),
        }
    }

    /// One constant-velocity step: `x ← F x`, `P ← F P Fᵀ + Q`.
    pub fn predict(&self, state: &mut KalmanState) {
        let h = state.mean[3];
        let std = [
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_POSITION * h,
            1e-2,
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_VELOCITY * h,
            STD_WEIGHT_VELOCITY * h,
            1e-5,
            STD_WEIGHT_VELOCITY * h,
        ];
        for i in 0..4 {
            state.mean[i] += state.mean[i + 4];
        }
        // F = [[I, I], [0, I]]; F P Fᵀ expanded blockwise.
        let p = state.covariance;
        let mut out = [[0.0; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                let mut v = p[i][j];
                if i < 4 {
                    v += p[i + 4][j];
                }
                if j < 4 {
                    v += p[i][j + 4];
                }
                if i < 4 && j < 4 {
                    v += p[i + 4][j + 4];
                }
                out[i][j] = v;
            }
        }
        for i in 0..8 {
            out[i][i] += std[i] * std[i];
        }
        symmetrize(&mut out);
        state.covariance = out;
    }

    /// Measurement-space mean and innovation covariance `H P Hᵀ + R`.
    pub fn project(&self, state: &KalmanState) -> (Vec4, Mat4) {
        let h = state.mean[3];
        let std = [
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_POSITION * h,
            1e-1,
            STD_WEIGHT_POSITION * h,
        ];
        let mut s = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = state.covariance[i][j];
            }
            s[i][i] += std[i] * std[i];
        }
        let mut mean = [0.0; 4];
        mean.copy_from_slice(&state.mean[..4]);
        (mean, s)
    }

    /// Standard Kalman correction against a measured box.
    pub fn update(&self, state: &mut KalmanState, measurement: &BBox) {
        let z = measurement.to_xyah();
        let (projected, s) = self.project(state);
        let l = cholesky4(&s);
        // Kalman gain K = P Hᵀ S⁻¹, row by row: K[i] = S⁻¹ (P Hᵀ)[i]ᵀ (S symmetric).
        let mut gain = [[0.0; 4]; 8];
        for (i, row) in gain.iter_mut().enumerate() {
            let pht = [
                state.covariance[i][0],
                state.covariance[i][1],
                state.covariance[i][2],
                state.covariance[i][3],
            ];
            *row = cho_solve(&l, &pht);
        }
        let innovation = [
            z[0] - projected[0],
            z[1] - projected[1],
            z[2] - projected[2],
            z[3] - projected[3],
        ];
        for i in 0..8 {
            state.mean[i] += (0..4).map(|k| gain[i][k] * innovation[k]).sum::<f64>();
        }
        // P ← P − K S Kᵀ
        let mut ks = [[0.0; 4]; 8];
        for i in 0..8 {
            for j in 0..4 {
                ks[i][j] = (0..4).map(|k| gain[i][k] * s[k][j]).sum();
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                state.covariance[i][j] -= (0..4).map(|k| ks[i][k] * gain[j][k]).sum::<f64>();
            }
        }
        symmetrize(&mut state.covariance);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_moves_center_by_velocity() {
        let kf = KalmanFilter;
        let mut s = kf.initiate(&BBox::new(0.0, 0.0, 10.0, 20.0));
        s.mean[4] = 1.0;
        let cx = s.mean[0];
        kf.predict(&mut s);
        assert!((s.mean[0] - (cx + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let kf = KalmanFilter;
        let mut s = kf.initiate(&BBox::new(5.0, 5.0, 15.0, 35.0));
        s.mean[4] = 2.0;
        kf.predict(&mut s);
        let before = s.mean;
        let predicted = s.bbox();
        kf.update(&mut s, &predicted);
        for (a, b) in s.mean.iter().zip(before) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
