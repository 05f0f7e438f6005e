//! Planar six-link arm kinematics.

use super::{ArmState, Pose2D, Side, ARM_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmGeometry {
    pub link_length: f64,
    pub mount_forward: f64,
    pub mount_lateral: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        Self {
            link_length: 0.12,
            mount_forward: 0.25,
            mount_lateral: 0.2,
        }
    }
}

impl ArmGeometry {
    /// Shoulder position in the body frame. The left arm sits on `+y`.
    pub fn mount(&self, side: Side) -> [f64; 2] {
        match side {
            Side::Left => [self.mount_forward, self.mount_lateral],
            Side::Right => [self.mount_forward, -self.mount_lateral],
        }
    }

    pub fn reach(&self) -> f64 {
        self.link_length * ARM_JOINTS as f64
    }

    /// Mount followed by the end of every link, body frame.
    pub fn chain_body(&self, joints: &[f64; ARM_JOINTS], side: Side) -> [[f64; 2]; ARM_JOINTS + 1] {
        let mut pts = [[0.0; 2]; ARM_JOINTS + 1];
        pts[0] = self.mount(side);
        let mut angle = 0.0;
        for (i, q) in joints.iter().enumerate() {
            angle += q;
            let (s, c) = angle.sin_cos();
            pts[i + 1] = [
                pts[i][0] + self.link_length * c,
                pts[i][1] + self.link_length * s,
            ];
        }
        pts
    }

    pub fn ee_body(&self, joints: &[f64; ARM_JOINTS], side: Side) -> [f64; 2] {
        self.chain_body(joints, side)[ARM_JOINTS]
    }

    /// Jacobian of the body-frame end-effector position, row-major 2x6.
    pub fn jacobian(&self, joints: &[f64; ARM_JOINTS], side: Side) -> [[f64; ARM_JOINTS]; 2] {
        let pts = self.chain_body(joints, side);
        let ee = pts[ARM_JOINTS];
        let mut j = [[0.0; ARM_JOINTS]; 2];
        for i in 0..ARM_JOINTS {
            let r = [ee[0] - pts[i][0], ee[1] - pts[i][1]];
            j[0][i] = -r[1];
            j[1][i] = r[0];
        }
        j
    }
}

/// End-effector position in the world frame.
pub fn forward_kinematics(base: &Pose2D, arm: &ArmState, side: Side, geom: &ArmGeometry) -> [f64; 2] {
    base.to_world(geom.ee_body(&arm.joints, side))
}

/// Absolute heading of the last link in the world frame.
pub fn ee_heading(base: &Pose2D, arm: &ArmState) -> f64 {
    base.theta + arm.joints.iter().sum::<f64>()
}

/// One damped least-squares step: `dq = J^T (J J^T + lambda^2 I)^-1 err`.
pub fn dls_step(jac: &[[f64; ARM_JOINTS]; 2], err: [f64; 2], lambda: f64) -> [f64; ARM_JOINTS] {
    let dot = |a: &[f64; ARM_JOINTS], b: &[f64; ARM_JOINTS]| -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    };
    let l2 = lambda * lambda;
    let a = dot(&jac[0], &jac[0]) + l2;
    let b = dot(&jac[0], &jac[1]);
    let d = dot(&jac[1], &jac[1]) + l2;
    let det = a * d - b * b;
    if det.abs() < 1e-300 {
        return [0.0; ARM_JOINTS];
    }
    let y0 = (d * err[0] - b * err[1]) / det;
    let y1 = (-b * err[0] + a * err[1]) / det;
    let mut dq = [0.0; ARM_JOINTS];
    for i in 0..ARM_JOINTS {
        dq[i] = jac[0][i] * y0 + jac[1][i] * y1;
    }
    dq
}

#[derive(Clone, Copy, Debug)]
pub struct IkSolution {
    pub joints: [f64; ARM_JOINTS],
    pub residual: f64,
}

/// Iterative DLS solve for a body-frame end-effector target, starting from
/// `seed`. Deterministic; joints are clamped to `[-limit, limit]`.
pub fn solve_ik(
    geom: &ArmGeometry,
    side: Side,
    seed: &[f64; ARM_JOINTS],
    target_body: [f64; 2],
    limit: f64,
) -> IkSolution {
    const LAMBDA: f64 = 0.05;
    const MAX_STEP: f64 = 0.2;
    let mut q = *seed;
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        let ee = geom.ee_body(&q, side);
        let err = [target_body[0] - ee[0], target_body[1] - ee[1]];
        residual = err[0].hypot(err[1]);
        if residual < 1e-5 {
            break;
        }
        let mut dq = dls_step(&geom.jacobian(&q, side), err, LAMBDA);
        let mut norm = dq.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-3 * residual {
            // Stretched chain with the error along its axis: bend it.
            dq = std::array::from_fn(|i| if i % 2 == 0 { 0.15 } else { -0.15 });
            norm = dq.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        let scale = if norm > MAX_STEP { MAX_STEP / norm } else { 1.0 };
        for (qi, d) in q.iter_mut().zip(&dq) {
            *qi = (*qi + scale * d).clamp(-limit, limit);
        }
    }
    IkSolution {
        joints: q,
        residual,
    }
}
