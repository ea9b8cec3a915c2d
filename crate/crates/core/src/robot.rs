//! Serial-chain kinematics for the physical arm and its twin.
//!
//! Links follow the modified Denavit–Hartenberg convention (Craig): the
//! transform from frame `i-1` to frame `i` is
//! `RotX(alpha) * TransX(a) * RotZ(theta_offset + q) * TransZ(d)`.
//! An optional fixed `tool` transform (same convention, no joint variable)
//! places the end-effector point beyond the last joint frame.

use std::ops::{Deref, DerefMut};
use std::path::Path;

use nalgebra::{Isometry3, Matrix3xX, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One revolute joint: geometric parameters plus position and rate limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub qdot_min: f64,
    pub qdot_max: f64,
}

impl JointParams {
    pub fn q_range(&self) -> f64 {
        self.q_max - self.q_min
    }

    pub fn qdot_range(&self) -> f64 {
        self.qdot_max - self.qdot_min
    }
}

/// Fixed transform appended after the last joint (flange, hand, TCP).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedLink {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub theta: f64,
}

macro_rules! joint_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

joint_newtype!(
    /// Joint angles in radians.
    JointVector
);
joint_newtype!(
    /// Joint angular velocities in rad/s.
    JointVelVector
);

/// A serial revolute chain. Construct through [`KinematicChain::new`] so the
/// limit invariants hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainFile", into = "ChainFile")]
pub struct KinematicChain {
    joints: Vec<JointParams>,
    tool: FixedLink,
}

#[derive(Serialize, Deserialize)]
struct ChainFile {
    joints: Vec<JointParams>,
    #[serde(default)]
    tool: FixedLink,
}

impl TryFrom<ChainFile> for KinematicChain {
    type Error = Error;
    fn try_from(f: ChainFile) -> Result<Self> {
        KinematicChain::new(f.joints, f.tool)
    }
}

impl From<KinematicChain> for ChainFile {
    fn from(c: KinematicChain) -> Self {
        ChainFile {
            joints: c.joints,
            tool: c.tool,
        }
    }
}

fn mdh(alpha: f64, a: f64, theta: f64, d: f64) -> Isometry3<f64> {
    let rx = Isometry3::from_parts(
        Translation3::identity(),
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), alpha),
    );
    let tx = Isometry3::translation(a, 0.0, 0.0);
    let rz = Isometry3::from_parts(
        Translation3::identity(),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta),
    );
    let tz = Isometry3::translation(0.0, 0.0, d);
    rx * tx * rz * tz
}

impl KinematicChain {
    pub fn new(joints: Vec<JointParams>, tool: FixedLink) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidChain("chain needs at least one joint".into()));
        }
        for (k, j) in joints.iter().enumerate() {
            let finite = [j.a, j.d, j.alpha, j.theta_offset, j.q_min, j.q_max, j.qdot_min, j.qdot_max]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidChain(format!("joint {k} has non-finite parameters")));
            }
            if j.q_min >= j.q_max || j.qdot_min >= j.qdot_max {
                return Err(Error::ZeroWidthRange { joint: k });
            }
        }
        Ok(Self { joints, tool })
    }

    /// Franka Research 3 kinematic table and joint limits; the tool point is
    /// the TCP of the standard hand (flange 0.107 m + hand 0.1034 m).
    pub fn fr3() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let geometry = [
            (0.0, 0.333, 0.0),
            (0.0, 0.0, -FRAC_PI_2),
            (0.0, 0.316, FRAC_PI_2),
            (0.0825, 0.0, FRAC_PI_2),
            (-0.0825, 0.384, -FRAC_PI_2),
            (0.0, 0.0, FRAC_PI_2),
            (0.088, 0.0, FRAC_PI_2),
        ];
        let q_lim = [
            (-2.7437, 2.7437),
            (-1.7837, 1.7837),
            (-2.9007, 2.9007),
            (-3.0421, -0.1518),
            (-2.8065, 2.8065),
            (0.5445, 4.5169),
            (-3.0159, 3.0159),
        ];
        let qdot_max = [2.62, 2.62, 2.62, 2.62, 5.26, 4.18, 5.26];
        let joints = (0..7)
            .map(|k| JointParams {
                a: geometry[k].0,
                d: geometry[k].1,
                alpha: geometry[k].2,
                theta_offset: 0.0,
                q_min: q_lim[k].0,
                q_max: q_lim[k].1,
                qdot_min: -qdot_max[k],
                qdot_max: qdot_max[k],
            })
            .collect();
        let tool = FixedLink {
            d: 0.107 + 0.1034,
            theta: -std::f64::consts::FRAC_PI_4,
            ..FixedLink::default()
        };
        Self::new(joints, tool).expect("built-in FR3 table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointParams] {
        &self.joints
    }

    pub fn tool(&self) -> &FixedLink {
        &self.tool
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.joints.len() {
            return Err(Error::DimensionMismatch {
                expected: self.joints.len(),
                got,
            });
        }
        Ok(())
    }

    /// Frames of every joint (base-relative), followed by the end-effector frame.
    fn frames(&self, q: &[f64]) -> Vec<Isometry3<f64>> {
        let mut out = Vec::with_capacity(self.joints.len() + 1);
        let mut t = Isometry3::identity();
        for (j, &qi) in self.joints.iter().zip(q) {
            t *= mdh(j.alpha, j.a, j.theta_offset + qi, j.d);
            out.push(t);
        }
        t *= mdh(self.tool.alpha, self.tool.a, self.tool.theta, self.tool.d);
        out.push(t);
        out
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Isometry3<f64>> {
        self.check_len(q.len())?;
        Ok(*self.frames(q).last().expect("frames always end with the tool"))
    }

    /// Linear-velocity block of the geometric Jacobian, 3 x n (m/rad).
    pub fn jacobian_linear(&self, q: &[f64]) -> Result<Matrix3xX<f64>> {
        self.check_len(q.len())?;
        let frames = self.frames(q);
        let p_ee = frames[self.joints.len()].translation.vector;
        let mut jac = Matrix3xX::zeros(self.joints.len());
        for (i, f) in frames[..self.joints.len()].iter().enumerate() {
            let z = f.rotation * Vector3::z();
            jac.set_column(i, &z.cross(&(p_ee - f.translation.vector)));
        }
        Ok(jac)
    }

    /// Cartesian end-effector velocity `J(q) * qdot`.
    pub fn end_effector_velocity(&self, q: &[f64], qdot: &[f64]) -> Result<Vector3<f64>> {
        self.check_len(qdot.len())?;
        let jac = self.jacobian_linear(q)?;
        Ok(jac * nalgebra::DVector::from_column_slice(qdot))
    }

    /// Min-max normalization of `(q, qdot)` into `2n` values in `[0, 1]`.
    pub fn normalize_state(&self, q: &[f64], qdot: &[f64]) -> Result<Vec<f64>> {
        self.check_len(q.len())?;
        self.check_len(qdot.len())?;
        let mut out = Vec::with_capacity(2 * q.len());
        out.extend(self.joints.iter().zip(q).map(|(j, v)| (v - j.q_min) / j.q_range()));
        out.extend(self.joints.iter().zip(qdot).map(|(j, v)| (v - j.qdot_min) / j.qdot_range()));
        Ok(out)
    }

    pub fn denormalize_state(&self, x: &[f64]) -> Result<(JointVector, JointVelVector)> {
        let n = self.joints.len();
        if x.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                expected: 2 * n,
                got: x.len(),
            });
        }
        let q = self.joints.iter().zip(&x[..n]).map(|(j, v)| j.q_min + v * j.q_range());
        let qd = self.joints.iter().zip(&x[n..]).map(|(j, v)| j.qdot_min + v * j.qdot_range());
        Ok((JointVector(q.collect()), JointVelVector(qd.collect())))
    }

    pub fn q_in_limits(&self, q: &[f64]) -> bool {
        q.len() == self.n_joints() && self.joints.iter().zip(q).all(|(j, v)| (j.q_min..=j.q_max).contains(v))
    }

    pub fn clamp_q(&self, q: &mut [f64]) -> bool {
        let mut clamped = false;
        for (j, v) in self.joints.iter().zip(q.iter_mut()) {
            let c = v.clamp(j.q_min, j.q_max);
            clamped |= c != *v;
            *v = c;
        }
        clamped
    }

    pub fn clamp_qdot(&self, qdot: &mut [f64]) {
        for (j, v) in self.joints.iter().zip(qdot.iter_mut()) {
            *v = v.clamp(j.qdot_min, j.qdot_max);
        }
    }

    /// Centre of every joint range; a convenient in-limit configuration.
    pub fn mid_configuration(&self) -> JointVector {
        JointVector(self.joints.iter().map(|j| 0.5 * (j.q_min + j.q_max)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent FK: explicit modified-DH matrices multiplied as plain arrays.
    fn fk_oracle(chain: &KinematicChain, q: &[f64]) -> [f64; 3] {
        fn mat(alpha: f64, a: f64, theta: f64, d: f64) -> [[f64; 4]; 4] {
            let (ca, sa) = (alpha.cos(), alpha.sin());
            let (ct, st) = (theta.cos(), theta.sin());
            [
                [ct, -st, 0.0, a],
                [st * ca, ct * ca, -sa, -sa * d],
                [st * sa, ct * sa, ca, ca * d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        }
        fn mul(x: &[[f64; 4]; 4], y: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
            let mut r = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    r[i][j] = (0..4).map(|k| x[i][k] * y[k][j]).sum();
                }
            }
            r
        }
        let mut t = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        for (j, &qi) in chain.joints().iter().zip(q) {
            t = mul(&t, &mat(j.alpha, j.a, j.theta_offset + qi, j.d));
        }
        let tool = chain.tool();
        t = mul(&t, &mat(tool.alpha, tool.a, tool.theta, tool.d));
        [t[0][3], t[1][3], t[2][3]]
    }

    fn random_q(chain: &KinematicChain, rng: &mut ChaCha8Rng) -> Vec<f64> {
        chain.joints().iter().map(|j| rng.random_range(j.q_min..j.q_max)).collect()
    }

    fn straight_chain(lengths: &[f64]) -> KinematicChain {
        let joints = lengths
            .iter()
            .map(|&a| JointParams {
                a,
                d: 0.0,
                alpha: 0.0,
                theta_offset: 0.0,
                q_min: -1.0,
                q_max: 1.0,
                qdot_min: -1.0,
                qdot_max: 1.0,
            })
            .collect();
        KinematicChain::new(joints, FixedLink::default()).unwrap()
    }

    #[test]
    fn straight_chain_reaches_sum_of_lengths() {
        let chain = straight_chain(&[0.3, 0.2, 0.5]);
        let pose = chain.forward_kinematics(&[0.0; 3]).unwrap();
        // With MDH the a_i of joint i lies before its rotation, so the last
        // length needs the tool link to show up; all three are before the tool.
        assert!((pose.translation.x - 1.0).abs() < 1e-15);
        assert_eq!(pose.translation.y, 0.0);
        assert_eq!(pose.translation.z, 0.0);
    }

    #[test]
    fn fr3_zero_pose_matches_oracle() {
        let chain = KinematicChain::fr3();
        let q = vec![0.0; 7];
        let p = chain.forward_kinematics(&q).unwrap().translation.vector;
        let o = fk_oracle(&chain, &q);
        for k in 0..3 {
            assert!((p[k] - o[k]).abs() < 1e-12, "axis {k}: {} vs {}", p[k], o[k]);
        }
        // Known FR3 geometry at q = 0: x = 0.088, z = 0.333 + 0.316 + 0.384 - 0.2104.
        assert!((o[0] - 0.088).abs() < 1e-12);
        assert!(o[1].abs() < 1e-12);
        assert!((o[2] - (0.333 + 0.316 + 0.384 - 0.2104)).abs() < 1e-12);
    }

    #[test]
    fn fk_matches_oracle_at_random_configurations() {
        let chain = KinematicChain::fr3();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let q = random_q(&chain, &mut rng);
            let p = chain.forward_kinematics(&q).unwrap().translation.vector;
            let o = fk_oracle(&chain, &q);
            for k in 0..3 {
                assert!((p[k] - o[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn final_wrist_rotation_leaves_position_unchanged() {
        let chain = KinematicChain::fr3();
        let mut q = chain.mid_configuration();
        let p0 = chain.forward_kinematics(&q).unwrap().translation.vector;
        q[6] += 0.7;
        let p1 = chain.forward_kinematics(&q).unwrap().translation.vector;
        assert!((p0 - p1).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let chain = KinematicChain::fr3();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let q = random_q(&chain, &mut rng);
            let jac = chain.jacobian_linear(&q).unwrap();
            for i in 0..7 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                let pp = chain.forward_kinematics(&qp).unwrap().translation.vector;
                let pm = chain.forward_kinematics(&qm).unwrap().translation.vector;
                let fd = (pp - pm) / (2.0 * h);
                for r in 0..3 {
                    worst = worst.max((jac[(r, i)] - fd[r]).abs());
                }
            }
        }
        assert!(worst <= 1e-6, "max abs error {worst}");
    }

    #[test]
    fn last_joint_column_vanishes_on_axis_tool() {
        let chain = KinematicChain::fr3();
        let jac = chain.jacobian_linear(&chain.mid_configuration()).unwrap();
        assert!(jac.column(6).norm() < 1e-12);
    }

    #[test]
    fn static_arm_has_zero_velocity() {
        let chain = KinematicChain::fr3();
        let v = chain.end_effector_velocity(&chain.mid_configuration(), &[0.0; 7]).unwrap();
        assert_eq!(v, Vector3::zeros());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let chain = KinematicChain::fr3();
        assert!(matches!(
            chain.forward_kinematics(&[0.0; 6]),
            Err(Error::DimensionMismatch { expected: 7, got: 6 })
        ));
        assert!(chain.jacobian_linear(&[0.0; 8]).is_err());
        assert!(chain.normalize_state(&[0.0; 7], &[0.0; 3]).is_err());
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let chain = KinematicChain::fr3();
        let lo: Vec<f64> = chain.joints().iter().map(|j| j.q_min).collect();
        let hi: Vec<f64> = chain.joints().iter().map(|j| j.q_max).collect();
        let vlo: Vec<f64> = chain.joints().iter().map(|j| j.qdot_min).collect();
        let vhi: Vec<f64> = chain.joints().iter().map(|j| j.qdot_max).collect();
        assert!(chain.normalize_state(&lo, &vlo).unwrap().iter().all(|&x| x == 0.0));
        assert!(chain.normalize_state(&hi, &vhi).unwrap().iter().all(|&x| x == 1.0));
        let mid_v = vec![0.0; 7];
        let x = chain.normalize_state(&chain.mid_configuration(), &mid_v).unwrap();
        assert!(x.iter().all(|&v| (v - 0.5).abs() < 1e-12));
        let q03: Vec<f64> = chain.joints().iter().map(|j| j.q_min + 0.3 * j.q_range()).collect();
        let x = chain.normalize_state(&q03, &mid_v).unwrap();
        assert!(x[..7].iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn zero_width_range_rejected() {
        let mut j = KinematicChain::fr3().joints()[0];
        j.q_max = j.q_min;
        assert!(matches!(
            KinematicChain::new(vec![j], FixedLink::default()),
            Err(Error::ZeroWidthRange { joint: 0 })
        ));
    }

    #[test]
    fn chain_json_round_trip() {
        let chain = KinematicChain::fr3();
        let text = serde_json::to_string(&chain).unwrap();
        assert!(text.contains("\"joints\""));
        assert_eq!(KinematicChain::from_json(&text).unwrap(), chain);
        let bad = text.replace("\"q_min\":-2.7437", "\"q_min\":9.0");
        assert!(KinematicChain::from_json(&bad).is_err());
    }

    proptest::proptest! {
        #[test]
        fn normalize_round_trip(seed in 0u64..10_000) {
            let chain = KinematicChain::fr3();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_q(&chain, &mut rng);
            let qd: Vec<f64> = chain.joints().iter().map(|j| rng.random_range(j.qdot_min..j.qdot_max)).collect();
            let x = chain.normalize_state(&q, &qd).unwrap();
            proptest::prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            let (q2, qd2) = chain.denormalize_state(&x).unwrap();
            for k in 0..7 {
                proptest::prop_assert!((q[k] - q2[k]).abs() < 1e-12);
                proptest::prop_assert!((qd[k] - qd2[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn fk_is_pure(seed in 0u64..1000) {
            let chain = KinematicChain::fr3();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_q(&chain, &mut rng);
            let a = chain.forward_kinematics(&q).unwrap();
            let b = chain.forward_kinematics(&q).unwrap();
            proptest::prop_assert_eq!(a.translation.vector, b.translation.vector);
            proptest::prop_assert_eq!(a.rotation, b.rotation);
        }
    }
}
