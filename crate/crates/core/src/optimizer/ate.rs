//! Absolute trajectory error and TUM-style trajectory files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    /// RMSE of aligned translation residuals, meters.
    pub rmse: f64,
    pub mean: f64,
    /// Standard deviation of the residual norms.
    pub std: f64,
    pub max: f64,
}

/// Rigid `(R, t)` minimizing `Σ ‖dst_k − (R src_k + t)‖²`.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch { left: src.len(), right: dst.len() });
    }
    if src.is_empty() {
        return Err(Error::TooFewPoints { points: 0, required: 1 });
    }
    let n = src.len() as f64;
    let ms: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let md: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - md) * (s - ms).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    Ok((r, md - r * ms))
}

/// Translation error after the best rigid alignment of `estimated` onto `truth`.
pub fn ate(estimated: &[Pose], truth: &[Pose]) -> Result<AteResult> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch { left: estimated.len(), right: truth.len() });
    }
    if estimated.len() < 2 {
        return Err(Error::TooFewPoints { points: estimated.len(), required: 2 });
    }
    let src: Vec<Vector3<f64>> = estimated.iter().map(Pose::translation).collect();
    let dst: Vec<Vector3<f64>> = truth.iter().map(Pose::translation).collect();
    let (r, t) = align_rigid(&src, &dst)?;
    let errs: Vec<f64> = src.iter().zip(&dst).map(|(s, d)| (d - (r * s + t)).norm()).collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max = errs.iter().copied().fold(0.0, f64::max);
    Ok(AteResult { rmse, mean, std, max })
}

/// Writes `timestamp tx ty tz qx qy qz qw` lines; frame `k` gets timestamp `k`.
pub fn write_tum(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, p) in poses.iter().enumerate() {
        let t = p.translation();
        let q = p.quaternion();
        writeln!(w, "{k} {} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a TUM trajectory, returning `(timestamp, pose)` per line.
pub fn read_tum(path: impl AsRef<Path>) -> Result<Vec<(f64, Pose)>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        if v.len() != 8 {
            return Err(Error::Parse(format!("line {}: expected 8 values, got {}", n + 1, v.len())));
        }
        let q = nalgebra::Quaternion::new(v[7], v[4], v[5], v[6]);
        out.push((v[0], Pose::new(UnitQuaternion::new_normalize(q), Vector3::new(v[1], v[2], v[3]))));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector6;

    fn path() -> Vec<Pose> {
        (0..6)
            .map(|k| {
                let a = k as f64 * 0.4;
                Pose::exp(&Vector6::new(0.0, 0.0, a, 3.0 * a.cos(), 3.0 * a.sin(), 0.1 * k as f64))
            })
            .collect()
    }

    #[test]
    fn identical_is_zero() {
        let p = path();
        assert!(ate(&p, &p).unwrap().rmse < 1e-12);
    }

    #[test]
    fn translated_copy_aligns_to_zero() {
        let p = path();
        let shift = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let q: Vec<Pose> = p.iter().map(|x| shift.compose(x)).collect();
        assert!(ate(&q, &p).unwrap().rmse < 1e-12);
        let turn = Pose::exp(&Vector6::new(0.3, -0.2, 1.0, 4.0, 5.0, 6.0));
        let r: Vec<Pose> = p.iter().map(|x| turn.compose(x)).collect();
        assert!(ate(&r, &p).unwrap().rmse < 1e-10);
    }

    #[test]
    fn two_pose_closed_form() {
        // centroids coincide at (1, 0, 0) after alignment; each end is off by 0.5
        let est = [Pose::identity(), Pose::from_translation(Vector3::new(1.0, 0.0, 0.0))];
        let gt = [Pose::identity(), Pose::from_translation(Vector3::new(2.0, 0.0, 0.0))];
        let r = ate(&est, &gt).unwrap();
        assert!((r.rmse - 0.5).abs() < 1e-12);
        assert!(r.std < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let p = path();
        assert!(matches!(ate(&p[..3], &p), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn tum_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("traj.txt");
        let p = path();
        write_tum(&f, &p).unwrap();
        let back = read_tum(&f).unwrap();
        assert_eq!(back.len(), p.len());
        for ((ts, q), (k, orig)) in back.iter().zip(p.iter().enumerate()) {
            assert_eq!(*ts, k as f64);
            assert!((q.translation() - orig.translation()).amax() < 1e-12);
            assert!(q.between(orig).angle() < 1e-9);
        }
        let text = std::fs::read_to_string(&f).unwrap();
        assert_eq!(text.lines().next().unwrap().split_whitespace().count(), 8);
    }
}
