//! KITTI odometry text formats: pose lines, calibration, and the on-disk
//! sequence layout.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::grid::{resize_area, Grid};
use crate::synthesis::{DepthMap, Frame};

use super::pfm;
use super::Sequence;

/// Rotation blocks further than this from orthonormal are projected onto the
/// nearest rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_numbers(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split_whitespace()
        .map(|t| {
            let v: f64 = t.parse().map_err(|_| format!("not a number: {t:?}"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value {t:?}"))
            }
        })
        .collect()
}

fn pose_from_numbers(v: &[f64]) -> std::result::Result<Pose6DoF, String> {
    if v.len() != 12 {
        return Err(format!("expected 12 numbers, found {}", v.len()));
    }
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let t = Vector3::new(v[3], v[7], v[11]);
    let det = r.determinant();
    if !(det > 1e-9) {
        return Err(format!("rotation block is not invertible or is a reflection (det = {det})"));
    }
    let drift = (r.transpose() * r - Matrix3::identity()).abs().max();
    let r = if drift > ORTHONORMAL_TOL {
        nearest_rotation(&r)
    } else {
        r
    };
    Ok(Pose6DoF::from_rotation_translation(&r, t))
}

/// Closest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Parses one pose line (row-major 3×4 `[R|t]`, camera-to-world).
pub fn parse_kitti_pose_line(line: &str) -> Result<Pose6DoF> {
    parse_numbers(line)
        .and_then(|v| pose_from_numbers(&v))
        .map_err(|m| parse_err("<line>", 1, m))
}

/// Serializes a pose as 12 numbers in round-trippable notation.
pub fn serialize_kitti_pose(p: &Pose6DoF) -> String {
    let r = p.rotation();
    let t = p.translation();
    let mut parts = Vec::with_capacity(12);
    for i in 0..3 {
        for j in 0..3 {
            parts.push(format!("{:e}", r[(i, j)]));
        }
        parts.push(format!("{:e}", t[i]));
    }
    parts.join(" ")
}

/// Parses a pose file's contents, one pose per line.
pub fn parse_pose_text(text: &str, path: &str) -> Result<Vec<Pose6DoF>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            parse_numbers(l)
                .and_then(|v| pose_from_numbers(&v))
                .map_err(|m| parse_err(path, i + 1, m))
        })
        .collect()
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose6DoF>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_text(&text, &path.display().to_string())
}

pub fn write_poses(path: &Path, poses: &[Pose6DoF]) -> Result<()> {
    let mut s = String::new();
    for p in poses {
        s.push_str(&serialize_kitti_pose(p));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Intrinsics from the `P2:` line (falling back to `P0:`) of a calibration
/// file, for an image of `width × height`.
pub fn parse_kitti_calib(text: &str, path: &str, width: usize, height: usize) -> Result<CameraIntrinsics> {
    let mut p2: Option<(usize, Vec<f64>)> = None;
    let mut p0: Option<(usize, Vec<f64>)> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            return Err(parse_err(path, i + 1, format!("expected `KEY: values`, found {line:?}")));
        };
        let key = key.trim();
        if key != "P2" && key != "P0" {
            continue;
        }
        let v = parse_numbers(rest).map_err(|m| parse_err(path, i + 1, m))?;
        if v.len() != 12 {
            return Err(parse_err(path, i + 1, format!("{key} needs 12 numbers, found {}", v.len())));
        }
        if key == "P2" {
            p2 = Some((i + 1, v));
        } else {
            p0 = Some((i + 1, v));
        }
    }
    let (line, p) = p2.or(p0).ok_or_else(|| parse_err(path, 0, "missing P2 line"))?;
    CameraIntrinsics::new(p[0], p[5], p[2], p[6], width, height)
        .map_err(|e| parse_err(path, line, e.to_string()))
}

/// A calibration file with the same projection for P0..P3.
pub fn format_calib(k: &CameraIntrinsics) -> String {
    let p = format!(
        "{:e} 0 {:e} 0 0 {:e} {:e} 0 0 0 1 0",
        k.fx, k.cx, k.fy, k.cy
    );
    (0..4).map(|i| format!("P{i}: {p}\n")).collect()
}

/// Parses `times.txt`: one timestamp in seconds per line.
pub fn parse_times(text: &str, path: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() {
            continue;
        }
        let v: f64 = l
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("not a timestamp: {l:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(path, i + 1, "non-finite timestamp"));
        }
        out.push(v);
    }
    Ok(out)
}

/// Reads an 8-bit PNG as intensities in `[0, 1]`; colour channels are
/// averaged.
pub fn read_image(path: &Path) -> Result<Grid> {
    let img = image::open(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / (3.0 * 255.0))
            .collect(),
    };
    Grid::from_vec(w, h, data)
}

/// Writes intensities in `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_image(grid: &Grid, path: &Path) -> Result<()> {
    crate::masking::write_mask_png(grid, path)
}

fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Load(format!(
                "{}: file name is not a zero-padded number",
                p.display()
            )));
        }
        files.push(p);
    }
    files.sort();
    Ok(files)
}

/// Loads a sequence directory:
/// `image_2/` (or `image_0/`) with numbered PNGs, `times.txt`, `calib.txt`,
/// optionally `poses.txt` and `depth/` with numbered PFMs.
///
/// With `resize` every frame is area-resampled to the given size and the
/// intrinsics are rescaled to match. Ground-truth depths are resized the
/// same way.
pub fn load_sequence(dir: &Path, resize: Option<(usize, usize)>) -> Result<Sequence> {
    let pose_file = dir.join("poses.txt");
    load_sequence_with_poses(dir, resize, pose_file.exists().then_some(pose_file.as_path()))
}

/// [`load_sequence`] with an explicit ground-truth pose file.
pub fn load_sequence_with_poses(
    dir: &Path,
    resize: Option<(usize, usize)>,
    poses: Option<&Path>,
) -> Result<Sequence> {
    let image_dir = ["image_2", "image_0"]
        .iter()
        .map(|d| dir.join(d))
        .find(|p| p.is_dir())
        .ok_or_else(|| Error::Load(format!("{}: no image_2/ or image_0/ directory", dir.display())))?;
    let files = numbered_files(&image_dir, "png")?;
    if files.is_empty() {
        return Err(Error::Load(format!("{}: no PNG frames", image_dir.display())));
    }
    let times_path = dir.join("times.txt");
    let times_text = fs::read_to_string(&times_path).map_err(|e| Error::io(&times_path, e))?;
    let timestamps = parse_times(&times_text, &times_path.display().to_string())?;
    if timestamps.len() != files.len() {
        return Err(Error::Load(format!(
            "{} frames in {} but {} timestamps in {}",
            files.len(),
            image_dir.display(),
            timestamps.len(),
            times_path.display()
        )));
    }
    let images = files.iter().map(|f| read_image(f)).collect::<Result<Vec<_>>>()?;
    let (w0, h0) = (images[0].width(), images[0].height());
    if let Some((i, _)) = images.iter().enumerate().find(|(_, g)| g.width() != w0 || g.height() != h0) {
        return Err(Error::Load(format!(
            "{}: size differs from the first frame",
            files[i].display()
        )));
    }
    let calib_path = dir.join("calib.txt");
    let calib_text = fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?;
    let mut k = parse_kitti_calib(&calib_text, &calib_path.display().to_string(), w0, h0)?;
    let (w, h) = resize.unwrap_or((w0, h0));
    if (w, h) != (w0, h0) {
        k = k.rescaled(w, h);
    }
    let frames = images
        .into_iter()
        .zip(&timestamps)
        .map(|(g, &t)| Frame::new(resize_area(&g, w, h)?.map(|v| v.clamp(0.0, 1.0)), t))
        .collect::<Result<Vec<_>>>()?;
    let gt_poses = match poses {
        Some(p) => {
            let v = read_poses(p)?;
            if v.len() != frames.len() {
                return Err(Error::Load(format!(
                    "{} poses in {} but {} frames",
                    v.len(),
                    p.display(),
                    frames.len()
                )));
            }
            Some(v)
        }
        None => None,
    };
    let depth_dir = dir.join("depth");
    let gt_depths = if depth_dir.is_dir() {
        let files = numbered_files(&depth_dir, "pfm")?;
        if files.len() != frames.len() {
            return Err(Error::Load(format!(
                "{} depth maps in {} but {} frames",
                files.len(),
                depth_dir.display(),
                frames.len()
            )));
        }
        Some(
            files
                .iter()
                .map(|f| {
                    let d = pfm::pfm_read(f)?;
                    DepthMap::new(resize_area(d.grid(), w, h)?)
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Sequence::new(frames, k, gt_poses, gt_depths)
}

/// Writes a sequence in the layout read by [`load_sequence`]. Frames are
/// quantized to 8 bits.
pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<()> {
    let image_dir = dir.join("image_2");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_image(&f.intensity, &image_dir.join(format!("{i:06}.png")))?;
    }
    let times: String = seq.frames.iter().map(|f| format!("{:e}\n", f.timestamp)).collect();
    let p = dir.join("times.txt");
    fs::write(&p, times).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("calib.txt");
    fs::write(&p, format_calib(&seq.intrinsics)).map_err(|e| Error::io(&p, e))?;
    if let Some(poses) = &seq.gt_poses {
        write_poses(&dir.join("poses.txt"), poses)?;
    }
    if let Some(depths) = &seq.gt_depths {
        let d = dir.join("depth");
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        for (i, depth) in depths.iter().enumerate() {
            pfm::pfm_write(depth, &d.join(format!("{i:06}.pfm")))?;
        }
    }
    Ok(())
}
