//! Frame bundle directories: `intrinsics.json` plus per-frame color, depth,
//! pose and detection files under `frames/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::detection::FrameDetections;
use crate::error::{Error, Result};
use crate::frame::{CameraIntrinsics, ColorImage, DepthMap, Frame, Pose};
use crate::netpbm;

#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
}

#[derive(Default)]
struct FrameFiles {
    color: Option<PathBuf>,
    depth: Option<PathBuf>,
    pose: Option<PathBuf>,
    det: Option<PathBuf>,
}

pub fn frame_stem(index: usize) -> String {
    format!("{index:06}")
}

pub fn load_intrinsics(dir: &Path) -> Result<CameraIntrinsics> {
    let path = dir.join("intrinsics.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let k: CameraIntrinsics = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    k.validate()?;
    Ok(k)
}

pub fn parse_pose(text: &str) -> Result<Pose> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Pose(format!("bad number {t:?}"))))
        .collect::<Result<_>>()?;
    Pose::from_row_major(&values)
}

pub fn format_pose(pose: &Pose) -> String {
    let v = pose.to_row_major();
    let mut s = String::new();
    for row in v.chunks(4) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn scan_frames(frames_dir: &Path) -> Result<BTreeMap<usize, FrameFiles>> {
    let mut found: BTreeMap<usize, FrameFiles> = BTreeMap::new();
    let entries = fs::read_dir(frames_dir).map_err(|e| Error::io(frames_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(frames_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some((stem, kind)) = name.split_once('.') else {
            continue;
        };
        if stem.len() != 6 || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let index: usize = stem.parse().unwrap();
        let slot = found.entry(index).or_default();
        let path = entry.path();
        match kind {
            "color.ppm" => slot.color = Some(path),
            "depth.pgm" => slot.depth = Some(path),
            "pose.txt" => slot.pose = Some(path),
            "det.json" => slot.det = Some(path),
            _ => {}
        }
    }
    Ok(found)
}

fn load_frame(index: usize, files: &FrameFiles, k: &CameraIntrinsics) -> Result<Frame> {
    let missing = |what: &str| Error::Bundle(format!("frame {index:06}: missing {what} file"));
    let color_path = files.color.as_ref().ok_or_else(|| missing("color"))?;
    let depth_path = files.depth.as_ref().ok_or_else(|| missing("depth"))?;
    let pose_path = files.pose.as_ref().ok_or_else(|| missing("pose"))?;

    let (color, _) = netpbm::read_ppm(color_path)?;
    let depth = netpbm::read_pgm16(depth_path)?;
    for (what, w, h) in [
        ("color", color.width, color.height),
        ("depth", depth.width, depth.height),
    ] {
        if (w, h) != (k.width, k.height) {
            return Err(Error::Dimension(format!(
                "frame {index:06} {what} raster is {w}x{h}, intrinsics say {}x{}",
                k.width, k.height
            )));
        }
    }
    let pose_text = fs::read_to_string(pose_path).map_err(|e| Error::io(pose_path, e))?;
    let pose = parse_pose(&pose_text).map_err(|e| Error::Pose(format!("frame {index:06}: {e}")))?;

    let detections = match &files.det {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut d: FrameDetections =
                serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
            d.validate(k)?;
            for r in &mut d.relations {
                r.frame = index;
            }
            d
        }
        None => FrameDetections::default(),
    };
    Ok(Frame {
        index,
        color,
        depth,
        pose,
        detections,
    })
}

/// Loads every frame of a bundle in ascending index order.
pub fn load_bundle(dir: &Path) -> Result<FrameBundle> {
    let intrinsics = load_intrinsics(dir)?;
    let frames_dir = dir.join("frames");
    let listing = if frames_dir.exists() {
        scan_frames(&frames_dir)?
    } else {
        BTreeMap::new()
    };
    let listing: Vec<_> = listing.into_iter().collect();
    let frames = listing
        .par_iter()
        .map(|(index, files)| load_frame(*index, files, &intrinsics))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameBundle { intrinsics, frames })
}

pub fn write_intrinsics(dir: &Path, k: &CameraIntrinsics) -> Result<()> {
    fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("intrinsics.json");
    let text = serde_json::to_string_pretty(k).expect("intrinsics serialize");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn write_frame(dir: &Path, frame: &Frame) -> Result<()> {
    let frames_dir = dir.join("frames");
    let stem = frame_stem(frame.index);
    let write = |name: String, bytes: &[u8]| -> Result<()> {
        let path = frames_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(format!("{stem}.color.ppm"), &netpbm::encode_ppm(&frame.color, &[]))?;
    write(format!("{stem}.depth.pgm"), &netpbm::encode_pgm16(&frame.depth))?;
    write(format!("{stem}.pose.txt"), format_pose(&frame.pose).as_bytes())?;
    let det = serde_json::to_string(&frame.detections).expect("detections serialize");
    write(format!("{stem}.det.json"), (det + "\n").as_bytes())
}

pub fn write_bundle(dir: &Path, bundle: &FrameBundle) -> Result<()> {
    write_intrinsics(dir, &bundle.intrinsics)?;
    bundle.frames.par_iter().try_for_each(|f| write_frame(dir, f))
}

/// Convenience for callers holding only rasters.
pub fn empty_frame(index: usize, k: &CameraIntrinsics, pose: Pose) -> Frame {
    Frame {
        index,
        color: ColorImage::new(k.width, k.height),
        depth: DepthMap::new(k.width, k.height),
        pose,
        detections: FrameDetections::default(),
    }
}
