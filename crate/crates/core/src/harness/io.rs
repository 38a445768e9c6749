//! On-disk formats: camera and annotation text files, and the scene
//! directory that bundles them with image, flow, and occluder dumps.
//!
//! ```text
//! scene/
//!   dataset.toml               frame/view/channel counts and grid size
//!   cameras.txt                id K(9) R(9) C(3) width height
//!   annotations.txt            t view channel x y visible provenance
//!   occluders/t0000.txt        sphere/box records per frame
//!   images/t0000_v0.grid       S×S×3
//!   flows/v0_t0000_t0003.grid  W×H×2 backward flow t2 → t1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, Vec2, Vec3};
use crate::grid::{Dims, Grid, GridError};
use crate::heatmap::{Annotation, Keypoint, Provenance};
use crate::synth::{ground_truth, ground_truth_flow, render, Scene};
use crate::temporal::FlowField;
use crate::visibility::{OccluderSet, VisibilityError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Grid {
        path: PathBuf,
        #[source]
        source: GridError,
    },
    #[error("{path}: {source}")]
    Occluders {
        path: PathBuf,
        #[source]
        source: VisibilityError,
    },
    #[error("{0}")]
    Inconsistent(String),
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| IoError::File { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

// Non-empty, comment-stripped lines with their 1-based numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(n, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (n + 1, line.split_whitespace().collect()))
    })
}

pub fn format_cameras(cameras: &[Camera]) -> String {
    let mut s = String::from("# id K(row-major 9) R(row-major 9) C(3) width height\n");
    for (id, cam) in cameras.iter().enumerate() {
        write!(s, "{id}").unwrap();
        for m in [&cam.intrinsics, &cam.rotation] {
            for r in 0..3 {
                for c in 0..3 {
                    write!(s, " {}", m[(r, c)]).unwrap();
                }
            }
        }
        writeln!(s, " {} {} {} {} {}", cam.center.x, cam.center.y, cam.center.z, cam.width, cam.height).unwrap();
    }
    s
}

/// Cameras ordered by id. Ids must be `0..n` without gaps.
pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<Camera>, IoError> {
    let mut by_id = BTreeMap::new();
    for (line, f) in records(text) {
        let err = |msg: String| IoError::Parse { path: path.to_path_buf(), line, msg };
        if f.len() != 24 {
            return Err(err(format!("expected 24 fields, found {}", f.len())));
        }
        let id: usize = f[0].parse().map_err(|e| err(format!("bad id: {e}")))?;
        let nums: Vec<f64> = f[1..22].iter().map(|v| v.parse::<f64>().map_err(|e| err(format!("bad number {v:?}: {e}")))).collect::<Result<_, _>>()?;
        let width: usize = f[22].parse().map_err(|e| err(format!("bad width: {e}")))?;
        let height: usize = f[23].parse().map_err(|e| err(format!("bad height: {e}")))?;
        let k = Matrix3::from_row_slice(&nums[0..9]);
        let r = Matrix3::from_row_slice(&nums[9..18]);
        let c = Vec3::new(nums[18], nums[19], nums[20]);
        let cam = Camera::new(k, r, c, width, height).map_err(|e| err(e.to_string()))?;
        if by_id.insert(id, cam).is_some() {
            return Err(err(format!("duplicate camera id {id}")));
        }
    }
    if by_id.keys().enumerate().any(|(k, id)| k != *id) {
        return Err(IoError::Inconsistent(format!("{}: camera ids must be 0..n", path.display())));
    }
    Ok(by_id.into_values().collect())
}

/// `annotations[t][view]` as `t view channel x y visible provenance` lines.
pub fn format_annotations(annotations: &[Vec<Annotation>]) -> String {
    let mut s = String::from("# t view channel x y visible provenance\n");
    for (t, views) in annotations.iter().enumerate() {
        for (v, ann) in views.iter().enumerate() {
            for (c, k) in ann.keypoints.iter().enumerate() {
                if let Some(k) = k {
                    let prov = match k.provenance {
                        Provenance::Human => "human",
                        Provenance::Augmented => "augmented",
                    };
                    writeln!(s, "{t} {v} {c} {} {} {} {prov}", k.position.x, k.position.y, u8::from(k.visible)).unwrap();
                }
            }
        }
    }
    s
}

pub fn parse_annotations(
    text: &str,
    path: &Path,
    frames: usize,
    views: usize,
    channels: usize,
    dims: Dims,
) -> Result<Vec<Vec<Annotation>>, IoError> {
    let mut out = vec![vec![Annotation::empty(dims, channels); views]; frames];
    for (line, f) in records(text) {
        let err = |msg: String| IoError::Parse { path: path.to_path_buf(), line, msg };
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let idx = |k: usize, bound: usize, what: &str| -> Result<usize, IoError> {
            let v: usize = f[k].parse().map_err(|e| err(format!("bad {what}: {e}")))?;
            if v >= bound {
                return Err(err(format!("{what} {v} out of range (< {bound})")));
            }
            Ok(v)
        };
        let (t, v, c) = (idx(0, frames, "frame")?, idx(1, views, "view")?, idx(2, channels, "channel")?);
        let x: f64 = f[3].parse().map_err(|e| err(format!("bad x: {e}")))?;
        let y: f64 = f[4].parse().map_err(|e| err(format!("bad y: {e}")))?;
        let visible = match f[5] {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("visible must be 0 or 1, found {other:?}"))),
        };
        let provenance = match f[6] {
            "human" => Provenance::Human,
            "augmented" => Provenance::Augmented,
            other => return Err(err(format!("unknown provenance {other:?}"))),
        };
        let position = Vec2::new(x, y);
        if !Annotation::in_bounds(dims, &position) {
            return Err(err(format!("({x}, {y}) outside the {}x{} grid", dims.width, dims.height)));
        }
        out[t][v].keypoints[c] = Some(Keypoint { position, visible, provenance });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct DatasetMeta {
    frames: usize,
    views: usize,
    channels: usize,
    grid_width: usize,
    grid_height: usize,
    image_size: usize,
}

/// Everything training and evaluation read: images, cameras on the
/// prediction grid, ground-truth annotations, occluders, and flows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    /// `images[t][view]`.
    pub images: Vec<Vec<Grid>>,
    /// `annotations[t][view]`.
    pub annotations: Vec<Vec<Annotation>>,
    pub occluders: Vec<OccluderSet>,
    /// Backward flows keyed by `(view, t1, t2)`.
    pub flows: BTreeMap<(usize, usize, usize), FlowField>,
}

fn quantize(mut g: Grid) -> Grid {
    // values pass through the f32 dump format, so keep in-memory data identical
    g.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    g
}

impl Dataset {
    /// Renders every image and computes flows between frames `strides` apart.
    pub fn from_scene(scene: &Scene, strides: &[usize], flow_noise: f64) -> Self {
        let (frames, views) = (scene.frame_count(), scene.view_count());
        let images = (0..frames).map(|t| (0..views).map(|v| quantize(render(scene, v, t))).collect()).collect();
        let annotations = (0..frames).map(|t| (0..views).map(|v| ground_truth(scene, v, t, 1.0).2).collect()).collect();
        let mut flows = BTreeMap::new();
        for v in 0..views {
            for t1 in 0..frames {
                for &s in strides {
                    for t2 in [t1.checked_sub(s), Some(t1 + s).filter(|&t| t < frames)].into_iter().flatten() {
                        let seed = scene.seed ^ ((v * frames + t1) * frames + t2) as u64;
                        let flow = ground_truth_flow(scene, v, t1, t2, flow_noise, seed);
                        flows.insert((v, t1, t2), FlowField::new(quantize(flow.grid().clone())).expect("finite flow"));
                    }
                }
            }
        }
        Self { cameras: scene.cameras.clone(), images, annotations, occluders: scene.occluders.clone(), flows }
    }

    pub fn frames(&self) -> usize {
        self.images.len()
    }

    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    pub fn channels(&self) -> usize {
        self.annotations.first().and_then(|a| a.first()).map_or(0, |a| a.keypoints.len())
    }

    pub fn dims(&self) -> Dims {
        self.cameras.first().map_or(Dims::new(0, 0), |c| Dims::new(c.width, c.height))
    }

    pub fn save(&self, dir: &Path) -> Result<(), IoError> {
        let meta = DatasetMeta {
            frames: self.frames(),
            views: self.views(),
            channels: self.channels(),
            grid_width: self.dims().width,
            grid_height: self.dims().height,
            image_size: self.images.first().and_then(|f| f.first()).map_or(0, |g| g.width),
        };
        write(&dir.join("dataset.toml"), &toml::to_string(&meta).expect("plain struct"))?;
        write(&dir.join("cameras.txt"), &format_cameras(&self.cameras))?;
        write(&dir.join("annotations.txt"), &format_annotations(&self.annotations))?;
        for (t, occ) in self.occluders.iter().enumerate() {
            write(&dir.join("occluders").join(format!("t{t:04}.txt")), &occ.to_text())?;
        }
        let save_grid = |path: PathBuf, g: &Grid| -> Result<(), IoError> {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| IoError::File { path: parent.to_path_buf(), source })?;
            }
            g.save(&path).map_err(|source| IoError::Grid { path, source })
        };
        for (t, frame) in self.images.iter().enumerate() {
            for (v, img) in frame.iter().enumerate() {
                save_grid(dir.join("images").join(format!("t{t:04}_v{v}.grid")), img)?;
            }
        }
        for ((v, t1, t2), flow) in &self.flows {
            save_grid(dir.join("flows").join(format!("v{v}_t{t1:04}_t{t2:04}.grid")), flow.grid())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let cam_path = dir.join("cameras.txt");
        let cameras = parse_cameras(&read(&cam_path)?, &cam_path)?;
        let meta_path = dir.join("dataset.toml");
        let meta: DatasetMeta = toml::from_str(&read(&meta_path)?)
            .map_err(|e| IoError::Parse { path: meta_path.clone(), line: 0, msg: e.to_string() })?;
        if meta.views != cameras.len() {
            return Err(IoError::Inconsistent(format!("{} cameras but {} views declared", cameras.len(), meta.views)));
        }
        let dims = Dims::new(meta.grid_width, meta.grid_height);
        if cameras.iter().any(|c| c.width != dims.width || c.height != dims.height) {
            return Err(IoError::Inconsistent("camera sizes differ from the declared grid".into()));
        }
        let ann_path = dir.join("annotations.txt");
        let annotations = parse_annotations(&read(&ann_path)?, &ann_path, meta.frames, meta.views, meta.channels, dims)?;

        let mut occluders = Vec::with_capacity(meta.frames);
        for t in 0..meta.frames {
            let path = dir.join("occluders").join(format!("t{t:04}.txt"));
            let set = OccluderSet::parse(&read(&path)?).map_err(|source| IoError::Occluders { path, source })?;
            occluders.push(set);
        }
        let load_grid = |path: PathBuf| Grid::load(&path).map_err(|source| IoError::Grid { path, source });
        let mut images = Vec::with_capacity(meta.frames);
        for t in 0..meta.frames {
            let mut frame = Vec::with_capacity(meta.views);
            for v in 0..meta.views {
                let img = load_grid(dir.join("images").join(format!("t{t:04}_v{v}.grid")))?;
                if img.width != meta.image_size || img.height != meta.image_size || img.channels != 3 {
                    return Err(IoError::Inconsistent(format!("image t{t} v{v} has the wrong shape")));
                }
                frame.push(img);
            }
            images.push(frame);
        }
        let mut flows = BTreeMap::new();
        let flow_dir = dir.join("flows");
        if flow_dir.exists() {
            let mut entries: Vec<PathBuf> = fs::read_dir(&flow_dir)
                .map_err(|source| IoError::File { path: flow_dir.clone(), source })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            for path in entries {
                let Some(key) = parse_flow_name(&path) else { continue };
                let grid = load_grid(path.clone())?;
                let flow = FlowField::new(grid).map_err(|source| IoError::Grid { path, source })?;
                flows.insert(key, flow);
            }
        }
        Ok(Self { cameras, images, annotations, occluders, flows })
    }
}

fn parse_flow_name(path: &Path) -> Option<(usize, usize, usize)> {
    let stem = path.file_stem()?.to_str()?;
    let mut parts = stem.split('_');
    let v = parts.next()?.strip_prefix('v')?.parse().ok()?;
    let t1 = parts.next()?.strip_prefix('t')?.parse().ok()?;
    let t2 = parts.next()?.strip_prefix('t')?.parse().ok()?;
    Some((v, t1, t2))
}
