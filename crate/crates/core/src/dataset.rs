//! On-disk datasets: per-task directories under a manifest, and RGB-D sequences.
//!
//! ```text
//! root/manifest.txt
//! root/tasks/<category>/<train|test>/<index>/{task.txt, frames.bin, gt.obj}
//! root/sequence/{sequence.txt, frame_NNNN.pose, frame_NNNN.rgbd, frame_NNNN.labels, gt/<name>.obj}
//! ```
//!
//! Binary blobs are little-endian. Shape parameters are not stored; they are
//! regenerated from the task's category and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::Config;
use crate::geometry::{ObjectState, Rigid};
use crate::meshmetrics::Mesh;
use crate::objmap::{GroundTruthObject, MapperFrame};
use crate::render::{Camera, Mask, RgbdImage};
use crate::taskgen::scene::SequenceFrame;
use crate::taskgen::{sample_shape, Category, Frame, Task, TaskConfig};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const FORMAT: &str = "noma-dataset";
pub const VERSION: u32 = 1;
pub const SEQUENCE_DIR: &str = "sequence";
pub const SEQUENCE_FILE: &str = "sequence.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub task: TaskConfig,
    /// Task counts per category and split.
    pub counts: BTreeMap<Category, (usize, usize)>,
    pub has_sequence: bool,
}

impl Manifest {
    pub fn task_dir(root: &Path, category: Category, split: Split, index: usize) -> PathBuf {
        root.join("tasks")
            .join(category.as_str())
            .join(split.as_str())
            .join(format!("{index:03}"))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format = {FORMAT}");
        let _ = writeln!(s, "version = {VERSION}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "task.min_frames = {}", self.task.min_frames);
        let _ = writeln!(s, "task.max_frames = {}", self.task.max_frames);
        let _ = writeln!(s, "task.width = {}", self.task.width);
        let _ = writeln!(s, "task.height = {}", self.task.height);
        let _ = writeln!(s, "task.fov = {}", self.task.fov);
        let cats: Vec<&str> = self.counts.keys().map(|c| c.as_str()).collect();
        let _ = writeln!(s, "categories = {}", cats.join(","));
        for (c, (tr, te)) in &self.counts {
            let _ = writeln!(s, "count.{c}.train = {tr}");
            let _ = writeln!(s, "count.{c}.test = {te}");
        }
        let _ = writeln!(s, "sequence = {}", self.has_sequence);
        s
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let cfg = Config::load(&path)?;
        if cfg.raw("format") != Some(FORMAT) {
            return Err(Error::format(&path, "not a dataset manifest"));
        }
        let version: u32 = cfg.require("version")?;
        if version != VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported dataset version {version}"),
            ));
        }
        let cats: Vec<Category> = cfg.get_list("categories")?.unwrap_or_default();
        let mut counts = BTreeMap::new();
        for c in cats {
            counts.insert(
                c,
                (
                    cfg.require(&format!("count.{c}.train"))?,
                    cfg.require(&format!("count.{c}.test"))?,
                ),
            );
        }
        Ok(Self {
            seed: cfg.require("seed")?,
            task: TaskConfig {
                min_frames: cfg.require("task.min_frames")?,
                max_frames: cfg.require("task.max_frames")?,
                width: cfg.require("task.width")?,
                height: cfg.require("task.height")?,
                fov: cfg.require("task.fov")?,
            },
            counts,
            has_sequence: cfg.get("sequence", false)?,
        })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_file(&root.join(MANIFEST), self.to_text().as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_f64s(path: &Path, key: &str, s: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(f64::from_str)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, format!("{key}: {e}")))?;
    if v.len() != n {
        return Err(Error::format(
            path,
            format!("{key}: expected {n} numbers, got {}", v.len()),
        ));
    }
    Ok(v)
}

/// `fx fy cx cy width height` then the row-major camera-to-world transform.
pub fn camera_to_line(c: &Camera) -> String {
    let mut v = vec![c.fx, c.fy, c.cx, c.cy, c.width as f64, c.height as f64];
    v.extend_from_slice(&c.pose.to_array());
    join_f64(&v)
}

pub fn camera_from_line(path: &Path, key: &str, s: &str) -> Result<Camera> {
    let v = parse_f64s(path, key, s, 18)?;
    let dim = |x: f64| -> Result<usize> {
        if x >= 1.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(Error::format(path, format!("{key}: bad image dimension {x}")))
        }
    };
    let mut pose = [0.0; 12];
    pose.copy_from_slice(&v[6..]);
    Ok(Camera {
        fx: v[0],
        fy: v[1],
        cx: v[2],
        cy: v[3],
        width: dim(v[4])?,
        height: dim(v[5])?,
        pose: Rigid::from_array(&pose),
    })
}

fn put_f32s(buf: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, "truncated blob"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn write_task(dir: &Path, task: &Task) -> Result<()> {
    let mut s = String::new();
    let st = &task.gt_state;
    let _ = writeln!(s, "category = {}", task.category);
    let _ = writeln!(s, "seed = {}", task.seed);
    let _ = writeln!(s, "position = {}", join_f64(&st.position));
    let _ = writeln!(s, "yaw = {}", st.yaw);
    let _ = writeln!(s, "size = {}", join_f64(&st.size));
    let _ = writeln!(s, "frames = {}", task.frames.len());
    for (i, c) in task.cameras.iter().enumerate() {
        let _ = writeln!(s, "camera.{i:03} = {}", camera_to_line(c));
    }
    write_file(&dir.join("task.txt"), s.as_bytes())?;
    let mut buf = Vec::new();
    for f in &task.frames {
        put_f32s(&mut buf, &f.image.rgb);
        put_f32s(&mut buf, &f.image.depth);
        buf.extend(f.mask.data.iter().map(|&b| b as u8));
    }
    write_file(&dir.join("frames.bin"), &buf)?;
    task.gt_mesh.save_obj(&dir.join("gt.obj"))
}

pub fn read_task(dir: &Path) -> Result<Task> {
    let path = dir.join("task.txt");
    let cfg = Config::load(&path)?;
    let category: Category = cfg.require("category")?;
    let seed: u64 = cfg.require("seed")?;
    let vec3 = |key: &str| -> Result<[f64; 3]> {
        let v = parse_f64s(&path, key, &cfg.require::<String>(key)?, 3)?;
        Ok([v[0], v[1], v[2]])
    };
    let gt_state = ObjectState {
        position: vec3("position")?,
        yaw: cfg.require("yaw")?,
        size: vec3("size")?,
    };
    let n: usize = cfg.require("frames")?;
    let cameras = (0..n)
        .map(|i| {
            let key = format!("camera.{i:03}");
            camera_from_line(&path, &key, &cfg.require::<String>(&key)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let blob_path = dir.join("frames.bin");
    let bytes = read_file(&blob_path)?;
    let mut cur = Cursor {
        path: &blob_path,
        bytes: &bytes,
        pos: 0,
    };
    let mut frames = Vec::with_capacity(n);
    for c in &cameras {
        let px = c.width * c.height;
        let rgb = cur.f32s(3 * px)?;
        let depth = cur.f32s(px)?;
        let data = cur.take(px)?.iter().map(|&b| b != 0).collect();
        frames.push(Frame {
            image: RgbdImage {
                width: c.width,
                height: c.height,
                rgb,
                depth,
            },
            mask: Mask {
                width: c.width,
                height: c.height,
                data,
            },
        });
    }
    cur.finish()?;
    let task = Task {
        category,
        seed,
        spec: sample_shape(category, seed),
        gt_state,
        cameras,
        frames,
        gt_mesh: Mesh::load_obj(&dir.join("gt.obj"))?,
    };
    task.validate()?;
    Ok(task)
}

/// Train and test tasks of one category.
pub fn load_tasks(root: &Path, category: Category) -> Result<(Vec<Task>, Vec<Task>)> {
    let manifest = Manifest::load(root)?;
    let Some(&(n_train, n_test)) = manifest.counts.get(&category) else {
        return Err(Error::InvalidArgument(format!(
            "category {category} is absent from dataset {}",
            root.display()
        )));
    };
    let load = |split, n| {
        (0..n)
            .map(|i| read_task(&Manifest::task_dir(root, category, split, i)))
            .collect::<Result<Vec<_>>>()
    };
    Ok((load(Split::Train, n_train)?, load(Split::Test, n_test)?))
}

/// A recorded sequence with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<SequenceFrame>,
    pub ground_truth: Vec<GroundTruthObject>,
}

impl Sequence {
    pub fn mapper_frames(&self) -> Vec<MapperFrame> {
        self.frames
            .iter()
            .map(|f| MapperFrame {
                camera: f.camera.clone(),
                image: f.image.clone(),
                detections: f.detections(),
            })
            .collect()
    }
}

fn frame_stem(i: usize) -> String {
    format!("frame_{i:04}")
}

pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    let categories: Vec<&str> = seq
        .frames
        .first()
        .map(|f| f.categories.iter().map(|c| c.as_str()).collect())
        .unwrap_or_default();
    let mut s = String::new();
    let _ = writeln!(s, "frames = {}", seq.frames.len());
    let _ = writeln!(s, "categories = {}", categories.join(","));
    let names: Vec<&str> = seq.ground_truth.iter().map(|g| g.name.as_str()).collect();
    let _ = writeln!(s, "ground_truth = {}", names.join(","));
    write_file(&dir.join(SEQUENCE_FILE), s.as_bytes())?;
    for (i, f) in seq.frames.iter().enumerate() {
        let stem = frame_stem(i);
        write_file(
            &dir.join(format!("{stem}.pose")),
            format!("{}\n", camera_to_line(&f.camera)).as_bytes(),
        )?;
        let mut buf = Vec::new();
        put_f32s(&mut buf, &f.image.rgb);
        put_f32s(&mut buf, &f.image.depth);
        write_file(&dir.join(format!("{stem}.rgbd")), &buf)?;
        let labels: Vec<u8> = f.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
        write_file(&dir.join(format!("{stem}.labels")), &labels)?;
    }
    let gt_dir = dir.join("gt");
    for g in &seq.ground_truth {
        fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
        g.mesh.save_obj(&gt_dir.join(format!("{}.obj", g.name)))?;
    }
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let path = dir.join(SEQUENCE_FILE);
    let cfg = Config::load(&path)?;
    let n: usize = cfg.require("frames")?;
    let categories: Vec<Category> = cfg.get_list("categories")?.unwrap_or_default();
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let stem = frame_stem(i);
        let pose_path = dir.join(format!("{stem}.pose"));
        let text = fs::read_to_string(&pose_path).map_err(|e| {
            Error::format(&pose_path, format!("pose file for {stem} unreadable: {e}"))
        })?;
        let camera = camera_from_line(&pose_path, &stem, text.trim())?;
        let px = camera.width * camera.height;
        let rgbd_path = dir.join(format!("{stem}.rgbd"));
        let bytes = read_file(&rgbd_path)?;
        let mut cur = Cursor {
            path: &rgbd_path,
            bytes: &bytes,
            pos: 0,
        };
        let rgb = cur.f32s(3 * px)?;
        let depth = cur.f32s(px)?;
        cur.finish()?;
        let label_path = dir.join(format!("{stem}.labels"));
        let lb = read_file(&label_path)?;
        if lb.len() != 2 * px {
            return Err(Error::format(&label_path, "label image size mismatch"));
        }
        let labels: Vec<u16> = lb
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        if labels.iter().any(|&l| l as usize > categories.len()) {
            return Err(Error::format(&label_path, "label without a category"));
        }
        frames.push(SequenceFrame {
            image: RgbdImage {
                width: camera.width,
                height: camera.height,
                rgb,
                depth,
            },
            camera,
            labels,
            categories: categories.clone(),
        });
    }
    let mut ground_truth = Vec::new();
    for name in cfg.get_list::<String>("ground_truth")?.unwrap_or_default() {
        let cat = name
            .rsplit_once('_')
            .and_then(|(c, _)| c.parse::<Category>().ok())
            .ok_or_else(|| Error::format(&path, format!("bad ground-truth name {name}")))?;
        let mesh = Mesh::load_obj(&dir.join("gt").join(format!("{name}.obj")))?;
        ground_truth.push(GroundTruthObject {
            name,
            category: cat,
            mesh,
        });
    }
    Ok(Sequence {
        frames,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::make_task;
    use crate::taskgen::scene::{make_scene, render_sequence, SceneConfig};

    fn small_cfg() -> TaskConfig {
        TaskConfig {
            min_frames: 4,
            max_frames: 5,
            width: 16,
            height: 16,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn task_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let task = make_task(Category::Mug, 5, &small_cfg()).unwrap();
        write_task(dir.path(), &task).unwrap();
        let back = read_task(dir.path()).unwrap();
        assert_eq!(back.frames, task.frames);
        assert_eq!(back.cameras, task.cameras);
        assert_eq!(back.gt_state, task.gt_state);
        assert_eq!(back.gt_mesh, task.gt_mesh);
        assert_eq!(back.spec, task.spec);
    }

    #[test]
    fn truncated_frames_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let task = make_task(Category::Ball, 2, &small_cfg()).unwrap();
        write_task(dir.path(), &task).unwrap();
        let p = dir.path().join("frames.bin");
        let mut b = fs::read(&p).unwrap();
        b.pop();
        fs::write(&p, &b).unwrap();
        assert!(matches!(read_task(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn camera_line_round_trip() {
        let task = make_task(Category::Book, 1, &small_cfg()).unwrap();
        let c = &task.cameras[0];
        let back = camera_from_line(Path::new("x"), "k", &camera_to_line(c)).unwrap();
        assert_eq!(&back, c);
        assert!(camera_from_line(Path::new("x"), "k", "1 2 3").is_err());
    }

    #[test]
    fn manifest_round_trip_and_absent_category() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            seed: 4,
            task: small_cfg(),
            counts: [(Category::Mug, (0, 0))].into_iter().collect(),
            has_sequence: false,
        };
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
        let e = load_tasks(dir.path(), Category::Book).unwrap_err().to_string();
        assert!(e.contains("book"), "{e}");
    }

    #[test]
    fn sequence_round_trip_and_missing_pose() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            frames: 3,
            width: 24,
            height: 16,
            ..SceneConfig::default()
        };
        let scene = make_scene(&cfg.categories, 1).unwrap();
        let frames = render_sequence(&scene, &cfg, 1).unwrap();
        let ground_truth = scene
            .objects
            .iter()
            .enumerate()
            .map(|(k, o)| GroundTruthObject {
                name: o.name(k),
                category: o.spec.category,
                mesh: o.world_mesh(),
            })
            .collect();
        let seq = Sequence {
            frames,
            ground_truth,
        };
        write_sequence(dir.path(), &seq).unwrap();
        assert_eq!(read_sequence(dir.path()).unwrap(), seq);
        fs::remove_file(dir.path().join("frame_0001.pose")).unwrap();
        let e = read_sequence(dir.path()).unwrap_err().to_string();
        assert!(e.contains("frame_0001"), "{e}");
    }
}
