//! Sequences in the `x,y,w,h` per-line annotation convention, plus the
//! exit statistics reported for a dataset.
//!
//! On-disk layout of one sequence:
//!
//! ```text
//! <seq_id>/groundtruth.txt   one "x,y,w,h" line per frame, "-1,-1,-1,-1" for exit
//! <seq_id>/meta.txt          key=value, at least `class_label`
//! <seq_id>/frames/000000.png lossless RGB frames, zero-padded index
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::BBox;
use crate::kv::{KvError, KvMap};

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const META_FILE: &str = "meta.txt";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("empty dataset")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Meta {
        path: PathBuf,
        #[source]
        source: KvError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// 8-bit RGB frame, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbFrame {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DatasetError> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, DatasetError> {
        let img = image::open(path).map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        Ok(RgbFrame {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            data: rgb.into_raw(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameAnnotation {
    pub frame_index: usize,
    pub bbox: BBox,
}

impl FrameAnnotation {
    pub fn is_visible(&self) -> bool {
        !self.bbox.is_exit()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub class_label: String,
    pub frames: Vec<RgbFrame>,
    pub annotations: Vec<FrameAnnotation>,
}

impl Sequence {
    /// Builds a sequence from per-frame boxes; frame indices are assigned
    /// densely from zero.
    pub fn new(
        id: impl Into<String>,
        class_label: impl Into<String>,
        frames: Vec<RgbFrame>,
        boxes: Vec<BBox>,
    ) -> Result<Self, DatasetError> {
        let id = id.into();
        if frames.len() != boxes.len() {
            return Err(DatasetError::InvalidSequence(format!(
                "{id}: {} frames but {} annotations",
                frames.len(),
                boxes.len()
            )));
        }
        match boxes.first() {
            None => {
                return Err(DatasetError::InvalidSequence(format!("{id}: no frames")));
            }
            Some(b) if b.is_exit() => {
                return Err(DatasetError::InvalidSequence(format!(
                    "{id}: first frame must show the target"
                )));
            }
            _ => {}
        }
        let annotations = boxes
            .into_iter()
            .enumerate()
            .map(|(frame_index, bbox)| FrameAnnotation { frame_index, bbox })
            .collect();
        Ok(Sequence {
            id,
            class_label: class_label.into(),
            frames,
            annotations,
        })
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn boxes(&self) -> impl Iterator<Item = BBox> + '_ {
        self.annotations.iter().map(|a| a.bbox)
    }

    pub fn visibility(&self) -> Vec<bool> {
        self.annotations
            .iter()
            .map(FrameAnnotation::is_visible)
            .collect()
    }

    pub fn exit_frames(&self) -> usize {
        self.annotations.iter().filter(|a| !a.is_visible()).count()
    }

    pub fn has_exit(&self) -> bool {
        self.exit_frames() > 0
    }

    /// Lengths of maximal runs of consecutive exit frames.
    pub fn exit_segments(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut cur = 0;
        for a in &self.annotations {
            if a.is_visible() {
                if cur > 0 {
                    runs.push(cur);
                }
                cur = 0;
            } else {
                cur += 1;
            }
        }
        if cur > 0 {
            runs.push(cur);
        }
        runs
    }
}

/// Parses annotation text: one `x,y,w,h` line per frame.
///
/// A single trailing newline is allowed; any other blank line is an error.
pub fn parse_annotations(text: &str) -> Result<Vec<BBox>, DatasetError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let body = body.strip_suffix('\r').unwrap_or(body);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, raw)| parse_line(raw.strip_suffix('\r').unwrap_or(raw), i + 1))
        .collect()
}

fn parse_line(line: &str, line_no: usize) -> Result<BBox, DatasetError> {
    let err = |msg: String| DatasetError::Parse { line: line_no, msg };
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 4 {
        return Err(err(format!("expected 4 fields, found {}", fields.len())));
    }
    let mut v = [0.0f64; 4];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f
            .trim()
            .parse::<f64>()
            .map_err(|_| err(format!("not a number: `{}`", f.trim())))?;
    }
    BBox::from_xywh(v[0], v[1], v[2], v[3]).map_err(|e| err(e.to_string()))
}

pub fn format_annotations(boxes: impl IntoIterator<Item = BBox>) -> String {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&b.to_string());
        out.push('\n');
    }
    out
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Loads a sequence given its annotation file and frame directory. The
/// sequence id is the name of the directory holding the annotation file and
/// the class label comes from a `meta.txt` next to it, when present.
pub fn load_sequence(annotation_file: &Path, frame_dir: &Path) -> Result<Sequence, DatasetError> {
    let text = fs::read_to_string(annotation_file).map_err(io_err(annotation_file))?;
    let boxes = parse_annotations(&text)?;
    let parent = annotation_file.parent().unwrap_or(Path::new("."));
    let id = parent
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let meta_path = parent.join(META_FILE);
    let class_label = if meta_path.exists() {
        let meta = read_meta(&meta_path)?;
        meta.get("class_label").unwrap_or("").to_string()
    } else {
        String::new()
    };
    let frames = (0..boxes.len())
        .map(|i| RgbFrame::load_png(&frame_dir.join(frame_file_name(i))))
        .collect::<Result<Vec<_>, _>>()?;
    Sequence::new(id, class_label, frames, boxes)
}

fn read_meta(path: &Path) -> Result<KvMap, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    KvMap::parse(&text).map_err(|source| DatasetError::Meta {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads `<dir>/groundtruth.txt` with frames from `<dir>/frames`.
pub fn load_sequence_dir(dir: &Path) -> Result<Sequence, DatasetError> {
    load_sequence(&dir.join(GROUNDTRUTH_FILE), &dir.join(FRAMES_DIR))
}

/// Writes a sequence into `dir` (created if needed) using the standard layout.
pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<(), DatasetError> {
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
    let gt = dir.join(GROUNDTRUTH_FILE);
    fs::write(&gt, format_annotations(seq.boxes())).map_err(io_err(&gt))?;
    let mut meta = KvMap::new();
    meta.set("class_label", &seq.class_label);
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, meta.to_text()).map_err(io_err(&meta_path))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        frame.save_png(&frames_dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

/// Loads every sequence directory under `root`, sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<Sequence>, DatasetError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let p = entry.path();
        if p.join(GROUNDTRUTH_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    dirs.iter().map(|d| load_sequence_dir(d)).collect()
}

pub fn write_dataset(root: &Path, seqs: &[Sequence]) -> Result<(), DatasetError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    for s in seqs {
        write_sequence(s, &root.join(&s.id))?;
    }
    Ok(())
}

/// Exit statistics of a dataset.
///
/// * `evr`: fraction of sequences with at least one exit frame.
/// * `ael`: mean number of exit frames per exit-containing sequence.
/// * `avl`: mean sequence length.
/// * `miel` / `mael`: shortest / longest exit segment (maximal run of exit
///   frames) over the whole dataset; 0 when no exits exist.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub evr: f64,
    pub ael: f64,
    pub avl: f64,
    pub miel: usize,
    pub mael: usize,
    pub n_classes: usize,
}

pub fn compute_stats(seqs: &[Sequence]) -> Result<DatasetStats, DatasetError> {
    if seqs.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = seqs.len() as f64;
    let with_exit: Vec<&Sequence> = seqs.iter().filter(|s| s.has_exit()).collect();
    let evr = with_exit.len() as f64 / n;
    let ael = if with_exit.is_empty() {
        0.0
    } else {
        with_exit.iter().map(|s| s.exit_frames()).sum::<usize>() as f64 / with_exit.len() as f64
    };
    let avl = seqs.iter().map(|s| s.len()).sum::<usize>() as f64 / n;
    let segments: Vec<usize> = seqs.iter().flat_map(|s| s.exit_segments()).collect();
    let miel = segments.iter().copied().min().unwrap_or(0);
    let mael = segments.iter().copied().max().unwrap_or(0);
    let n_classes = seqs
        .iter()
        .map(|s| s.class_label.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    Ok(DatasetStats {
        evr,
        ael,
        avl,
        miel,
        mael,
        n_classes,
    })
}

impl DatasetStats {
    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("evr", self.evr);
        m.set("ael", self.ael);
        m.set("avl", self.avl);
        m.set("miel", self.miel);
        m.set("mael", self.mael);
        m.set("n_classes", self.n_classes);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(n: usize) -> Vec<RgbFrame> {
        vec![RgbFrame::filled(1, 1, [0, 0, 0]); n]
    }

    fn seq_from_mask(id: &str, visible: &[bool]) -> Sequence {
        let boxes = visible
            .iter()
            .map(|&v| {
                if v {
                    BBox::new(1.0, 1.0, 2.0, 2.0).unwrap()
                } else {
                    BBox::EXIT
                }
            })
            .collect();
        Sequence::new(id, "c", blank(visible.len()), boxes).unwrap()
    }

    #[test]
    fn parse_examples() {
        let b = parse_annotations("10,20,30,40\n").unwrap();
        assert_eq!(b, vec![BBox::new(10., 20., 30., 40.).unwrap()]);
        let b = parse_annotations("-1,-1,-1,-1").unwrap();
        assert!(b[0].is_exit());
        match parse_annotations("1,1,1,1\n10,20,-5,40\n") {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_annotations("1,2,3"),
            Err(DatasetError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_annotations("1,2,3,x"),
            Err(DatasetError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_annotations("1,1,1,1\n\n1,1,1,1"),
            Err(DatasetError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn sentinel_first_frame_rejected() {
        let r = Sequence::new("s", "c", blank(2), vec![BBox::EXIT, BBox::EXIT]);
        assert!(matches!(r, Err(DatasetError::InvalidSequence(_))));
    }

    #[test]
    fn stats_runs() {
        let mut mask = vec![true; 12];
        for i in [2, 3, 6, 7, 8, 9, 10] {
            mask[i] = false;
        }
        let s = seq_from_mask("a", &mask);
        assert_eq!(s.exit_segments(), vec![2, 5]);
        let st = compute_stats(&[s]).unwrap();
        assert_eq!((st.miel, st.mael), (2, 5));
        assert_eq!(st.ael, 7.0);
        assert_eq!(st.evr, 1.0);
    }

    #[test]
    fn stats_evr_and_no_exit() {
        let mut seqs: Vec<Sequence> = (0..10)
            .map(|i| seq_from_mask(&i.to_string(), &[true; 4]))
            .collect();
        let st = compute_stats(&seqs).unwrap();
        assert_eq!((st.evr, st.miel, st.mael, st.ael), (0.0, 0, 0, 0.0));
        for s in seqs.iter_mut().take(3) {
            *s = seq_from_mask(&s.id.clone(), &[true, false, true, true]);
        }
        assert_eq!(compute_stats(&seqs).unwrap().evr, 0.3);
        assert!(matches!(compute_stats(&[]), Err(DatasetError::Empty)));
    }

    #[test]
    fn exit_serializes_as_sentinel() {
        let text = format_annotations([BBox::new(0.5, 1.25, 3.0, 4.0).unwrap(), BBox::EXIT]);
        assert_eq!(text, "0.5,1.25,3,4\n-1,-1,-1,-1\n");
    }
}
