//! Plain-text description of an on-disk volume.
//!
//! ```text
//! version 1
//! dims 64 64 100
//! dtype u16
//! layout stack
//! 000.raw
//! 001.raw
//! ...
//! ```
//!
//! A stack entry may carry a byte offset (`volume.raw 8192`), which is how
//! a multipage file is described: every entry names the same file. Chunk
//! stores use `layout chunks cx cy cz` followed by the chunk files in
//! z, y, x order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dtype::Dtype;
use crate::error::{Error, PlanError, Result};
use crate::volume::VolumeMeta;

use super::chunks::ChunkGrid;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceEntry {
    pub file: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    Stack(Vec<SliceEntry>),
    Chunks { chunk: [usize; 3], files: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub meta: VolumeMeta,
    pub layout: Layout,
}

/// Zero-padded slice file name; at least three digits, wider when the
/// stack needs it, so lexicographic order is z order.
pub fn slice_file_name(z: usize, depth: usize) -> String {
    let digits = depth.saturating_sub(1).max(1).to_string().len().max(3);
    format!("{z:0digits$}.raw")
}

impl Manifest {
    pub fn stack(meta: VolumeMeta) -> Self {
        let files = (0..meta.depth)
            .map(|z| SliceEntry {
                file: slice_file_name(z, meta.depth),
                offset: 0,
            })
            .collect();
        Manifest {
            meta,
            layout: Layout::Stack(files),
        }
    }

    /// All slices concatenated in one file.
    pub fn multipage(meta: VolumeMeta, file: &str) -> Self {
        let sb = meta.slice_bytes();
        let files = (0..meta.depth)
            .map(|z| SliceEntry {
                file: file.to_string(),
                offset: z as u64 * sb,
            })
            .collect();
        Manifest {
            meta,
            layout: Layout::Stack(files),
        }
    }

    pub fn chunks(grid: &ChunkGrid) -> Self {
        Manifest {
            meta: grid.meta(),
            layout: Layout::Chunks {
                chunk: grid.chunk(),
                files: grid.indices().map(|i| grid.file_name(i)).collect(),
            },
        }
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut s = format!("version 1\ndims {} {} {}\ndtype {}\n", m.nx, m.ny, m.depth, m.dtype);
        match &self.layout {
            Layout::Stack(entries) => {
                s.push_str("layout stack\n");
                let multi = entries.windows(2).any(|w| w[0].file == w[1].file);
                for e in entries {
                    if multi {
                        let _ = writeln!(s, "{} {}", e.file, e.offset);
                    } else {
                        let _ = writeln!(s, "{}", e.file);
                    }
                }
            }
            Layout::Chunks { chunk, files } => {
                let _ = writeln!(s, "layout chunks {} {} {}", chunk[0], chunk[1], chunk[2]);
                for f in files {
                    let _ = writeln!(s, "{f}");
                }
            }
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut header = |key: &str| -> Result<(usize, Vec<String>)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing `{key}` line")))?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some(key) {
                return Err(err(n, format!("expected `{key}`")));
            }
            Ok((n, parts.map(str::to_string).collect()))
        };
        let (n, v) = header("version")?;
        if v != ["1"] {
            return Err(err(n, format!("unsupported version {}", v.join(" "))));
        }
        let (n, dims) = header("dims")?;
        let nums: Vec<usize> = dims
            .iter()
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(n, "dims must be three integers".into()))?;
        if nums.len() != 3 {
            return Err(err(n, "dims must be three integers".into()));
        }
        let (n, dt) = header("dtype")?;
        let dtype: Dtype = dt
            .first()
            .ok_or_else(|| err(n, "missing dtype".into()))?
            .parse()
            .map_err(|e: PlanError| err(n, e.to_string()))?;
        let meta = VolumeMeta::new(nums[0], nums[1], nums[2], dtype).map_err(|e| err(n, e.to_string()))?;
        let (n, lay) = header("layout")?;
        let rest: Vec<(usize, &str)> = lines.collect();
        let layout = match lay.first().map(String::as_str) {
            Some("stack") => {
                let mut entries = Vec::with_capacity(rest.len());
                for (ln, l) in &rest {
                    let mut parts = l.split_whitespace();
                    let file = parts.next().unwrap_or_default().to_string();
                    let offset = match parts.next() {
                        Some(o) => o.parse().map_err(|_| err(*ln, format!("bad offset `{o}`")))?,
                        None => 0,
                    };
                    if file.contains('/') || file.contains('\\') {
                        return Err(err(*ln, "file names must be plain names".into()));
                    }
                    entries.push(SliceEntry { file, offset });
                }
                if entries.len() != meta.depth {
                    return Err(err(n, format!("{} slice entries for depth {}", entries.len(), meta.depth)));
                }
                for (i, w) in entries.windows(2).enumerate() {
                    let ordered = if w[0].file == w[1].file {
                        w[0].offset < w[1].offset
                    } else {
                        w[0].file < w[1].file
                    };
                    if !ordered {
                        return Err(err(rest[i + 1].0, "slice entries are not in z order".into()));
                    }
                }
                Layout::Stack(entries)
            }
            Some("chunks") => {
                let c: Vec<usize> = lay[1..]
                    .iter()
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err(n, "chunk dims must be three integers".into()))?;
                if c.len() != 3 {
                    return Err(err(n, "chunk dims must be three integers".into()));
                }
                let grid = ChunkGrid::new(meta, [c[0], c[1], c[2]]).map_err(|e| err(n, e.to_string()))?;
                let files: Vec<String> = rest.iter().map(|(_, l)| l.to_string()).collect();
                let expect: Vec<String> = grid.indices().map(|i| grid.file_name(i)).collect();
                if files != expect {
                    return Err(err(n, format!("expected {} chunk files in z, y, x order", expect.len())));
                }
                Layout::Chunks { chunk: grid.chunk(), files }
            }
            _ => return Err(err(n, "layout must be `stack` or `chunks cx cy cz`".into())),
        };
        Ok(Manifest { meta, layout })
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_NAME)
    }

    /// Loads `dir/manifest.txt`. A missing or empty directory is a
    /// planning error.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Err(PlanError::EmptyInput(dir.to_path_buf()).into());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        super::write_atomic(&Self::path(dir), self.to_text().as_bytes())
    }

    pub fn grid(&self) -> Option<ChunkGrid> {
        match &self.layout {
            Layout::Chunks { chunk, .. } => ChunkGrid::new(self.meta, *chunk).ok(),
            Layout::Stack(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_padded() {
        assert_eq!(slice_file_name(0, 3), "000.raw");
        assert_eq!(slice_file_name(2, 3), "002.raw");
        assert_eq!(slice_file_name(12, 1500), "0012.raw");
        assert_eq!(slice_file_name(999, 1000), "999.raw");
    }

    #[test]
    fn text_round_trip() {
        let meta = VolumeMeta::new(4, 3, 2, Dtype::U16).unwrap();
        for m in [Manifest::stack(meta), Manifest::multipage(meta, "v.raw")] {
            let back = Manifest::parse(&m.to_text(), Path::new("m")).unwrap();
            assert_eq!(back, m);
        }
        let grid = ChunkGrid::new(meta, [2, 2, 1]).unwrap();
        let m = Manifest::chunks(&grid);
        assert_eq!(Manifest::parse(&m.to_text(), Path::new("m")).unwrap(), m);
    }

    #[test]
    fn exact_text() {
        let meta = VolumeMeta::new(4, 3, 2, Dtype::U8).unwrap();
        assert_eq!(
            Manifest::stack(meta).to_text(),
            "version 1\ndims 4 3 2\ndtype u8\nlayout stack\n000.raw\n001.raw\n"
        );
    }

    #[test]
    fn errors_carry_line() {
        let bad = "version 1\ndims 4 3 2\ndtype u9\nlayout stack\n";
        match Manifest::parse(bad, Path::new("m")).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let short = "version 1\ndims 4 3 2\ndtype u8\nlayout stack\n000.raw\n";
        assert!(Manifest::parse(short, Path::new("m")).is_err());
        let unordered = "version 1\ndims 4 3 2\ndtype u8\nlayout stack\n001.raw\n000.raw\n";
        assert!(Manifest::parse(unordered, Path::new("m")).is_err());
    }
}
