//! On-disk formats: 8-bit binary PGM (`P5`) for images and masks, `FMAP` for
//! real-valued maps, and the JSON-lines dataset manifest.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{BinaryMask, Error, Grid, Image, Result};

/// Raw 8-bit greyscale raster with max value 255.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

impl PgmImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let token = |pos: &mut usize| -> Result<String> {
            loop {
                while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                if *pos < bytes.len() && bytes[*pos] == b'#' {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
                *pos += 1;
            }
            if start == *pos {
                return Err(Error::MalformedHeader("unexpected end of PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        };
        if token(&mut pos)? != "P5" {
            return Err(Error::MalformedHeader("not a binary PGM (P5)".into()));
        }
        let number = |what: &str, pos: &mut usize| -> Result<usize> {
            let t = token(pos)?;
            t.parse()
                .map_err(|_| Error::MalformedHeader(format!("bad PGM {what}: {t:?}")))
        };
        let width = number("width", &mut pos)?;
        let height = number("height", &mut pos)?;
        let maxval = number("max value", &mut pos)?;
        if width == 0 || height == 0 {
            return Err(Error::MalformedHeader("PGM dimensions must be positive".into()));
        }
        if maxval != 255 {
            return Err(Error::MalformedHeader(format!("PGM max value {maxval}, expected 255")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::TruncatedData {
                expected: pos + 1 + width * height,
                found: bytes.len(),
            });
        }
        pos += 1;
        let need = width * height;
        if bytes.len() - pos < need {
            return Err(Error::TruncatedData {
                expected: pos + need,
                found: bytes.len(),
            });
        }
        Ok(Self {
            width,
            height,
            samples: bytes[pos..pos + need].to_vec(),
        })
    }

    pub fn from_image(img: &Image) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            samples: img
                .as_slice()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            samples: mask.as_slice().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        let data = self.samples.iter().map(|&s| s as f32 / 255.0).collect();
        Grid::from_vec(self.height, self.width, data).expect("sizes match")
    }

    /// Samples above mid-grey are foreground.
    pub fn to_mask(&self) -> BinaryMask {
        let data = self.samples.iter().map(|&s| u8::from(s >= 128)).collect();
        Grid::from_vec(self.height, self.width, data).expect("sizes match")
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    Ok(PgmImage::decode(&read_bytes(path)?)?.to_image())
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &PgmImage::from_image(img).encode())
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    Ok(PgmImage::decode(&read_bytes(path)?)?.to_mask())
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_bytes(path, &PgmImage::from_mask(mask).encode())
}

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";

/// `FMAP`, `u32` width, `u32` height, row-major little-endian `f32`.
pub fn encode_fmap(grid: &Grid<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * grid.len());
    out.extend_from_slice(FMAP_MAGIC);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for v in grid.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fmap(bytes: &[u8]) -> Result<Grid<f32>> {
    if bytes.len() < 4 || &bytes[..4] != FMAP_MAGIC {
        return Err(Error::BadMagic { expected: "FMAP" });
    }
    if bytes.len() < 12 {
        return Err(Error::TruncatedData {
            expected: 12,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(4), word(8));
    let need = 12 + 4 * w * h;
    if bytes.len() < need {
        return Err(Error::TruncatedData {
            expected: need,
            found: bytes.len(),
        });
    }
    let data = bytes[12..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Grid::from_vec(h, w, data)
}

pub fn read_fmap(path: &Path) -> Result<Grid<f32>> {
    decode_fmap(&read_bytes(path)?)
}

pub fn write_fmap(path: &Path, grid: &Grid<f32>) -> Result<()> {
    write_bytes(path, &encode_fmap(grid))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One sample; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: String,
    pub mask_path: String,
    pub dmap_path: String,
    pub split: Split,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Dataset index: one JSON object per line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Accepts either the manifest file or the directory holding it.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::ManifestMismatch(format!("{}:{}: {e}", file.display(), i + 1)))?;
            records.push(rec);
        }
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, records })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serialises"));
            s.push('\n');
        }
        s
    }

    pub fn save(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write_bytes(&self.dir.join(MANIFEST_FILE), self.to_text().as_bytes())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}
