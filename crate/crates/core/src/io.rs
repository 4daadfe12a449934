//! On-disk formats.
//!
//! Images are raw little-endian `f32` (`name.f32`) with a `name.txt` sidecar
//! holding `n1`, `n2`, `pitch` and `role`. A 16-bit binary PGM preview
//! (`name.pgm`) is written alongside. Stacks are directories of
//! `frame_0000.f32` files plus `stack.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::{Error, Grid, Image, ImageStack, Result};

/// Parsed `key = value` metadata file.
pub type Metadata = BTreeMap<String, String>;

pub fn format_metadata(meta: &Metadata) -> String {
    meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_metadata(text: &str, path: &Path) -> Result<Metadata> {
    let pairs = crate::config::parse_pairs(text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(pairs.into_iter().map(|(_, k, v)| (k, v)).collect())
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metadata(&text, path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Look up and parse a metadata field.
pub fn meta_get<T: std::str::FromStr>(meta: &Metadata, key: &str, path: &Path) -> Result<T> {
    let raw = meta.get(key).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: format!("missing field `{key}`"),
    })?;
    raw.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: format!("cannot parse `{key}` = `{raw}`"),
    })
}

fn grid_meta(grid: &Grid) -> Metadata {
    let mut m = Metadata::new();
    m.insert("n1".into(), grid.n1().to_string());
    m.insert("n2".into(), grid.n2().to_string());
    m.insert("pitch".into(), format!("{:?}", grid.pitch()));
    m.insert("format".into(), "f32le".into());
    m
}

fn grid_from_meta(meta: &Metadata, path: &Path) -> Result<Grid> {
    Grid::new(
        meta_get(meta, "n1", path)?,
        meta_get(meta, "n2", path)?,
        meta_get(meta, "pitch", path)?,
    )
}

fn encode_f32(data: &[f64]) -> Vec<u8> {
    data.iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect()
}

fn decode_f32(bytes: &[u8], expected: usize, path: &Path) -> Result<Vec<f64>> {
    if bytes.len() != 4 * expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {} bytes, found {}", 4 * expected, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Path of the sidecar for a raw image path (`x.f32` gives `x.txt`).
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("txt")
}

/// 16-bit P5 PGM, scaled so the image maximum maps to 65535 and
/// negative values clip to zero.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let g = img.grid();
    let mut out = format!("P5\n{} {}\n65535\n", g.n2(), g.n1()).into_bytes();
    let max = img.max();
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    for v in img.data() {
        let s = (v * scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// Write `stem.f32`, `stem.txt` and `stem.pgm`; returns the raw path.
pub fn write_image(stem: &Path, img: &Image, role: &str) -> Result<PathBuf> {
    let raw = stem.with_extension("f32");
    fs::write(&raw, encode_f32(img.data())).map_err(|e| Error::io(&raw, e))?;
    let mut meta = grid_meta(img.grid());
    meta.insert("role".into(), role.into());
    write_text(&sidecar_path(&raw), &format_metadata(&meta))?;
    let pgm = stem.with_extension("pgm");
    fs::write(&pgm, encode_pgm(img)).map_err(|e| Error::io(&pgm, e))?;
    Ok(raw)
}

/// Read an image from its raw `.f32` path (or a stem with that extension).
pub fn read_image(path: &Path) -> Result<Image> {
    let raw = path.with_extension("f32");
    let side = sidecar_path(&raw);
    let meta = read_metadata(&side)?;
    let grid = grid_from_meta(&meta, &side)?;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let data = decode_f32(&bytes, grid.len(), &raw)?;
    Image::from_vec(grid, data).map_err(|e| Error::Format {
        path: raw,
        message: e.to_string(),
    })
}

pub const STACK_MANIFEST: &str = "stack.txt";
const FRAME_DIGITS: usize = 4;

pub fn frame_file_name(m: usize) -> String {
    format!("frame_{m:0width$}.f32", width = FRAME_DIGITS)
}

/// Write a stack as one raw file per frame plus `stack.txt`. Extra fields
/// (noise level, seeds) go into the stack manifest.
pub fn write_stack(
    dir: &Path,
    stack: &ImageStack,
    role: &str,
    extra: &Metadata,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(stack.frames());
    for (m, frame) in stack.iter_frames().enumerate() {
        let p = dir.join(frame_file_name(m));
        fs::write(&p, encode_f32(frame)).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    let mut meta = grid_meta(stack.grid());
    meta.insert("role".into(), role.into());
    meta.insert("frames".into(), stack.frames().to_string());
    meta.insert(
        "frame_pattern".into(),
        format!("frame_{{:0{FRAME_DIGITS}}}.f32"),
    );
    for (k, v) in extra {
        meta.insert(k.clone(), v.clone());
    }
    write_text(&dir.join(STACK_MANIFEST), &format_metadata(&meta))?;
    Ok(paths)
}

/// Read a stack directory and its manifest.
pub fn read_stack(dir: &Path) -> Result<(ImageStack, Metadata)> {
    let mpath = dir.join(STACK_MANIFEST);
    let meta = read_metadata(&mpath)?;
    let grid = grid_from_meta(&meta, &mpath)?;
    let frames: usize = meta_get(&meta, "frames", &mpath)?;
    let mut data = Vec::with_capacity(frames * grid.len());
    for m in 0..frames {
        let p = dir.join(frame_file_name(m));
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        data.extend(decode_f32(&bytes, grid.len(), &p)?);
    }
    let stack = ImageStack::from_vec(grid, frames, data).map_err(|e| Error::Format {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((stack, meta))
}

/// Create `dir`, refusing to reuse a non-empty directory unless `overwrite`.
pub fn prepare_output_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !overwrite {
            return Err(Error::OutputNotEmpty(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Run manifest: config echo, seeds, and a hash of every artifact.
#[derive(Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub config_text: String,
    pub seeds: Vec<(String, u64)>,
    pub notes: Vec<(String, String)>,
    pub artifacts: Vec<PathBuf>,
}

pub const RUN_MANIFEST: &str = "manifest.txt";

impl RunManifest {
    pub fn new(command: &str, config_text: String) -> Self {
        RunManifest {
            command: command.to_string(),
            config_text,
            ..Default::default()
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    /// Write `manifest.txt` into `dir`. Artifact paths are stored relative to
    /// `dir` and sorted, with raw floats and every sidecar included.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut s = String::new();
        s.push_str(&format!("command = {}\n", self.command));
        for (k, v) in &self.seeds {
            s.push_str(&format!("seed.{k} = {v}\n"));
        }
        for (k, v) in &self.notes {
            s.push_str(&format!("note.{k} = {v}\n"));
        }
        let mut rel: Vec<(String, PathBuf)> = self
            .artifacts
            .iter()
            .map(|p| {
                let r = p
                    .strip_prefix(dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/");
                (r, p.clone())
            })
            .collect();
        rel.sort();
        rel.dedup();
        for (r, p) in &rel {
            s.push_str(&format!("sha256.{r} = {}\n", sha256_file(p)?));
        }
        for line in self.config_text.lines() {
            s.push_str(&format!("config.{line}\n"));
        }
        let path = dir.join(RUN_MANIFEST);
        write_text(&path, &s)?;
        Ok(path)
    }
}
