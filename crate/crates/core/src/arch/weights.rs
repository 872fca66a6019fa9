//! `EEWT` weight files, little-endian:
//!
//! ```text
//! magic "EEWT" | version u32 | variant u8 | layer count u32
//! per layer (common, exit head, tail order):
//!   kind tag u8 | extents u32… | parameter tensors f32… | batch-norm running stats f32…
//! ```
//!
//! Tensor lengths follow from the kind and extents. Loading goes into a graph
//! built from the same [`ArchConfig`](super::ArchConfig); every tag and extent
//! is checked against it.

use std::fs;
use std::path::Path;

use super::{BranchGraph, Section, Variant};
use crate::error::{Error, Result};
use crate::nn::LayerKind;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"EEWT";
pub const WEIGHTS_VERSION: u32 = 1;

const SECTIONS: [Section; 3] = [Section::Common, Section::ExitHead, Section::Tail];

pub fn encode_weights(graph: &BranchGraph) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.push(graph.variant().tag());
    let count: usize = SECTIONS.iter().map(|&s| graph.section(s).len()).sum();
    buf.extend_from_slice(&(count as u32).to_le_bytes());
    for &s in &SECTIONS {
        for layer in graph.section(s) {
            let kind = layer.kind();
            buf.push(kind.tag());
            for e in kind.extents() {
                buf.extend_from_slice(&e.to_le_bytes());
            }
            for t in layer.params().into_iter().chain(layer.buffers()) {
                for v in t.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn err(&self, at: usize, msg: String) -> Error {
        Error::Format {
            offset: at as u64,
            msg,
        }
    }
}

fn check_header(r: &mut Reader<'_>) -> Result<Variant> {
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(r.err(0, "bad magic, expected \"EEWT\"".into()));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let tag = r.u8("variant")?;
    Variant::from_tag(tag).ok_or_else(|| r.err(8, format!("unknown variant tag {tag}")))
}

/// Variant recorded in a weight file's header.
pub fn weights_variant(bytes: &[u8]) -> Result<Variant> {
    check_header(&mut Reader { bytes, pos: 0 })
}

/// Build the variant stored in the file at `path` from `cfg` and load its weights.
pub fn load_graph(path: impl AsRef<Path>, cfg: &super::ArchConfig) -> Result<BranchGraph> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut g = super::build(weights_variant(&bytes)?, cfg)?;
    decode_weights_into(&mut g, &bytes)?;
    Ok(g)
}

/// Overwrite the parameters and running statistics of `graph` from `bytes`.
/// On error the graph is left untouched.
pub fn decode_weights_into(graph: &mut BranchGraph, bytes: &[u8]) -> Result<()> {
    let mut r = Reader { bytes, pos: 0 };
    let variant = check_header(&mut r)?;
    if variant != graph.variant() {
        return Err(r.err(8, format!("file holds {variant} weights, graph is {}", graph.variant())));
    }
    let count = r.u32("layer count")? as usize;
    let expected: usize = SECTIONS.iter().map(|&s| graph.section(s).len()).sum();
    if count != expected {
        return Err(r.err(9, format!("file has {count} layers, graph has {expected}")));
    }

    let mut staged = graph.clone();
    for &s in &SECTIONS {
        for (i, layer) in staged.section_mut(s).iter_mut().enumerate() {
            let at = r.pos;
            let kind: LayerKind = layer.kind();
            let file_tag = r.u8("layer tag")?;
            let n_ext = LayerKind::extent_count(file_tag)
                .ok_or_else(|| r.err(at, format!("unknown layer tag {file_tag}")))?;
            let extents: Vec<u32> = (0..n_ext).map(|_| r.u32("extent")).collect::<Result<_>>()?;
            if file_tag != kind.tag() || extents != kind.extents() {
                return Err(r.err(
                    at,
                    format!(
                        "{}[{i}] mismatch: file has tag {file_tag} {extents:?}, graph has {} {:?}",
                        s.name(),
                        kind.name(),
                        kind.extents()
                    ),
                ));
            }
            for t in layer.state_tensors_mut() {
                let raw = r.take(t.len() * 4, "tensor data")?;
                for (v, b) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                    *v = f32::from_le_bytes(b.try_into().unwrap());
                }
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, "trailing bytes after the last layer".into()));
    }
    staged.clear_caches();
    *graph = staged;
    Ok(())
}

pub fn write_weights(graph: &BranchGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(graph)).map_err(|e| Error::io(path, e))
}

pub fn read_weights_into(graph: &mut BranchGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights_into(graph, &bytes)
}
