//! On-disk population container.
//!
//! A directory with `manifest.json`, `records.bin` and, for text,
//! `vocab.txt`. Records are little-endian:
//!
//! ```text
//! magic "FGPR", u32 version
//! per client: u64 id, u8 style (0 none | 1 glyph: 6×f64, u64 seed), u32 n
//!   image example: u8 label, side² × u8 pixels
//!   text example:  u16 len, len × u32 token id (into vocab.txt)
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::glyphs::{GlyphStyle, Image, ImagePopulation};
use super::text::TextPopulation;
use super::{ClientDataset, Style};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FGPR";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Population {
    Images(ImagePopulation),
    Text(TextPopulation),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    kind: String,
    clients: usize,
    examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    side: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab_size: Option<usize>,
}

fn write_style(buf: &mut Vec<u8>, style: &Style) {
    match style {
        Style::None => buf.push(0),
        Style::Glyph(g) => {
            buf.push(1);
            for v in [g.thickness, g.slant, g.scale, g.jitter, g.noise, g.messiness] {
                buf.write_f64::<LittleEndian>(v).expect("vec write");
            }
            buf.write_u64::<LittleEndian>(g.seed).expect("vec write");
        }
    }
}

/// Writes `pop` into `dir`, creating it if needed.
pub fn export_population(pop: &Population, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(VERSION)?;
    let manifest = match pop {
        Population::Images(p) => {
            for c in &p.clients {
                buf.write_u64::<LittleEndian>(c.id)?;
                write_style(&mut buf, &c.style);
                buf.write_u32::<LittleEndian>(c.examples.len() as u32)?;
                for im in &c.examples {
                    buf.push(im.label);
                    buf.extend_from_slice(&im.pixels);
                }
            }
            Manifest {
                schema_version: VERSION,
                kind: "images".into(),
                clients: p.clients.len(),
                examples: p.num_examples(),
                side: Some(p.side),
                classes: Some(p.classes),
                vocab_size: None,
            }
        }
        Population::Text(p) => {
            let mut vocab: Vec<&str> = Vec::new();
            let mut ids: HashMap<&str, u32> = HashMap::new();
            for c in &p.clients {
                buf.write_u64::<LittleEndian>(c.id)?;
                write_style(&mut buf, &c.style);
                buf.write_u32::<LittleEndian>(c.examples.len() as u32)?;
                for s in &c.examples {
                    buf.write_u16::<LittleEndian>(s.len() as u16)?;
                    for w in s {
                        let id = *ids.entry(w).or_insert_with(|| {
                            vocab.push(w);
                            vocab.len() as u32 - 1
                        });
                        buf.write_u32::<LittleEndian>(id)?;
                    }
                }
            }
            let mut text = vocab.join("\n");
            text.push('\n');
            fs::write(dir.join("vocab.txt"), text)?;
            Manifest {
                schema_version: VERSION,
                kind: "text".into(),
                clients: p.clients.len(),
                examples: p.sentences().count(),
                side: None,
                classes: None,
                vocab_size: Some(vocab.len()),
            }
        }
    };
    fs::write(dir.join("records.bin"), &buf)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                detail: format!("truncated while reading {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8, what)?))
    }

    fn style(&mut self) -> Result<Style> {
        let at = self.pos as u64;
        match self.u8("style tag")? {
            0 => Ok(Style::None),
            1 => {
                let mut v = [0.0; 6];
                for x in &mut v {
                    *x = self.f64("glyph style")?;
                }
                Ok(Style::Glyph(GlyphStyle {
                    thickness: v[0],
                    slant: v[1],
                    scale: v[2],
                    jitter: v[3],
                    noise: v[4],
                    messiness: v[5],
                    seed: self.u64("glyph style seed")?,
                }))
            }
            t => Err(Error::Parse {
                offset: at,
                detail: format!("unknown style tag {t}"),
            }),
        }
    }
}

/// Reads a population written by [`export_population`].
pub fn load_population(dir: &Path) -> Result<Population> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.schema_version != VERSION {
        return Err(Error::Config(format!(
            "unsupported population schema version {}",
            manifest.schema_version
        )));
    }
    let bytes = fs::read(dir.join("records.bin"))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            detail: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            detail: format!("unsupported record version {version}"),
        });
    }
    let pop = match manifest.kind.as_str() {
        "images" => {
            let side = manifest.side.ok_or_else(|| Error::Config("image manifest lacks `side`".into()))?;
            let classes = manifest
                .classes
                .ok_or_else(|| Error::Config("image manifest lacks `classes`".into()))?;
            let mut clients = Vec::with_capacity(manifest.clients);
            for _ in 0..manifest.clients {
                let id = r.u64("client id")?;
                let style = r.style()?;
                let n = r.u32("example count")? as usize;
                if n == 0 {
                    return Err(Error::InvalidRecord {
                        client: id,
                        detail: "no examples".into(),
                    });
                }
                let mut examples = Vec::with_capacity(n);
                for _ in 0..n {
                    let label = r.u8("label")?;
                    if label as usize >= classes {
                        return Err(Error::InvalidRecord {
                            client: id,
                            detail: format!("label {label} outside 0..{classes}"),
                        });
                    }
                    let pixels = r.take(side * side, "pixels")?.to_vec();
                    examples.push(Image { pixels, label });
                }
                clients.push(ClientDataset { id, style, examples });
            }
            Population::Images(ImagePopulation { side, classes, clients })
        }
        "text" => {
            let vocab_text = fs::read_to_string(dir.join("vocab.txt"))?;
            let vocab: Vec<&str> = vocab_text.lines().collect();
            let mut clients = Vec::with_capacity(manifest.clients);
            for _ in 0..manifest.clients {
                let id = r.u64("client id")?;
                let style = r.style()?;
                let n = r.u32("sentence count")? as usize;
                if n == 0 {
                    return Err(Error::InvalidRecord {
                        client: id,
                        detail: "no sentences".into(),
                    });
                }
                let mut examples = Vec::with_capacity(n);
                for _ in 0..n {
                    let len = r.u16("sentence length")? as usize;
                    let mut s = Vec::with_capacity(len);
                    for _ in 0..len {
                        let t = r.u32("token id")? as usize;
                        let w = vocab.get(t).ok_or_else(|| Error::InvalidRecord {
                            client: id,
                            detail: format!("token id {t} outside vocabulary of {}", vocab.len()),
                        })?;
                        s.push(w.to_string());
                    }
                    examples.push(s);
                }
                clients.push(ClientDataset { id, style, examples });
            }
            Population::Text(TextPopulation { clients })
        }
        k => return Err(Error::Config(format!("unknown population kind `{k}`"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos as u64,
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(pop)
}

/// Loads an image population from a container directory.
pub fn load_external_federated_images(dir: &Path) -> Result<ImagePopulation> {
    match load_population(dir)? {
        Population::Images(p) => Ok(p),
        Population::Text(_) => Err(Error::Config(format!("{} holds text, not images", dir.display()))),
    }
}
