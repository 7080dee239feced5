//! Single-file category prior: architecture, meta-learned parameters,
//! density grid and baked mesh.
//!
//! Layout: `NOMA`, a little-endian u16 version, a UTF-8 header of `key=value`
//! lines closed by `end`, then three sections (theta, grid, mesh), each a u64
//! byte length followed by its little-endian payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::field::{FieldArch, ParamVector};
use crate::meshmetrics::Mesh;
use crate::priorgrid::DensityGrid;
use crate::taskgen::Category;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NOMA";
pub const FORMAT_VERSION: u16 = 1;
/// File name of a category's prior inside a priors directory.
pub const EXTENSION: &str = "prior";

#[derive(Clone, Debug, PartialEq)]
pub struct PriorBundle {
    pub category: Category,
    pub arch: FieldArch,
    pub theta: ParamVector,
    pub grid: DensityGrid,
    /// Unit-cube coordinates.
    pub mesh: Mesh,
    /// Free-form provenance such as `search.seed` and `gene.*`.
    pub provenance: BTreeMap<String, String>,
}

pub fn prior_file_name(category: Category) -> String {
    format!("{category}.{EXTENSION}")
}

fn section<W: Write>(w: &mut W, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)
}

fn read_section<R: Read>(r: &mut R, name: &str, limit: u64) -> Result<Vec<u8>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::Integrity(format!("truncated {name} section length")))?;
    let len = u64::from_le_bytes(len);
    if len > limit {
        return Err(Error::Integrity(format!(
            "{name} section length {len} is implausible"
        )));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Integrity(format!("truncated {name} section")))?;
    Ok(buf)
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn encode_mesh(mesh: &Mesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + mesh.vertices.len() * 24 + mesh.triangles.len() * 12);
    out.extend_from_slice(&(mesh.vertices.len() as u32).to_le_bytes());
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for v in &mesh.vertices {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

fn decode_mesh(bytes: &[u8]) -> Result<Mesh> {
    let bad = |m: &str| Error::Integrity(format!("mesh section: {m}"));
    if bytes.len() < 8 {
        return Err(bad("too short"));
    }
    let nv = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let nt = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if bytes.len() as u64 != 8 + nv as u64 * 24 + nt as u64 * 12 {
        return Err(bad("size does not match counts"));
    }
    let body = &bytes[8..];
    let vertices = body[..nv * 24]
        .chunks_exact(24)
        .map(|c| {
            std::array::from_fn(|k| {
                f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap_or([0; 8]))
            })
        })
        .collect();
    let triangles = body[nv * 24..]
        .chunks_exact(12)
        .map(|c| {
            std::array::from_fn(|k| {
                u32::from_le_bytes([c[4 * k], c[4 * k + 1], c[4 * k + 2], c[4 * k + 3]])
            })
        })
        .collect();
    let mesh = Mesh {
        vertices,
        triangles,
    };
    mesh.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(mesh)
}

impl PriorBundle {
    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.theta.check_arch(&self.arch)?;
        self.mesh
            .validate()
            .map_err(|e| Error::Integrity(format!("mesh: {e}")))?;
        for k in self.provenance.keys() {
            if k.contains(['=', '\n']) || k.starts_with("arch.") || k == "category" {
                return Err(Error::InvalidArgument(format!(
                    "reserved or malformed provenance key `{k}`"
                )));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        let io = |e| Error::io("<prior bundle>", e);
        let mut head = Vec::new();
        head.extend_from_slice(MAGIC);
        head.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut lines = vec![("category".to_string(), self.category.to_string())];
        lines.extend(self.arch.to_kv());
        lines.extend(
            self.provenance
                .iter()
                .map(|(k, v)| (k.clone(), v.replace('\n', " "))),
        );
        for (k, v) in lines {
            head.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        head.extend_from_slice(b"end\n");
        w.write_all(&head).map_err(io)?;
        let theta: Vec<u8> = self
            .theta
            .values
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        section(&mut w, &theta).map_err(io)?;
        let mut grid = Vec::new();
        self.grid.write_to(&mut grid).map_err(io)?;
        section(&mut w, &grid).map_err(io)?;
        section(&mut w, &encode_mesh(&self.mesh)).map_err(io)?;
        Ok(())
    }

    /// Reads a whole bundle; trailing bytes are an integrity error.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let (header, arch) = read_header(&mut r)?;
        let category: Category = header
            .get("category")
            .ok_or_else(|| Error::Integrity("header lacks `category`".into()))?
            .parse()
            .map_err(|_| Error::Integrity("unknown category in header".into()))?;
        let theta = ParamVector::new(f32s(&read_section(&mut r, "theta", 1 << 32)?));
        theta.check_arch(&arch)?;
        let grid_bytes = read_section(&mut r, "grid", 1 << 34)?;
        let grid = DensityGrid::read_from(grid_bytes.as_slice())?;
        if 4 + grid.values().len() * 4 != grid_bytes.len() {
            return Err(Error::Integrity(
                "grid section length does not match its resolution".into(),
            ));
        }
        let mesh = decode_mesh(&read_section(&mut r, "mesh", 1 << 34)?)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)
            .map_err(|e| Error::io("<prior bundle>", e))?
            != 0
        {
            return Err(Error::Integrity("trailing bytes after mesh section".into()));
        }
        let provenance = header
            .into_iter()
            .filter(|(k, _)| k != "category" && !k.starts_with("arch."))
            .collect();
        Ok(Self {
            category,
            arch,
            theta,
            grid,
            mesh,
            provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }

    /// Exact file size implied by the contents.
    pub fn encoded_len(&self) -> usize {
        let mut header = 6 + format!("category={}\n", self.category).len() + 4;
        for (k, v) in self.arch.to_kv().into_iter().chain(self.provenance.clone()) {
            header += k.len() + v.len() + 2;
        }
        header
            + 8
            + self.theta.len() * 4
            + 8
            + 4
            + self.grid.values().len() * 4
            + 8
            + 8
            + self.mesh.vertices.len() * 24
            + self.mesh.triangles.len() * 12
    }
}

/// Magic, version and header of a bundle; the caller's reader is left at the
/// first section.
pub fn read_header<R: Read>(r: &mut R) -> Result<(BTreeMap<String, String>, FieldArch)> {
    let mut magic = [0u8; 6];
    if r.read_exact(&mut magic).is_err() || &magic[..4] != MAGIC {
        return Err(Error::NotABundle);
    }
    let version = u16::from_le_bytes([magic[4], magic[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let mut map = BTreeMap::new();
    let mut line = Vec::new();
    loop {
        line.clear();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte)
                .map_err(|_| Error::Integrity("truncated header".into()))?;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
            if line.len() > 1 << 16 {
                return Err(Error::Integrity("header line too long".into()));
            }
        }
        let text = std::str::from_utf8(&line)
            .map_err(|_| Error::Integrity("header is not UTF-8".into()))?;
        if text == "end" {
            break;
        }
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| Error::Integrity(format!("bad header line `{text}`")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let arch = FieldArch::from_kv(&map).map_err(|e| Error::Integrity(e.to_string()))?;
    Ok((map, arch))
}

/// Loads every `<category>.prior` found in `dir`.
pub fn load_priors(dir: &Path) -> Result<BTreeMap<Category, PriorBundle>> {
    let mut out = BTreeMap::new();
    for cat in Category::ALL {
        let path = dir.join(prior_file_name(cat));
        if path.exists() {
            let b = PriorBundle::load(&path)?;
            if b.category != cat {
                return Err(Error::Integrity(format!(
                    "{} holds a {} prior",
                    path.display(),
                    b.category
                )));
            }
            out.insert(cat, b);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::init_params;
    use crate::meshmetrics::marching_cubes;

    fn tiny_arch() -> FieldArch {
        FieldArch {
            hash_levels: 2,
            log2_table_size: 8,
            hidden_width: 8,
            hidden_layers: 1,
            ..FieldArch::desk_default()
        }
    }

    pub(crate) fn sample_bundle(seed: u64) -> PriorBundle {
        let arch = tiny_arch();
        let grid = DensityGrid::from_fn(8, |p| {
            (30.0 - 100.0 * ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2)))
                .max(0.0)
        })
        .unwrap();
        let mesh = marching_cubes(&grid, 5.0);
        let mut provenance = BTreeMap::new();
        provenance.insert("search.seed".to_string(), seed.to_string());
        provenance.insert("gene.eta".to_string(), "0.0123".to_string());
        PriorBundle {
            category: Category::Mug,
            theta: init_params(&arch, seed).unwrap(),
            arch,
            grid,
            mesh,
            provenance,
        }
    }

    fn encode(b: &PriorBundle) -> Vec<u8> {
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let b = sample_bundle(3);
        let bytes = encode(&b);
        let back = PriorBundle::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, b);
        let bits = |p: &ParamVector| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.theta), bits(&b.theta));
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn size_matches_formula() {
        let b = sample_bundle(4);
        assert_eq!(encode(&b).len(), b.encoded_len());
        let desk = FieldArch::desk_default();
        let d = PriorBundle {
            theta: init_params(&desk, 0).unwrap(),
            arch: desk,
            ..b
        };
        assert_eq!(encode(&d).len(), d.encoded_len());
    }

    #[test]
    fn truncation_is_integrity_error() {
        let bytes = encode(&sample_bundle(5));
        for cut in [7, 40, bytes.len() / 2, bytes.len() - 1] {
            match PriorBundle::read_from(&bytes[..cut]) {
                Err(Error::Integrity(_)) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample_bundle(6));
        bytes[4] = 9;
        assert!(matches!(
            PriorBundle::read_from(bytes.as_slice()),
            Err(Error::Version { found: 9, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            PriorBundle::read_from(bytes.as_slice()),
            Err(Error::NotABundle)
        ));
        assert!(matches!(
            PriorBundle::read_from(&b"NO"[..]),
            Err(Error::NotABundle)
        ));
    }

    #[test]
    fn theta_arch_mismatch_rejected() {
        let mut b = sample_bundle(7);
        b.theta.values.pop();
        assert!(matches!(b.write_to(Vec::new()), Err(Error::Integrity(_))));
        let good = encode(&sample_bundle(7));
        let text = String::from_utf8_lossy(&good).into_owned();
        let at = text.find("arch.hidden_width=8").unwrap();
        let mut bad = good.clone();
        bad[at + "arch.hidden_width=".len()] = b'9';
        assert!(matches!(
            PriorBundle::read_from(bad.as_slice()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&sample_bundle(8));
        bytes.push(0);
        assert!(matches!(
            PriorBundle::read_from(bytes.as_slice()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn load_priors_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample_bundle(9);
        b.save(&dir.path().join(prior_file_name(Category::Mug)))
            .unwrap();
        let priors = load_priors(dir.path()).unwrap();
        assert_eq!(priors.len(), 1);
        assert_eq!(priors[&Category::Mug], b);
    }
}
