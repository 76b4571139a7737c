//! P2FM binary model container and OBJ export.
//!
//! P2FM layout, all little-endian:
//!
//! ```text
//! "P2FM" | version u32 | V u32 | K_s u32 | K_e u32
//! mean_vertices  3V f64
//! shape_basis    3V*K_s f64, column-major
//! expr_basis     3V*K_e f64, column-major
//! shape_sigma    K_s f64
//! expr_sigma     K_e f64
//! triangle count u32, then 3 u32 per triangle
//! NCC transform  scale[3], offset[3] as f64
//! ```

use std::io::{Read, Write};

use nalgebra::{DMatrix, Vector3};

use super::{MeshTopology, ModelError, MorphableModel, NccTransform};

pub const P2FM_MAGIC: &[u8; 4] = b"P2FM";
pub const P2FM_VERSION: u32 = 1;

pub fn write_p2fm<W: Write>(model: &MorphableModel, mut w: W) -> Result<(), ModelError> {
    w.write_all(P2FM_MAGIC)?;
    for v in [
        P2FM_VERSION,
        model.vertex_count() as u32,
        model.shape_count() as u32,
        model.expr_count() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut put = |vals: &mut dyn Iterator<Item = f64>| -> std::io::Result<()> {
        for v in vals {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    put(&mut model.mean_vertices().iter().flat_map(|p| [p.x, p.y, p.z]))?;
    // nalgebra storage is column-major already.
    put(&mut model.shape_basis().iter().copied())?;
    put(&mut model.expr_basis().iter().copied())?;
    put(&mut model.shape_sigma().iter().copied())?;
    put(&mut model.expr_sigma().iter().copied())?;
    let tris = model.topology().triangles();
    w.write_all(&(tris.len() as u32).to_le_bytes())?;
    for t in tris {
        for i in t {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    let ncc = model.ncc();
    for v in ncc.scale.iter().chain(&ncc.offset) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_p2fm<R: Read>(mut r: R) -> Result<MorphableModel, ModelError> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != P2FM_MAGIC {
        return Err(ModelError::Format("bad magic, not a P2FM file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != P2FM_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let v = read_u32(&mut r)? as usize;
    let ks = read_u32(&mut r)? as usize;
    let ke = read_u32(&mut r)? as usize;
    // Refuse absurd headers before allocating.
    const LIMIT: usize = 1 << 28;
    if v == 0 || v.saturating_mul(3).saturating_mul(ks + ke + 1) > LIMIT {
        return Err(ModelError::Format(format!(
            "implausible dimensions V={v} K_s={ks} K_e={ke}"
        )));
    }

    let flat = read_f64s(&mut r, 3 * v)?;
    let mean: Vec<Vector3<f64>> = flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
    let shape_basis = DMatrix::from_vec(3 * v, ks, read_f64s(&mut r, 3 * v * ks)?);
    let expr_basis = DMatrix::from_vec(3 * v, ke, read_f64s(&mut r, 3 * v * ke)?);
    let shape_sigma = read_f64s(&mut r, ks)?;
    let expr_sigma = read_f64s(&mut r, ke)?;
    let tri_count = read_u32(&mut r)? as usize;
    if tri_count > LIMIT {
        return Err(ModelError::Format(format!("implausible triangle count {tri_count}")));
    }
    let mut triangles = Vec::with_capacity(tri_count);
    for _ in 0..tri_count {
        triangles.push([read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?]);
    }
    let t = read_f64s(&mut r, 6)?;
    let ncc = NccTransform {
        scale: [t[0], t[1], t[2]],
        offset: [t[3], t[4], t[5]],
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::Format("trailing bytes after model".into()));
    }
    let topology = MeshTopology::new(v, triangles)?;
    MorphableModel::with_ncc(topology, mean, shape_basis, expr_basis, shape_sigma, expr_sigma, ncc)
}

/// Writes a Wavefront OBJ with `v` and `f` records only.
pub fn write_obj<W: Write>(vertices: &[Vector3<f64>], topology: &MeshTopology, mut w: W) -> std::io::Result<()> {
    for p in vertices {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for t in topology.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelError::Format("truncated file".into())
        } else {
            ModelError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, ModelError> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_synthetic_model;

    #[test]
    fn p2fm_round_trip_is_exact() {
        let m = generate_synthetic_model(9, 30, 3, 2).unwrap();
        let mut buf = Vec::new();
        write_p2fm(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"P2FM");
        let back = read_p2fm(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn p2fm_rejects_truncation_and_bad_magic() {
        let m = generate_synthetic_model(9, 30, 3, 2).unwrap();
        let mut buf = Vec::new();
        write_p2fm(&m, &mut buf).unwrap();
        let cut = &buf[..buf.len() - 5];
        assert!(matches!(read_p2fm(cut), Err(ModelError::Format(_))));
        buf[0] = b'X';
        assert!(matches!(read_p2fm(buf.as_slice()), Err(ModelError::Format(_))));
    }

    #[test]
    fn obj_export_counts() {
        let m = generate_synthetic_model(9, 16, 1, 1).unwrap();
        let mut buf = Vec::new();
        write_obj(m.mean_vertices(), m.topology(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 16);
        assert_eq!(
            text.lines().filter(|l| l.starts_with("f ")).count(),
            m.topology().triangles().len()
        );
        assert!(text.contains("f 1 2 6"));
    }
}
