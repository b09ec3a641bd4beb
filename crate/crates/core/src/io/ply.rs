//! Binary little-endian PLY in the standard Gaussian-splatting layout,
//! extended with `glass_mask`, `refl_intensity` and a `glass_tag` byte
//! (0 = primary, k = glass of plane k-1) so the hard glass tag survives
//! round trips.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::scene::{Gaussian, GaussianScene};

use super::IoError;

fn sh_rest_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1) - 1
}

pub fn write_scene_ply(path: &Path, scene: &GaussianScene) -> Result<(), IoError> {
    let n_rest = sh_rest_count(scene.sh_degree);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        header.push_str(&format!("property float {p}\n"));
    }
    for c in 0..3 {
        header.push_str(&format!("property float f_dc_{c}\n"));
    }
    for k in 0..n_rest * 3 {
        header.push_str(&format!("property float f_rest_{k}\n"));
    }
    header.push_str("property float opacity\n");
    for k in 0..3 {
        header.push_str(&format!("property float scale_{k}\n"));
    }
    for k in 0..4 {
        header.push_str(&format!("property float rot_{k}\n"));
    }
    header.push_str("property float glass_mask\nproperty float refl_intensity\n");
    header.push_str("property uchar glass_tag\nend_header\n");

    let mut body: Vec<u8> = Vec::with_capacity(scene.len() * (17 + 3 + n_rest * 3) * 4);
    let put = |v: f32, body: &mut Vec<u8>| body.extend_from_slice(&v.to_le_bytes());
    for g in &scene.gaussians {
        for a in 0..3 {
            put(g.position[a] as f32, &mut body);
        }
        for _ in 0..3 {
            put(0.0, &mut body);
        }
        for c in 0..3 {
            put(g.sh[0][c] as f32, &mut body);
        }
        // f_rest is channel-major: all band>=1 coefficients of R, then G, B.
        for c in 0..3 {
            for k in 1..=n_rest {
                put(g.sh[k][c] as f32, &mut body);
            }
        }
        put(g.opacity_logit as f32, &mut body);
        for a in 0..3 {
            put(g.log_scale[a] as f32, &mut body);
        }
        for a in 0..4 {
            put(g.rotation[a] as f32, &mut body);
        }
        put(g.glass_mask as f32, &mut body);
        put(g.refl_intensity as f32, &mut body);
        body.push(match g.glass_plane {
            None => 0u8,
            Some(p) => (p + 1).min(255) as u8,
        });
    }

    let mut f = fs::File::create(path)?;
    f.write_all(header.as_bytes())?;
    f.write_all(&body)?;
    Ok(())
}

pub fn read_scene_ply(path: &Path) -> Result<GaussianScene, IoError> {
    let data = fs::read(path)?;
    let bad = |d: &str| IoError::Malformed { what: "scene ply", detail: d.into() };
    let header_end = data
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("missing end_header"))?
        + 11;
    let header = String::from_utf8_lossy(&data[..header_end]);
    let mut n_vertex = 0usize;
    let mut props: Vec<(String, bool)> = Vec::new(); // (name, is_uchar)
    for line in header.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["element", "vertex", n] => n_vertex = n.parse().map_err(|_| bad("bad vertex count"))?,
            ["property", "float", name] => props.push((name.to_string(), false)),
            ["property", "uchar", name] => props.push((name.to_string(), true)),
            _ => {}
        }
    }
    let n_rest_total = props.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    if n_rest_total % 3 != 0 {
        return Err(bad("f_rest count not divisible by 3"));
    }
    let n_rest = n_rest_total / 3;
    let degree = match n_rest + 1 {
        1 => 0,
        4 => 1,
        9 => 2,
        16 => 3,
        other => return Err(bad(&format!("unsupported SH coefficient count {other}"))),
    };

    let stride: usize = props.iter().map(|(_, u)| if *u { 1 } else { 4 }).sum();
    if data.len() < header_end + stride * n_vertex {
        return Err(bad("truncated body"));
    }
    let offset_of = |name: &str| -> Option<usize> {
        let mut off = 0;
        for (n, u) in &props {
            if n == name {
                return Some(off);
            }
            off += if *u { 1 } else { 4 };
        }
        None
    };
    let need = |name: &str| offset_of(name).ok_or_else(|| bad(&format!("missing property {name}")));

    let o_xyz = [need("x")?, need("y")?, need("z")?];
    let o_dc = [need("f_dc_0")?, need("f_dc_1")?, need("f_dc_2")?];
    let o_rest0 = if n_rest > 0 { Some(need("f_rest_0")?) } else { None };
    let o_op = need("opacity")?;
    let o_scale = [need("scale_0")?, need("scale_1")?, need("scale_2")?];
    let o_rot = [need("rot_0")?, need("rot_1")?, need("rot_2")?, need("rot_3")?];
    let o_mask = offset_of("glass_mask");
    let o_int = offset_of("refl_intensity");
    let o_tag = offset_of("glass_tag");

    let mut scene = GaussianScene::new(degree);
    let getf = |base: usize, off: usize| -> f64 {
        f32::from_le_bytes(data[base + off..base + off + 4].try_into().unwrap()) as f64
    };
    for i in 0..n_vertex {
        let base = header_end + i * stride;
        let mut g = Gaussian::unit((degree + 1) * (degree + 1));
        g.position = Vector3::new(getf(base, o_xyz[0]), getf(base, o_xyz[1]), getf(base, o_xyz[2]));
        for c in 0..3 {
            g.sh[0][c] = getf(base, o_dc[c]);
        }
        if let Some(r0) = o_rest0 {
            for c in 0..3 {
                for k in 0..n_rest {
                    g.sh[k + 1][c] = getf(base, r0 + 4 * (c * n_rest + k));
                }
            }
        }
        g.opacity_logit = getf(base, o_op);
        g.log_scale = Vector3::new(getf(base, o_scale[0]), getf(base, o_scale[1]), getf(base, o_scale[2]));
        g.rotation = Vector4::new(getf(base, o_rot[0]), getf(base, o_rot[1]), getf(base, o_rot[2]), getf(base, o_rot[3]));
        if let Some(o) = o_mask {
            g.glass_mask = getf(base, o);
        }
        if let Some(o) = o_int {
            g.refl_intensity = getf(base, o);
        }
        if let Some(o) = o_tag {
            let tag = data[base + o];
            g.glass_plane = if tag == 0 { None } else { Some((tag - 1) as u16) };
        }
        scene.gaussians.push(g);
    }
    Ok(scene)
}

/// Seed points: positions plus 8-bit colors, standard x/y/z/red/green/blue.
pub fn write_seed_points_ply(path: &Path, points: &[(Vector3<f64>, [f64; 3])]) -> Result<(), IoError> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", points.len()));
    for p in ["x", "y", "z"] {
        header.push_str(&format!("property float {p}\n"));
    }
    for p in ["red", "green", "blue"] {
        header.push_str(&format!("property uchar {p}\n"));
    }
    header.push_str("end_header\n");
    let mut body = Vec::with_capacity(points.len() * 15);
    for (pos, col) in points {
        for a in 0..3 {
            body.extend_from_slice(&(pos[a] as f32).to_le_bytes());
        }
        for c in col {
            body.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(header.as_bytes())?;
    f.write_all(&body)?;
    Ok(())
}

pub fn read_seed_points_ply(path: &Path) -> Result<Vec<(Vector3<f64>, [f64; 3])>, IoError> {
    let data = fs::read(path)?;
    let bad = |d: &str| IoError::Malformed { what: "seed ply", detail: d.into() };
    let header_end = data
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("missing end_header"))?
        + 11;
    let header = String::from_utf8_lossy(&data[..header_end]);
    let mut n_vertex = 0usize;
    for line in header.lines() {
        if let ["element", "vertex", n] = line.split_whitespace().collect::<Vec<_>>().as_slice() {
            n_vertex = n.parse().map_err(|_| bad("bad count"))?;
        }
    }
    let stride = 15;
    if data.len() < header_end + stride * n_vertex {
        return Err(bad("truncated"));
    }
    let mut out = Vec::with_capacity(n_vertex);
    for i in 0..n_vertex {
        let base = header_end + i * stride;
        let p = Vector3::new(
            f32::from_le_bytes(data[base..base + 4].try_into().unwrap()) as f64,
            f32::from_le_bytes(data[base + 4..base + 8].try_into().unwrap()) as f64,
            f32::from_le_bytes(data[base + 8..base + 12].try_into().unwrap()) as f64,
        );
        let c = [
            data[base + 12] as f64 / 255.0,
            data[base + 13] as f64 / 255.0,
            data[base + 14] as f64 / 255.0,
        ];
        out.push((p, c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn scene_ply_roundtrip_preserves_f32_values_and_tags() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.ply");
        let mut scene = GaussianScene::new(1);
        for i in 0..5 {
            let mut g = Gaussian::unit(4);
            g.position = Vector3::new(i as f64 * 0.5, -0.25, 1.0);
            g.opacity_logit = -0.7 + i as f64 * 0.3;
            g.log_scale = Vector3::new(-2.0, -2.5, -3.0);
            g.rotation = Vector4::new(0.9, 0.1, -0.2, 0.3);
            for k in 0..4 {
                for c in 0..3 {
                    g.sh[k][c] = (i + k * 3 + c) as f64 * 0.01 - 0.05;
                }
            }
            g.glass_mask = i as f64 * 0.2;
            g.refl_intensity = 1.0 + i as f64 * 0.1;
            if i >= 3 {
                g.glass_plane = Some((i - 3) as u16);
            }
            scene.gaussians.push(g);
        }
        write_scene_ply(&path, &scene).unwrap();
        let back = read_scene_ply(&path).unwrap();
        assert_eq!(back.sh_degree, 1);
        assert_eq!(back.len(), 5);
        for (a, b) in scene.gaussians.iter().zip(back.gaussians.iter()) {
            assert_eq!(a.glass_plane, b.glass_plane);
            for r in 0..3 {
                assert_eq!(a.position[r] as f32, b.position[r] as f32);
                assert_eq!(b.position[r], b.position[r] as f32 as f64);
            }
            for k in 0..4 {
                for c in 0..3 {
                    assert_eq!(a.sh[k][c] as f32, b.sh[k][c] as f32);
                }
            }
            assert_eq!(a.glass_mask as f32, b.glass_mask as f32);
            assert_eq!(a.refl_intensity as f32, b.refl_intensity as f32);
        }
    }

    #[test]
    fn seed_points_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("seeds.ply");
        let pts = vec![
            (Vector3::new(1.0, 2.0, 3.0), [0.0, 0.5, 1.0]),
            (Vector3::new(-0.5, 0.25, -4.0), [1.0, 0.0, 0.25]),
        ];
        write_seed_points_ply(&path, &pts).unwrap();
        let back = read_seed_points_ply(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[0].0 - pts[0].0).norm() < 1e-6);
        assert!((back[1].1[2] - pts[1].1[2]).abs() < 1.0 / 255.0);
    }
}
