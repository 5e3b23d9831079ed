//! Closed-form meshes for fixtures.

use std::f64::consts::TAU;

use nalgebra::Vector3;

use crate::geometry::Mesh;

fn build(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Mesh {
    Mesh::new(vertices, triangles).expect("primitive meshes are well formed")
}

/// Axis-aligned box centered at the origin with the given side lengths.
pub fn cuboid(sx: f64, sy: f64, sz: f64) -> Mesh {
    let (x, y, z) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let v = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { -x } else { x },
                if i & 2 == 0 { -y } else { y },
                if i & 4 == 0 { -z } else { z },
            )
        })
        .collect();
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let t = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    build(v, t)
}

/// Closed cylinder about the model z axis, centered at the origin.
///
/// Rim vertices sit at angles `2π·k/facets`; each cap has a center vertex.
pub fn cylinder(radius: f64, height: f64, facets: u32) -> Mesh {
    assert!(facets >= 3);
    let h = height / 2.0;
    let mut v = Vec::with_capacity(2 * facets as usize + 2);
    for z in [-h, h] {
        for k in 0..facets {
            let a = TAU * k as f64 / facets as f64;
            v.push(Vector3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let bottom = v.len() as u32;
    v.push(Vector3::new(0.0, 0.0, -h));
    v.push(Vector3::new(0.0, 0.0, h));
    let top = bottom + 1;
    let mut t = Vec::with_capacity(4 * facets as usize);
    for k in 0..facets {
        let k1 = (k + 1) % facets;
        let (a, b, c, d) = (k, k1, facets + k, facets + k1);
        t.push([a, b, d]);
        t.push([a, d, c]);
        t.push([bottom, b, a]);
        t.push([top, c, d]);
    }
    build(v, t)
}

/// Zero-thickness rectangle in the model z = 0 plane covering
/// `[x0, x1] × [y0, y1]`, tessellated into a vertex grid with roughly
/// `spacing` between neighbors.
pub fn plate(x0: f64, x1: f64, y0: f64, y1: f64, spacing: f64) -> Mesh {
    let nx = ((x1 - x0) / spacing).round().max(1.0) as u32;
    let ny = ((y1 - y0) / spacing).round().max(1.0) as u32;
    let mut v = Vec::with_capacity(((nx + 1) * (ny + 1)) as usize);
    for j in 0..=ny {
        for i in 0..=nx {
            v.push(Vector3::new(
                x0 + (x1 - x0) * i as f64 / nx as f64,
                y0 + (y1 - y0) * j as f64 / ny as f64,
                0.0,
            ));
        }
    }
    let id = |i: u32, j: u32| j * (nx + 1) + i;
    let mut t = Vec::with_capacity((2 * nx * ny) as usize);
    for j in 0..ny {
        for i in 0..nx {
            t.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            t.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build(v, t)
}

/// Single quad in the model z = 0 plane, two triangles.
pub fn quad(x0: f64, x1: f64, y0: f64, y1: f64) -> Mesh {
    build(
        vec![
            Vector3::new(x0, y0, 0.0),
            Vector3::new(x1, y0, 0.0),
            Vector3::new(x1, y1, 0.0),
            Vector3::new(x0, y1, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
}
