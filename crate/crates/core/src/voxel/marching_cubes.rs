//! Marching cubes over the TSDF zero level set.
//!
//! The 256-case table is derived at first use rather than hard-coded: for
//! every corner configuration, each cube face contributes the segments that
//! join its sign-changing edges, and the segments close into cycles that are
//! fan-triangulated. Faces with four crossings always cut off their inside
//! corners, so two cubes sharing a face agree on its segments and the result
//! has no cracks.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};

use super::{FixedState, VoxelGrid, VoxelKey};
use crate::mesh::TriangleMesh;

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const EDGES: [(u8, u8); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Corners of each face in cyclic order.
const FACES: [[u8; 4]; 6] = [
    [0, 2, 6, 4],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 3, 7, 6],
    [0, 1, 3, 2],
    [4, 5, 7, 6],
];

fn edge_id(a: u8, b: u8) -> u8 {
    let (a, b) = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == (a, b)).expect("corners share an edge") as u8
}

type CaseTable = Vec<Vec<Vec<u8>>>;

fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| (0..256u16).map(|c| cycles_for_case(c as u8)).collect())
}

/// Closed cycles of crossed edges for one inside-corner bit pattern.
fn cycles_for_case(config: u8) -> Vec<Vec<u8>> {
    let inside = |c: u8| config & (1 << c) != 0;
    let mut links: [Vec<u8>; 12] = Default::default();
    for face in FACES {
        let crossed: Vec<usize> = (0..4)
            .filter(|&i| inside(face[i]) != inside(face[(i + 1) % 4]))
            .collect();
        let e = |i: usize| edge_id(face[i % 4], face[(i + 1) % 4]);
        let mut connect = |a: u8, b: u8| {
            links[a as usize].push(b);
            links[b as usize].push(a);
        };
        match crossed.len() {
            0 => {}
            2 => connect(e(crossed[0]), e(crossed[1])),
            4 => {
                for i in 0..4 {
                    if inside(face[i]) {
                        connect(e(i + 3), e(i));
                    }
                }
            }
            n => unreachable!("a face has {n} sign changes"),
        }
    }
    let mut visited = [false; 12];
    let mut cycles = Vec::new();
    for start in 0..12u8 {
        if visited[start as usize] || links[start as usize].is_empty() {
            continue;
        }
        let mut cycle = vec![start];
        visited[start as usize] = true;
        let mut prev = start;
        let mut cur = links[start as usize][0];
        while cur != start {
            visited[cur as usize] = true;
            cycle.push(cur);
            let next = links[cur as usize]
                .iter()
                .copied()
                .find(|&n| n != prev)
                .unwrap_or(links[cur as usize][0]);
            prev = cur;
            cur = next;
        }
        cycles.push(cycle);
    }
    cycles
}

fn offset(c: u8) -> [i64; 3] {
    [(c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64]
}

/// Triangulates the zero crossing of the TSDF at the grid's native
/// resolution. Cubes with any unobserved corner are skipped. Triangles are
/// wound so their normals follow the TSDF gradient (outwards).
pub fn extract_mesh(grid: &VoxelGrid) -> TriangleMesh {
    let table = case_table();
    let mut mesh = TriangleMesh::default();
    let mut edge_vertices: HashMap<([i64; 3], u8), u32, FixedState> = HashMap::default();

    for (key, voxel) in grid.observed_voxels() {
        let base = key.index();
        let mut values = [0.0f64; 8];
        let mut colors = [[0.0f64; 3]; 8];
        let mut complete = true;
        for c in 0..8u8 {
            let o = offset(c);
            let ck = VoxelKey::from_index([base[0] + o[0], base[1] + o[1], base[2] + o[2]]);
            let v = if c == 0 { Some(voxel) } else { grid.get(&ck) };
            match v {
                Some(v) if v.tsdf_weight > 0.0 => {
                    values[c as usize] = v.tsdf;
                    colors[c as usize] = v.color;
                }
                _ => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            continue;
        }
        let config = (0..8u8).fold(0u8, |acc, c| if values[c as usize] < 0.0 { acc | (1 << c) } else { acc });
        if config == 0 || config == 255 {
            continue;
        }

        let gradient = Vector3::new(
            (0..8u8).filter(|c| c & 1 == 1).map(|c| values[c as usize] - values[(c ^ 1) as usize]).sum::<f64>(),
            (0..8u8).filter(|c| c & 2 == 2).map(|c| values[c as usize] - values[(c ^ 2) as usize]).sum::<f64>(),
            (0..8u8).filter(|c| c & 4 == 4).map(|c| values[c as usize] - values[(c ^ 4) as usize]).sum::<f64>(),
        );

        for cycle in &table[config as usize] {
            let ids: Vec<u32> = cycle
                .iter()
                .map(|&e| {
                    let (a, b) = EDGES[e as usize];
                    let oa = offset(a);
                    let corner = [base[0] + oa[0], base[1] + oa[1], base[2] + oa[2]];
                    let axis = (a ^ b).trailing_zeros() as u8;
                    *edge_vertices.entry((corner, axis)).or_insert_with(|| {
                        let (va, vb) = (values[a as usize], values[b as usize]);
                        let t = va / (va - vb);
                        let pa = grid.voxel_center(&VoxelKey::from_index(corner));
                        let mut pb = pa;
                        pb[axis as usize] += grid.resolution();
                        let (ca, cb) = (colors[a as usize], colors[b as usize]);
                        mesh.vertices.push(pa + (pb - pa) * t);
                        mesh.colors.push([
                            ca[0] + t * (cb[0] - ca[0]),
                            ca[1] + t * (cb[1] - ca[1]),
                            ca[2] + t * (cb[2] - ca[2]),
                        ]);
                        (mesh.vertices.len() - 1) as u32
                    })
                })
                .collect();

            let tris: Vec<[u32; 3]> = (1..ids.len() - 1).map(|i| [ids[0], ids[i], ids[i + 1]]).collect();
            let normal: Vector3<f64> = tris
                .iter()
                .map(|t| {
                    let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                    (b - a).cross(&(c - a))
                })
                .sum();
            let flip = normal.dot(&gradient) < 0.0;
            mesh.faces.extend(tris.into_iter().map(|[a, b, c]| if flip { [a, c, b] } else { [a, b, c] }));
        }
    }
    mesh
}

/// Centroid of the mesh vertices; handy for tests.
pub(crate) fn _centroid(mesh: &TriangleMesh) -> Point3<f64> {
    let sum: Vector3<f64> = mesh.vertices.iter().map(|p| p.coords).sum();
    Point3::from(sum / mesh.vertices.len().max(1) as f64)
}
