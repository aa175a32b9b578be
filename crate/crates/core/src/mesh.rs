//! Solid meshes: structured beam generation, boundary extraction and the
//! `mesh/1` JSON file format.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::MaterialParams;

pub const MESH_SCHEMA: &str = "mesh/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    #[serde(rename = "hex8")]
    Hex8,
    #[serde(rename = "tet4")]
    Tet4,
}

impl ElementKind {
    pub fn nodes_per_element(self) -> usize {
        match self {
            ElementKind::Hex8 => 8,
            ElementKind::Tet4 => 4,
        }
    }

    /// Local node pairs forming the element's edges.
    pub fn local_edges(self) -> &'static [(usize, usize)] {
        match self {
            ElementKind::Hex8 => &[
                (0, 1), (1, 2), (2, 3), (3, 0),
                (4, 5), (5, 6), (6, 7), (7, 4),
                (0, 4), (1, 5), (2, 6), (3, 7),
            ],
            ElementKind::Tet4 => &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        }
    }

    /// Local faces, each as a polygon (3 or 4 nodes) oriented outward for a
    /// positively oriented element.
    fn local_faces(self) -> &'static [&'static [usize]] {
        match self {
            ElementKind::Hex8 => &[
                &[0, 3, 2, 1],
                &[4, 5, 6, 7],
                &[0, 1, 5, 4],
                &[1, 2, 6, 5],
                &[2, 3, 7, 6],
                &[3, 0, 4, 7],
            ],
            ElementKind::Tet4 => &[&[0, 2, 1], &[0, 1, 3], &[1, 2, 3], &[0, 3, 2]],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolidMesh {
    pub rest_positions: Vec<[f64; 3]>,
    pub kind: ElementKind,
    connectivity: Vec<usize>,
    /// Boundary triangles, counter-clockwise seen from outside.
    pub surface_triangles: Vec<[usize; 3]>,
    /// Sorted Dirichlet node indices.
    pub fixed_nodes: Vec<usize>,
    pub material: MaterialParams,
}

impl SolidMesh {
    /// Builds and validates a mesh; surface triangles are extracted when `surface` is `None`.
    pub fn new(
        rest_positions: Vec<[f64; 3]>,
        kind: ElementKind,
        elements: Vec<Vec<usize>>,
        fixed_nodes: Vec<usize>,
        surface: Option<Vec<[usize; 3]>>,
        material: MaterialParams,
    ) -> Result<Self> {
        let n = rest_positions.len();
        let npe = kind.nodes_per_element();
        for (i, p) in rest_positions.iter().enumerate() {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::schema(format!("nodes[{i}]"), "non-finite coordinate"));
            }
        }
        let mut connectivity = Vec::with_capacity(elements.len() * npe);
        for (e, el) in elements.iter().enumerate() {
            if el.len() != npe {
                return Err(Error::schema(
                    format!("elements[{e}]"),
                    format!("expected {npe} nodes for {kind:?}, found {} (mixed element kinds)", el.len()),
                ));
            }
            for (k, &i) in el.iter().enumerate() {
                if i >= n {
                    return Err(Error::schema(
                        format!("elements[{e}][{k}]"),
                        format!("node index {i} out of range for {n} nodes (element {e})"),
                    ));
                }
            }
            connectivity.extend_from_slice(el);
        }
        let mut fixed: Vec<usize> = fixed_nodes;
        fixed.sort_unstable();
        fixed.dedup();
        if let Some(&bad) = fixed.iter().find(|&&i| i >= n) {
            return Err(Error::schema("fixed", format!("node index {bad} out of range for {n} nodes")));
        }
        let mut mesh = SolidMesh {
            rest_positions,
            kind,
            connectivity,
            surface_triangles: Vec::new(),
            fixed_nodes: fixed,
            material,
        };
        mesh.surface_triangles = match surface {
            Some(tris) => {
                for (t, tri) in tris.iter().enumerate() {
                    if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                        return Err(Error::schema(
                            format!("surface[{t}]"),
                            format!("node index {bad} out of range for {n} nodes"),
                        ));
                    }
                }
                tris
            }
            None => mesh.extract_surface(),
        };
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn n_elements(&self) -> usize {
        self.connectivity.len() / self.kind.nodes_per_element()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.kind.nodes_per_element();
        &self.connectivity[e * npe..(e + 1) * npe]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks_exact(self.kind.nodes_per_element())
    }

    pub fn is_fixed(&self, node: usize) -> bool {
        self.fixed_nodes.binary_search(&node).is_ok()
    }

    /// Undirected element edges as sorted `(lo, hi)` pairs, ascending.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for el in self.elements() {
            for &(a, b) in self.kind.local_edges() {
                let (i, j) = (el[a], el[b]);
                set.insert((i.min(j), i.max(j)));
            }
        }
        set.into_iter().collect()
    }

    /// Nodes that appear on at least one surface triangle, ascending.
    pub fn surface_nodes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.surface_triangles.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    /// Area-weighted outward normals at every node (zero for interior nodes).
    pub fn vertex_normals(&self, positions: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let mut normals = vec![[0.0; 3]; positions.len()];
        for tri in &self.surface_triangles {
            let a = positions[tri[0]];
            let b = positions[tri[1]];
            let c = positions[tri[2]];
            let n = cross(sub(b, a), sub(c, a));
            for &i in tri {
                for k in 0..3 {
                    normals[i][k] += n[k];
                }
            }
        }
        for n in &mut normals {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len > 0.0 {
                for x in n.iter_mut() {
                    *x /= len;
                }
            }
        }
        normals
    }

    /// Shortest and mean element-edge lengths in the rest configuration.
    pub fn rest_edge_lengths(&self) -> (f64, f64) {
        let edges = self.undirected_edges();
        let mut min = f64::INFINITY;
        let mut sum = 0.0;
        for &(i, j) in &edges {
            let d = norm(sub(self.rest_positions[i], self.rest_positions[j]));
            min = min.min(d);
            sum += d;
        }
        (min, sum / edges.len().max(1) as f64)
    }

    fn extract_surface(&self) -> Vec<[usize; 3]> {
        let mut faces: BTreeMap<Vec<usize>, (usize, Vec<usize>)> = BTreeMap::new();
        for el in self.elements() {
            for face in self.kind.local_faces() {
                let nodes: Vec<usize> = face.iter().map(|&k| el[k]).collect();
                let mut key = nodes.clone();
                key.sort_unstable();
                faces
                    .entry(key)
                    .and_modify(|entry| entry.0 += 1)
                    .or_insert((1, nodes));
            }
        }
        let centroid_of = |nodes: &[usize]| -> [f64; 3] {
            let mut c = [0.0; 3];
            for &i in nodes {
                for k in 0..3 {
                    c[k] += self.rest_positions[i][k];
                }
            }
            c.map(|x| x / nodes.len() as f64)
        };
        // Element centroid for each boundary face, used to fix orientation.
        let mut owner: BTreeMap<Vec<usize>, [f64; 3]> = BTreeMap::new();
        for el in self.elements() {
            let c = centroid_of(el);
            for face in self.kind.local_faces() {
                let mut key: Vec<usize> = face.iter().map(|&k| el[k]).collect();
                key.sort_unstable();
                owner.entry(key).or_insert(c);
            }
        }
        let mut tris = Vec::new();
        for (key, (count, nodes)) in &faces {
            if *count != 1 {
                continue;
            }
            let fc = centroid_of(nodes);
            let ec = owner[key];
            let outward = sub(fc, ec);
            let polys: Vec<[usize; 3]> = if nodes.len() == 4 {
                vec![[nodes[0], nodes[1], nodes[2]], [nodes[0], nodes[2], nodes[3]]]
            } else {
                vec![[nodes[0], nodes[1], nodes[2]]]
            };
            for mut t in polys {
                let p = t.map(|i| self.rest_positions[i]);
                let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
                if dot(n, outward) < 0.0 {
                    t.swap(1, 2);
                }
                tris.push(t);
            }
        }
        tris
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            schema: MESH_SCHEMA.to_string(),
            element_kind: self.kind,
            nodes: self.rest_positions.clone(),
            elements: self.elements().map(|e| e.to_vec()).collect(),
            fixed: self.fixed_nodes.clone(),
            surface: Some(self.surface_triangles.clone()),
            material: Some(self.material.clone()),
        }
    }

    pub fn from_file(file: MeshFile) -> Result<Self> {
        if file.schema != MESH_SCHEMA {
            return Err(Error::schema(
                "schema",
                format!("expected \"{MESH_SCHEMA}\", found \"{}\"", file.schema),
            ));
        }
        let material = file.material.unwrap_or_default();
        material
            .validate()
            .map_err(|e| Error::schema("material", e.to_string()))?;
        SolidMesh::new(
            file.nodes,
            file.element_kind,
            file.elements,
            file.fixed,
            file.surface,
            material,
        )
    }
}

/// On-disk `mesh/1` representation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshFile {
    pub schema: String,
    pub element_kind: ElementKind,
    pub nodes: Vec<[f64; 3]>,
    pub elements: Vec<Vec<usize>>,
    pub fixed: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<Vec<[usize; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialParams>,
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<SolidMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<SolidMesh> {
    let file: MeshFile = serde_json::from_str(text).map_err(|e| {
        Error::schema(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    SolidMesh::from_file(file)
}

pub fn save_mesh(mesh: &SolidMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&mesh.to_file()).map_err(|e| Error::Json {
        context: "serializing mesh".into(),
        source: e,
    })?;
    crate::io::write_atomic(path, text)
}

/// Structured cantilever of `nx * ny * nz` hexahedra spanning `[0,h] x [0,w] x [0,l]`,
/// clamped on the `z = 0` face.
pub fn build_beam_mesh(
    h: f64,
    w: f64,
    l: f64,
    nx: usize,
    ny: usize,
    nz: usize,
    material: MaterialParams,
) -> Result<SolidMesh> {
    if !(h > 0.0 && w > 0.0 && l > 0.0) || !(h.is_finite() && w.is_finite() && l.is_finite()) {
        return Err(Error::invalid(format!(
            "beam dimensions must be positive, got ({h}, {w}, {l})"
        )));
    }
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::invalid(format!(
            "beam subdivisions must be at least 1, got ({nx}, {ny}, {nz})"
        )));
    }
    let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([
                    h * i as f64 / nx as f64,
                    w * j as f64 / ny as f64,
                    l * k as f64 / nz as f64,
                ]);
            }
        }
    }
    let mut elements = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                elements.push(vec![
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
            }
        }
    }
    let mut fixed = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            fixed.push(id(i, j, 0));
        }
    }
    SolidMesh::new(nodes, ElementKind::Hex8, elements, fixed, None, material)
}

/// Tetrahedral ellipsoid blob: the cells of an `n^3` grid whose centres lie
/// inside the ellipsoid with semi-axes `radii`, each split into six
/// tetrahedra around the cell diagonal. Nodes on the lowest layer are clamped.
pub fn build_blob_mesh(radii: [f64; 3], n: usize, material: MaterialParams) -> Result<SolidMesh> {
    if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("blob radii must be positive, got {radii:?}")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("blob needs at least 2 cells per axis, got {n}")));
    }
    let grid = |i: usize, a: usize| radii[a] * (2.0 * i as f64 / n as f64 - 1.0);
    let inside = |c: [f64; 3]| (0..3).map(|a| (c[a] / radii[a]).powi(2)).sum::<f64>() < 1.0;
    let gid = |i: usize, j: usize, k: usize| i + (n + 1) * (j + (n + 1) * k);
    let mut used = vec![usize::MAX; (n + 1).pow(3)];
    let mut nodes = Vec::new();
    let mut elements = Vec::new();
    const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let centre = [0, 1, 2].map(|a| {
                    let c = [i, j, k][a];
                    0.5 * (grid(c, a) + grid(c + 1, a))
                });
                if !inside(centre) {
                    continue;
                }
                for path in PATHS {
                    let mut corner = [i, j, k];
                    let mut tet = Vec::with_capacity(4);
                    for s in 0..4 {
                        if s > 0 {
                            corner[path[s - 1]] += 1;
                        }
                        let g = gid(corner[0], corner[1], corner[2]);
                        if used[g] == usize::MAX {
                            used[g] = nodes.len();
                            nodes.push([grid(corner[0], 0), grid(corner[1], 1), grid(corner[2], 2)]);
                        }
                        tet.push(used[g]);
                    }
                    let [a, b, c, d] = [tet[0], tet[1], tet[2], tet[3]].map(|t| nodes[t]);
                    if dot(cross(sub(b, a), sub(c, a)), sub(d, a)) < 0.0 {
                        tet.swap(1, 2);
                    }
                    elements.push(tet);
                }
            }
        }
    }
    let z_min = nodes.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    let fixed = (0..nodes.len()).filter(|&i| nodes[i][2] == z_min).collect();
    SolidMesh::new(nodes, ElementKind::Tet4, elements, fixed, None, material)
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
