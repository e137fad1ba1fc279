//! Scene point clouds, an exact nearest-neighbour index, and scene file IO.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::Vec3;

/// Scene vertices with optional per-point normals.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl ScenePointCloud {
    pub fn new(points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite {
                what: "scene point",
                index,
            });
        }
        if let Some(normals) = &normals {
            if normals.len() != points.len() {
                return Err(Error::LengthMismatch {
                    left: points.len(),
                    right: normals.len(),
                });
            }
            if let Some(index) = normals.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite {
                    what: "scene normal",
                    index,
                });
            }
        }
        Ok(ScenePointCloud { points, normals })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads a scene from `.ply` (ASCII) or `.json`, chosen by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_scene(path)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: CloudDoc = serde_json::from_str(text).map_err(|e| Error::json("scene JSON", e))?;
        ScenePointCloud::new(
            doc.points.into_iter().map(Vec3::from).collect(),
            doc.normals
                .map(|n| n.into_iter().map(Vec3::from).collect()),
        )
    }

    pub fn to_json_string(&self) -> String {
        let doc = CloudDoc {
            points: self.points.iter().map(|p| (*p).into()).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|p| (*p).into()).collect()),
        };
        serde_json::to_string(&doc).expect("cloud serializes")
    }

    pub fn from_ply_str(text: &str) -> Result<Self> {
        parse_ply(text)
    }

    /// ASCII PLY with `x y z` and, when present, `nx ny nz` vertex properties.
    /// Coordinates are written with round-trip precision.
    pub fn to_ply_string(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 64);
        out.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(out, "element vertex {}", self.points.len());
        out.push_str("property double x\nproperty double y\nproperty double z\n");
        if self.normals.is_some() {
            out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
        }
        out.push_str("end_header\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
            if let Some(n) = &self.normals {
                let _ = write!(out, " {:?} {:?} {:?}", n[i].x, n[i].y, n[i].z);
            }
            out.push('\n');
        }
        out
    }

    /// Writes `.ply` or `.json` depending on the extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = if is_ply(path) {
            self.to_ply_string()
        } else {
            self.to_json_string()
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn is_ply(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<ScenePointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_ply(path) || text.starts_with("ply") {
        parse_ply(&text)
    } else {
        ScenePointCloud::from_json_str(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct CloudDoc {
    points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normals: Option<Vec<[f64; 3]>>,
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    /// Elements with list properties can only be skipped line by line.
    has_list: bool,
}

fn parse_ply(text: &str) -> Result<ScenePointCloud> {
    let mut lines = text.lines().enumerate();
    let header_err = |m: &str| Error::PlyHeader(m.to_string());
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(header_err("missing 'ply' magic line")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut saw_end = false;
    for (_, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(Error::PlyHeader(format!(
                    "unsupported format '{other}', only ascii is read"
                )))
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::PlyHeader(format!("bad element count '{count}'")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err("property before any element"))?;
                el.has_list = true;
                el.properties.push(tokens.last().unwrap().to_string());
            }
            ["property", _ty, name] => {
                elements
                    .last_mut()
                    .ok_or_else(|| header_err("property before any element"))?
                    .properties
                    .push(name.to_string());
            }
            ["end_header"] => {
                saw_end = true;
                break;
            }
            _ => return Err(Error::PlyHeader(format!("unrecognized header line '{line}'"))),
        }
    }
    if !saw_format {
        return Err(header_err("missing format line"));
    }
    if !saw_end {
        return Err(header_err("missing end_header"));
    }
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err("no vertex element"))?;
    let props = &elements[vertex].properties;
    if elements[vertex].has_list {
        return Err(header_err("vertex element must not contain list properties"));
    }
    let find = |n: &str| props.iter().position(|p| p == n);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(header_err("vertex element lacks x, y, z properties")),
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(x), Some(y), Some(z)) => Some((x, y, z)),
        _ => None,
    };

    let mut points = Vec::with_capacity(elements[vertex].count);
    let mut normals = normal_idx.map(|_| Vec::with_capacity(elements[vertex].count));
    for (ei, el) in elements.iter().enumerate() {
        for found in 0..el.count {
            let (line_no, line) = loop {
                match lines.next() {
                    Some((n, l)) if l.trim().is_empty() => {
                        let _ = n;
                        continue;
                    }
                    Some(entry) => break entry,
                    None => {
                        return Err(Error::PlyTruncated {
                            element: el.name.clone(),
                            declared: el.count,
                            found,
                        })
                    }
                }
            };
            if ei != vertex {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::PlyBody {
                    line: line_no + 1,
                    message: e.to_string(),
                })?;
            if values.len() != props.len() {
                return Err(Error::PlyBody {
                    line: line_no + 1,
                    message: format!("expected {} values, found {}", props.len(), values.len()),
                });
            }
            let p = Vec3::new(values[ix], values[iy], values[iz]);
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "PLY vertex",
                    index: found,
                });
            }
            points.push(p);
            if let (Some(normals), Some((nx, ny, nz))) = (normals.as_mut(), normal_idx) {
                normals.push(Vec3::new(values[nx], values[ny], values[nz]));
            }
        }
    }
    ScenePointCloud::new(points, normals)
}

/// Result of a nearest-neighbour query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    /// Index into the cloud's point list.
    pub index: usize,
    pub point: Vec3,
    pub distance: f64,
}

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Exact k-d tree over a scene cloud.
///
/// Immutable once built; queries take `&self` and may run concurrently.
#[derive(Clone, Debug)]
pub struct SceneIndex {
    cloud: ScenePointCloud,
    /// Points in tree order.
    coords: Vec<[f64; 3]>,
    /// Original index of each entry of `coords`.
    order: Vec<u32>,
    nodes: Vec<Node>,
}

pub fn build_index(cloud: ScenePointCloud) -> Result<SceneIndex> {
    SceneIndex::build(cloud)
}

pub fn closest_point(index: &SceneIndex, p: &Vec3) -> (Vec3, f64) {
    let n = index.nearest(p);
    (n.point, n.distance)
}

impl SceneIndex {
    pub fn build(cloud: ScenePointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut items: Vec<([f64; 3], u32)> = cloud
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| ([p.x, p.y, p.z], i as u32))
            .collect();
        let mut nodes = Vec::with_capacity(2 * items.len() / LEAF_SIZE + 1);
        build_node(&mut items, 0, &mut nodes);
        let (coords, order) = items.into_iter().unzip();
        Ok(SceneIndex {
            cloud,
            coords,
            order,
            nodes,
        })
    }

    pub fn cloud(&self) -> &ScenePointCloud {
        &self.cloud
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn nearest(&self, p: &Vec3) -> Nearest {
        let mut best = Best2::new();
        self.search(0, &[p.x, p.y, p.z], &mut best);
        self.make(best.d1, best.i1)
    }

    /// Nearest and second-nearest points; the second is `None` for a
    /// single-point cloud.
    pub fn nearest_two(&self, p: &Vec3) -> (Nearest, Option<Nearest>) {
        let mut best = Best2::new();
        self.search(0, &[p.x, p.y, p.z], &mut best);
        let second = (best.i2 != u32::MAX).then(|| self.make(best.d2, best.i2));
        (self.make(best.d1, best.i1), second)
    }

    fn make(&self, d2: f64, slot: u32) -> Nearest {
        let c = self.coords[slot as usize];
        Nearest {
            index: self.order[slot as usize] as usize,
            point: Vec3::new(c[0], c[1], c[2]),
            distance: d2.sqrt(),
        }
    }

    fn search(&self, node: usize, q: &[f64; 3], best: &mut Best2) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let c = &self.coords[slot as usize];
                    let dx = c[0] - q[0];
                    let dy = c[1] - q[1];
                    let dz = c[2] - q[2];
                    best.offer(dx * dx + dy * dy + dz * dz, slot);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near as usize, q, best);
                if diff * diff < best.d2 {
                    self.search(far as usize, q, best);
                }
            }
        }
    }
}

struct Best2 {
    d1: f64,
    i1: u32,
    d2: f64,
    i2: u32,
}

impl Best2 {
    fn new() -> Self {
        Best2 {
            d1: f64::INFINITY,
            i1: u32::MAX,
            d2: f64::INFINITY,
            i2: u32::MAX,
        }
    }

    #[inline]
    fn offer(&mut self, d: f64, slot: u32) {
        if d < self.d1 {
            self.d2 = self.d1;
            self.i2 = self.i1;
            self.d1 = d;
            self.i1 = slot;
        } else if d < self.d2 {
            self.d2 = d;
            self.i2 = slot;
        }
    }
}

fn build_node(items: &mut [([f64; 3], u32)], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len();
    if items.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + items.len()) as u32,
        });
        return id as u32;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (c, _) in items.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    if hi[axis] - lo[axis] == 0.0 {
        // All points coincide.
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + items.len()) as u32,
        });
        return id as u32;
    }
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]));
    let value = items[mid].0[axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_items, right_items) = items.split_at_mut(mid);
    let left = build_node(left_items, offset, nodes);
    let right = build_node(right_items, offset + mid, nodes);
    nodes[id] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    id as u32
}

/// A flat square grid of points on `z = height` with upward normals.
pub fn plane_grid(x0: f64, y0: f64, nx: usize, ny: usize, spacing: f64, height: f64) -> ScenePointCloud {
    let mut points = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            points.push(Vec3::new(
                x0 + i as f64 * spacing,
                y0 + j as f64 * spacing,
                height,
            ));
        }
    }
    let normals = vec![Vec3::z(); points.len()];
    ScenePointCloud::new(points, Some(normals)).expect("grid is non-empty and finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vec3], q: &Vec3) -> f64 {
        points
            .iter()
            .map(|p| (p - q).norm())
            .fold(f64::INFINITY, f64::min)
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn single_point_index() {
        let cloud = ScenePointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)], None).unwrap();
        let idx = SceneIndex::build(cloud).unwrap();
        for q in [Vec3::zeros(), Vec3::new(-5.0, 9.0, 1.0)] {
            let n = idx.nearest(&q);
            assert_eq!(n.point, Vec3::new(1.0, 2.0, 3.0));
            assert_eq!(n.index, 0);
            assert!((n.distance - (q - n.point).norm()).abs() < 1e-15);
            assert!(idx.nearest_two(&q).1.is_none());
        }
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(matches!(
            ScenePointCloud::new(vec![], None),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            ScenePointCloud::new(vec![Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0)], None),
            Err(Error::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn large_cloud_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points = random_cloud(&mut rng, 100_000);
        let idx = SceneIndex::build(ScenePointCloud::new(points.clone(), None).unwrap()).unwrap();
        for _ in 0..1000 {
            let q = Vec3::new(
                rng.random_range(-0.2..1.2),
                rng.random_range(-0.2..1.2),
                rng.random_range(-0.2..1.2),
            );
            let n = idx.nearest(&q);
            assert_eq!(n.distance, brute(&points, &q));
            assert_eq!(points[n.index], n.point);
        }
    }

    #[test]
    fn second_nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points = random_cloud(&mut rng, 5000);
        let idx = SceneIndex::build(ScenePointCloud::new(points.clone(), None).unwrap()).unwrap();
        for _ in 0..200 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            let mut d: Vec<f64> = points.iter().map(|p| (p - q).norm()).collect();
            d.sort_by(f64::total_cmp);
            let (a, b) = idx.nearest_two(&q);
            assert_eq!(a.distance, d[0]);
            assert_eq!(b.unwrap().distance, d[1]);
        }
    }

    #[test]
    fn duplicate_points_have_unique_distance() {
        let p = Vec3::new(0.5, 0.5, 0.5);
        let cloud = ScenePointCloud::new(vec![p; 20], None).unwrap();
        let idx = SceneIndex::build(cloud).unwrap();
        let (a, b) = idx.nearest_two(&Vec3::zeros());
        assert_eq!(a.point, p);
        assert_eq!(a.distance, b.unwrap().distance);
    }

    #[test]
    fn grid_distance_examples() {
        let grid = plane_grid(-0.5, -0.5, 101, 101, 0.01, 0.0);
        let idx = SceneIndex::build(grid.clone()).unwrap();
        let (pt, d) = closest_point(&idx, &Vec3::new(0.0, 0.0, 0.05));
        assert!((d - 0.05).abs() < 1e-12);
        assert!(pt.xy().norm() < 1e-12);
        let (_, d) = closest_point(&idx, &grid.points()[777]);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn ply_three_vertices_in_order() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0.5\n";
        let cloud = ScenePointCloud::from_ply_str(text).unwrap();
        assert_eq!(
            cloud.points(),
            &[Vec3::zeros(), Vec3::x(), Vec3::new(0.0, 1.0, 0.5)]
        );
        assert!(cloud.normals().is_none());
    }

    #[test]
    fn ply_truncation_names_element() {
        let text = "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n1 1 1\n";
        match ScenePointCloud::from_ply_str(text) {
            Err(Error::PlyTruncated {
                element,
                declared,
                found,
            }) => {
                assert_eq!(element, "vertex");
                assert_eq!((declared, found), (5, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ply_distinct_errors() {
        let bad_header = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
        assert!(matches!(
            ScenePointCloud::from_ply_str(bad_header),
            Err(Error::PlyHeader(_))
        ));
        let nan = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\nnan 0 0\n";
        assert!(matches!(
            ScenePointCloud::from_ply_str(nan),
            Err(Error::NonFinite { index: 1, .. })
        ));
        let garbage = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 zero 0\n";
        assert!(matches!(
            ScenePointCloud::from_ply_str(garbage),
            Err(Error::PlyBody { line: 8, .. })
        ));
    }

    #[test]
    fn ply_with_normals_and_faces() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 0 0 1 255\n1 0 0 0 0 1 255\n0 1 0 0 0 1 255\n3 0 1 2\n";
        let cloud = ScenePointCloud::from_ply_str(text).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.normals().unwrap()[2], Vec3::z());
    }

    #[test]
    fn file_roundtrips_are_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<Vec3> = (0..100)
            .map(|_| Vec3::new(rng.random::<f64>() * 1e3, rng.random(), -rng.random::<f64>()))
            .collect();
        let normals: Vec<Vec3> = points.iter().map(|p| p.normalize()).collect();
        let cloud = ScenePointCloud::new(points, Some(normals)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["scene.json", "scene.ply"] {
            let path = dir.path().join(name);
            cloud.save(&path).unwrap();
            assert_eq!(load_scene(&path).unwrap(), cloud, "{name}");
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_scene("/nonexistent/scene.ply"),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn index_is_exact(seed in 0u64..1_000_000, n in 1usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points = random_cloud(&mut rng, n);
            let idx = SceneIndex::build(ScenePointCloud::new(points.clone(), None).unwrap()).unwrap();
            for _ in 0..20 {
                let q = Vec3::new(rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0));
                let n = idx.nearest(&q);
                prop_assert_eq!(n.distance, brute(&points, &q));
                for _ in 0..100 {
                    let other = points[rng.random_range(0..points.len())];
                    prop_assert!(n.distance <= (other - q).norm());
                }
            }
        }
    }
}
