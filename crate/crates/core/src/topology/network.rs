use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::skeleton::{degree_map, Skeleton, RING};
use super::thickness::ThicknessMap;
use crate::error::{Error, Result};
use crate::image::Calibration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementClass {
    Segment,
    Branch,
    Isolated,
}

impl ElementClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementClass::Segment => "segment",
            ElementClass::Branch => "branch",
            ElementClass::Isolated => "isolated",
        }
    }
}

/// A cluster of junction pixels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub id: usize,
    pub pixels: Vec<(usize, usize)>,
    pub centroid: (f64, f64),
    pub diameter_um: f64,
}

/// A traced centerline path between terminals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Element {
    pub id: usize,
    pub class: ElementClass,
    pub path: Vec<(usize, usize)>,
    pub start_node: Option<usize>,
    pub end_node: Option<usize>,
    pub is_loop: bool,
    pub length_um: f64,
    pub chord_um: f64,
    pub diameter_samples_um: Vec<f64>,
    pub mean_diameter_um: f64,
    pub suppressed: bool,
    pub curated_out: bool,
}

impl Element {
    /// Counted by metrics: neither twig-suppressed nor curated out.
    pub fn is_active(&self) -> bool {
        !self.suppressed && !self.curated_out
    }

    /// `L_s / L_c - 1`, or `None` for loops and zero-chord paths.
    pub fn tortuosity(&self) -> Option<f64> {
        if self.is_loop || self.chord_um <= 0.0 {
            return None;
        }
        Some((self.length_um / self.chord_um - 1.0).max(0.0))
    }

    pub fn touches(&self, node: usize) -> bool {
        self.start_node == Some(node) || self.end_node == Some(node)
    }
}

/// Background region fully enclosed by vessel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mesh {
    pub id: usize,
    pub area_px: usize,
    pub area_um2: f64,
    pub outline: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VesselNetwork {
    pub width: usize,
    pub height: usize,
    pub calibration: Calibration,
    pub effective_area_px: usize,
    pub skeleton_px: usize,
    pub twig_size_um: f64,
    pub nodes: Vec<Node>,
    pub elements: Vec<Element>,
    pub meshes: Vec<Mesh>,
}

impl VesselNetwork {
    pub fn active_elements(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|e| e.is_active())
    }

    /// S_t: active element count.
    pub fn total_count(&self) -> usize {
        self.active_elements().count()
    }

    /// S_i: active isolated element count.
    pub fn isolated_count(&self) -> usize {
        self.active_elements().filter(|e| e.class == ElementClass::Isolated).count()
    }

    /// Nodes with at least one active element attached.
    pub fn active_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| self.active_elements().any(|e| e.touches(n.id))).count()
    }

    /// Total active arc length in micrometers.
    pub fn total_length_um(&self) -> f64 {
        self.active_elements().map(|e| e.length_um).sum()
    }

    pub fn element(&self, id: usize) -> Result<&Element> {
        self.elements.get(id).ok_or(Error::UnknownElement(id))
    }
}

const NONE: usize = usize::MAX;

struct Raw {
    path: Vec<usize>,
    start: Option<usize>,
    end: Option<usize>,
    closed: bool,
}

struct Tracer<'a> {
    w: usize,
    h: usize,
    bits: &'a [bool],
    cluster: Vec<usize>,
    visited: Vec<bool>,
}

impl Tracer<'_> {
    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = ((i % self.w) as isize, (i / self.w) as isize);
        RING.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx as usize >= self.w || ny as usize >= self.h {
                return None;
            }
            let j = ny as usize * self.w + nx as usize;
            self.bits[j].then_some(j)
        })
    }

    fn trace(&mut self, start: Option<usize>, first: usize) -> Raw {
        let mut path = vec![first];
        self.visited[first] = true;
        let mut prev = NONE;
        let mut cur = first;
        let end = loop {
            let mut next_path = None;
            let mut next_node = None;
            for n in self.neighbours(cur) {
                if n == prev {
                    continue;
                }
                let c = self.cluster[n];
                if c != NONE {
                    if path.len() == 1 && Some(c) == start {
                        continue;
                    }
                    next_node.get_or_insert(c);
                } else if !self.visited[n] {
                    next_path.get_or_insert(n);
                }
            }
            if let Some(c) = next_node {
                break Some(c);
            }
            match next_path {
                Some(n) => {
                    self.visited[n] = true;
                    path.push(n);
                    prev = cur;
                    cur = n;
                }
                None => break None,
            }
        };
        Raw { path, start, end, closed: false }
    }
}

fn label_clusters(junction: &[bool], w: usize, h: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut label = vec![NONE; w * h];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for s in 0..w * h {
        if !junction[s] || label[s] != NONE {
            continue;
        }
        let id = clusters.len();
        let mut members = Vec::new();
        label[s] = id;
        queue.push_back(s);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in &RING {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if junction[j] && label[j] == NONE {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    (label, clusters)
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Polyline length after a five-point moving average with fixed endpoints.
///
/// Raw 8-connected chains overestimate the length of smooth curves by up to about 8 % for
/// oblique lines, while the smoothed chain keeps straight lattice paths exact.
pub fn smoothed_length(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    const HALF: usize = 2;
    let smooth: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let r = HALF.min(i).min(n - 1 - i);
            let span = &points[i - r..=i + r];
            let k = span.len() as f64;
            let (sx, sy) = span.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            (sx / k, sy / k)
        })
        .collect();
    smooth.windows(2).map(|p| (p[1].0 - p[0].0).hypot(p[1].1 - p[0].1)).sum()
}

/// Builds the vessel graph from a skeleton and its thickness map.
///
/// Skeleton pixels with three or more neighbours form junction clusters (nodes). Paths are
/// traced from every node outward, then from free endpoints, then around junction-free
/// cycles. A path joining two nodes that is no longer than half the larger node diameter is
/// folded into a single node. Ids follow the raster order of each element's first pixel.
pub fn extract_network(skel: &Skeleton, thick: &ThicknessMap, twig_size_um: f64) -> Result<VesselNetwork> {
    let (w, h) = (skel.width(), skel.height());
    if thick.width() != w || thick.height() != h {
        return Err(Error::DimensionMismatch("skeleton and thickness map differ in size".into()));
    }
    if !(twig_size_um >= 0.0) {
        return Err(Error::InvalidParameter("twig size must be non-negative".into()));
    }
    let px = skel.calibration().pixel_size_um;
    let bits = skel.bits();
    let deg = degree_map(bits, w, h);
    let junction: Vec<bool> = (0..w * h).map(|i| bits[i] && deg[i] >= 3).collect();
    let (cluster, clusters) = label_clusters(&junction, w, h);

    let mut tracer = Tracer { w, h, bits, cluster, visited: vec![false; w * h] };
    let mut raws = Vec::new();
    for (cid, members) in clusters.iter().enumerate() {
        for &j in members {
            let ns: Vec<usize> = tracer.neighbours(j).collect();
            for n in ns {
                if tracer.cluster[n] == NONE && !tracer.visited[n] {
                    raws.push(tracer.trace(Some(cid), n));
                }
            }
        }
    }
    for i in 0..w * h {
        if bits[i] && tracer.cluster[i] == NONE && !tracer.visited[i] && deg[i] <= 1 {
            raws.push(tracer.trace(None, i));
        }
    }
    for i in 0..w * h {
        if bits[i] && tracer.cluster[i] == NONE && !tracer.visited[i] {
            let mut raw = tracer.trace(None, i);
            raw.closed = raw.path.len() >= 3;
            raws.push(raw);
        }
    }

    let thickness = |i: usize| thick.values_um()[i];
    let cluster_diam: Vec<f64> =
        clusters.iter().map(|m| m.iter().map(|&i| thickness(i)).fold(0.0, f64::max)).collect();
    let centroid_of = |m: &[usize]| {
        let k = m.len() as f64;
        let (sx, sy) = m.iter().fold((0.0, 0.0), |a, &i| (a.0 + (i % w) as f64, a.1 + (i / w) as f64));
        (sx / k, sy / k)
    };
    let cluster_centroid: Vec<(f64, f64)> = clusters.iter().map(|m| centroid_of(m)).collect();

    // Fold short node-to-node links into their nodes.
    let mut parent: Vec<usize> = (0..clusters.len()).collect();
    let mut absorbed = vec![false; raws.len()];
    for (r, raw) in raws.iter().enumerate() {
        let (Some(a), Some(b)) = (raw.start, raw.end) else { continue };
        let mut pts = vec![cluster_centroid[a]];
        pts.extend(raw.path.iter().map(|&i| ((i % w) as f64, (i / w) as f64)));
        pts.push(cluster_centroid[b]);
        let len_px: f64 = pts.windows(2).map(|p| (p[1].0 - p[0].0).hypot(p[1].1 - p[0].1)).sum();
        let limit_px = cluster_diam[a].max(cluster_diam[b]) / px / 2.0;
        if len_px <= limit_px {
            absorbed[r] = true;
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut group_pixels: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    for (c, members) in clusters.iter().enumerate() {
        let root = find(&mut parent, c);
        group_pixels[root].extend_from_slice(members);
    }
    for (r, raw) in raws.iter().enumerate() {
        if absorbed[r] {
            let root = find(&mut parent, raw.start.unwrap_or(0));
            group_pixels[root].extend_from_slice(&raw.path);
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = group_pixels
        .into_iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(root, mut p)| {
            p.sort_unstable();
            (root, p)
        })
        .collect();
    groups.sort_by_key(|(_, p)| p[0]);
    let mut node_of_root = vec![NONE; clusters.len()];
    let nodes: Vec<Node> = groups
        .iter()
        .enumerate()
        .map(|(id, (root, p))| {
            node_of_root[*root] = id;
            Node {
                id,
                pixels: p.iter().map(|&i| (i % w, i / w)).collect(),
                centroid: centroid_of(p),
                diameter_um: p.iter().map(|&i| thickness(i)).fold(0.0, f64::max),
            }
        })
        .collect();
    let node_id = |parent: &mut [usize], c: Option<usize>| c.map(|c| node_of_root[find(parent, c)]);

    // Exclusion zone around every node for diameter sampling.
    let mut excluded = vec![false; w * h];
    for node in &nodes {
        let r = node.diameter_um / px / 2.0;
        let (cx, cy) = node.centroid;
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                    excluded[y * w + x] = true;
                }
            }
        }
    }

    let mut elements: Vec<Element> = Vec::new();
    for (r, raw) in raws.into_iter().enumerate() {
        if absorbed[r] {
            continue;
        }
        let start = node_id(&mut parent, raw.start);
        let end = node_id(&mut parent, raw.end);
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(raw.path.len() + 2);
        if let Some(s) = start {
            pts.push(nodes[s].centroid);
        }
        pts.extend(raw.path.iter().map(|&i| ((i % w) as f64, (i / w) as f64)));
        if let Some(e) = end {
            pts.push(nodes[e].centroid);
        }
        if raw.closed {
            pts.push(pts[0]);
        }
        // a lone pixel still occupies one pixel of vessel
        let length_um = (smoothed_length(&pts) * px).max(px);
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let chord_um = ((b.0 - a.0).hypot(b.1 - a.1) * px).min(length_um);
        let mut samples: Vec<f64> = raw.path.iter().filter(|&&i| !excluded[i]).map(|&i| thickness(i)).collect();
        if samples.is_empty() {
            samples = raw.path.iter().map(|&i| thickness(i)).collect();
        }
        let mean_diameter_um = samples.iter().sum::<f64>() / samples.len() as f64;
        let class = match (start.is_some(), end.is_some()) {
            (true, true) => ElementClass::Segment,
            (false, false) => ElementClass::Isolated,
            _ => ElementClass::Branch,
        };
        let is_loop = raw.closed || (start.is_some() && start == end);
        let mut path: Vec<(usize, usize)> = raw.path.iter().map(|&i| (i % w, i / w)).collect();
        path.shrink_to_fit();
        elements.push(Element {
            id: 0,
            class,
            path,
            start_node: start,
            end_node: end,
            is_loop,
            length_um,
            chord_um,
            diameter_samples_um: samples,
            mean_diameter_um,
            suppressed: class == ElementClass::Isolated && mean_diameter_um < twig_size_um,
            curated_out: false,
        });
    }
    elements.sort_by_key(|e| e.path.iter().map(|&(x, y)| y * w + x).min().unwrap_or(NONE));
    for (id, e) in elements.iter_mut().enumerate() {
        e.id = id;
    }

    let meshes = find_meshes(thick, px);
    Ok(VesselNetwork {
        width: w,
        height: h,
        calibration: skel.calibration(),
        effective_area_px: skel.effective_area_px(),
        skeleton_px: skel.count(),
        twig_size_um,
        nodes,
        elements,
        meshes,
    })
}

/// Background 4-components of the mask that do not touch the image border.
fn find_meshes(thick: &ThicknessMap, px: f64) -> Vec<Mesh> {
    let (w, h) = (thick.width(), thick.height());
    let bg: Vec<bool> = thick.values_um().iter().map(|&t| t <= 0.0).collect();
    let mut label = vec![NONE; w * h];
    let mut meshes = Vec::new();
    let mut queue = VecDeque::new();
    let steps: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    for s in 0..w * h {
        if !bg[s] || label[s] != NONE {
            continue;
        }
        let tag = s;
        let mut members = Vec::new();
        let mut border = false;
        label[s] = tag;
        queue.push_back(s);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in &steps {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    border = true;
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if bg[j] && label[j] == NONE {
                    label[j] = tag;
                    queue.push_back(j);
                }
            }
        }
        if border {
            continue;
        }
        members.sort_unstable();
        let outline = members
            .iter()
            .filter(|&&i| {
                let (x, y) = (i % w, i / w);
                [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)].iter().any(|&(a, b)| label[b * w + a] != tag)
            })
            .map(|&i| (i % w, i / w))
            .collect();
        meshes.push(Mesh {
            id: meshes.len(),
            area_px: members.len(),
            area_um2: members.len() as f64 * px * px,
            outline,
        });
    }
    meshes
}

/// Most pruning rounds attempted by [`prune_spurs`].
const MAX_PRUNE_ROUNDS: usize = 8;

/// Removes short terminal branches: a branch counts as a spur when its arc length does not
/// exceed the diameter of the node it hangs from. Spurs are deleted when the node also carries
/// a longer element; a node carrying only spurs keeps its two longest.
pub fn prune_spurs(skel: &Skeleton, thick: &ThicknessMap) -> Result<Skeleton> {
    let mut current = skel.clone();
    let w = skel.width();
    for _ in 0..MAX_PRUNE_ROUNDS {
        let net = extract_network(&current, thick, 0.0)?;
        let mut drop = vec![false; net.elements.len()];
        for node in &net.nodes {
            let attached: Vec<&Element> = net.elements.iter().filter(|e| e.touches(node.id)).collect();
            let is_spur = |e: &Element| e.class == ElementClass::Branch && e.length_um <= node.diameter_um;
            let mut spurs: Vec<&Element> = attached.iter().copied().filter(|e| is_spur(e)).collect();
            if spurs.is_empty() {
                continue;
            }
            let keep = if attached.len() > spurs.len() { 0 } else { 2 };
            spurs.sort_by(|a, b| b.length_um.total_cmp(&a.length_um).then(a.id.cmp(&b.id)));
            for e in spurs.into_iter().skip(keep) {
                drop[e.id] = true;
            }
        }
        if !drop.iter().any(|&d| d) {
            break;
        }
        for e in net.elements.iter().filter(|e| drop[e.id]) {
            for &(x, y) in &e.path {
                current.bits[y * w + x] = false;
            }
        }
    }
    Ok(current)
}
