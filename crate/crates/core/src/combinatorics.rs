//! Ribbon graphs built by gluing polygons, their Okounkov contraction to
//! diagrams, and the counting facts about diagrams.
//!
//! Positions are 1-based in the public API. A polygon with perimeter `k_j`
//! owns the consecutive positions of its sides; side `p` runs from vertex
//! `v_p` to `v_{γ(p)}`, where `γ` is the cyclic successor inside the polygon.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ensemble::Beta;
use crate::error::{Error, Result};
use crate::par;

/// Largest total perimeter accepted by the exhaustive enumerators.
pub const MAX_ENUMERATION_BUDGET: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Opposite,
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Boundary,
    Interior,
}

/// Two sides glued together, 1-based positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Gluing {
    pub s: usize,
    pub t: usize,
    pub orientation: Orientation,
}

impl Gluing {
    pub fn opposite(s: usize, t: usize) -> Self {
        Gluing { s, t, orientation: Orientation::Opposite }
    }

    pub fn same(s: usize, t: usize) -> Self {
        Gluing { s, t, orientation: Orientation::Same }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub kind: EdgeKind,
    /// Number of original sides this edge stands for.
    pub segments: usize,
}

/// One traversal of an edge by a face walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Side {
    pub edge: usize,
    pub forward: bool,
}

/// A face walk. The marked corner sits before `sides[0]`; a face whose walk
/// contracted away entirely keeps its marked vertex in `marked`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub sides: Vec<Side>,
    pub marked: usize,
}

/// Vertices, typed edges and face walks of a ribbon graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceGraph {
    pub vertices: usize,
    pub edges: Vec<Edge>,
    pub faces: Vec<Face>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// `V − E + s`.
    pub euler_characteristic: i64,
    pub components: usize,
    /// Euler genus summed over components; a torus counts 2, a projective plane 1.
    pub genus: usize,
    /// Number of boundary circles.
    pub boundaries: usize,
    pub orientable: bool,
    /// Components without boundary.
    pub closed_components: usize,
}

impl Topology {
    pub fn is_connected(&self) -> bool {
        self.components == 1
    }

    pub fn is_closed(&self) -> bool {
        self.boundaries == 0
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl SurfaceGraph {
    /// Start and end vertex of a traversal.
    pub fn ends(&self, side: Side) -> (usize, usize) {
        let e = &self.edges[side.edge];
        if side.forward {
            (e.tail, e.head)
        } else {
            (e.head, e.tail)
        }
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices];
        for e in &self.edges {
            deg[e.tail] += 1;
            deg[e.head] += 1;
        }
        deg
    }

    pub fn boundary_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices];
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Boundary) {
            deg[e.tail] += 1;
            deg[e.head] += 1;
        }
        deg
    }

    /// Number of faces whose marked corner sits at each vertex.
    pub fn mark_counts(&self) -> Vec<usize> {
        let mut marks = vec![0; self.vertices];
        for f in &self.faces {
            marks[f.marked] += 1;
        }
        marks
    }

    pub fn point_faces(&self) -> usize {
        self.faces.iter().filter(|f| f.sides.is_empty()).count()
    }

    /// Total side count of face `j`, weighted by segments.
    pub fn face_length(&self, j: usize) -> usize {
        self.faces[j].sides.iter().map(|s| self.edges[s.edge].segments).sum()
    }

    /// Checks that walks close up, interior edges are traversed twice and
    /// boundary edges once, and the boundary is a union of circles.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Structure(msg));
        let mut uses = vec![0usize; self.edges.len()];
        for (j, f) in self.faces.iter().enumerate() {
            if f.marked >= self.vertices {
                return bad(format!("face {j} marks a missing vertex"));
            }
            let m = f.sides.len();
            for i in 0..m {
                let s = f.sides[i];
                if s.edge >= self.edges.len() {
                    return bad(format!("face {j} uses a missing edge"));
                }
                uses[s.edge] += 1;
                let next = f.sides[(i + 1) % m];
                if self.ends(s).1 != self.ends(next).0 {
                    return bad(format!("face {j} walk breaks after side {i}"));
                }
            }
            if m > 0 && self.ends(f.sides[0]).0 != f.marked {
                return bad(format!("face {j} mark is not at its first corner"));
            }
        }
        for (e, (edge, &u)) in self.edges.iter().zip(&uses).enumerate() {
            let want = match edge.kind {
                EdgeKind::Boundary => 1,
                EdgeKind::Interior => 2,
            };
            if u != want || edge.segments == 0 {
                return bad(format!("edge {e} traversed {u} times"));
            }
        }
        if self.boundary_degrees().iter().any(|&d| d != 0 && d != 2) {
            return bad("boundary is not a union of circles".into());
        }
        Ok(())
    }

    pub fn topology(&self) -> Topology {
        let mut uf = UnionFind::new(self.vertices);
        for e in &self.edges {
            uf.union(e.tail, e.head);
        }
        let mut boundary_uf = UnionFind::new(self.vertices);
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Boundary) {
            boundary_uf.union(e.tail, e.head);
        }
        let bdeg = self.boundary_degrees();

        let mut comp_of = vec![usize::MAX; self.vertices];
        let mut roots = Vec::new();
        for v in 0..self.vertices {
            let r = uf.find(v);
            let c = match roots.iter().position(|&x| x == r) {
                Some(c) => c,
                None => {
                    roots.push(r);
                    roots.len() - 1
                }
            };
            comp_of[v] = c;
        }
        let nc = roots.len();
        let mut chi = vec![0i64; nc];
        let mut circles = vec![0usize; nc];
        for v in 0..self.vertices {
            chi[comp_of[v]] += 1;
            if bdeg[v] > 0 && boundary_uf.find(v) == v {
                circles[comp_of[v]] += 1;
            }
        }
        for e in &self.edges {
            chi[comp_of[e.tail]] -= 1;
        }
        for f in &self.faces {
            chi[comp_of[f.marked]] += 1;
        }
        let genus = (0..nc).map(|c| (2 - circles[c] as i64 - chi[c]).max(0) as usize).sum();
        Topology {
            euler_characteristic: chi.iter().sum(),
            components: nc,
            genus,
            boundaries: circles.iter().sum(),
            orientable: self.orientable(),
            closed_components: circles.iter().filter(|&&t| t == 0).count(),
        }
    }

    /// Tries to orient every face so that each interior edge is crossed once
    /// in each direction.
    fn orientable(&self) -> bool {
        let mut occurrences: Vec<Vec<(usize, i8)>> = vec![Vec::new(); self.edges.len()];
        for (j, f) in self.faces.iter().enumerate() {
            for s in &f.sides {
                occurrences[s.edge].push((j, if s.forward { 1 } else { -1 }));
            }
        }
        let mut sign = vec![0i8; self.faces.len()];
        for start in 0..self.faces.len() {
            if sign[start] != 0 {
                continue;
            }
            sign[start] = 1;
            let mut queue = VecDeque::from([start]);
            while let Some(f) = queue.pop_front() {
                for s in &self.faces[f].sides {
                    let occ = &occurrences[s.edge];
                    if occ.len() != 2 {
                        continue;
                    }
                    let d = if s.forward { 1 } else { -1 };
                    // The partner traversal is whichever occurrence is not this one.
                    let (mut g, mut dg) = occ[0];
                    if (g, dg) == (f, d) {
                        (g, dg) = occ[1];
                    }
                    let want = -sign[f] * d * dg;
                    if sign[g] == 0 {
                        sign[g] = want;
                        queue.push_back(g);
                    } else if sign[g] != want {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Relabels edges by first encounter along the face walks. Two graphs get
    /// the same code exactly when they agree up to renaming vertices and edges
    /// while keeping faces, marked corners and edge types.
    pub fn canonical_code(&self) -> Vec<u32> {
        const FACE: u32 = u32::MAX;
        const POINT: u32 = u32::MAX - 1;
        let mut label = vec![u32::MAX; self.edges.len()];
        let mut first_forward = vec![true; self.edges.len()];
        let mut next = 0u32;
        let mut code = Vec::new();
        for f in &self.faces {
            code.push(FACE);
            if f.sides.is_empty() {
                code.push(POINT);
            }
            for s in &f.sides {
                if label[s.edge] == u32::MAX {
                    label[s.edge] = next;
                    first_forward[s.edge] = s.forward;
                    next += 1;
                }
                let flipped = (s.forward != first_forward[s.edge]) as u32;
                let boundary = (self.edges[s.edge].kind == EdgeKind::Boundary) as u32;
                code.push(label[s.edge] * 4 + flipped * 2 + boundary);
            }
        }
        code
    }
}

/// A ribbon graph obtained from `s` polygons by gluing some pairs of sides.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RibbonGraph {
    pub perimeters: Vec<usize>,
    pub gluing: Vec<Gluing>,
    /// 1-based position of the marked vertex of each polygon.
    pub marked: Vec<usize>,
    pub graph: SurfaceGraph,
    pub topology: Topology,
}

impl RibbonGraph {
    pub fn total_perimeter(&self) -> usize {
        self.perimeters.iter().sum()
    }

    pub fn is_closed(&self) -> bool {
        self.topology.is_closed()
    }
}

/// Glues polygons with the given perimeters along `gluing`. `marked` picks
/// the marked vertex of each polygon by global position and defaults to each
/// polygon's first vertex.
pub fn glue_polygons(perimeters: &[usize], gluing: &[Gluing], marked: Option<&[usize]>) -> Result<RibbonGraph> {
    let k: usize = perimeters.iter().sum();
    if perimeters.is_empty() || perimeters.contains(&0) {
        return Err(Error::Gluing("every polygon needs at least one side".into()));
    }
    let offsets: Vec<usize> = perimeters
        .iter()
        .scan(0, |acc, &p| {
            let o = *acc;
            *acc += p;
            Some(o)
        })
        .collect();
    let mut pairs = Vec::with_capacity(gluing.len());
    let mut used = vec![false; k];
    for g in gluing {
        for p in [g.s, g.t] {
            if p == 0 || p > k {
                return Err(Error::Gluing(format!("position {p} outside 1..={k}")));
            }
            if used[p - 1] {
                return Err(Error::Gluing(format!("position {p} glued twice")));
            }
            used[p - 1] = true;
        }
        if g.s == g.t {
            return Err(Error::Gluing(format!("position {} glued to itself", g.s)));
        }
        pairs.push((g.s - 1, g.t - 1, g.orientation));
    }
    let marks: Vec<usize> = match marked {
        None => offsets.clone(),
        Some(m) => {
            if m.len() != perimeters.len() {
                return Err(Error::SizeMismatch { expected: perimeters.len(), found: m.len() });
            }
            let mut out = Vec::with_capacity(m.len());
            for (j, &p) in m.iter().enumerate() {
                if p <= offsets[j] || p > offsets[j] + perimeters[j] {
                    return Err(Error::Gluing(format!("marked position {p} is not on polygon {}", j + 1)));
                }
                out.push(p - 1);
            }
            out
        }
    };
    let graph = build_surface(perimeters, &offsets, &pairs, &marks);
    graph.validate()?;
    let topology = graph.topology();
    Ok(RibbonGraph {
        perimeters: perimeters.to_vec(),
        gluing: gluing.to_vec(),
        marked: marks.iter().map(|p| p + 1).collect(),
        graph,
        topology,
    })
}

/// Gluing without argument checks; positions are 0-based.
fn build_surface(
    perimeters: &[usize],
    offsets: &[usize],
    pairs: &[(usize, usize, Orientation)],
    marks: &[usize],
) -> SurfaceGraph {
    let k: usize = perimeters.iter().sum();
    let mut polygon = vec![0; k];
    for (j, (&o, &p)) in offsets.iter().zip(perimeters).enumerate() {
        polygon[o..o + p].fill(j);
    }
    let succ = |p: usize| {
        let j = polygon[p];
        offsets[j] + (p - offsets[j] + 1) % perimeters[j]
    };

    let mut uf = UnionFind::new(k);
    let mut partner: Vec<Option<(usize, Orientation)>> = vec![None; k];
    for &(s, t, o) in pairs {
        match o {
            Orientation::Opposite => {
                uf.union(s, succ(t));
                uf.union(t, succ(s));
            }
            Orientation::Same => {
                uf.union(s, t);
                uf.union(succ(s), succ(t));
            }
        }
        partner[s] = Some((t, o));
        partner[t] = Some((s, o));
    }
    let mut class = vec![usize::MAX; k];
    let mut vertex_of = vec![0; k];
    let mut vertices = 0;
    for p in 0..k {
        let r = uf.find(p);
        if class[r] == usize::MAX {
            class[r] = vertices;
            vertices += 1;
        }
        vertex_of[p] = class[r];
    }

    let mut edges = Vec::new();
    let mut side_of = vec![Side { edge: 0, forward: true }; k];
    for p in 0..k {
        match partner[p] {
            None => {
                side_of[p] = Side { edge: edges.len(), forward: true };
                edges.push(Edge { tail: vertex_of[p], head: vertex_of[succ(p)], kind: EdgeKind::Boundary, segments: 1 });
            }
            Some((q, o)) if q > p => {
                let e = edges.len();
                edges.push(Edge { tail: vertex_of[p], head: vertex_of[succ(p)], kind: EdgeKind::Interior, segments: 1 });
                side_of[p] = Side { edge: e, forward: true };
                side_of[q] = Side { edge: e, forward: o == Orientation::Same };
            }
            Some(_) => {}
        }
    }

    let faces = (0..perimeters.len())
        .map(|j| {
            let (o, len) = (offsets[j], perimeters[j]);
            let start = marks[j] - o;
            Face {
                sides: (0..len).map(|i| side_of[o + (start + i) % len]).collect(),
                marked: vertex_of[marks[j]],
            }
        })
        .collect();
    SurfaceGraph { vertices, edges, faces }
}

/// A contracted ribbon graph: no univalent vertices and no unmarked divalent
/// vertices. Each edge remembers how many original sides it replaced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagram {
    pub graph: SurfaceGraph,
    pub topology: Topology,
}

impl Diagram {
    /// One marked vertex carrying a boundary loop.
    pub fn degenerate_circle() -> Self {
        let graph = SurfaceGraph {
            vertices: 1,
            edges: vec![Edge { tail: 0, head: 0, kind: EdgeKind::Boundary, segments: 1 }],
            faces: vec![Face { sides: vec![Side { edge: 0, forward: true }], marked: 0 }],
        };
        let topology = graph.topology();
        Diagram { graph, topology }
    }

    pub fn faces(&self) -> usize {
        self.graph.faces.len()
    }

    /// Faces whose walk was a tree; each sits alone on a sphere.
    pub fn point_faces(&self) -> usize {
        self.graph.point_faces()
    }

    pub fn is_degenerate_circle(&self) -> bool {
        self.canonical_code() == Diagram::degenerate_circle().canonical_code()
    }

    /// Every unmarked vertex has degree at least 3 and every marked vertex
    /// degree at least 2.
    pub fn is_proper(&self) -> bool {
        let deg = self.graph.degrees();
        let marks = self.graph.mark_counts();
        deg.iter().zip(&marks).all(|(&d, &m)| if m > 0 { d >= 2 } else { d >= 3 })
    }

    /// Code ignoring segment counts.
    pub fn canonical_code(&self) -> Vec<u32> {
        self.graph.canonical_code()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Diagram = serde_json::from_str(s)?;
        d.graph.validate()?;
        if d.graph.topology() != d.topology {
            return Err(Error::Structure("stored topology does not match the graph".into()));
        }
        Ok(d)
    }
}

/// Removes trees (moving marks to the tree's attachment corner) and then
/// suppresses unmarked divalent vertices, adding up segment counts. Faces
/// whose walk is a tree survive as point faces.
pub fn okounkov_contract(graph: &RibbonGraph) -> Diagram {
    let contracted = contract_surface(&graph.graph);
    let topology = contracted.topology();
    Diagram { graph: contracted, topology }
}

/// Contraction of an existing diagram; a no-op on contracted input.
pub fn recontract(d: &Diagram) -> Diagram {
    let graph = contract_surface(&d.graph);
    let topology = graph.topology();
    Diagram { graph, topology }
}

fn contract_surface(input: &SurfaceGraph) -> SurfaceGraph {
    let mut g = input.clone();
    let mut edge_alive = vec![true; g.edges.len()];
    let mut vertex_alive = vec![true; g.vertices];

    let degrees = |g: &SurfaceGraph, alive: &[bool]| {
        let mut deg = vec![0usize; g.vertices];
        for (e, a) in g.edges.iter().zip(alive) {
            if *a {
                deg[e.tail] += 1;
                deg[e.head] += 1;
            }
        }
        deg
    };

    // Trees: a leaf's two traversals are consecutive in one walk.
    loop {
        let deg = degrees(&g, &edge_alive);
        let Some(leaf) = (0..g.vertices).find(|&v| vertex_alive[v] && deg[v] == 1) else {
            break;
        };
        let (fi, i) = g
            .faces
            .iter()
            .enumerate()
            .find_map(|(fi, f)| f.sides.iter().position(|&s| g.ends(s).1 == leaf).map(|i| (fi, i)))
            .expect("a leaf is entered by some walk");
        let side = g.faces[fi].sides[i];
        let root = g.ends(side).0;
        let sides = &mut g.faces[fi].sides;
        let m = sides.len();
        if i + 1 == m {
            sides.pop();
            sides.remove(0);
        } else {
            sides.drain(i..i + 2);
        }
        g.faces[fi].marked = match g.faces[fi].sides.first() {
            Some(&s) => g.ends(s).0,
            None => root,
        };
        edge_alive[side.edge] = false;
        vertex_alive[leaf] = false;
    }

    // Unmarked divalent vertices.
    loop {
        let deg = degrees(&g, &edge_alive);
        let mut marked = vec![false; g.vertices];
        for f in &g.faces {
            marked[f.marked] = true;
        }
        let candidate = (0..g.vertices).find_map(|v| {
            if !vertex_alive[v] || marked[v] || deg[v] != 2 {
                return None;
            }
            let inc: Vec<usize> =
                (0..g.edges.len()).filter(|&e| edge_alive[e] && (g.edges[e].tail == v || g.edges[e].head == v)).collect();
            (inc.len() == 2).then(|| (v, inc[0], inc[1]))
        });
        let Some((v, e1, e2)) = candidate else {
            break;
        };
        let other = |e: usize| if g.edges[e].tail == v { g.edges[e].head } else { g.edges[e].tail };
        let (a, b) = (other(e1), other(e2));
        debug_assert_eq!(g.edges[e1].kind, g.edges[e2].kind);
        let merged = g.edges.len();
        g.edges.push(Edge {
            tail: a,
            head: b,
            kind: g.edges[e1].kind,
            segments: g.edges[e1].segments + g.edges[e2].segments,
        });
        edge_alive.push(true);
        for fi in 0..g.faces.len() {
            let old = std::mem::take(&mut g.faces[fi].sides);
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                let s = old[i];
                if g.ends(s).1 == v {
                    // v is unmarked, so the walk does not wrap at v.
                    new.push(Side { edge: merged, forward: s.edge == e1 });
                    i += 2;
                } else {
                    new.push(s);
                    i += 1;
                }
            }
            g.faces[fi].sides = new;
        }
        edge_alive[e1] = false;
        edge_alive[e2] = false;
        vertex_alive[v] = false;
    }

    compact(&g, &edge_alive, &vertex_alive)
}

fn compact(g: &SurfaceGraph, edge_alive: &[bool], vertex_alive: &[bool]) -> SurfaceGraph {
    let mut vmap = vec![usize::MAX; g.vertices];
    let mut vertices = 0;
    for v in 0..g.vertices {
        if vertex_alive[v] {
            vmap[v] = vertices;
            vertices += 1;
        }
    }
    let mut emap = vec![usize::MAX; g.edges.len()];
    let mut edges = Vec::new();
    for (e, edge) in g.edges.iter().enumerate() {
        if edge_alive[e] {
            emap[e] = edges.len();
            edges.push(Edge { tail: vmap[edge.tail], head: vmap[edge.head], ..edge.clone() });
        }
    }
    let faces = g
        .faces
        .iter()
        .map(|f| Face {
            sides: f.sides.iter().map(|s| Side { edge: emap[s.edge], forward: s.forward }).collect(),
            marked: vmap[f.marked],
        })
        .collect();
    SurfaceGraph { vertices, edges, faces }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagramCounts {
    pub v: usize,
    pub e: usize,
    pub v_b: usize,
    pub e_b: usize,
    pub v_int: usize,
    pub e_int: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    /// Unmarked vertices have degree 3, marked vertices degree 2, and no two
    /// faces share a marked vertex.
    pub trivalent: bool,
    pub distinct_marks: bool,
    /// Trivalent with every vertex on the boundary.
    pub typical: bool,
    pub counts: DiagramCounts,
}

pub fn diagram_counts(d: &Diagram) -> DiagramCounts {
    let g = &d.graph;
    let bdeg = g.boundary_degrees();
    let v_b = bdeg.iter().filter(|&&x| x > 0).count();
    let e_b = g.edges.iter().filter(|e| e.kind == EdgeKind::Boundary).count();
    DiagramCounts {
        v: g.vertices,
        e: g.edges.len(),
        v_b,
        e_b,
        v_int: g.vertices - v_b,
        e_int: g.edges.len() - e_b,
    }
}

pub fn classify_diagram(d: &Diagram) -> Classification {
    let counts = diagram_counts(d);
    let deg = d.graph.degrees();
    let marks = d.graph.mark_counts();
    let distinct_marks = marks.iter().all(|&m| m <= 1);
    let degrees_ok = deg.iter().zip(&marks).all(|(&dv, &m)| if m > 0 { dv == 2 } else { dv == 3 });
    let trivalent = distinct_marks && degrees_ok;
    Classification { trivalent, distinct_marks, typical: trivalent && counts.v_int == 0, counts }
}

/// Calls `f` on every gluing of `k` sides: each subset J, each perfect
/// matching of J, and each orientation flag from `orientations`.
pub fn for_each_gluing(k: usize, orientations: &[Orientation], mut f: impl FnMut(&[(usize, usize, Orientation)])) {
    let mut used = vec![false; k];
    let mut pairs = Vec::new();
    gluing_rec(0, &mut used, &mut pairs, orientations, &mut f);
}

fn gluing_rec(
    from: usize,
    used: &mut [bool],
    pairs: &mut Vec<(usize, usize, Orientation)>,
    orientations: &[Orientation],
    f: &mut dyn FnMut(&[(usize, usize, Orientation)]),
) {
    let Some(p) = (from..used.len()).find(|&p| !used[p]) else {
        f(pairs);
        return;
    };
    used[p] = true;
    gluing_rec(p + 1, used, pairs, orientations, f);
    for q in p + 1..used.len() {
        if used[q] {
            continue;
        }
        used[q] = true;
        for &o in orientations {
            pairs.push((p, q, o));
            gluing_rec(p + 1, used, pairs, orientations, f);
            pairs.pop();
        }
        used[q] = false;
    }
    used[p] = false;
}

fn orientations_for(beta: Beta) -> &'static [Orientation] {
    match beta {
        Beta::Real => &[Orientation::Opposite, Orientation::Same],
        Beta::Complex => &[Orientation::Opposite],
    }
}

/// A distinct contracted diagram together with the number of gluings that
/// contract to it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagramClass {
    pub diagram: Diagram,
    pub preimages: u64,
}

/// All distinct diagrams reached by contracting gluings of the given
/// polygons, ordered by canonical code.
pub fn diagrams_for_perimeters(perimeters: &[usize], beta: Beta) -> Result<Vec<DiagramClass>> {
    let k: usize = perimeters.iter().sum();
    if k > MAX_ENUMERATION_BUDGET {
        return Err(Error::Budget(format!("total perimeter {k} exceeds {MAX_ENUMERATION_BUDGET}")));
    }
    if perimeters.is_empty() || perimeters.contains(&0) {
        return Err(Error::Gluing("every polygon needs at least one side".into()));
    }
    let offsets: Vec<usize> = perimeters
        .iter()
        .scan(0, |acc, &p| {
            let o = *acc;
            *acc += p;
            Some(o)
        })
        .collect();
    let orientations = orientations_for(beta);
    // Split on the fate of position 0: unglued, or glued to q with flag o.
    let mut firsts: Vec<Option<(usize, Orientation)>> = vec![None];
    for q in 1..k {
        firsts.extend(orientations.iter().map(|&o| Some((q, o))));
    }
    let parts = par::map_trials(firsts.len(), |idx| {
        let mut found: BTreeMap<Vec<u32>, DiagramClass> = BTreeMap::new();
        let mut used = vec![false; k];
        used[0] = true;
        let mut pairs = Vec::new();
        if let Some((q, o)) = firsts[idx] {
            used[q] = true;
            pairs.push((0, q, o));
        }
        gluing_rec(1, &mut used, &mut pairs, orientations, &mut |pairs| {
            let g = build_surface(perimeters, &offsets, pairs, &offsets);
            let c = contract_surface(&g);
            found
                .entry(c.canonical_code())
                .and_modify(|d| d.preimages += 1)
                .or_insert_with(|| {
                    let topology = c.topology();
                    DiagramClass { diagram: Diagram { graph: c, topology }, preimages: 1 }
                });
        });
        found
    });
    let mut all: BTreeMap<Vec<u32>, DiagramClass> = BTreeMap::new();
    for part in parts {
        for (code, class) in part {
            match all.get_mut(&code) {
                Some(existing) => existing.preimages += class.preimages,
                None => {
                    all.insert(code, class);
                }
            }
        }
    }
    Ok(all.into_values().collect())
}

/// Compositions of every total `s ..= budget` into `s` positive parts.
pub fn perimeter_tuples(budget: usize, s: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 0 {
            out.push(cur.clone());
            return;
        }
        for k in 1..=left.saturating_sub(parts - 1) {
            cur.push(k);
            rec(left - k, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if s > 0 {
        rec(budget, s, &mut Vec::new(), &mut out);
    }
    out
}

/// Distinct diagrams with `s` faces from all real gluings with total
/// perimeter at most `k_budget`, closed ones included.
pub fn enumerate_small_diagrams(k_budget: usize, s: usize) -> Result<Vec<Diagram>> {
    if k_budget > MAX_ENUMERATION_BUDGET {
        return Err(Error::Budget(format!("k_budget {k_budget} exceeds {MAX_ENUMERATION_BUDGET}")));
    }
    let mut all: BTreeMap<Vec<u32>, Diagram> = BTreeMap::new();
    for perimeters in perimeter_tuples(k_budget, s) {
        for class in diagrams_for_perimeters(&perimeters, Beta::Real)? {
            all.entry(class.diagram.canonical_code()).or_insert(class.diagram);
        }
    }
    Ok(all.into_values().collect())
}

/// Running tally of the counting facts over a set of diagrams.
#[derive(Clone, Debug, Default, Serialize)]
pub struct LemmaTally {
    pub diagrams: usize,
    /// Diagrams without point faces.
    pub proper: usize,
    pub euler_failures: usize,
    pub boundary_balance_failures: usize,
    pub inequality_failures: usize,
    /// Equality in the boundary inequality without trivalence, or the reverse.
    pub equality_mismatches: usize,
    /// `typical` disagreeing with `|E_b| = 2|E_int| + s`.
    pub typical_mismatches: usize,
    pub trivalent_connected: usize,
    pub count_failures: usize,
    /// Connected trivalent diagrams with boundary, by `(g, t, s)`.
    pub trivalent_by_type: BTreeMap<(usize, usize, usize), usize>,
}

impl LemmaTally {
    pub fn record(&mut self, d: &Diagram) {
        self.diagrams += 1;
        let top = d.topology;
        let c = classify_diagram(d);
        let n = c.counts;
        let s = d.faces();
        let chi = n.v as i64 - n.e as i64 + s as i64;
        if chi != top.euler_characteristic
            || chi != 2 * top.components as i64 - top.genus as i64 - top.boundaries as i64
        {
            self.euler_failures += 1;
        }
        if n.v_b != n.e_b {
            self.boundary_balance_failures += 1;
        }
        if d.point_faces() > 0 {
            return;
        }
        self.proper += 1;
        let lhs = n.e_b + 3 * n.v_int;
        let rhs = 2 * n.e_int + s;
        if lhs > rhs || !d.is_proper() {
            self.inequality_failures += 1;
        }
        if (lhs == rhs) != c.trivalent {
            self.equality_mismatches += 1;
        }
        if c.typical != (n.e_b == 2 * n.e_int + s) {
            self.typical_mismatches += 1;
        }
        if c.trivalent && top.is_connected() {
            self.trivalent_connected += 1;
            let (g, t, l, s) = (top.genus as i64, top.boundaries as i64, n.v_int as i64, s as i64);
            let exact = n.v as i64 == 2 * g + 2 * t + 3 * s - 4
                && n.e as i64 == 3 * g + 3 * t + 4 * s - 6
                && n.e_b as i64 == 2 * g + 2 * t + 3 * s - 4 - l
                && n.v_b as i64 == n.e_b as i64
                && n.e_int as i64 == g + t + s + l - 2;
            if !exact {
                self.count_failures += 1;
            }
            if t >= 1 {
                *self.trivalent_by_type.entry((top.genus, top.boundaries, s as usize)).or_default() += 1;
            }
        }
    }

    pub fn all_hold(&self) -> bool {
        self.euler_failures
            + self.boundary_balance_failures
            + self.inequality_failures
            + self.equality_mismatches
            + self.typical_mismatches
            + self.count_failures
            == 0
    }
}

pub fn ln_trivalent_count_bound(g: usize, t: usize, s: usize) -> f64 {
    let m = (g + t + 2 * s) as f64;
    let exponent = (g + t + 3 * s) as f64 - 3.0;
    let ln_fact: f64 = (1..s).map(|i| (i as f64).ln()).sum();
    m * 128f64.ln() + exponent * m.ln() - ln_fact
}

/// Upper bound on the number of trivalent diagrams with genus `g`, `t`
/// boundary circles and `s` faces.
pub fn trivalent_count_bound(g: usize, t: usize, s: usize) -> f64 {
    ln_trivalent_count_bound(g, t, s).exp()
}
