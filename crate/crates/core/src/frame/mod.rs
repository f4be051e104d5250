//! Planar frame model: nodes, fiber beam-columns with camber, leaning
//! column, rigid floor diaphragms, gravity loads and component limit-state
//! bookkeeping.

mod element;
mod section;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::material::{FatigueParams, FiberState, MaterialParams, SteelParams};
use crate::uncertainty::{GravityDraw, MemberInfo, SectionInfo, StructuralDraw, Topology};

pub use element::{
    kinematics, lobatto, to_global, BeamColumnDef, BeamColumnState, Geometry, Kinematics, Quadrature, TrussDef,
    ELEMENT_TOLERANCE, MAX_ELEMENT_ITERATIONS, N_IP,
};
pub use section::{
    discretize_section, initial_rigidities, section_trial, Fiber, FiberSection, SectionResponse, WideFlange,
    FIBERS_ALONG, FIBERS_THROUGH,
};

/// Midspan offset, as a fraction of member length, that flags buckling.
pub const BUCKLING_OFFSET_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemberRole {
    Column,
    Brace,
    Leaning,
    GravityBeam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileDef {
    pub name: String,
    #[serde(flatten)]
    pub dims: WideFlange,
    /// Nominal yield strength, Pa.
    pub fy_nominal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDef {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportDef {
    pub node: u32,
    /// Restrained `[ux, uy, rz]`.
    pub fix: [bool; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberDef {
    pub id: u32,
    pub i: u32,
    pub j: u32,
    pub role: MemberRole,
    #[serde(default)]
    pub profile: Option<String>,
    /// Axial rigidity for leaning-column links, N.
    #[serde(default)]
    pub axial_rigidity: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FloorDef {
    /// Lumped lateral mass, kg.
    pub mass: f64,
    pub nodes: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GravityDef {
    pub node: u32,
    /// Nominal dead load, N (downward positive).
    pub dead: f64,
    /// Nominal reduced live load, N.
    pub live: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSettings {
    pub modulus: f64,
    pub poisson: f64,
    pub hardening: f64,
    pub r0: f64,
    /// Out-of-plane width of the building, m; converts torsion to frame forces.
    pub building_width: f64,
    /// Share of the building's lateral load carried by this frame.
    pub load_share: f64,
}

impl Default for FrameSettings {
    fn default() -> Self {
        Self {
            modulus: 200e9,
            poisson: 0.3,
            hardening: 0.001,
            r0: 20.0,
            building_width: 30.0,
            load_share: 0.5,
        }
    }
}

/// Frame definition file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDefinition {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub settings: FrameSettings,
    pub profiles: Vec<ProfileDef>,
    pub nodes: Vec<NodeDef>,
    pub supports: Vec<SupportDef>,
    pub members: Vec<MemberDef>,
    pub floors: Vec<FloorDef>,
    #[serde(default)]
    pub gravity: Vec<GravityDef>,
}

impl FrameDefinition {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let def: FrameDefinition = toml::from_str(text)?;
        def.validate()?;
        Ok(def)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let ids: HashMap<u32, usize> = self.nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
        if ids.len() != self.nodes.len() {
            return Err(Error::Model("duplicate node id".into()));
        }
        for p in &self.profiles {
            p.dims.validate()?;
            if !(p.fy_nominal > 0.0) {
                return Err(Error::Input(format!("profile {} needs fy_nominal > 0", p.name)));
            }
        }
        for m in &self.members {
            for n in [m.i, m.j] {
                if !ids.contains_key(&n) {
                    return Err(Error::Model(format!("member {} references unknown node {n}", m.id)));
                }
            }
            let (a, b) = (&self.nodes[ids[&m.i]], &self.nodes[ids[&m.j]]);
            if (a.x - b.x).hypot(a.y - b.y) <= 0.0 {
                return Err(Error::Model(format!("member {} has zero length", m.id)));
            }
            match m.role {
                MemberRole::Column | MemberRole::Brace => {
                    let name = m
                        .profile
                        .as_ref()
                        .ok_or_else(|| Error::Model(format!("member {} needs a profile", m.id)))?;
                    if !self.profiles.iter().any(|p| &p.name == name) {
                        return Err(Error::Model(format!("member {} uses unknown profile {name}", m.id)));
                    }
                }
                MemberRole::Leaning => {
                    if !m.axial_rigidity.is_some_and(|v| v > 0.0) {
                        return Err(Error::Model(format!("leaning link {} needs axial_rigidity > 0", m.id)));
                    }
                }
                MemberRole::GravityBeam => {}
            }
        }
        for s in &self.supports {
            if !ids.contains_key(&s.node) {
                return Err(Error::Model(format!("support at unknown node {}", s.node)));
            }
        }
        for g in &self.gravity {
            if !ids.contains_key(&g.node) {
                return Err(Error::Model(format!("gravity load at unknown node {}", g.node)));
            }
        }
        for f in &self.floors {
            if f.nodes.is_empty() || !(f.mass >= 0.0) {
                return Err(Error::Model("floor needs nodes and a non-negative mass".into()));
            }
            for n in &f.nodes {
                if !ids.contains_key(n) {
                    return Err(Error::Model(format!("floor references unknown node {n}")));
                }
            }
        }
        Ok(())
    }

    /// Lateral members that carry random properties.
    fn lateral_members(&self) -> impl Iterator<Item = &MemberDef> {
        self.members
            .iter()
            .filter(|m| matches!(m.role, MemberRole::Column | MemberRole::Brace))
    }

    /// Section and member inventory seen by the uncertainty sampler.
    pub fn topology(&self) -> Topology {
        let sections = self
            .profiles
            .iter()
            .map(|p| SectionInfo {
                name: p.name.clone(),
                fy_nominal: p.fy_nominal,
            })
            .collect();
        let pos: HashMap<u32, &NodeDef> = self.nodes.iter().map(|n| (n.id, n)).collect();
        let members = self
            .lateral_members()
            .map(|m| {
                let (a, b) = (pos[&m.i], pos[&m.j]);
                MemberInfo {
                    section: self
                        .profiles
                        .iter()
                        .position(|p| Some(&p.name) == m.profile.as_ref())
                        .unwrap_or(0),
                    length: (a.x - b.x).hypot(a.y - b.y),
                }
            })
            .collect();
        Topology { sections, members }
    }

    /// Material parameters at nominal values (no uncertainty).
    pub fn nominal_materials(&self) -> Vec<MaterialParams> {
        self.profiles
            .iter()
            .map(|p| MaterialParams::Steel {
                steel: SteelParams::new(self.settings.modulus, p.fy_nominal, self.settings.hardening, self.settings.r0),
                fatigue: None,
            })
            .collect()
    }
}

/// Material parameters per section from a structural draw.
pub fn materials_from_draw(draw: &StructuralDraw, fatigue_slope: f64) -> Vec<MaterialParams> {
    draw.sections
        .iter()
        .map(|m| MaterialParams::Steel {
            steel: SteelParams::new(m.e, m.fy, m.b, m.r0).with_isotropic(m.a1, 1.0, m.a3, 1.0),
            fatigue: Some(FatigueParams::new(m.eps0, fatigue_slope)),
        })
        .collect()
}

/// Everything needed to instantiate one analysis model.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub geometry: Geometry,
    /// Per-profile materials; defaults to nominal steel.
    pub materials: Option<Vec<MaterialParams>>,
    /// Signed midspan camber per lateral member, m.
    pub camber: Option<Vec<f64>>,
    pub gravity: GravityDraw,
    pub p_delta: bool,
    pub shear: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            geometry: Geometry::Corotational,
            materials: None,
            camber: None,
            gravity: GravityDraw { dead: 1.0, live: 1.0 },
            p_delta: true,
            shear: true,
        }
    }
}

#[derive(Debug, Clone)]
enum ElementKind {
    Beam { def: BeamColumnDef, state: BeamColumnState },
    Truss { def: TrussDef },
}

#[derive(Debug, Clone)]
struct Element {
    x1: [f64; 2],
    x2: [f64; 2],
    eqs: [Option<usize>; 6],
    kind: ElementKind,
    /// Committed global tangent, used for damping.
    k_committed: nalgebra::SMatrix<f64, 6, 6>,
    k_trial: nalgebra::SMatrix<f64, 6, 6>,
}

/// Status of one lateral member.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemberStatus {
    pub first_yield: bool,
    pub first_yield_time: Option<f64>,
    pub full_section_yield: bool,
    pub buckled: bool,
    pub peak_offset_ratio: f64,
    pub partial_fracture: bool,
    pub full_fracture: bool,
    /// 1-based story containing the member.
    pub story: usize,
}

#[derive(Debug, Clone)]
pub struct MemberRecord {
    pub id: u32,
    pub role: MemberRole,
    pub elements: [usize; 2],
    /// Global node indices `[i, mid, j]`.
    pub nodes: [usize; 3],
    pub length: f64,
    pub story: usize,
}

#[derive(Debug, Clone)]
pub struct Floor {
    pub y: f64,
    pub mass: f64,
    pub eq: usize,
}

/// Analysis model for one realization; owned by one worker.
#[derive(Debug, Clone)]
pub struct FrameModel {
    pub coords: Vec<[f64; 2]>,
    /// Equation numbers `[ux, uy, rz]` per node.
    pub node_eqs: Vec<[Option<usize>; 3]>,
    pub n_eq: usize,
    kl: usize,
    ku: usize,
    elements: Vec<Element>,
    pub members: Vec<MemberRecord>,
    pub status: Vec<MemberStatus>,
    pub floors: Vec<Floor>,
    pub base_y: f64,
    /// Lumped mass per equation, kg.
    pub mass: Vec<f64>,
    /// Gravity load per equation, N.
    pub gravity: Vec<f64>,
    pub geometry: Geometry,
    pub settings: FrameSettings,
}

impl FrameModel {
    pub fn build(def: &FrameDefinition, opts: &BuildOptions) -> Result<Self> {
        def.validate()?;
        let materials = opts.materials.clone().unwrap_or_else(|| def.nominal_materials());
        if materials.len() != def.profiles.len() {
            return Err(Error::Model(format!(
                "{} materials for {} profiles",
                materials.len(),
                def.profiles.len()
            )));
        }
        for m in &materials {
            m.validate()?;
        }
        let n_lateral = def.lateral_members().count();
        if let Some(c) = &opts.camber {
            if c.len() != n_lateral {
                return Err(Error::Model(format!("{} cambers for {n_lateral} members", c.len())));
            }
        }
        let sections: Vec<Arc<FiberSection>> = def
            .profiles
            .iter()
            .map(|p| discretize_section(&p.dims).map(Arc::new))
            .collect::<Result<_>>()?;

        let id_index: HashMap<u32, usize> = def.nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
        let mut coords: Vec<[f64; 2]> = def.nodes.iter().map(|n| [n.x, n.y]).collect();
        let mut has_rot = vec![false; coords.len()];

        struct Pending {
            n1: usize,
            n2: usize,
            beam: Option<(usize, [bool; 2])>,
            ea: f64,
        }
        let mut pending: Vec<Pending> = Vec::new();
        let mut members = Vec::new();
        let mut lateral_k = 0;
        for m in &def.members {
            let (i, j) = (id_index[&m.i], id_index[&m.j]);
            match m.role {
                MemberRole::GravityBeam => continue,
                MemberRole::Leaning => {
                    pending.push(Pending {
                        n1: i,
                        n2: j,
                        beam: None,
                        ea: m.axial_rigidity.unwrap_or(0.0),
                    });
                }
                MemberRole::Column | MemberRole::Brace => {
                    let prof = def
                        .profiles
                        .iter()
                        .position(|p| Some(&p.name) == m.profile.as_ref())
                        .ok_or_else(|| Error::Model(format!("member {} profile missing", m.id)))?;
                    let (a, b) = (coords[i], coords[j]);
                    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                    let (c, s) = ((b[0] - a[0]) / len, (b[1] - a[1]) / len);
                    let delta = opts.camber.as_ref().map_or(0.0, |v| v[lateral_k]);
                    let mid = [0.5 * (a[0] + b[0]) - s * delta, 0.5 * (a[1] + b[1]) + c * delta];
                    coords.push(mid);
                    has_rot.push(true);
                    let mid_idx = coords.len() - 1;
                    let pinned = m.role == MemberRole::Brace;
                    if !pinned {
                        has_rot[i] = true;
                        has_rot[j] = true;
                    }
                    let e0 = pending.len();
                    pending.push(Pending {
                        n1: i,
                        n2: mid_idx,
                        beam: Some((prof, [pinned, false])),
                        ea: 0.0,
                    });
                    pending.push(Pending {
                        n1: mid_idx,
                        n2: j,
                        beam: Some((prof, [false, pinned])),
                        ea: 0.0,
                    });
                    members.push(MemberRecord {
                        id: m.id,
                        role: m.role,
                        elements: [e0, e0 + 1],
                        nodes: [i, mid_idx, j],
                        length: len,
                        story: 0,
                    });
                    lateral_k += 1;
                }
            }
        }

        // floors and stories
        let mut floor_of_node: HashMap<usize, usize> = HashMap::new();
        let mut floors_tmp: Vec<(f64, f64, Vec<usize>)> = Vec::new();
        for f in &def.floors {
            let nodes: Vec<usize> = f.nodes.iter().map(|n| id_index[n]).collect();
            let y = coords[nodes[0]][1];
            floors_tmp.push((y, f.mass * opts.gravity.dead.max(0.0), nodes));
        }
        floors_tmp.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (k, f) in floors_tmp.iter().enumerate() {
            for &n in &f.2 {
                floor_of_node.insert(n, k);
            }
        }
        let base_y = def
            .supports
            .iter()
            .map(|s| coords[id_index[&s.node]][1])
            .fold(f64::INFINITY, f64::min);
        let floor_levels: Vec<f64> = floors_tmp.iter().map(|f| f.0).collect();
        for m in &mut members {
            let ylow = coords[m.nodes[0]][1].min(coords[m.nodes[2]][1]);
            m.story = floor_levels.iter().filter(|&&y| y <= ylow + 1e-9).count() + 1;
            m.story = m.story.min(floor_levels.len().max(1));
        }

        // equation numbering by height
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by(|&a, &b| coords[a][1].total_cmp(&coords[b][1]).then(coords[a][0].total_cmp(&coords[b][0])));
        let mut fixed = vec![[false; 3]; coords.len()];
        for s in &def.supports {
            fixed[id_index[&s.node]] = s.fix;
        }
        let mut connected = vec![false; coords.len()];
        for p in &pending {
            connected[p.n1] = true;
            connected[p.n2] = true;
        }
        let mut node_eqs = vec![[None; 3]; coords.len()];
        let mut floor_eq: Vec<Option<usize>> = vec![None; floors_tmp.len()];
        let mut n_eq = 0;
        for &n in &order {
            if !connected[n] {
                continue;
            }
            if !fixed[n][0] {
                if let Some(&f) = floor_of_node.get(&n) {
                    let eq = *floor_eq[f].get_or_insert_with(|| {
                        n_eq += 1;
                        n_eq - 1
                    });
                    node_eqs[n][0] = Some(eq);
                } else {
                    node_eqs[n][0] = Some(n_eq);
                    n_eq += 1;
                }
            }
            if !fixed[n][1] {
                node_eqs[n][1] = Some(n_eq);
                n_eq += 1;
            }
            if has_rot[n] && !fixed[n][2] {
                node_eqs[n][2] = Some(n_eq);
                n_eq += 1;
            }
        }
        let floors: Vec<Floor> = floors_tmp
            .iter()
            .zip(&floor_eq)
            .map(|(f, eq)| {
                eq.map(|eq| Floor { y: f.0, mass: f.1, eq })
                    .ok_or_else(|| Error::Model(format!("floor at y = {} has no free lateral dof", f.0)))
            })
            .collect::<Result<_>>()?;

        // elements
        let mut elements = Vec::with_capacity(pending.len());
        let (mut kl, mut ku) = (0usize, 0usize);
        for p in &pending {
            let eqs = [
                node_eqs[p.n1][0],
                node_eqs[p.n1][1],
                node_eqs[p.n1][2],
                node_eqs[p.n2][0],
                node_eqs[p.n2][1],
                node_eqs[p.n2][2],
            ];
            let (x1, x2) = (coords[p.n1], coords[p.n2]);
            let length = (x2[0] - x1[0]).hypot(x2[1] - x1[1]);
            let kind = match p.beam {
                Some((prof, release)) => {
                    let material = materials[prof];
                    let g = material.initial_modulus() / (2.0 * (1.0 + def.settings.poisson));
                    let def_e = BeamColumnDef {
                        section: sections[prof].clone(),
                        material,
                        shear_rigidity: if opts.shear {
                            g * sections[prof].shear_area
                        } else {
                            f64::INFINITY
                        },
                        length,
                        release,
                        p_delta: opts.p_delta && opts.geometry == Geometry::Corotational,
                    };
                    let state = def_e.new_state();
                    ElementKind::Beam { def: def_e, state }
                }
                None => ElementKind::Truss {
                    def: TrussDef { ea: p.ea, length },
                },
            };
            let present: Vec<usize> = eqs.iter().flatten().copied().collect();
            for &a in &present {
                for &b in &present {
                    if a > b {
                        kl = kl.max(a - b);
                    } else {
                        ku = ku.max(b - a);
                    }
                }
            }
            elements.push(Element {
                x1,
                x2,
                eqs,
                kind,
                k_committed: nalgebra::SMatrix::zeros(),
                k_trial: nalgebra::SMatrix::zeros(),
            });
        }

        let mut mass = vec![0.0; n_eq];
        for f in &floors {
            mass[f.eq] += f.mass;
        }
        let mut gravity = vec![0.0; n_eq];
        for g in &def.gravity {
            let n = id_index[&g.node];
            if let Some(eq) = node_eqs[n][1] {
                gravity[eq] -= g.dead * opts.gravity.dead + g.live * opts.gravity.live;
            }
        }
        let status = members
            .iter()
            .map(|m| MemberStatus {
                story: m.story,
                ..Default::default()
            })
            .collect();
        let mut model = Self {
            coords,
            node_eqs,
            n_eq,
            kl,
            ku,
            elements,
            members,
            status,
            floors,
            base_y,
            mass,
            gravity,
            geometry: opts.geometry,
            settings: def.settings.clone(),
        };
        // initial tangent for damping
        let zero = vec![0.0; model.n_eq];
        model.assemble(&zero)?;
        model.commit();
        Ok(model)
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn n_stories(&self) -> usize {
        self.floors.len()
    }

    pub fn height(&self) -> f64 {
        self.floors.last().map_or(0.0, |f| f.y - self.base_y)
    }

    pub fn story_heights(&self) -> Vec<f64> {
        let mut prev = self.base_y;
        self.floors
            .iter()
            .map(|f| {
                let h = f.y - prev;
                prev = f.y;
                h
            })
            .collect()
    }

    pub fn floor_eqs(&self) -> Vec<usize> {
        self.floors.iter().map(|f| f.eq).collect()
    }

    pub fn roof_eq(&self) -> usize {
        self.floors.last().map_or(0, |f| f.eq)
    }

    /// Story drift ratios from a displacement vector.
    pub fn story_drifts(&self, u: &[f64]) -> Vec<f64> {
        let h = self.story_heights();
        let mut prev = 0.0;
        self.floors
            .iter()
            .zip(h)
            .map(|(f, h)| {
                let d = (u[f.eq] - prev) / h;
                prev = u[f.eq];
                d
            })
            .collect()
    }

    fn gather(&self, e: &Element, u: &[f64]) -> [f64; 6] {
        let mut ue = [0.0; 6];
        for (k, eq) in e.eqs.iter().enumerate() {
            if let Some(q) = eq {
                ue[k] = u[*q];
            }
        }
        ue
    }

    /// Sets the trial displacement and returns the resisting force vector and
    /// the tangent stiffness.
    pub fn assemble(&mut self, u: &[f64]) -> Result<(Vec<f64>, BandMatrix)> {
        let mut fr = vec![0.0; self.n_eq];
        let mut k = BandMatrix::zeros(self.n_eq, self.kl, self.ku);
        let geometry = self.geometry;
        for idx in 0..self.elements.len() {
            let ue = self.gather(&self.elements[idx], u);
            let e = &mut self.elements[idx];
            let (kin, v) = kinematics(e.x1, e.x2, &ue, geometry);
            let (q, kb): ([f64; 3], Matrix3<f64>) = match &mut e.kind {
                ElementKind::Beam { def, state } => def.set_trial(state, v)?,
                ElementKind::Truss { def } => def.response(v[0]),
            };
            let (fe, ke) = to_global(&kin, q, &kb, geometry);
            e.k_trial = ke;
            for a in 0..6 {
                let Some(ia) = e.eqs[a] else { continue };
                fr[ia] += fe[a];
                for b in 0..6 {
                    if let Some(ib) = e.eqs[b] {
                        k.add(ia, ib, ke[(a, b)]);
                    }
                }
            }
        }
        Ok((fr, k))
    }

    /// Tangent stiffness of the last committed state.
    pub fn committed_tangent(&self) -> BandMatrix {
        let mut k = BandMatrix::zeros(self.n_eq, self.kl, self.ku);
        for e in &self.elements {
            for a in 0..6 {
                let Some(ia) = e.eqs[a] else { continue };
                for b in 0..6 {
                    if let Some(ib) = e.eqs[b] {
                        k.add(ia, ib, e.k_committed[(a, b)]);
                    }
                }
            }
        }
        k
    }

    pub fn commit(&mut self) {
        for e in &mut self.elements {
            if let ElementKind::Beam { def, state } = &mut e.kind {
                def.commit(state);
            }
            e.k_committed = e.k_trial;
        }
    }

    pub fn revert(&mut self) {
        for e in &mut self.elements {
            if let ElementKind::Beam { def, state } = &mut e.kind {
                def.revert(state);
            }
            e.k_trial = e.k_committed;
        }
    }

    fn node_position(&self, n: usize, u: &[f64]) -> [f64; 2] {
        let eq = self.node_eqs[n];
        let dx = eq[0].map_or(0.0, |q| u[q]);
        let dy = eq[1].map_or(0.0, |q| u[q]);
        [self.coords[n][0] + dx, self.coords[n][1] + dy]
    }

    /// Midspan offset of a member from its current chord, m.
    pub fn midspan_offset(&self, member: usize, u: &[f64]) -> f64 {
        let m = &self.members[member];
        let a = self.node_position(m.nodes[0], u);
        let c = self.node_position(m.nodes[1], u);
        let b = self.node_position(m.nodes[2], u);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let l = dx.hypot(dy);
        ((c[0] - a[0]) * dy - (c[1] - a[1]) * dx).abs() / l
    }

    /// Updates component flags from the committed state at time `t`.
    pub fn check_component_limits(&mut self, u: &[f64], t: f64) {
        for mi in 0..self.members.len() {
            let offset = self.midspan_offset(mi, u) / self.members[mi].length;
            let mut any_yield = false;
            let mut full_yield = false;
            let mut any_frac = false;
            let mut full_frac = false;
            for &ei in &self.members[mi].elements {
                if let ElementKind::Beam { def, state } = &self.elements[ei].kind {
                    let nl = def.layers();
                    let e0 = def.material.initial_modulus();
                    for ip in 0..N_IP {
                        let fibers = &state.fibers[ip * nl..(ip + 1) * nl];
                        any_yield |= fibers.iter().any(|f| f.has_yielded());
                        full_yield |= fibers
                            .iter()
                            .all(|f| f.is_fractured() || f.committed_tangent(&def.material) < 0.5 * e0);
                        any_frac |= fibers.iter().any(|f| f.is_fractured());
                        full_frac |= fibers.iter().all(|f| f.is_fractured());
                    }
                }
            }
            let s = &mut self.status[mi];
            s.peak_offset_ratio = s.peak_offset_ratio.max(offset);
            s.buckled |= offset > BUCKLING_OFFSET_RATIO;
            if any_yield && !s.first_yield {
                s.first_yield = true;
                s.first_yield_time = Some(t);
            }
            s.full_section_yield |= full_yield;
            s.partial_fracture |= any_frac;
            s.full_fracture |= full_frac;
            if s.full_section_yield {
                s.first_yield = true;
                s.first_yield_time.get_or_insert(t);
            }
            if s.full_fracture {
                s.partial_fracture = true;
            }
        }
    }

    /// Basic forces of every beam-column element, committed.
    pub fn element_forces(&self) -> Vec<[f64; 3]> {
        self.elements
            .iter()
            .map(|e| match &e.kind {
                ElementKind::Beam { state, .. } => state.basic_forces(),
                ElementKind::Truss { .. } => [0.0; 3],
            })
            .collect()
    }

    /// Largest fatigue damage index over all fibers.
    pub fn max_damage_index(&self) -> f64 {
        self.elements
            .iter()
            .filter_map(|e| match &e.kind {
                ElementKind::Beam { state, .. } => {
                    Some(state.fibers.iter().map(FiberState::damage_index).fold(0.0, f64::max))
                }
                ElementKind::Truss { .. } => None,
            })
            .fold(0.0, f64::max)
    }

    /// Members with a flag set, per story (1-based index - 1).
    pub fn damage_by_story(&self) -> Vec<usize> {
        let n = self.n_stories().max(1);
        let mut out = vec![0usize; n];
        for s in &self.status {
            if s.full_section_yield || s.buckled || s.partial_fracture {
                out[s.story.saturating_sub(1).min(n - 1)] += 1;
            }
        }
        out
    }
}
