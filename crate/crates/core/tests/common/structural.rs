//! Static frame checks against an independent direct-stiffness solver and
//! closed forms.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SMatrix};
use windcollapse::frame::{
    discretize_section, initial_rigidities, BuildOptions, FrameDefinition, FrameModel, Geometry, WideFlange,
};
use windcollapse::material::{MaterialParams, SteelParams};

const E: f64 = 200e9;

/// Newton iteration on `f_r(u) = f`, starting from `u`. Commits on success.
/// The element state determination carries its own tolerance, so the energy
/// norm may stall slightly above round-off; a stall below `1e-16` of the
/// first increment is accepted.
pub fn solve_static(model: &mut FrameModel, u: &mut [f64], f: &[f64]) -> bool {
    let mut e0 = None;
    let mut stalled = 0;
    for _ in 0..60 {
        let Ok((fr, k)) = model.assemble(u) else {
            return false;
        };
        let r: Vec<f64> = f.iter().zip(&fr).map(|(a, b)| a - b).collect();
        let Ok(lu) = k.factor() else {
            return false;
        };
        let du = lu.solve(&r);
        let e: f64 = du.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>().abs();
        let e_ref = *e0.get_or_insert(e.max(f64::MIN_POSITIVE));
        u.iter_mut().zip(&du).for_each(|(x, d)| *x += d);
        if !u.iter().all(|x| x.is_finite()) {
            return false;
        }
        if e <= 1e-16 * e_ref {
            stalled += 1;
        }
        if e <= 1e-24 * e_ref || e == 0.0 || stalled >= 3 {
            model.assemble(u).ok();
            model.commit();
            return true;
        }
    }
    false
}

pub const PORTAL: &str = r#"
name = "two-story braced bay"
[settings]
modulus = 200e9
[[profiles]]
name = "COL"
d = 0.36
bf = 0.33
tf = 0.024
tw = 0.014
fy_nominal = 345e6
[[profiles]]
name = "BR"
d = 0.2
bf = 0.2
tf = 0.016
tw = 0.01
fy_nominal = 345e6
[[nodes]]
id = 10
x = 0.0
y = 0.0
[[nodes]]
id = 11
x = 0.0
y = 4.0
[[nodes]]
id = 12
x = 0.0
y = 8.0
[[nodes]]
id = 20
x = 6.0
y = 0.0
[[nodes]]
id = 21
x = 6.0
y = 4.0
[[nodes]]
id = 22
x = 6.0
y = 8.0
[[nodes]]
id = 30
x = 9.0
y = 0.0
[[nodes]]
id = 31
x = 9.0
y = 4.0
[[nodes]]
id = 32
x = 9.0
y = 8.0
[[supports]]
node = 10
fix = [true, true, true]
[[supports]]
node = 20
fix = [true, true, true]
[[supports]]
node = 30
fix = [true, true, false]
[[members]]
id = 1
i = 10
j = 11
role = "column"
profile = "COL"
[[members]]
id = 2
i = 11
j = 12
role = "column"
profile = "COL"
[[members]]
id = 3
i = 20
j = 21
role = "column"
profile = "COL"
[[members]]
id = 4
i = 21
j = 22
role = "column"
profile = "COL"
[[members]]
id = 5
i = 10
j = 21
role = "brace"
profile = "BR"
[[members]]
id = 6
i = 21
j = 12
role = "brace"
profile = "BR"
[[members]]
id = 7
i = 30
j = 31
role = "leaning"
axial_rigidity = 2e10
[[members]]
id = 8
i = 31
j = 32
role = "leaning"
axial_rigidity = 2e10
[[floors]]
mass = 1e5
nodes = [11, 21, 31]
[[floors]]
mass = 1e5
nodes = [12, 22, 32]
"#;

fn elastic_materials(n: usize) -> Vec<MaterialParams> {
    vec![MaterialParams::Elastic { e: E }; n]
}

fn rigidities(def: &FrameDefinition, profile: &str) -> (f64, f64) {
    let p = def.profiles.iter().find(|p| p.name == profile).unwrap();
    let s = discretize_section(&p.dims).unwrap();
    initial_rigidities(&s, &MaterialParams::Elastic { e: E })
}

fn local_beam(ea: f64, ei: f64, l: f64) -> SMatrix<f64, 6, 6> {
    let (a, b, c, d) = (ea / l, 12.0 * ei / l.powi(3), 6.0 * ei / l.powi(2), ei / l);
    SMatrix::<f64, 6, 6>::from_row_slice(&[
        a, 0.0, 0.0, -a, 0.0, 0.0, //
        0.0, b, c, 0.0, -b, c, //
        0.0, c, 4.0 * d, 0.0, -c, 2.0 * d, //
        -a, 0.0, 0.0, a, 0.0, 0.0, //
        0.0, -b, -c, 0.0, b, -c, //
        0.0, c, 2.0 * d, 0.0, -c, 4.0 * d,
    ])
}

fn rotate(k: SMatrix<f64, 6, 6>, c: f64, s: f64) -> SMatrix<f64, 6, 6> {
    let mut t = SMatrix::<f64, 6, 6>::zeros();
    for b in 0..2 {
        let o = 3 * b;
        t[(o, o)] = c;
        t[(o, o + 1)] = s;
        t[(o + 1, o)] = -s;
        t[(o + 1, o + 1)] = c;
        t[(o + 2, o + 2)] = 1.0;
    }
    t.transpose() * k * t
}

/// The two-story braced bay with elastic or nominal steel members.
pub fn portal(geometry: Geometry, elastic: bool) -> (FrameDefinition, FrameModel) {
    let def = FrameDefinition::from_toml_str(PORTAL).unwrap();
    let opts = BuildOptions {
        geometry,
        materials: elastic.then(|| elastic_materials(def.profiles.len())),
        p_delta: geometry == Geometry::Corotational,
        ..Default::default()
    };
    let model = FrameModel::build(&def, &opts).unwrap();
    (def, model)
}

/// Largest relative discrepancy between the fiber frame (linear geometry,
/// elastic fibers) and a textbook stiffness solution of the braced bay.
pub fn elastic_frame_discrepancy() -> f64 {
    let def = FrameDefinition::from_toml_str(PORTAL).unwrap();
    let opts = BuildOptions {
        geometry: Geometry::Linear,
        materials: Some(elastic_materials(def.profiles.len())),
        p_delta: false,
        shear: false,
        ..Default::default()
    };
    let mut model = FrameModel::build(&def, &opts).unwrap();

    // loads by node id: (fx, fy)
    let loads: HashMap<u32, (f64, f64)> = [
        (11, (80e3, -300e3)),
        (12, (150e3, -250e3)),
        (21, (0.0, -400e3)),
        (22, (0.0, -200e3)),
        (31, (0.0, -900e3)),
        (32, (0.0, -600e3)),
    ]
    .into_iter()
    .collect();

    // independent numbering: floors share ux, columns carry rotations
    let idx: HashMap<u32, usize> = def.nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
    let floor_of: HashMap<u32, usize> = def
        .floors
        .iter()
        .enumerate()
        .flat_map(|(f, fl)| fl.nodes.iter().map(move |&n| (n, f)))
        .collect();
    let fixed: HashMap<u32, [bool; 3]> = def.supports.iter().map(|s| (s.node, s.fix)).collect();
    let column_nodes: Vec<u32> = def
        .members
        .iter()
        .filter(|m| m.profile.as_deref() == Some("COL"))
        .flat_map(|m| [m.i, m.j])
        .collect();
    let mut dof: HashMap<(u32, usize), usize> = HashMap::new();
    let mut n = def.floors.len();
    for node in &def.nodes {
        let fix = fixed.get(&node.id).copied().unwrap_or([false; 3]);
        if !fix[0] {
            let eq = floor_of.get(&node.id).copied().unwrap_or_else(|| {
                n += 1;
                n - 1
            });
            dof.insert((node.id, 0), eq);
        }
        if !fix[1] {
            dof.insert((node.id, 1), n);
            n += 1;
        }
        if !fix[2] && column_nodes.contains(&node.id) {
            dof.insert((node.id, 2), n);
            n += 1;
        }
    }
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut f = DVector::<f64>::zeros(n);
    for m in &def.members {
        let (a, b) = (&def.nodes[idx[&m.i]], &def.nodes[idx[&m.j]]);
        let l = (b.x - a.x).hypot(b.y - a.y);
        let (c, s) = ((b.x - a.x) / l, (b.y - a.y) / l);
        let kl = match (m.profile.as_deref(), m.axial_rigidity) {
            (Some("COL"), _) => {
                let (ea, ei) = rigidities(&def, "COL");
                local_beam(ea, ei, l)
            }
            (Some(p), _) => {
                let (ea, _) = rigidities(&def, p);
                local_beam(ea, 0.0, l)
            }
            (None, Some(ea)) => local_beam(ea, 0.0, l),
            _ => unreachable!(),
        };
        let kg = rotate(kl, c, s);
        let map: Vec<Option<usize>> = [m.i, m.j]
            .iter()
            .flat_map(|&nd| (0..3).map(move |d| (nd, d)))
            .map(|key| dof.get(&key).copied())
            .collect();
        for p in 0..6 {
            for q in 0..6 {
                if let (Some(r), Some(cc)) = (map[p], map[q]) {
                    k[(r, cc)] += kg[(p, q)];
                }
            }
        }
    }
    for (id, (fx, fy)) in &loads {
        if let Some(&e) = dof.get(&(*id, 0)) {
            f[e] += fx;
        }
        if let Some(&e) = dof.get(&(*id, 1)) {
            f[e] += fy;
        }
    }
    let u_ref = k.lu().solve(&f).expect("oracle stiffness is singular");

    let mut fm = vec![0.0; model.n_eq];
    for (id, (fx, fy)) in &loads {
        let eqs = model.node_eqs[idx[id]];
        if let Some(e) = eqs[0] {
            fm[e] += fx;
        }
        if let Some(e) = eqs[1] {
            fm[e] += fy;
        }
    }
    let mut u = vec![0.0; model.n_eq];
    assert!(solve_static(&mut model, &mut u, &fm), "fiber frame did not converge");

    let mut worst: f64 = 0.0;
    for d in 0..3 {
        let pairs: Vec<(f64, f64)> = def
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(k, nd)| {
                let mine = model.node_eqs[k][d]?;
                let theirs = *dof.get(&(nd.id, d))?;
                Some((u[mine], u_ref[theirs]))
            })
            .collect();
        let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
        for (a, b) in pairs {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    worst
}

fn single_member(profile: &WideFlange, length: f64, role: &str, base_fix: &str, fy: f64, restrain_top: bool) -> FrameDefinition {
    let link = if restrain_top {
        "[[members]]\nid = 2\ni = 2\nj = 3\nrole = \"leaning\"\naxial_rigidity = 1e13\n"
    } else {
        ""
    };
    let text = format!(
        r#"
[[profiles]]
name = "P"
d = {d}
bf = {bf}
tf = {tf}
tw = {tw}
fy_nominal = {fy}
[[nodes]]
id = 1
x = 0.0
y = 0.0
[[nodes]]
id = 2
x = 0.0
y = {length}
[[nodes]]
id = 3
x = 1.0
y = {length}
[[supports]]
node = 1
fix = {base_fix}
[[supports]]
node = 3
fix = [true, true, true]
[[members]]
id = 1
i = 1
j = 2
role = "{role}"
profile = "P"
{link}
[[floors]]
mass = 0.0
nodes = [2]
"#,
        d = profile.d,
        bf = profile.bf,
        tf = profile.tf,
        tw = profile.tw,
    );
    FrameDefinition::from_toml_str(&text).unwrap()
}

/// Tip deflection of a fixed-base cantilever under a small lateral tip
/// load, relative to `P L^3 / 3 E I` with the gross section inertia.
pub fn cantilever_tip_ratio(geometry: Geometry) -> f64 {
    let wf = WideFlange {
        d: 0.36,
        bf: 0.33,
        tf: 0.024,
        tw: 0.014,
    };
    let l = 4.0;
    let def = single_member(&wf, l, "column", "[true, true, true]", 345e6, false);
    let opts = BuildOptions {
        geometry,
        shear: false,
        ..Default::default()
    };
    let mut model = FrameModel::build(&def, &opts).unwrap();
    let p = 1e3;
    let tip = model.node_eqs[1][0].unwrap();
    let mut f = vec![0.0; model.n_eq];
    f[tip] = p;
    let mut u = vec![0.0; model.n_eq];
    assert!(solve_static(&mut model, &mut u, &f));
    let exact = p * l.powi(3) / (3.0 * E * wf.inertia());
    u[tip] / exact
}

/// Peak axial load of a pin-ended steel column with an `L/1000` midspan
/// camber, found by load stepping with step halving, over its Euler load.
/// Returns `(slenderness, ratio)`.
pub fn euler_peak_ratio() -> (f64, f64) {
    let wf = WideFlange {
        d: 0.16,
        bf: 0.16,
        tf: 0.009,
        tw: 0.006,
    };
    let r = (wf.inertia() / wf.area()).sqrt();
    let slenderness = 200.0;
    let l = slenderness * r;
    let def = single_member(&wf, l, "brace", "[true, true, false]", 345e6, true);
    let opts = BuildOptions {
        camber: Some(vec![l / 1000.0]),
        materials: Some(vec![MaterialParams::Steel {
            steel: SteelParams::new(E, 345e6, 0.001, 20.0),
            fatigue: None,
        }]),
        ..Default::default()
    };
    let mut model = FrameModel::build(&def, &opts).unwrap();
    let p_euler = std::f64::consts::PI.powi(2) * E * wf.inertia() / (l * l);
    let top = model.node_eqs[1][1].unwrap();
    let mut u = vec![0.0; model.n_eq];
    let (mut p, mut dp) = (0.0, 0.05 * p_euler);
    while dp > 1e-4 * p_euler && p < 1.5 * p_euler {
        let mut f = vec![0.0; model.n_eq];
        f[top] = -(p + dp);
        let mut trial = u.clone();
        if solve_static(&mut model, &mut trial, &f) {
            u = trial;
            p += dp;
        } else {
            model.revert();
            dp *= 0.5;
        }
    }
    (slenderness, p / p_euler)
}
