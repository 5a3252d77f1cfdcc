//! Numerical checks of the geometric properties the model relies on, plus
//! finite-difference checks of every analytic gradient. Each suite returns
//! counts and the worst error it saw so callers can print a report.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dissim::{
    boundary_dissim, depth_dissim, depth_dissim_hyperbolic_config, dissim_gradient, halfspace_distance, DepthConfig,
    Dissim, GFn, SizeFn,
};
use crate::model::{batch_loss, pair_energy, EmbeddingTable, EnergyConfig, Sample};
use crate::ontology::{ontology_batch_loss, Axiom, BaseModel, OntologyConfig, OntologySample};
use crate::optim::relative_error;
use crate::regions::{contains_region, BallRegion, Region, RegionKind};

pub const ISOMETRY_TOL: f64 = 1e-12;
pub const TANGENT_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-4;
/// Denominator floor of the gradient relative error.
pub const GRADIENT_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    /// Worst observed error (meaning depends on the suite).
    pub max_error: f64,
    pub tolerance: f64,
    /// Points rejected before checking (e.g. at a kink).
    pub skipped: usize,
}

impl SuiteReport {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
            skipped: 0,
        }
    }

    fn record(&mut self, err: f64) {
        self.checked += 1;
        self.max_error = self.max_error.max(err);
        if !(err <= self.tolerance) {
            self.failures += 1;
        }
    }

    fn record_ok(&mut self, ok: bool) {
        self.checked += 1;
        if !ok {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} checked, {} failures, max error {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.failures,
            self.max_error,
            self.tolerance,
        )?;
        if self.skipped > 0 {
            write!(f, ", {} skipped", self.skipped)?;
        }
        Ok(())
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn unit_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v = random_vec(rng, n, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn random_ball<R: Rng>(rng: &mut R, n: usize, r_lo: f64, r_hi: f64) -> BallRegion {
    let scale = log_uniform(rng, r_lo, r_hi);
    BallRegion::new(random_vec(rng, n, 2.0 * scale), log_uniform(rng, r_lo, r_hi))
}

/// The ball and the point `(center, radius)` in the upper half-space.
fn lifted(b: &BallRegion) -> Vec<f64> {
    let mut p = b.center.clone();
    p.push(b.radius());
    p
}

/// Depth dissimilarity with the hyperbolic configuration against the
/// half-space distance of the lifted points.
pub fn isometry(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("isometry", ISOMETRY_TOL);
    for _ in 0..n {
        let dim = rng.gen_range(1..=10);
        let a = random_ball(&mut rng, dim, 1e-3, 1e3);
        let b = random_ball(&mut rng, dim, 1e-3, 1e3);
        let ours = depth_dissim_hyperbolic_config(&a, &b).expect("same dimension");
        let oracle = halfspace_distance(&lifted(&a), &lifted(&b)).expect("positive radii");
        report.record((ours - oracle).abs() / oracle.max(1.0));
    }
    report
}

/// Order agreement between the linear depth dissimilarity (`f = √2·r`)
/// and the hyperbolic distance over random quadruples.
pub fn monotonicity(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DepthConfig {
        p: 2,
        g: GFn::Linear { k: 1.0, b: 0.0 },
        f: SizeFn::ScaledRadius(std::f64::consts::SQRT_2),
    };
    let mut report = SuiteReport::new("monotonicity", 0.0);
    for _ in 0..n {
        let dim = rng.gen_range(1..=10);
        let q: Vec<BallRegion> = (0..4).map(|_| random_ball(&mut rng, dim, 1e-1, 1e1)).collect();
        let lin = |a: &BallRegion, b: &BallRegion| {
            depth_dissim(&Region::Ball(a.clone()), &Region::Ball(b.clone()), &cfg).expect("same kind")
        };
        let hyp = |a: &BallRegion, b: &BallRegion| halfspace_distance(&lifted(a), &lifted(b)).expect("positive radii");
        let ours = lin(&q[0], &q[1]).total_cmp(&lin(&q[2], &q[3]));
        let oracle = hyp(&q[0], &q[1]).total_cmp(&hyp(&q[2], &q[3]));
        report.record_ok(ours == oracle);
    }
    report
}

/// A region strictly inside `outer`, shrunk by a factor in `[lo, hi]`.
fn inside<R: Rng>(rng: &mut R, outer: &Region, lo: f64, hi: f64) -> Region {
    let n = outer.dim();
    match outer {
        Region::Ball(b) => {
            let r = b.radius() * rng.gen_range(lo..hi);
            let slack = (b.radius() - r) * rng.gen_range(0.0..0.999);
            let u = unit_vec(rng, n);
            Region::ball(b.center.iter().zip(&u).map(|(c, u)| c + slack * u).collect(), r)
        }
        Region::Box(b) => {
            let offsets: Vec<f64> = b.offsets().iter().map(|o| o * rng.gen_range(lo..hi)).collect();
            let center = b
                .center
                .iter()
                .zip(b.offsets())
                .zip(&offsets)
                .map(|((c, o), oi)| c + (o - oi) * rng.gen_range(-0.999..0.999))
                .collect();
            Region::cuboid(center, offsets)
        }
    }
}

fn random_region<R: Rng>(rng: &mut R, kind: RegionKind, n: usize) -> Region {
    let center = random_vec(rng, n, 2.0);
    match kind {
        RegionKind::Ball => Region::ball(center, log_uniform(rng, 0.1, 3.0)),
        RegionKind::Box => Region::cuboid(center, (0..n).map(|_| log_uniform(rng, 0.1, 3.0)).collect()),
    }
}

/// `d_bd ≤ 0` exactly when the analytic containment test holds; half the
/// pairs are constructed contained so both outcomes are exercised.
pub fn containment_sign(n: usize, kind: RegionKind, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new(format!("containment sign ({kind})"), 0.0);
    for i in 0..n {
        let dim = rng.gen_range(1..=6);
        let parent = random_region(&mut rng, kind, dim);
        let child = if i % 2 == 0 {
            inside(&mut rng, &parent, 0.05, 1.0)
        } else {
            random_region(&mut rng, kind, dim)
        };
        let d = boundary_dissim(&parent, &child).expect("same kind");
        report.record_ok((d <= 0.0) == contains_region(&parent, &child).expect("same kind"));
    }
    report
}

/// Internally tangent pairs have `d_bd = 0`. Box pairs use dyadic values so
/// that tangency is exact in floating point.
pub fn tangency(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("internal tangency", TANGENT_TOL);
    for i in 0..n {
        let dim = rng.gen_range(1..=6);
        let (parent, child) = if i % 2 == 0 {
            let parent = random_region(&mut rng, RegionKind::Ball, dim);
            let Region::Ball(p) = &parent else { unreachable!() };
            let r = p.radius() * rng.gen_range(0.05..0.95);
            let u = unit_vec(&mut rng, dim);
            let center = p.center.iter().zip(&u).map(|(c, u)| c + (p.radius() - r) * u).collect();
            (parent, Region::ball(center, r))
        } else {
            let dyadic = |rng: &mut ChaCha8Rng, lo: i32, hi: i32| rng.gen_range(lo..hi) as f64 / 64.0;
            let pc: Vec<f64> = (0..dim).map(|_| dyadic(&mut rng, -128, 128)).collect();
            let po: Vec<f64> = (0..dim).map(|_| dyadic(&mut rng, 16, 192)).collect();
            let co: Vec<f64> = po.iter().map(|o| (o * rng.gen_range(0.1..0.9) * 64.0).floor().max(1.0) / 64.0).collect();
            let touch = rng.gen_range(0..dim);
            let cc = (0..dim)
                .map(|k| {
                    let slack = po[k] - co[k];
                    if k == touch {
                        pc[k] + if rng.gen_bool(0.5) { slack } else { -slack }
                    } else {
                        pc[k] + (slack * rng.gen_range(-1.0..1.0) * 64.0).trunc() / 64.0
                    }
                })
                .collect();
            (Region::cuboid(pc, po), Region::cuboid(cc, co))
        };
        report.record(boundary_dissim(&parent, &child).expect("same kind").abs());
    }
    report
}

/// For chains `reg₃ ⊆ reg₂ ⊆ reg₁`, `d_bd(reg₁, reg₃) ≤ d_bd(reg₁, reg₂)`.
pub fn nesting(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("nesting", 0.0);
    for i in 0..n {
        let kind = if i % 2 == 0 { RegionKind::Ball } else { RegionKind::Box };
        let dim = rng.gen_range(1..=6);
        let r1 = random_region(&mut rng, kind, dim);
        let r2 = inside(&mut rng, &r1, 0.1, 0.95);
        let r3 = inside(&mut rng, &r2, 0.1, 0.95);
        let d13 = boundary_dissim(&r1, &r3).expect("same kind");
        let d12 = boundary_dissim(&r1, &r2).expect("same kind");
        report.record((d13 - d12).max(0.0));
    }
    report
}

/// Halving the radius of a ball nested in `ball((3,0),1)` pushes its depth
/// dissimilarity to `ball((0,0),1)` more than `Δ = 100` above the unshrunk
/// value. The error field holds the number of halvings needed.
pub fn depth_shrinkage() -> SuiteReport {
    const DELTA: f64 = 100.0;
    const MAX_HALVINGS: usize = 40;
    let cfg = DepthConfig::linear(RegionKind::Ball, 2);
    let b1 = Region::ball(vec![0.0, 0.0], 1.0);
    let b2 = Region::ball(vec![3.0, 0.0], 1.0);
    let base = depth_dissim(&b1, &b2, &cfg).expect("balls");
    let mut report = SuiteReport::new("depth shrinkage", MAX_HALVINGS as f64);
    let mut r = 1.0;
    let mut halvings = 0;
    while halvings < MAX_HALVINGS {
        r /= 2.0;
        halvings += 1;
        let nested = Region::ball(vec![3.0, 0.0], r);
        if depth_dissim(&b1, &nested, &cfg).expect("balls") > base + DELTA {
            break;
        }
    }
    let nested = Region::ball(vec![3.0, 0.0], r);
    let reached = depth_dissim(&b1, &nested, &cfg).expect("balls") > base + DELTA;
    report.record(if reached { halvings as f64 } else { f64::INFINITY });
    report
}

/// `n = 100` disjoint balls inside the unit ball with pairwise depth
/// dissimilarity above `M = 10⁶`: centers on a circle with squared
/// separation at least `δ`, radii `½·(δ/M)^{1/2}`. The error field holds
/// `M / min pairwise value` (below 1 on success).
pub fn depth_separation() -> SuiteReport {
    const N: usize = 100;
    const M: f64 = 1e6;
    let cfg = DepthConfig::linear(RegionKind::Ball, 2);
    let centers: Vec<Vec<f64>> = (0..N)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / N as f64;
            vec![0.4 * t.cos(), 0.4 * t.sin()]
        })
        .collect();
    let mut delta = f64::INFINITY;
    for i in 0..N {
        for j in i + 1..N {
            let d2: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            delta = delta.min(d2);
        }
    }
    let r = 0.5 * (delta / M).sqrt();
    let balls: Vec<Region> = centers.into_iter().map(|c| Region::ball(c, r)).collect();
    let unit = Region::ball(vec![0.0, 0.0], 1.0);

    let mut report = SuiteReport::new("depth separation", 1.0);
    let mut ok = balls.iter().all(|b| contains_region(&unit, b).expect("balls"));
    let mut min_depth = f64::INFINITY;
    for i in 0..N {
        for j in i + 1..N {
            let Region::Ball(a) = &balls[i] else { unreachable!() };
            let Region::Ball(b) = &balls[j] else { unreachable!() };
            ok &= crate::regions::euclidean(&a.center, &b.center) > a.radius() + b.radius();
            min_depth = min_depth.min(depth_dissim(&balls[i], &balls[j], &cfg).expect("balls"));
        }
    }
    // a geometric failure is reported as an infinite ratio
    report.record(if ok { M / min_depth } else { f64::INFINITY });
    report
}

/// Compares an analytic gradient against central differences. Returns
/// `None` when some coordinate sits within one step of a kink, detected by
/// a second difference that does not vanish with the step.
pub fn check_gradient(f: impl Fn(&[f64]) -> f64, analytic: &[f64], x: &[f64]) -> Option<f64> {
    let h = FD_STEP;
    let f0 = f(x);
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let central = (up - down) / (2.0 * h);
        let second = (up - 2.0 * f0 + down) / h;
        if second.abs() > 1e-3 * central.abs().max(1.0) {
            return None;
        }
        worst = worst.max(relative_error(analytic[i], central, GRADIENT_FLOOR));
    }
    Some(worst)
}

/// Starting point and a function returning value and analytic gradient.
type Target<'a> = (Vec<f64>, Box<dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a>);

fn gradient_suite<R: Rng>(
    name: &str,
    points: usize,
    rng: &mut R,
    mut sample: impl FnMut(&mut R) -> Target<'_>,
) -> SuiteReport {
    let mut report = SuiteReport::new(format!("gradient {name}"), GRADIENT_TOL);
    let max_attempts = points * 10;
    let mut attempts = 0;
    while report.checked < points && attempts < max_attempts {
        attempts += 1;
        let (x, f) = sample(rng);
        let (_, grad) = f(&x);
        match check_gradient(|y| f(y).0, &grad, &x) {
            Some(err) => report.record(err),
            None => report.skipped += 1,
        }
    }
    if report.checked < points {
        report.failures += points - report.checked;
    }
    report
}

fn random_pair<R: Rng>(rng: &mut R, kind: RegionKind, near: bool) -> (Region, Region) {
    let dim = rng.gen_range(1..=5);
    let raw = |rng: &mut R| -> Vec<f64> { (0..kind.params_per_region(dim)).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let a = Region::from_raw(kind, dim, &raw(rng)).expect("length matches");
    let mut b = Region::from_raw(kind, dim, &raw(rng)).expect("length matches");
    if near {
        // overlap keeps the volume ratio off its floor
        for (cb, ca) in b.center_mut().iter_mut().zip(a.center()) {
            *cb = ca + rng.gen_range(-0.3..0.3);
        }
    }
    (a, b)
}

fn dissim_target<'a>(sel: Dissim, a: &Region, b: &Region) -> Target<'a> {
    let (kind, dim, split) = (a.kind(), a.dim(), a.raw_params().len());
    let mut x = a.raw_params();
    x.extend(b.raw_params());
    let f = move |y: &[f64]| {
        let ra = Region::from_raw(kind, dim, &y[..split]).expect("length matches");
        let rb = Region::from_raw(kind, dim, &y[split..]).expect("length matches");
        let e = dissim_gradient(&sel, &ra, &rb).expect("valid selector");
        let mut g = e.grad_a;
        g.extend(e.grad_b);
        (e.value, g)
    };
    (x, Box::new(f))
}

fn energy_target<'a>(cfg: EnergyConfig, a: &Region, b: &Region) -> Target<'a> {
    let (kind, dim, split) = (a.kind(), a.dim(), a.raw_params().len());
    let mut x = a.raw_params();
    x.extend(b.raw_params());
    let f = move |y: &[f64]| {
        let ra = Region::from_raw(kind, dim, &y[..split]).expect("length matches");
        let rb = Region::from_raw(kind, dim, &y[split..]).expect("length matches");
        let (e, _) = pair_energy(&ra, &rb, &cfg).expect("valid config");
        let mut g = e.grad_a;
        g.extend(e.grad_b);
        (e.value, g)
    };
    (x, Box::new(f))
}

fn perturbed_table<R: Rng>(rng: &mut R, kind: RegionKind, nodes: usize, roles: usize) -> EmbeddingTable {
    let ids = (0..nodes).map(|i| format!("n{i}")).collect();
    let roles = (0..roles).map(|i| format!("r{i}")).collect();
    let mut t = EmbeddingTable::initialize(kind, 3, ids, roles, rng).expect("valid sizes");
    for p in t.params_mut() {
        *p += rng.gen_range(-0.5..0.5);
    }
    t
}

fn table_target<'a>(
    table: EmbeddingTable,
    loss: impl Fn(&EmbeddingTable) -> (f64, Vec<f64>) + 'a,
) -> Target<'a> {
    let x = table.params().to_vec();
    let f = move |y: &[f64]| {
        let mut probe = table.clone();
        probe.params_mut().copy_from_slice(y);
        loss(&probe)
    };
    (x, Box::new(f))
}

/// Finite-difference checks of every dissimilarity, the energy, and both
/// batch losses, `points` accepted points each.
pub fn gradients(points: usize, seed: u64) -> Vec<SuiteReport> {
    use RegionKind::{Ball, Box as Cuboid};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let dissims: Vec<(&str, RegionKind, Dissim, bool)> = vec![
        ("depth ball p=1", Ball, Dissim::Depth(DepthConfig::linear(Ball, 1)), false),
        ("depth ball p=2", Ball, Dissim::Depth(DepthConfig::linear(Ball, 2)), false),
        ("depth ball hyperbolic", Ball, Dissim::Depth(DepthConfig::hyperbolic()), false),
        ("depth box p=1", Cuboid, Dissim::Depth(DepthConfig::linear(Cuboid, 1)), false),
        ("depth box p=2", Cuboid, Dissim::Depth(DepthConfig::linear(Cuboid, 2)), false),
        ("boundary ball", Ball, Dissim::Boundary, false),
        ("boundary box", Cuboid, Dissim::Boundary, false),
        ("volume box", Cuboid, Dissim::Volume, true),
        ("cone ball", Ball, Dissim::Cone, false),
    ];
    for (name, kind, sel, near) in dissims {
        out.push(gradient_suite(name, points, &mut rng, |rng| {
            let (a, b) = random_pair(rng, kind, near);
            dissim_target(sel, &a, &b)
        }));
    }

    for kind in [Ball, Cuboid] {
        for p in [1, 2] {
            let mut cfg = EnergyConfig::dag(kind, 0.5);
            cfg.depth = DepthConfig::linear(kind, p);
            out.push(gradient_suite(&format!("energy {kind} p={p}"), points, &mut rng, |rng| {
                let (a, b) = random_pair(rng, kind, false);
                energy_target(cfg, &a, &b)
            }));
        }
    }

    for kind in [Ball, Cuboid] {
        let mut cfg = EnergyConfig::dag(kind, 0.5);
        // a positive margin keeps the negative hinges active
        cfg.gamma2 = 0.5;
        out.push(gradient_suite(&format!("batch loss {kind}"), points, &mut rng, |rng| {
            let table = perturbed_table(rng, kind, 6, 0);
            let samples = vec![
                Sample { parent: 0, child: 1, negatives: vec![2, 3, 4] },
                Sample { parent: 1, child: 5, negatives: vec![0, 2] },
            ];
            table_target(table, move |t| {
                let o = batch_loss(&samples, t, &cfg).expect("valid batch");
                (o.loss, o.grad)
            })
        }));
    }

    for base in [BaseModel::Elbe, BaseModel::Elem] {
        for use_regd in [true, false] {
            let mut cfg = OntologyConfig { use_regd, ..OntologyConfig::new(base, 0.5) };
            cfg.energy.gamma2 = 0.5;
            let name = format!("ontology loss {base:?}{}", if use_regd { " regd" } else { "" }).to_lowercase();
            out.push(gradient_suite(&name, points, &mut rng, |rng| {
                let mut table = perturbed_table(rng, base.kind(), 6, 2);
                // overlapping conjunction operands (a floored meet is badly
                // conditioned for finite differences)
                let mut near = table.region(1);
                for c in near.center_mut() {
                    *c += rng.gen_range(-0.1..0.1);
                }
                table.set_region(2, &near).expect("same kind");
                let samples = vec![
                    OntologySample {
                        axiom: Axiom::Nf1 { sub: 0, sup: 1 },
                        negatives: vec![Axiom::Nf1 { sub: 2, sup: 1 }, Axiom::Nf1 { sub: 0, sup: 3 }],
                    },
                    OntologySample {
                        axiom: Axiom::Nf2 { left: 1, right: 2, sup: 3 },
                        negatives: vec![Axiom::Nf2 { left: 1, right: 2, sup: 4 }],
                    },
                    OntologySample {
                        axiom: Axiom::Nf3 { sub: 4, role: 0, filler: 5 },
                        negatives: vec![Axiom::Nf3 { sub: 4, role: 0, filler: 0 }],
                    },
                    OntologySample {
                        axiom: Axiom::Nf4 { role: 1, filler: 2, sup: 0 },
                        negatives: vec![Axiom::Nf4 { role: 1, filler: 3, sup: 0 }],
                    },
                ];
                table_target(table, move |t| {
                    let o = ontology_batch_loss(&samples, t, &cfg).expect("valid batch");
                    (o.loss, o.grad)
                })
            }));
        }
    }
    out
}

/// Every suite at full size.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    let mut out = vec![
        isometry(10_000, seed),
        monotonicity(10_000, seed),
        containment_sign(10_000, RegionKind::Ball, seed),
        containment_sign(10_000, RegionKind::Box, seed),
        tangency(1_000, seed),
        nesting(1_000, seed),
        depth_shrinkage(),
        depth_separation(),
    ];
    out.extend(gradients(1_000, seed));
    out
}
