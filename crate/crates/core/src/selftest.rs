//! Randomized equivalence check between the active-set projection and the
//! enumeration oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::projection::oracle::enumerate_active_sets_oracle;
use crate::projection::{project_onto_polyhedron, Polyhedron, DEFAULT_TOLERANCE};
use crate::rng::{self, NormalSampler, Stream, StreamRng};

pub const AGREEMENT_TOLERANCE: f64 = 1e-8;

/// A random projection problem with a known feasible point.
#[derive(Debug, Clone)]
pub struct QpInstance {
    pub point: DVector<f64>,
    pub poly: Polyhedron,
    pub feasible_point: DVector<f64>,
}

/// Largest |cos| allowed between two rows; near-antiparallel pairs make
/// sliver-shaped regions that no fixed tolerance resolves.
pub const MAX_ROW_COSINE: f64 = 0.999;

/// Draws `n ≤ 6`, `k ≤ 6`, `q ≤ 2` (and `q < n`); feasible by construction,
/// with roughly a third of the rows tight at the planted point.
pub fn random_instance(rng: &mut StreamRng) -> QpInstance {
    loop {
        let inst = draw_instance(rng);
        if well_separated(&inst.poly) {
            return inst;
        }
    }
}

fn well_separated(poly: &Polyhedron) -> bool {
    let rows: Vec<DVector<f64>> = poly
        .normals
        .column_iter()
        .chain(poly.eq_normals.column_iter())
        .map(|c| c.into_owned())
        .collect();
    rows.iter().enumerate().all(|(i, a)| {
        rows[i + 1..]
            .iter()
            .all(|b| a.dot(b).abs() <= MAX_ROW_COSINE * a.norm() * b.norm())
    })
}

fn draw_instance(rng: &mut StreamRng) -> QpInstance {
    let mut normal = NormalSampler::default();
    let n = 1 + (rng::uniform(rng) * 6.0) as usize;
    let k = (rng::uniform(rng) * 7.0) as usize;
    let q = ((rng::uniform(rng) * 3.0) as usize).min(n - 1);
    let planted = DVector::from_fn(n, |_, _| normal.sample(rng));
    let normals = DMatrix::from_fn(n, k, |_, _| normal.sample(rng));
    let offsets = DVector::from_fn(k, |i, _| {
        let slack = if rng::uniform(rng) < 0.3 {
            0.0
        } else {
            rng::uniform(rng)
        };
        normals.column(i).dot(&planted) - slack
    });
    let eq_normals = DMatrix::from_fn(n, q, |_, _| normal.sample(rng));
    let eq_offsets = eq_normals.tr_mul(&planted);
    let point = DVector::from_fn(n, |_, _| 2.0 * normal.sample(rng));
    let poly = Polyhedron::with_equalities(normals, offsets, eq_normals, eq_offsets)
        .expect("consistent dimensions");
    QpInstance {
        point,
        poly,
        feasible_point: planted,
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub instances: usize,
    pub mismatches: Vec<usize>,
    pub max_deviation: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub fn run_selftest(instances: usize, seed: u64) -> Result<SelftestReport> {
    let mut rng = rng::stream(seed, Stream::Selftest);
    let mut report = SelftestReport {
        instances,
        ..Default::default()
    };
    for index in 0..instances {
        let inst = random_instance(&mut rng);
        let solved = project_onto_polyhedron(&inst.point, &inst.poly, DEFAULT_TOLERANCE);
        let exact = enumerate_active_sets_oracle(&inst.point, &inst.poly);
        match (solved, exact) {
            (Ok(s), Ok(e)) => {
                let dev = (s.v - e).amax();
                report.max_deviation = report.max_deviation.max(dev);
                if !(dev <= AGREEMENT_TOLERANCE) {
                    report.mismatches.push(index);
                }
            }
            _ => report.mismatches.push(index),
        }
    }
    Ok(report)
}
