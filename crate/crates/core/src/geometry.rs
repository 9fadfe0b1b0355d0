//! Why a minimal DDRep gives a larger DIRep, in three dimensions.
//!
//! Source and target inputs are vectors `S` and `T` of equal length. A
//! decomposition writes each as `DI + DD` with a shared DIRep `DI`. The
//! midpoint `V = (S + T) / 2` minimises `|S - DI| + |T - DI|`. Requiring
//! `DI` orthogonal to both `S - DI` and `T - DI` (the DSN constraint) admits
//! a circle of solutions with diameter `OV`, perpendicular to the S-T plane,
//! and every point `D` on it has `|OD| = |OV| sin(theta)` where `theta` is
//! the angle `DVO`. So the DIRep on the circle is never longer than `V`, and
//! the DDRep size over the circle is smallest at `theta = pi/2`, i.e. at `V`.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryInstance {
    s: Vec3,
    t: Vec3,
    tolerance: f64,
}

impl GeometryInstance {
    pub fn new(s: Vec3, t: Vec3) -> Result<Self> {
        Self::with_tolerance(s, t, DEFAULT_TOLERANCE)
    }

    /// Rejects non-finite input, unequal lengths (relative to `tolerance`)
    /// and collinear pairs, for which the circle is undefined.
    pub fn with_tolerance(s: Vec3, t: Vec3, tolerance: f64) -> Result<Self> {
        if s.iter().chain(&t).any(|v| !v.is_finite()) || !(tolerance > 0.0) {
            return Err(Error::Invalid("geometry instance needs finite vectors and a positive tolerance".into()));
        }
        let (ns, nt) = (norm(s), norm(t));
        if (ns - nt).abs() > tolerance * ns.max(nt) {
            return Err(Error::Invalid(format!(
                "source and target lengths differ: |S| = {ns}, |T| = {nt}"
            )));
        }
        if norm(cross(s, t)) <= tolerance * ns * nt {
            return Err(Error::Invalid(format!("S = {s:?} and T = {t:?} are collinear")));
        }
        Ok(GeometryInstance { s, t, tolerance })
    }

    pub fn s(&self) -> Vec3 {
        self.s
    }

    pub fn t(&self) -> Vec3 {
        self.t
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// The midpoint `V`.
    pub fn v(&self) -> Vec3 {
        scale(add(self.s, self.t), 0.5)
    }

    /// Unit normal of the S-T plane.
    pub fn normal(&self) -> Vec3 {
        let n = cross(self.s, self.t);
        scale(n, 1.0 / norm(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub di: Vec3,
    pub dd_s: Vec3,
    pub dd_t: Vec3,
    /// `S = T`: nothing is domain dependent.
    pub degenerate: bool,
}

/// `DI = (S + T) / 2`, `DD_S = S - DI`, `DD_T = T - DI`.
pub fn vaegan_decompose(s: Vec3, t: Vec3) -> Decomposition {
    let di = scale(add(s, t), 0.5);
    Decomposition {
        di,
        dd_s: sub(s, di),
        dd_t: sub(t, di),
        degenerate: s == t,
    }
}

/// `D = V sin^2(theta) + n |V| sin(theta) cos(theta)` for `theta` in `(0, pi/2]`.
pub fn circle_point(inst: &GeometryInstance, theta: f64) -> Result<Vec3> {
    if !(theta > 0.0 && theta <= FRAC_PI_2) {
        return Err(Error::Invalid(format!("theta must lie in (0, pi/2], got {theta}")));
    }
    let v = inst.v();
    let (sin, cos) = theta.sin_cos();
    Ok(add(scale(v, sin * sin), scale(inst.normal(), norm(v) * sin * cos)))
}

/// `(|OD . DS| / (|OD| |DS|), |OD . DT| / (|OD| |DT|))`.
pub fn orthogonality_residual(inst: &GeometryInstance, d: Vec3) -> Result<(f64, f64)> {
    let od = norm(d);
    if !(od > 0.0) || d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("residual undefined for D = {d:?}")));
    }
    let rel = |p: Vec3| {
        let dp = sub(p, d);
        let len = norm(dp);
        if len == 0.0 {
            0.0
        } else {
            dot(d, dp).abs() / (od * len)
        }
    };
    Ok((rel(inst.s), rel(inst.t)))
}

/// `|S - DI| + |T - DI|`.
pub fn ddrep_size(inst: &GeometryInstance, di: Vec3) -> f64 {
    norm(sub(inst.s, di)) + norm(sub(inst.t, di))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub od: f64,
    pub ddrep_size: f64,
    pub residual_s: f64,
    pub residual_t: f64,
}

/// `n_theta` evenly spaced angles `pi/2 * k / n_theta`, `k = 1..=n_theta`.
pub fn sweep(inst: &GeometryInstance, n_theta: usize) -> Result<Vec<SweepRow>> {
    if n_theta < 2 {
        return Err(Error::Invalid(format!("need at least two angles, got {n_theta}")));
    }
    (1..=n_theta)
        .map(|k| {
            let theta = FRAC_PI_2 * k as f64 / n_theta as f64;
            let d = circle_point(inst, theta)?;
            let (residual_s, residual_t) = orthogonality_residual(inst, d)?;
            Ok(SweepRow {
                theta,
                od: norm(d),
                ddrep_size: ddrep_size(inst, d),
                residual_s,
                residual_t,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    pub rows: Vec<SweepRow>,
    pub max_residual: f64,
    /// Largest `| |OD|/|V| - sin(theta) |`.
    pub max_sin_error: f64,
    pub argmin_theta: f64,
}

impl GeometryReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,od,ddrep_size,residual_s,residual_t\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.theta, r.od, r.ddrep_size, r.residual_s, r.residual_t);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Checks on `n_theta` circle points that (a) every point satisfies both
/// orthogonality conditions, (b) the DDRep size is smallest at
/// `theta = pi/2`, and (c) `|OD| = |V| sin(theta)`. Fails with every
/// violation and the angle at which it happened.
pub fn verify_claims(inst: &GeometryInstance, n_theta: usize) -> Result<GeometryReport> {
    let rows = sweep(inst, n_theta)?;
    let tol = inst.tolerance;
    let v = norm(inst.v());
    let mut failures = Vec::new();
    let mut max_residual = 0.0f64;
    let mut max_sin_error = 0.0f64;
    for r in &rows {
        let res = r.residual_s.max(r.residual_t);
        max_residual = max_residual.max(res);
        if !(res < tol) {
            failures.push(format!("theta = {}: orthogonality residual {res:e}", r.theta));
        }
        let err = (r.od / v - r.theta.sin()).abs();
        max_sin_error = max_sin_error.max(err);
        if !(err < tol) {
            failures.push(format!("theta = {}: |OD|/|V| off sin(theta) by {err:e}", r.theta));
        }
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.ddrep_size.total_cmp(&b.ddrep_size))
        .expect("at least two rows");
    if best.theta != FRAC_PI_2 {
        failures.push(format!(
            "DDRep size is smallest at theta = {} ({}), not pi/2 ({})",
            best.theta,
            best.ddrep_size,
            rows.last().expect("rows").ddrep_size
        ));
    }
    if !failures.is_empty() {
        return Err(Error::Invalid(format!(
            "geometry claims fail for S = {:?}, T = {:?}:\n  {}",
            inst.s,
            inst.t,
            failures.join("\n  ")
        )));
    }
    Ok(GeometryReport {
        argmin_theta: best.theta,
        rows,
        max_residual,
        max_sin_error,
    })
}

/// A random pair of equal-length, non-collinear vectors.
pub fn random_instance<R: rand::Rng>(rng: &mut R) -> GeometryInstance {
    loop {
        let mut draw = || [0; 3].map(|_: i32| rng.random_range(-1.0..1.0));
        let s = draw();
        let t = draw();
        let (ns, nt) = (norm(s), norm(t));
        if ns < 1e-3 || nt < 1e-3 {
            continue;
        }
        let t = scale(t, ns / nt);
        if let Ok(inst) = GeometryInstance::new(s, t) {
            if norm(cross(s, t)) > 1e-3 * ns * ns {
                return inst;
            }
        }
    }
}
