//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use buls::cli::{cmd_check, trace, write_outputs, EXIT_OK};
use buls::clock::{LocalClock, UWB_TICK_PERIOD};
use buls::mitigation::{build_weighting, identify_oracle, mitigated_solve, MitigationConfig};
use buls::positioning::{jacobian_row, solve_wls, Dimension, InitialGuess, MeasurementSet, SolverConfig};
use buls::ranging::{altds_twr, run_exchange, ss_twr, RangeMeasurement, ReplyDelays, TwrMethod};
use buls::scenario::{golden_los, golden_nlos, run, RunOutput, ScenarioSpec};
use buls::tdma::{build_plan, check_collisions, tag_capacity, JitterModel};
use buls::tracking::{KfConfig, Tracker};
use buls::types::{Point3, PropagationCondition, SPEED_OF_LIGHT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const LOS: PropagationCondition = PropagationCondition::Los;
const NLOS: PropagationCondition = PropagationCondition::Nlos;
const MP: PropagationCondition = PropagationCondition::Mp;

fn verdict(name: &str, ok: bool, detail: &str, elapsed: Duration, limit: Option<Duration>) {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let limit_txt = limit.map_or(String::new(), |l| format!(", limit {:.0} s", l.as_secs_f64()));
    println!(
        "{} {name}: {detail} ({:.2} s{limit_txt})",
        if ok && in_time { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(ok, "{name}: {detail}");
    assert!(in_time, "{name}: took {elapsed:?}, limit {limit:?}");
}

fn vectors() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("vectors")
}

fn rows(file: &str) -> Vec<serde_json::Value> {
    let text = std::fs::read_to_string(vectors().join(file)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn has_row(file: &str, pred: impl Fn(&serde_json::Value) -> bool) -> bool {
    rows(file).iter().any(pred)
}

fn close(v: &serde_json::Value, key: &str, want: f64) -> bool {
    v[key].as_f64().is_some_and(|x| (x - want).abs() <= 1e-12 * want.abs().max(1e-9))
}

#[test]
fn equation_conformance() {
    let t0 = Instant::now();
    let ns = 1e-9;
    // The required hand-derived rows are present in the shipped vectors.
    let required = [
        has_row("ss_twr.json", |r| {
            close(r, "round_a", 400.0 * ns) && close(r, "reply_b", 200.0 * ns) && close(r, "expected_tof", 100.0 * ns)
        }),
        has_row("altds_twr.json", |r| {
            close(r, "round_a", 400.0 * ns)
                && close(r, "round_b", 380.0 * ns)
                && close(r, "reply_a", 180.0 * ns)
                && close(r, "reply_b", 200.0 * ns)
                && close(r, "expected_tof", (400.0 * 380.0 - 180.0 * 200.0) / 1160.0 * ns)
        }),
        has_row("sync.json", |r| close(r, "expected_delta_e", 5.0 * ns)),
        has_row("weighting.json", |r| {
            let w: Vec<f64> = r["expected_weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            w.len() == 4
                && (w[0] - 0.25 / 8.0).abs() < 1e-15
                && w[1..].iter().all(|x| (x - (0.25 + (0.25 - 0.03125) / 3.0)).abs() < 1e-15)
                && r["expected_trace"].as_f64() == Some(1.0)
                && r["tolerance"].as_f64().is_some_and(|t| t <= 1e-12)
        }),
    ];
    let mut all_pass = required.iter().all(|&b| b);
    let mut summary = Vec::new();
    for (check, file) in [
        ("ss-twr", "ss_twr.json"),
        ("altds-twr", "altds_twr.json"),
        ("sync", "sync.json"),
        ("weighting", "weighting.json"),
        ("solver", "solver.json"),
    ] {
        let mut out = Vec::new();
        let code = cmd_check(check, &vectors().join(file), &mut out, &mut Vec::new());
        all_pass &= code == EXIT_OK;
        summary.push(format!("{check} exit {code}"));
    }
    verdict(
        "equation conformance",
        all_pass,
        &format!("required rows present {required:?}; {}", summary.join(", ")),
        t0.elapsed(),
        Some(Duration::from_secs(1)),
    );
}

#[test]
fn drift_immunity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD21F7);
    let delays = ReplyDelays { a: 1e-3, b: 1e-3 };
    let (mut worst_ds, mut worst_ss) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let a = LocalClock::new(rng.random_range(0.0..1e-3), rng.random_range(-20.0..=20.0), UWB_TICK_PERIOD).unwrap();
        let b = LocalClock::new(rng.random_range(0.0..1e-3), rng.random_range(-20.0..=20.0), UWB_TICK_PERIOD).unwrap();
        let d = rng.random_range(1.0..60.0);
        let ex = run_exchange(&a, &b, d / SPEED_OF_LIGHT, delays, rng.random_range(0.0..10.0), true).unwrap();
        worst_ds = worst_ds.max((altds_twr(&ex).unwrap().tof * SPEED_OF_LIGHT - d).abs());
        worst_ss = worst_ss.max((ss_twr(&ex).unwrap().tof * SPEED_OF_LIGHT - d).abs());
    }
    verdict(
        "drift immunity",
        worst_ds <= 0.01 && worst_ss >= 1.0,
        &format!("AltDS worst error {worst_ds:.4} m (<= 0.01), SS worst error {worst_ss:.3} m (>= 1)"),
        t0.elapsed(),
        Some(Duration::from_secs(5)),
    );
}

/// Random anchors with the tag strictly inside their convex hull: a simplex
/// around the tag from barycentric weights, plus extra anchors anywhere in
/// the box.
fn random_instance(rng: &mut ChaCha8Rng, dim: Dimension) -> (Vec<Point3>, Point3) {
    let axes = dim.axes();
    let pt = |rng: &mut ChaCha8Rng| {
        let z = if axes == 3 { rng.random_range(0.0..20.0) } else { 0.0 };
        Point3::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), z)
    };
    loop {
        let tag = pt(rng);
        let raw: Vec<f64> = (0..=axes).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let lambda: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut anchors: Vec<Point3> = (0..axes).map(|_| pt(rng)).collect();
        let partial = anchors.iter().zip(&lambda).fold(Point3::ORIGIN, |s, (a, l)| s + *a * *l);
        anchors.push((tag - partial) * (1.0 / lambda[axes]));
        let extra = rng.random_range(0..=8 - anchors.len());
        anchors.extend((0..extra).map(|_| pt(rng)));

        // Non-degenerate: bounded layout, well-conditioned spread, no anchor on the tag.
        let n = anchors.len();
        let c = anchors.iter().fold(Point3::ORIGIN, |s, a| s + *a) * (1.0 / n as f64);
        let m = nalgebra::DMatrix::from_fn(n, axes, |i, j| anchors[i].component(j) - c.component(j));
        let sv = m.singular_values();
        let bounded = anchors.iter().all(|a| a.as_array().iter().all(|x| (-20.0..=40.0).contains(x)));
        if bounded && sv.min() > 0.2 * sv.max() && anchors.iter().all(|a| (*a - tag).norm() > 1.0) {
            return (anchors, tag);
        }
    }
}

#[test]
fn solver_exactness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x501E);
    let (mut worst_err, mut worst_iter, mut worst_jac, mut failures) = (0.0f64, 0usize, 0.0f64, 0usize);
    for k in 0..1000 {
        let dim = if k % 2 == 0 { Dimension::Two } else { Dimension::Three };
        let (anchors, tag) = random_instance(&mut rng, dim);
        let ranges: Vec<f64> = anchors.iter().map(|a| (*a - tag).norm()).collect();
        let ms = MeasurementSet::from_ranges(&anchors, &ranges, 1.0);
        let cfg = SolverConfig { dimension: dim, initial_guess: InitialGuess::Centroid, ..SolverConfig::default() };
        match solve_wls(&ms, &cfg) {
            Ok(res) => {
                let err = (res.position - tag).norm();
                worst_err = worst_err.max(err);
                worst_iter = worst_iter.max(res.iterations_used);
                if !res.converged || err > 1e-6 || res.iterations_used > 20 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
        // Central differences of the range function at a random guess.
        let guess = tag + Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0);
        let h = 1e-6;
        for a in &anchors {
            let row = jacobian_row(a, &guess).unwrap();
            for (j, step) in
                [Point3::new(h, 0.0, 0.0), Point3::new(0.0, h, 0.0), Point3::new(0.0, 0.0, h)].iter().enumerate()
            {
                let fd = ((guess + *step - *a).norm() - (guess - *step - *a).norm()) / (2.0 * h);
                let rel = (fd - row.coeffs[j]).abs() / row.coeffs[j].abs().max(1e-3);
                worst_jac = worst_jac.max(rel);
            }
        }
    }
    verdict(
        "solver exactness",
        failures == 0 && worst_jac <= 1e-5,
        &format!(
            "1000 instances, {failures} failures, worst error {worst_err:.2e} m, worst iterations {worst_iter}, worst Jacobian rel. error {worst_jac:.2e}"
        ),
        t0.elapsed(),
        Some(Duration::from_secs(10)),
    );
}

#[test]
fn weighting_laws() {
    let t0 = Instant::now();
    let cfg = MitigationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut cases, mut violations, mut worst_trace) = (0, Vec::new(), 0.0f64);
    for r in 3..=16usize {
        for nl in 0..=r {
            for mp in 0..=r - nl {
                let los = r - nl - mp;
                let mut labels: Vec<_> = [(LOS, los), (NLOS, nl), (MP, mp)]
                    .iter()
                    .flat_map(|&(c, n)| std::iter::repeat_n(Some(c), n))
                    .collect();
                for i in (1..labels.len()).rev() {
                    labels.swap(i, rng.random_range(0..=i));
                }
                let w = build_weighting(&labels, &cfg);
                let classes = [los, nl, mp].iter().filter(|&&n| n > 0).count();
                let weight_of = |c| labels.iter().zip(&w.diag).find(|(l, _)| **l == Some(c)).map(|(_, w)| *w);
                cases += 1;
                if classes >= 2 {
                    let dev = (w.trace() - 1.0).abs();
                    worst_trace = worst_trace.max(dev);
                    if dev > 1e-12 {
                        violations.push(format!("trace r={r} nl={nl} mp={mp}"));
                    }
                    if let (Some(l), Some(m), Some(n)) = (weight_of(LOS), weight_of(MP), weight_of(NLOS)) {
                        if !(l > m && m > n) {
                            violations.push(format!("ordering r={r} nl={nl} mp={mp}"));
                        }
                    }
                } else if los == r {
                    if !w.is_identity() {
                        violations.push(format!("identity r={r}"));
                    }
                } else if w.diag.iter().any(|x| *x != w.diag[0]) {
                    violations.push(format!("uniform r={r} nl={nl} mp={mp}"));
                }
            }
        }
    }
    verdict(
        "weighting-matrix laws",
        violations.is_empty(),
        &format!(
            "{cases} label vectors, worst mixed-class trace deviation {worst_trace:.1e}, violations {violations:?}"
        ),
        t0.elapsed(),
        Some(Duration::from_secs(1)),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn mitigation_efficacy() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x3171);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let solver = SolverConfig::default();
    let (mut raw_err, mut mit_err) = (Vec::new(), Vec::new());
    for _ in 0..500 {
        let anchors: Vec<Point3> = (0..6)
            .map(|i| {
                let ang = i as f64 * std::f64::consts::TAU / 6.0 + rng.random_range(-0.3..0.3);
                let rad = rng.random_range(8.0..14.0);
                Point3::xy(rad * ang.cos(), rad * ang.sin())
            })
            .collect();
        let tag = Point3::xy(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let bad = rng.random_range(0..6);
        let measurements: Vec<RangeMeasurement> = anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let d_true = (*a - tag).norm();
                let cond = if i == bad { NLOS } else { LOS };
                let bias = if i == bad { 0.6 } else { 0.0 };
                RangeMeasurement {
                    tag_id: 1,
                    anchor_id: i as u32,
                    epoch: 0,
                    d_est: d_true + bias + noise.sample(&mut rng),
                    d_true,
                    condition_true: cond,
                    condition_detected: None,
                    method: TwrMethod::AltDoubleSided,
                    valid: true,
                }
            })
            .collect();
        let ranges: Vec<f64> = measurements.iter().map(|m| m.d_est).collect();
        let ms = MeasurementSet::from_ranges(&anchors, &ranges, 0.05);
        raw_err.push((solve_wls(&ms, &solver).unwrap().position - tag).norm());
        let (res, _) =
            mitigated_solve(&ms, &identify_oracle(&measurements), &MitigationConfig::default(), &solver).unwrap();
        mit_err.push((res.position - tag).norm());
    }
    let (raw, mit) = (median(raw_err), median(mit_err));
    verdict(
        "mitigation efficacy",
        mit <= 0.7 * raw,
        &format!("median error mitigated {mit:.4} m vs unweighted {raw:.4} m, ratio {:.3} (<= 0.7)", mit / raw),
        t0.elapsed(),
        Some(Duration::from_secs(10)),
    );
}

/// Root-mean-square 2D distance between two sequences of positions.
fn rms_between(a: &[Point3], b: &[Point3]) -> f64 {
    (a.iter().zip(b).map(|(p, q)| (p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

struct Tracks {
    truth: Vec<Point3>,
    minimum: Vec<Point3>,
    complementary: Vec<Point3>,
}

fn tracks(out: &RunOutput) -> Tracks {
    Tracks {
        truth: out.estimates.iter().map(|e| e.truth).collect(),
        minimum: out.estimates.iter().map(|e| e.minimum.as_ref().unwrap().position).collect(),
        complementary: out.estimates.iter().map(|e| e.complementary.as_ref().unwrap().position).collect(),
    }
}

fn p95(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let rank = 0.95 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    v[lo] + (v[(lo + 1).min(v.len() - 1)] - v[lo]) * (rank - lo as f64)
}

fn errors(est: &[Point3], truth: &[Point3]) -> Vec<f64> {
    est.iter().zip(truth).map(|(p, q)| p.distance_2d(q)).collect()
}

#[test]
fn los_replication() {
    let t0 = Instant::now();
    let out = run(&golden_los()).unwrap();
    let t = tracks(&out);
    let between = rms_between(&t.minimum, &t.complementary);
    let (rmin, rcomp) = (rms_between(&t.minimum, &t.truth), rms_between(&t.complementary, &t.truth));
    let ratio = rcomp / rmin;
    // Frozen from the first verified run of the golden seed.
    let frozen = (rmin - 0.054358783526).abs() < 1e-6 && (rcomp - 0.045283803027).abs() < 1e-6;
    verdict(
        "LOS court lap",
        between <= 0.15 && rmin <= 0.20 && rcomp <= 0.20 && (0.8..=1.2).contains(&ratio) && frozen,
        &format!(
            "pipelines differ by {between:.4} m RMSE (<= 0.15); RMSE minimum {rmin:.4} m, complementary {rcomp:.4} m (<= 0.20); ratio {ratio:.3} in [0.8, 1.2]; golden values match {frozen}"
        ),
        t0.elapsed(),
        Some(Duration::from_secs(30)),
    );
}

#[test]
fn nlos_replication() {
    let t0 = Instant::now();
    let los = tracks(&run(&golden_los()).unwrap());
    let nlos_out = run(&golden_nlos()).unwrap();
    let nlos = tracks(&nlos_out);
    let (rmin, rcomp) = (rms_between(&nlos.minimum, &nlos.truth), rms_between(&nlos.complementary, &nlos.truth));
    let p95_nlos = p95(errors(&nlos.minimum, &nlos.truth));
    let p95_los = p95(errors(&los.minimum, &los.truth));
    let shadowed = nlos_out.estimates.iter().flat_map(|e| &e.ranges).filter(|m| m.condition_true == NLOS).count();
    // Frozen from the first verified run of the golden seed.
    let golden =
        [(rmin, 0.454308486007), (rcomp, 0.064027126003), (p95_nlos, 0.714057263526), (p95_los, 0.091802796852)];
    let frozen = golden.iter().all(|(got, want)| (got - want).abs() < 1e-6);
    verdict(
        "NLOS court lap",
        rcomp <= 0.5 * rmin && p95_nlos >= 3.0 * p95_los && frozen,
        &format!(
            "RMSE complementary {rcomp:.4} m vs minimum {rmin:.4} m, ratio {:.3} (<= 0.5); minimum p95 {p95_nlos:.4} m vs LOS {p95_los:.4} m, factor {:.2} (>= 3); {shadowed} shadowed ranges; golden values match {frozen}",
            rcomp / rmin,
            p95_nlos / p95_los
        ),
        t0.elapsed(),
        Some(Duration::from_secs(30)),
    );
}

#[test]
fn tdma_discipline() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut collisions = 0;
    for (active, guard) in [(2e-3, 0.5e-3), (5e-3, 0.5e-3), (1e-3, 0.2e-3)] {
        let plan = build_plan(&[1, 2, 3, 4, 5, 6, 7, 8], active, guard, 100e-3).unwrap();
        collisions += check_collisions(&plan, JitterModel { max_jitter: guard / 2.0 }, 10_000, &mut rng).collisions;
    }
    // Integer microsecond enumeration as the capacity oracle.
    let mut mismatches = Vec::new();
    for a_us in (1..=10).map(|i| i * 500u64) {
        for g_us in (0..10).map(|i| i * 100u64) {
            for f_us in (1..=10).map(|i| i * 5_000u64) {
                let mut n = 0u64;
                while (n + 1) * (a_us + g_us) <= f_us {
                    n += 1;
                }
                let got = tag_capacity(a_us as f64 * 1e-6, g_us as f64 * 1e-6, f_us as f64 * 1e-6).unwrap() as u64;
                if got != n {
                    mismatches.push((a_us, g_us, f_us, got, n));
                }
            }
        }
    }
    verdict(
        "TDMA discipline",
        collisions == 0 && mismatches.is_empty(),
        &format!(
            "3 x 10^4 jittered frames, {collisions} collisions; capacity grid 1000 points, mismatches {mismatches:?}"
        ),
        t0.elapsed(),
        Some(Duration::from_secs(5)),
    );
}

#[test]
fn kf_sanity() {
    let t0 = Instant::now();
    let (mut worst_asym, mut min_eig, mut steps) = (0.0f64, f64::INFINITY, 0usize);
    for spec in [golden_los(), golden_nlos()] {
        for e in run(&spec).unwrap().estimates {
            if let Some(s) = e.complementary.and_then(|c| c.kf) {
                worst_asym = worst_asym.max((&s.p - s.p.transpose()).abs().max());
                min_eig = min_eig.min(s.p.clone().symmetric_eigenvalues().min());
                steps += 1;
            }
        }
    }
    let cfg = KfConfig { r_meas: Some(0.01), ..KfConfig::default() };
    let target = Point3::xy(7.5, -3.25);
    let mut tracker = Tracker::new(cfg);
    tracker.advance(Some(&Point3::xy(0.0, 0.0))).unwrap();
    let mut converged_at = None;
    for k in 1..=200 {
        let s = tracker.advance(Some(&target)).unwrap().unwrap();
        if (s.position(&cfg) - target).norm() <= 1e-6 {
            converged_at.get_or_insert(k);
        } else {
            converged_at = None;
        }
    }
    verdict(
        "KF sanity",
        worst_asym == 0.0 && min_eig >= -1e-9 && converged_at.is_some(),
        &format!(
            "{steps} filter states, max asymmetry {worst_asym:e}, min eigenvalue {min_eig:.3e}; static target within 1e-6 m from epoch {converged_at:?} (<= 200)"
        ),
        t0.elapsed(),
        None,
    );
}

fn trace_bytes(spec: &ScenarioSpec) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let out = run(spec).unwrap();
    write_outputs(dir.path(), spec, &out).unwrap();
    std::fs::read(dir.path().join("trace.csv")).unwrap()
}

#[test]
fn determinism() {
    let t0 = Instant::now();
    let mut same = true;
    let mut sizes = Vec::new();
    for spec in [golden_los(), golden_nlos()] {
        let (a, b) = (trace_bytes(&spec), trace_bytes(&spec));
        same &= a == b && !a.is_empty();
        sizes.push(a.len());
        let header = String::from_utf8_lossy(&a).lines().next().unwrap_or_default().to_string();
        same &= header == trace::header(&spec.anchors).join(",");
    }
    verdict(
        "determinism",
        same,
        &format!("golden traces byte-identical across runs ({sizes:?} bytes)"),
        t0.elapsed(),
        None,
    );
}
