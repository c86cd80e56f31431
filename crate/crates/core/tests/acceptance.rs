//! Acceptance suite: one line per criterion, non-zero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{Matrix3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lungsync::cpo_protocol::{
    cpo_len, decode_cpo, decode_message, encode_cpo, from_hex, ControlPacketObject, FLAG_PARAM_CHANGE,
};
use lungsync::harness::{bench_deform, simulate, write_report, BenchSpec, FRAME_BUDGET_MS};
use lungsync::lung_model::{
    build_force_coeffs, enclosed_volume, estimate_rigid_pose, make_test_lung, pv_volume, signed_volume_liters,
    Deformer, ElasticityKernel, LungShape, PvParams, Vec3,
};
use lungsync::par::Exec;
use lungsync::sphere_harmonics::{
    analyze, coeff_count, eval_all, fibonacci_directions, synthesize, ShCoefficients,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn volume_consistency() -> Outcome {
    let s = common::scenario(2, 5, 0.5, 0.2);
    let start = Instant::now();
    let out = simulate(&s, Exec::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mean_abs = out.drift.participant(1).ok_or("no client row")?.mean_drift_pct / 100.0;
    ensure(
        out.drift.cycles == 5 && mean_abs <= 1e-3 && secs < 10.0,
        format!("{} cycles, mean |dV| = {mean_abs:.2e} (<= 1e-3), runtime {secs:.2} s (< 10 s)", out.drift.cycles),
    )
}

fn drift_per_cycle() -> Outcome {
    let synced = simulate(&common::scenario(3, 10, 0.5, 0.2), Exec::default()).map_err(|e| e.to_string())?;
    let mut unsynced = common::scenario(3, 10, 0.5, 0.2);
    unsynced.sync = false;
    unsynced.clock_skew_ms = vec![20.0, 20.0];
    let unsynced = simulate(&unsynced, Exec::default()).map_err(|e| e.to_string())?;
    let with: Vec<f64> = synced.drift.participants.iter().map(|p| p.mean_drift_pct).collect();
    let without: Vec<f64> = unsynced.drift.participants.iter().map(|p| p.mean_drift_pct).collect();
    ensure(
        with.len() == 2 && with.iter().all(|d| *d <= 0.05) && without.iter().all(|d| *d > 0.1),
        format!("synced drift {with:.4?} % (<= 0.05), unsynced with 20 ms skew {without:.3?} % (> 0.1)"),
    )
}

fn packet_economy() -> Outcome {
    let cycles = 10;
    let out = simulate(&common::scenario(3, cycles, 0.5, 0.2), Exec::default()).map_err(|e| e.to_string())?;
    let counts: Vec<u64> = out.cpos_received.values().copied().collect();
    ensure(
        counts.len() == 2 && counts.iter().all(|c| *c == cycles as u64 + 1),
        format!("CPOs received per client {counts:?}, expected {}", cycles + 1),
    )
}

fn deformation_performance() -> Outcome {
    let r = bench_deform(&BenchSpec::new(4, 8, 200)).map_err(|e| e.to_string())?;
    ensure(
        r.nodes == 2562 && r.within_budget,
        format!(
            "{} nodes, L=8, {}: mean {:.3} ms, p95 {:.3} ms (budget {:.1} ms)",
            r.nodes, r.strategy, r.mean_ms, r.p95_ms, FRAME_BUDGET_MS
        ),
    )
}

fn volume_fidelity() -> Outcome {
    let mesh = make_test_lung(3, LungShape::ADULT).map_err(|e| e.to_string())?;
    let band = 8;
    let force = build_force_coeffs(&mesh, Vec3::new(0.0, 0.0, -1.0), band).map_err(|e| e.to_string())?;
    let deformer = Deformer::new(mesh, band, Exec::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut cp: Vec<f64> = (0..rng.random_range(2..7)).map(|_| rng.random::<f64>()).collect();
        cp.sort_by(f64::total_cmp);
        let params = PvParams {
            frc: rng.random_range(1.0..4.0),
            tv: rng.random_range(0.2..1.5),
            pr: rng.random_range(5.0..30.0),
            rate: rng.random_range(6.0..30.0),
            cp,
        };
        let p = rng.random_range(0.0..=params.pr);
        let kernel = ElasticityKernel::decaying(band, rng.random_range(0.0..0.01));
        let deformed = deformer.deform(&force, &kernel, p, &params).map_err(|e| e.to_string())?;
        let got = enclosed_volume(&deformed).map_err(|e| e.to_string())?;
        let want = pv_volume(p, &params).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs() / want);
    }
    ensure(worst <= 1e-3, format!("100 draws, worst relative volume error {worst:.2e} (<= 1e-3)"))
}

fn sh_suite() -> Outcome {
    // Orthonormality by exact quadrature.
    let quad = common::sphere_quadrature(16);
    let n = coeff_count(6);
    let mut gram = vec![0.0; n * n];
    let mut y = vec![0.0; n];
    for (dir, w) in &quad {
        eval_all(6, *dir, &mut y);
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] += w * y[i] * y[j];
            }
        }
    }
    let ortho = (0..n * n).map(|k| (gram[k] - if k / n == k % n { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut round_trip = 0.0f64;
    let mut parseval = 0.0f64;
    let quad = common::sphere_quadrature(30);
    for band in 0..=12 {
        let coeffs: Vec<f64> = (0..coeff_count(band)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = ShCoefficients::new(band, coeffs).map_err(|e| e.to_string())?;
        let dirs = fibonacci_directions(4 * coeff_count(band) + 50);
        let samples: Vec<_> = dirs.iter().map(|d| (*d, synthesize(&c, *d))).collect();
        let back = analyze(&samples, band).map_err(|e| e.to_string())?;
        let err = c.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        round_trip = round_trip.max(err);
        let energy: f64 = quad.iter().map(|(d, w)| w * synthesize(&c, *d).powi(2)).sum();
        let coeff_energy: f64 = c.as_slice().iter().map(|x| x * x).sum();
        parseval = parseval.max((energy - coeff_energy).abs() / coeff_energy);
    }
    ensure(
        ortho <= 1e-8 && round_trip <= 1e-9 && parseval <= 1e-6,
        format!("orthonormality {ortho:.1e} (<= 1e-8), round trip {round_trip:.1e} (<= 1e-9), Parseval {parseval:.1e} (<= 1e-6)"),
    )
}

fn geometry_oracles() -> Outcome {
    let sphere = make_test_lung(4, LungShape::UNIT_SPHERE).map_err(|e| e.to_string())?;
    let liters = enclosed_volume(&sphere).map_err(|e| e.to_string())?;
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
    let sphere_err = (liters - exact).abs() / exact;
    let tet = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
    let tris = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    let tet_liters = signed_volume_liters(&tet, &tris).map_err(|e| e.to_string())?;
    let tet_err = (tet_liters / 1000.0 - 1.0 / 6.0).abs();
    ensure(
        sphere_err <= 5e-3 && tet_err <= 1e-12,
        format!("icosphere(4) volume error {:.3} % (<= 0.5 %), tetrahedron error {tet_err:.1e} m^3", sphere_err * 100.0),
    )
}

fn pose_estimation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let r: Matrix3<f64> = q.to_rotation_matrix().into_inner();
        let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let pairs: Vec<(Vec3, Vec3)> = (0..rng.random_range(3..40))
            .map(|_| {
                let p = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                (p, r * p + t)
            })
            .collect();
        let pose = estimate_rigid_pose(&pairs).map_err(|e| e.to_string())?;
        worst = worst.max((pose.rotation() - r).amax()).max((pose.translation() - t).amax());
    }
    let line: Vec<_> = (0..10).map(|i| (Vec3::new(i as f64, 2.0 * i as f64, 0.5), Vec3::new(i as f64, 0.0, 0.0))).collect();
    let rejected = estimate_rigid_pose(&line).is_err() && estimate_rigid_pose(&line[..2]).is_err();
    ensure(
        worst <= 1e-9 && rejected,
        format!("1000 trials, worst error {worst:.1e} (<= 1e-9), collinear input rejected: {rejected}"),
    )
}

fn random_cpo(rng: &mut ChaCha8Rng) -> ControlPacketObject {
    let v = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(-1e3..1e3)).collect::<Vec<f64>>();
    let (n_cp, n_f, n_t) = (rng.random_range(1..8), rng.random_range(0..100), rng.random_range(0..100));
    ControlPacketObject {
        sequence: rng.random(),
        cycle_start_ns: rng.random(),
        flags: if rng.random() { FLAG_PARAM_CHANGE } else { 0 },
        frc: rng.random_range(0.1..6.0),
        tv: rng.random_range(0.1..3.0),
        pr: rng.random_range(1.0..50.0),
        rate: rng.random_range(1.0..60.0),
        cp: v(n_cp, rng),
        f: v(n_f, rng),
        t: v(n_t, rng),
    }
}

fn protocol() -> Outcome {
    let golden = from_hex(include_str!("../fixtures/golden_cpo.hex")).ok_or("fixture is not hex")?;
    let cpo = decode_cpo(&golden).map_err(|e| e.to_string())?;
    let expected = ControlPacketObject {
        sequence: 42,
        cycle_start_ns: 60_000_000_000,
        flags: FLAG_PARAM_CHANGE,
        frc: 2.5,
        tv: 0.5,
        pr: 10.0,
        rate: 12.0,
        cp: vec![0.0, 0.15, 0.85, 1.0],
        f: vec![1.7724538509055159, 0.0, -0.5, 0.25],
        t: vec![0.002, 0.0005, 0.0005, 0.0005],
    };
    let golden_ok = cpo == expected && encode_cpo(&cpo).map_err(|e| e.to_string())? == golden;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut fuzz_accepted = 0;
    let fuzz = catch_unwind(AssertUnwindSafe(|| {
        for i in 0..100_000 {
            let bytes: Vec<u8> = if i % 2 == 0 {
                let len = rng.random_range(0..400);
                (0..len).map(|_| rng.random()).collect()
            } else {
                // Valid packet with a random corruption: flip, truncate or extend.
                let mut b = encode_cpo(&random_cpo(&mut rng)).expect("valid");
                match rng.random_range(0..3) {
                    0 => {
                        let k = rng.random_range(0..b.len());
                        b[k] ^= rng.random_range(1..=255u8);
                    }
                    1 => b.truncate(rng.random_range(0..b.len())),
                    _ => b.push(rng.random()),
                }
                b
            };
            if decode_message(&bytes).is_ok() {
                fuzz_accepted += 1;
            }
        }
    }));

    let mut round_trip_ok = true;
    let mut length_ok = true;
    for _ in 0..10_000 {
        let c = random_cpo(&mut rng);
        let b = encode_cpo(&c).map_err(|e| e.to_string())?;
        length_ok &= b.len() == cpo_len(c.cp.len(), c.f.len(), c.t.len()) && b.len() == 64 + 8 * (c.cp.len() + c.f.len() + c.t.len()) + 4;
        round_trip_ok &= decode_cpo(&b).as_ref() == Ok(&c);
    }
    ensure(
        golden_ok && fuzz.is_ok() && fuzz_accepted == 0 && round_trip_ok && length_ok,
        format!(
            "golden {golden_ok}, 1e5 fuzz cases: panics {}, accepted {fuzz_accepted}; 1e4 round trips {round_trip_ok}; size formula {length_ok}",
            fuzz.is_err() as u8
        ),
    )
}

fn determinism() -> Outcome {
    let mut s = common::scenario(3, 2, 2.0, 1.5);
    s.network.drop_probability = 0.05;
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        let out = simulate(&s, Exec::default()).map_err(|e| e.to_string())?;
        write_report(&out, d.path(), false).map_err(|e| e.to_string())?;
    }
    let mut compared = 0;
    for name in ["trace_p0.csv", "trace_p1.csv", "trace_p2.csv", "drift.csv", "drift.json"] {
        let a = std::fs::read(dirs[0].path().join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name} differs between runs"));
        }
        compared += 1;
    }
    // Every compiled strategy must agree bit for bit.
    let seq = simulate(&s, Exec::Sequential).map_err(|e| e.to_string())?;
    let mut names = Vec::new();
    for exec in Exec::available() {
        let other = simulate(&s, exec).map_err(|e| e.to_string())?;
        if other.traces != seq.traces || other.drift != seq.drift {
            return Err(format!("{} diverges from sequential", exec.name()));
        }
        names.push(exec.name());
    }
    ensure(true, format!("{compared} files byte-identical across two seeded runs; strategies {names:?} agree bitwise"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("volume consistency", volume_consistency),
        ("drift per cycle", drift_per_cycle),
        ("packet economy", packet_economy),
        ("deformation performance", deformation_performance),
        ("volume fidelity", volume_fidelity),
        ("spherical harmonics", sh_suite),
        ("geometry oracles", geometry_oracles),
        ("pose estimation", pose_estimation),
        ("protocol", protocol),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
