//! Acceptance report: one PASS/FAIL line per criterion, exit status 1 if any fail.
//! Run with `cargo test -p ddhs-core --test acceptance`.

use std::thread;
use std::time::{Duration, Instant};

use ddhs_core::coupling::{decode_frame, encode_frame, ClientOptions, CouplingMessage, MessageKind, ModelServer, RemoteBrace, ServerOptions};
use ddhs_core::frame::{
    compare_runs, newmark_nlrha, AccelUnit, FrameModel, GroundMotion, IntegrationOptions, Scheme, SyntheticMotion,
};
use ddhs_core::hysteresis::stop_evaluate_series;
use ddhs_core::lasso::{kkt_violation, lasso_solve, LassoOptions, LibraryMatrix};
use ddhs_core::materials::{
    generate_protocol, run_cyclic_pushover, BilinearMaterial, BraceProperties, LoadingProtocol, MaterialBrace,
};
use ddhs_core::pisindy::{build_library, make_thresholds, train, PiSession, TrainOptions, TrainedPiModel};
use ddhs_core::provider::Recording;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn smooth_data() -> ddhs_core::SignalSeries {
    let props = BraceProperties::default();
    let x = generate_protocol(&LoadingProtocol::default_for(props.dy)).unwrap();
    run_cyclic_pushover(&props.smooth().unwrap(), &x).unwrap()
}

fn smooth_model() -> TrainedPiModel {
    train(&smooth_data(), 50, 0.1, &TrainOptions::default()).unwrap()
}

fn bilinear_fit() -> Outcome {
    let props = BraceProperties::default();
    // The final amplitude 12.75·dy places dy exactly on the 50-operator grid.
    let amps: Vec<f64> = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0, 12.0, 12.75]
        .iter()
        .map(|k| k * props.dy)
        .collect();
    let x = generate_protocol(&LoadingProtocol {
        cycle_amplitudes: amps,
        points_per_branch: 200,
    })
    .unwrap();
    let data = run_cyclic_pushover(&props.bilinear().unwrap(), &x).unwrap();
    let start = Instant::now();
    let model = train(&data, 50, 1e-6, &TrainOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = model.nrmse_train <= 1e-3 && secs < 10.0;
    outcome(
        pass,
        format!("bilinear training NRMSE {:.2e}% (<= 0.1%), {:.2} s (< 10 s)", 100.0 * model.nrmse_train, secs),
    )
}

fn smooth_fit() -> Outcome {
    let data = smooth_data();
    let start = Instant::now();
    let model = train(&data, 50, 0.1, &TrainOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = model.nrmse_train <= 1e-2 && secs < 30.0;
    outcome(
        pass,
        format!(
            "smooth training NRMSE {:.3}% (<= 1%, context 0.1954%), {} nonzero weights, {:.2} s (< 30 s)",
            100.0 * model.nrmse_train,
            model.nonzero_weights(),
            secs
        ),
    )
}

fn substructure_agreement() -> Outcome {
    let props = BraceProperties::default();
    let start = Instant::now();
    let model = smooth_model();
    let frame = FrameModel::with_defaults(props.k1).unwrap();
    let motion = SyntheticMotion::default().generate().unwrap();
    let opts = IntegrationOptions::default();
    let reference = newmark_nlrha(&frame, &motion, &mut MaterialBrace::new(props.smooth().unwrap()), &opts).unwrap();
    let test = newmark_nlrha(&frame, &motion, &mut PiSession::new(model), &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let report = compare_runs(&reference, &test).unwrap();
    let disc = report.peak_drift_discrepancy();
    let pass = report.nrmse_drift <= 0.02 && disc <= 0.05 && secs < 60.0;
    outcome(
        pass,
        format!(
            "drift NRMSE {:.2}% (<= 2%, context 0.7702%), peak drift {:.3}% vs {:.3}% (context 1.43%) discrepancy {:.1}% (<= 5%), {:.2} s (< 60 s)",
            100.0 * report.nrmse_drift,
            100.0 * report.peak_drift_ref,
            100.0 * report.peak_drift_test,
            100.0 * disc,
            secs
        ),
    )
}

fn frame_period() -> Outcome {
    let t = FrameModel::with_defaults(BraceProperties::default().k1).unwrap().natural_period();
    outcome((t - 0.492).abs() <= 0.001, format!("T = {t:.5} s (0.492 ± 0.001)"))
}

fn lasso_oracle() -> Outcome {
    let mut worst_ls = 0.0_f64;
    let mut worst_kkt = 0.0_f64;
    let mut monotone = true;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..8).map(|_| (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let r: Vec<f64> = (0..200).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let theta = LibraryMatrix::from_columns(cols).unwrap();
        let sol = lasso_solve(&theta, &r, 0.0, &LassoOptions::default()).unwrap();
        let a = DMatrix::from_fn(200, 8, |i, j| theta.column(j)[i]);
        let oracle = a.svd(true, true).solve(&DVector::from_column_slice(&r), 1e-14).unwrap();
        for (x, y) in sol.xi.iter().zip(oracle.iter()) {
            worst_ls = worst_ls.max((x - y).abs());
        }
        worst_kkt = worst_kkt.max(kkt_violation(&theta, &r, &sol).unwrap());
    }
    let data = smooth_data();
    let theta = build_library(data.x(), &make_thresholds(data.x(), 50).unwrap()).unwrap();
    let traced = LassoOptions {
        record_objective: true,
        ..LassoOptions::default()
    };
    for lambda in [1e-3, 0.1, 1.0] {
        let sol = lasso_solve(&theta, data.forces().unwrap(), lambda, &traced).unwrap();
        worst_kkt = worst_kkt.max(kkt_violation(&theta, data.forces().unwrap(), &sol).unwrap());
        monotone &= sol.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    }
    let pass = worst_ls <= 1e-6 && worst_kkt <= 1e-8 && monotone;
    outcome(
        pass,
        format!(
            "max |ξ − ξ_ls| {worst_ls:.1e} (<= 1e-6), max KKT violation {worst_kkt:.1e} (<= 1e-8), objective non-increasing: {monotone}"
        ),
    )
}

fn operator_properties() -> Outcome {
    const HISTORIES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let history = |rng: &mut ChaCha8Rng| -> (f64, Vec<f64>) {
        let r = if rng.gen_bool(0.5) { rng.gen_range(1e-3..1.0) } else { rng.gen_range(1.0..60.0) };
        let n = rng.gen_range(2..200);
        (r, (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect())
    };
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();

    if !(0..HISTORIES).all(|_| {
        let (r, xs) = history(&mut rng);
        stop_evaluate_series(r, &xs).unwrap().iter().all(|y| y.abs() <= r)
    }) {
        failures.push("band");
    }
    // Inserting intermediate points on each monotone segment must not change the sampled outputs.
    if !(0..HISTORIES).all(|_| {
        let (r, xs) = history(&mut rng);
        let mut fine = vec![xs[0]];
        let mut keep = vec![0];
        for w in xs.windows(2) {
            for k in 1..rng.gen_range(1..6) {
                let f: f64 = k as f64 / 6.0;
                fine.push(w[0] + f * (w[1] - w[0]));
            }
            fine.push(w[1]);
            keep.push(fine.len() - 1);
        }
        let coarse = stop_evaluate_series(r, &xs).unwrap();
        let dense = stop_evaluate_series(r, &fine).unwrap();
        keep.iter().zip(&coarse).all(|(k, y)| (dense[*k] - y).abs() <= 1e-12 * r.max(1.0))
    }) {
        failures.push("rate independence");
    }
    if !(0..HISTORIES).all(|_| {
        let (r, xs) = history(&mut rng);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let a = stop_evaluate_series(r, &xs).unwrap();
        let b: Vec<f64> = stop_evaluate_series(r, &neg).unwrap().iter().map(|y| -y).collect();
        bits(&a) == bits(&b)
    }) {
        failures.push("odd symmetry");
    }
    if !(0..HISTORIES).all(|_| {
        let (r, xs) = history(&mut rng);
        let mut padded = Vec::new();
        let mut keep = Vec::new();
        for x in &xs {
            for _ in 0..rng.gen_range(1..4) {
                padded.push(*x);
            }
            keep.push(padded.len() - 1);
        }
        let plain = stop_evaluate_series(r, &xs).unwrap();
        let dwelt = stop_evaluate_series(r, &padded).unwrap();
        bits(&keep.iter().map(|k| dwelt[*k]).collect::<Vec<_>>()) == bits(&plain)
    }) {
        failures.push("dwell");
    }
    if !(0..HISTORIES).all(|_| {
        let r = rng.gen_range(1e-3..60.0);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..rng.gen_range(2..200))
            .map(|k| {
                if k > 0 {
                    x += rng.gen_range(0.0..5.0);
                }
                x
            })
            .collect();
        let ys = stop_evaluate_series(r, &xs).unwrap();
        xs.iter().zip(ys).all(|(x, y)| y == x.min(r))
    }) {
        failures.push("virgin curve");
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("band, rate independence, odd symmetry, dwell, virgin curve hold on {HISTORIES} histories each")
    } else {
        format!("violated: {}", failures.join(", "))
    };
    outcome(pass, detail)
}

fn integrator_checks() -> Outcome {
    let k_brace = 180.0;
    let elastic = || MaterialBrace::new(BilinearMaterial::new(k_brace, 0.0, f64::INFINITY).unwrap());
    let frame = |zeta| FrameModel {
        damping_ratio: zeta,
        ..FrameModel::with_defaults(k_brace).unwrap()
    };
    let opts = |scheme, u0| IntegrationOptions {
        scheme,
        substeps: 1,
        u0,
        ..IntegrationOptions::default()
    };
    let mut period_err = 0.0_f64;
    let mut gain_err = 0.0_f64;
    let f = frame(0.0);
    let period = f.natural_period();
    for scheme in [Scheme::Explicit, Scheme::AverageAcceleration] {
        let motion = GroundMotion::zeros(period / 200.0, 200 * 12);
        let h = newmark_nlrha(&f, &motion, &mut elastic(), &opts(scheme, 10.0)).unwrap();
        let up: Vec<f64> = (1..h.len())
            .filter(|&k| h.u[k - 1] < 0.0 && h.u[k] >= 0.0)
            .map(|k| h.t[k - 1] + (h.t[k] - h.t[k - 1]) * (-h.u[k - 1]) / (h.u[k] - h.u[k - 1]))
            .collect();
        let measured = (up[up.len() - 1] - up[0]) / (up.len() - 1) as f64;
        period_err = period_err.max((measured - period).abs() / period);

        let zeta = 0.05;
        let fd = frame(zeta);
        let omega = fd.circular_frequency();
        let dt = fd.natural_period() / 200.0;
        let ag: Vec<f64> = (0..=200 * 60).map(|k| 100.0 * (omega * k as f64 * dt).sin()).collect();
        let motion = GroundMotion::new(dt, &ag, AccelUnit::MmPerS2, 1.0).unwrap();
        let h = newmark_nlrha(&fd, &motion, &mut elastic(), &opts(scheme, 0.0)).unwrap();
        let peak = h.u[h.len() - 1000..].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let gain = peak * omega * omega / 100.0;
        gain_err = gain_err.max((gain * 2.0 * zeta - 1.0).abs());
    }
    let motion = GroundMotion::zeros(period / 200.0, 200 * 10 + 1);
    let h = newmark_nlrha(&f, &motion, &mut elastic(), &opts(Scheme::AverageAcceleration, 25.0)).unwrap();
    let (m, k) = (f.mass / 1000.0, f.lateral_stiffness());
    let e: Vec<f64> = (0..h.len()).map(|i| 0.5 * m * h.v[i] * h.v[i] + 0.5 * k * h.u[i] * h.u[i]).collect();
    let drift = e.iter().fold(0.0_f64, |a, v| a.max((v - e[0]).abs())) / e[0];
    let pass = period_err <= 1e-3 && gain_err <= 0.02 && drift <= 0.005;
    outcome(
        pass,
        format!(
            "period error {:.3}% (<= 0.1%), resonance gain error {:.2}% (<= 2%), energy drift {:.2e}% (<= 0.5%)",
            100.0 * period_err,
            100.0 * gain_err,
            100.0 * drift
        ),
    )
}

fn coupling_equivalence() -> Outcome {
    let model = smooth_model();
    let props = BraceProperties::default();
    let frame = FrameModel::with_defaults(props.k1).unwrap();
    let motion = SyntheticMotion {
        duration: 5.0,
        ..SyntheticMotion::default()
    }
    .generate()
    .unwrap();
    let server = ModelServer::bind(
        model.clone(),
        "127.0.0.1:0",
        ServerOptions {
            max_sessions: Some(1),
            ..ServerOptions::default()
        },
    )
    .unwrap();
    let addr = server.local_addr().unwrap().to_string();
    let handle = thread::spawn(move || server.run());
    let mut local = Recording::new(PiSession::new(model.clone()));
    let mut remote = Recording::new(
        RemoteBrace::connect(
            &addr,
            ClientOptions {
                timeout: Duration::from_secs(10),
                ..ClientOptions::default()
            },
        )
        .unwrap(),
    );
    let opts = IntegrationOptions::default();
    newmark_nlrha(&frame, &motion, &mut local, &opts).unwrap();
    newmark_nlrha(&frame, &motion, &mut remote, &opts).unwrap();
    let a: Vec<u64> = local.forces.iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = remote.forces.iter().map(|v| v.to_bits()).collect();
    let identical = !a.is_empty() && a == b;
    let steps = a.len();
    remote.into_inner().close().unwrap();
    handle.join().unwrap().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let frames = 10_000;
    let round_trips = (0..frames).all(|_| {
        let step = rng.gen();
        let msg = match rng.gen_range(0..4) {
            0 => CouplingMessage::error(step, (0..rng.gen_range(0..40)).map(|_| rng.gen_range('a'..='z')).collect::<String>()),
            1 => CouplingMessage::new(MessageKind::ALL[rng.gen_range(0..7)], step, vec![]),
            _ => CouplingMessage::new(
                MessageKind::ALL[rng.gen_range(0..7)],
                step,
                (0..rng.gen_range(1..6)).map(|_| f64::from_bits(rng.gen())).collect(),
            ),
        };
        decode_frame(&encode_frame(&msg)).map(|d| d == msg).unwrap_or(false)
    });
    let pass = identical && round_trips;
    outcome(
        pass,
        format!("remote FORCE sequence bitwise equal to in-process over {steps} exchanges: {identical}, {frames} random frames round-trip: {round_trips}"),
    )
}

fn main() {
    // The limit is wall-clock seconds for the whole criterion.
    let criteria: [(&str, fn() -> Outcome, f64); 8] = [
        ("bilinear recovery", bilinear_fit, 10.0),
        ("smooth fit", smooth_fit, 30.0),
        ("substructure agreement", substructure_agreement, 60.0),
        ("frame period", frame_period, 1.0),
        ("lasso oracle", lasso_oracle, 5.0),
        ("stop operator properties", operator_properties, 10.0),
        ("integrator checks", integrator_checks, 10.0),
        ("coupling equivalence", coupling_equivalence, 30.0),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let pass = o.pass && secs < *limit;
        failed += usize::from(!pass);
        println!(
            "criterion {}: {} {name}: {} [{secs:.2} s, limit {limit} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
        );
    }
    println!("acceptance: {} of 8 criteria pass", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
