use std::io::Write;
use std::net::TcpStream;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use dfl_core::fairfilter::{apply_policy, hard_filter, Policy};
use dfl_core::hypothesis::PredictionMatrix;
use dfl_protocol::frame::{read_frame, write_frame};
use dfl_protocol::message::{chunk_predictions, encode_fair_indices, Reassembler, PREDICTIONS_HEADER_LEN};
use dfl_protocol::{
    audit_transcript, exchange_over, session_id, tp_serve, DcClient, Direction, FrameKind, Message, ProtocolError,
    ThirdParty, Transcript,
};

struct Case {
    x: DMatrix<f64>,
    y: Vec<f64>,
    s: Vec<u8>,
    preds: PredictionMatrix,
    policy: Policy,
    seed: u64,
}

fn case(id: u64) -> Case {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(id);
    let n = rng.random_range(16..80);
    let p = rng.random_range(2..6);
    let m = rng.random_range(1..120);
    let x: DMatrix<f64> = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let mut s: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    s[0] = 0;
    s[1] = 1;
    let y = (0..n).map(|i| (x[(i, 0)] > 0.0) as u8 as f64).collect();
    let h: DMatrix<f64> = DMatrix::from_fn(p, m, |_, _| rng.sample(StandardNormal));
    let preds = PredictionMatrix::new((&x * h).transpose()).unwrap();
    let policy = if id % 4 == 3 {
        Policy::Soft { sigma2: rng.random_range(0.5..20.0) }
    } else {
        Policy::Hard { rho: rng.random_range(0.0..0.6) }
    };
    Case { x, y, s, preds, policy, seed: rng.random() }
}

#[test]
fn loopback_matches_in_process_filter() {
    for id in 0..100 {
        let c = case(id);
        let handle = tp_serve(ThirdParty::new(&c.s, c.seed), "127.0.0.1:0").unwrap();
        let client = DcClient::new(handle.local_addr()).unwrap();
        let ex = client.exchange(&c.preds, c.policy, id).unwrap();
        let sf: Vec<f64> = c.s.iter().map(|&v| v as f64).collect();
        let local = apply_policy(&c.preds, &sf, c.policy, c.seed).unwrap();
        assert_eq!(ex.set, local, "case {id}");
        let report = audit_transcript(&ex.transcript, &c.s, &c.x, &c.y);
        assert!(report.passed(), "case {id}: {report}");
        // HELLO, one PREDICTIONS, reply, BYE
        assert_eq!(ex.transcript.len(), 4);
        handle.shutdown();
    }
}

#[test]
fn transcripts_are_deterministic_and_replayable() {
    let c = case(7);
    let run = || {
        let handle = tp_serve(ThirdParty::new(&c.s, c.seed), "127.0.0.1:0").unwrap();
        let ex = DcClient::new(handle.local_addr()).unwrap().exchange(&c.preds, c.policy, 11).unwrap();
        handle.shutdown();
        ex.transcript
    };
    let a = run();
    let b = run();
    assert_eq!(a.frame_bytes(), b.frame_bytes());
    let tp = ThirdParty::new(&c.s, c.seed);
    assert_eq!(tp.replay(&a).unwrap(), a.stream(Direction::TpToDc));

    let dir = tempfile::tempdir().unwrap();
    let (f, i) = a.save(dir.path(), "run").unwrap();
    let back = Transcript::load(f, i).unwrap();
    assert_eq!(back, a);
}

#[test]
fn empty_result_is_typed() {
    let c = case(1);
    let handle = tp_serve(ThirdParty::new(&c.s, 0), "127.0.0.1:0").unwrap();
    let client = DcClient::new(handle.local_addr()).unwrap();
    match client.request_fair_set(&c.preds, Policy::Hard { rho: 0.0 }, 0) {
        Err(ProtocolError::NoFairHypotheses { m }) => assert_eq!(m, c.preds.m()),
        other => panic!("expected no fair hypotheses, got {other:?}"),
    }
    let ok = client.request_fair_set(&c.preds, Policy::Hard { rho: f64::INFINITY }, 0).unwrap();
    assert_eq!(ok.set.k(), c.preds.m());
}

#[test]
fn remote_errors_are_surfaced() {
    let c = case(2);
    let handle = tp_serve(ThirdParty::new(&c.s[1..], 0), "127.0.0.1:0").unwrap();
    let client = DcClient::new(handle.local_addr()).unwrap();
    match client.exchange(&c.preds, c.policy, 0) {
        Err(ProtocolError::Remote(reason)) => assert!(reason.starts_with("length mismatch")),
        other => panic!("expected remote error, got {other:?}"),
    }
}

#[test]
fn wrong_magic_gets_error_and_close() {
    let c = case(3);
    let handle = tp_serve(ThirdParty::new(&c.s, 0), "127.0.0.1:0").unwrap();
    let mut conn = TcpStream::connect(handle.local_addr()).unwrap();
    let mut bytes = Message::Hello.to_frame([0; 16]).unwrap().encode().unwrap();
    bytes[..4].copy_from_slice(b"HTTP");
    conn.write_all(&bytes).unwrap();
    let reply = read_frame(&mut conn).unwrap().unwrap();
    assert_eq!(reply.kind, FrameKind::Error);
    assert!(read_frame(&mut conn).unwrap().is_none());
    // the service keeps accepting sessions
    let ex = DcClient::new(handle.local_addr()).unwrap().exchange(&c.preds, c.policy, 0).unwrap();
    assert_eq!(ex.set.m, c.preds.m());
}

#[test]
fn large_batch_is_chunked_under_the_frame_limit() {
    let (m, n) = (5000, 1500);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let s: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let preds = PredictionMatrix::new(DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))).unwrap();
    let handle = tp_serve(ThirdParty::new(&s, 0), "127.0.0.1:0").unwrap();
    let ex = DcClient::new(handle.local_addr()).unwrap().exchange(&preds, Policy::Hard { rho: 0.01 }, 0).unwrap();
    let chunks = ex.transcript.entries().iter().filter(|e| e.bytes[4] == FrameKind::Predictions as u8).count();
    assert_eq!(chunks, 4);
    assert!(ex.transcript.entries().iter().all(|e| e.bytes.len() <= 25 + dfl_protocol::MAX_PAYLOAD));
    let sf: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    assert_eq!(ex.set, hard_filter(&preds, &sf, 0.01).unwrap());
}

/// A third party that appends `s` to its reply.
fn leaking_tp_session(stream: &mut dfl_protocol::transport::MemoryStream, s: &[u8], seed: u64) {
    let sf: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    let mut asm = Reassembler::new();
    while let Some(frame) = read_frame(stream).unwrap() {
        if let Message::Predictions(c) = Message::from_frame(&frame).unwrap() {
            if let Some((preds, policy)) = asm.push(c).unwrap() {
                let set = apply_policy(&preds, &sf, policy, seed).unwrap();
                let mut payload = encode_fair_indices(&set).unwrap();
                payload.extend(sf.iter().flat_map(|v| v.to_le_bytes()));
                let reply = dfl_protocol::Frame::new(FrameKind::FairIndices, frame.session, payload);
                write_frame(stream, &reply).unwrap();
            }
        }
    }
}

#[test]
fn leaking_third_party_is_caught() {
    for id in 0..25 {
        let c = case(id);
        let (mut dc, mut tp) = dfl_protocol::transport::memory_pair();
        let (s, seed) = (c.s.clone(), c.seed);
        let server = std::thread::spawn(move || leaking_tp_session(&mut tp, &s, seed));
        // the strict client refuses the reply; record the session by hand
        let mut t = Transcript::new();
        let sid = session_id(id);
        for f in std::iter::once(Message::Hello.to_frame(sid).unwrap()).chain(
            chunk_predictions(&c.preds, c.policy, 1 << 20)
                .unwrap()
                .into_iter()
                .map(|ch| Message::Predictions(ch).to_frame(sid).unwrap()),
        ) {
            write_frame(&mut dc, &f).unwrap();
            t.record_frame(Direction::DcToTp, &f).unwrap();
        }
        let reply = read_frame(&mut dc).unwrap().unwrap();
        t.record_frame(Direction::TpToDc, &reply).unwrap();
        dc.shutdown_write();
        server.join().unwrap();
        let report = audit_transcript(&t, &c.s, &c.x, &c.y);
        assert!(!report.tp_payload.passed(), "case {id}: {report}");
        assert!(!report.byte_scan.passed(), "case {id}: {report}");
        assert!(report.dc_payload.passed());
    }
}

#[test]
fn data_center_sending_labels_is_caught() {
    for id in 0..25 {
        let c = case(id);
        let mut values = c.preds.values.clone();
        let y = nalgebra::RowDVector::from_row_slice(&c.y);
        values.set_row(0, &y);
        let leaky = PredictionMatrix::new(values).unwrap();
        let (mut dc, mut tp_end) = dfl_protocol::transport::memory_pair();
        let tp = ThirdParty::new(&c.s, c.seed);
        let server = std::thread::spawn(move || tp.handle_session(&mut tp_end).unwrap());
        let ex = exchange_over(&mut dc, session_id(id), &leaky, c.policy, PREDICTIONS_HEADER_LEN + (1 << 16)).unwrap();
        dc.shutdown_write();
        server.join().unwrap();
        let report = audit_transcript(&ex.transcript, &c.s, &c.x, &c.y);
        assert!(report.byte_scan.findings.iter().any(|f| f.starts_with("Y as f64")), "case {id}: {report}");
        assert!(report.tp_payload.passed() && report.dc_payload.passed());
    }
}

#[test]
fn busy_global_pool_does_not_stall_the_service() {
    use rayon::prelude::*;
    let c = case(5);
    let handle = tp_serve(ThirdParty::new(&c.s, c.seed), "127.0.0.1:0").unwrap();
    let addr = handle.local_addr();
    let (tx, rx) = std::sync::mpsc::channel();
    let preds = c.preds.clone();
    std::thread::spawn(move || {
        // every global worker blocks on a reply from the service
        let jobs = 2 * rayon::current_num_threads();
        let ks: Vec<usize> = (0..jobs as u64)
            .into_par_iter()
            .map(|t| DcClient::new(addr).unwrap().exchange(&preds, Policy::Hard { rho: 0.3 }, t).unwrap().set.k())
            .collect();
        tx.send(ks).unwrap();
    });
    let ks = rx.recv_timeout(std::time::Duration::from_secs(20)).expect("exchanges stalled");
    assert!(ks.windows(2).all(|w| w[0] == w[1]));
    handle.shutdown();
}
