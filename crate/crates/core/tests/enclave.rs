mod common;

use std::io::Write;
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::Duration;

use serde_json::json;
use teeport_core::drivers::{run_case, source_driver, DriverMode};
use teeport_core::enclave::client::{ClientError, EnclaveClient};
use teeport_core::enclave::frame::{read_frame, write_frame, Frame, FrameType};
use teeport_core::enclave::launch::{launch_enclave, EnclaveHandle, LaunchOptions};
use teeport_core::enclave::proxy::{Tamper, TamperProxy};
use teeport_core::enclave::stub::{link_python_project, LinkConfig, LinkTarget};
use teeport_core::enclave::{sign_and_measure, EnclaveError, KeyStore, QuoteVerifier, SignedImage};
use teeport_core::transform::Equivalence;
use teeport_core::validate::{EquivalenceOutcome, Oracle, ValidateOptions};

const CLAMP_INPUTS: &str = "```inputs\n5, 0, 10\n-3, 0, 10\n42, 0, 10\n```";

fn launch(
    image: &SignedImage,
    keys: &KeyStore,
    dir: &std::path::Path,
) -> Result<EnclaveHandle, EnclaveError> {
    launch_enclave(
        image,
        keys,
        &LaunchOptions {
            program: PathBuf::from(env!("CARGO_BIN_EXE_teeport-enclave")),
            args: vec![],
            log: dir.join("enclave.log"),
            case_timeout: Duration::from_secs(10),
        },
    )
}

struct Setup {
    _dir: tempfile::TempDir,
    keys: KeyStore,
    image: SignedImage,
    handle: EnclaveHandle,
}

fn clamp_enclave() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let rec = common::record("clamp");
    let build = common::build(&rec, &common::native_source("clamp.rs"));
    let keys = KeyStore::generate();
    let image = sign_and_measure(
        build.binary.as_ref().unwrap(),
        &rec.fqid,
        &rec.signature.ret,
        "cargo",
        &keys.harness,
    )
    .unwrap();
    let handle = launch(&image, &keys, dir.path()).unwrap();
    Setup {
        _dir: dir,
        keys,
        image,
        handle,
    }
}

fn client(s: &Setup, endpoint: &str) -> EnclaveClient {
    EnclaveClient::new(
        endpoint,
        QuoteVerifier::new(s.keys.attestation.verifying_key()),
    )
}

#[test]
fn native_port_matches_original_and_serves_from_enclave() {
    let work = tempfile::tempdir().unwrap();
    let rec = common::record("clamp");
    let suite = common::scripted_suite(&rec, &[CLAMP_INPUTS]);
    assert_eq!(suite.history.len(), 1);
    assert!(suite.final_report().unwrap().is_full());

    let orig = common::original(&rec, work.path());
    let mut oracle = Oracle::new(&rec, &suite, &orig, ValidateOptions::default()).unwrap();
    oracle.sandbox = true;
    let build = common::build(&rec, &common::native_source("clamp.rs"));
    assert_eq!(oracle.check(&build).outcome, EquivalenceOutcome::Equivalent);

    let s = clamp_enclave();
    let mut c = client(&s, &s.handle.endpoint());
    for (case, want) in suite.cases.iter().zip(&oracle.original.outputs) {
        assert_eq!(
            &c.call(&rec.fqid, &s.image.measurement, &case.line(), None)
                .unwrap(),
            want
        );
    }
    assert!(s.handle.log_text().contains("AWAIT_CHANNEL_INIT -> READY"));

    // The linked project answers through the stub.
    let linked = work.path().join("linked");
    let config = LinkConfig {
        attestation_public: s.keys.attestation_public(),
        images: [(
            rec.fqid.clone(),
            LinkTarget {
                endpoint: s.handle.endpoint(),
                measurement: s.image.measurement.clone(),
            },
        )]
        .into(),
    };
    let touched = link_python_project(
        &common::corpus().join("python"),
        &linked,
        &[rec.clone()],
        &config,
    )
    .unwrap();
    assert_eq!(touched.len(), 1);
    let text = std::fs::read_to_string(&touched[0]).unwrap();
    assert!(text.contains("teeport_rt.enclave_call("));
    assert!(!text.contains("return hi"));
    let stub_dir = work.path().join("stub");
    std::fs::create_dir_all(&stub_dir).unwrap();
    let stub = source_driver(&rec, &stub_dir, DriverMode::Run, Some(&linked)).unwrap();
    for (case, want) in suite.cases.iter().zip(&oracle.original.outputs) {
        let r = run_case(
            &stub,
            &case.case_id,
            &case.line(),
            None,
            Duration::from_secs(30),
        );
        assert_eq!(
            r.canonical_output().as_deref(),
            Some(want.as_str()),
            "{}",
            r.stderr
        );
    }
}

#[test]
fn tampering_fails_closed() {
    let s = clamp_enclave();
    let fqid = s.image.fqid.clone();
    let m = s.image.measurement.clone();

    let flip = TamperProxy::start(&s.handle.endpoint(), Tamper::FlipCallByte).unwrap();
    let err = client(&s, &flip.endpoint())
        .call(&fqid, &m, "1, 0, 2", None)
        .unwrap_err();
    assert_eq!(err.code(), "INTEGRITY_FAILURE", "{err}");

    let sig = TamperProxy::start(&s.handle.endpoint(), Tamper::FlipQuoteSignature).unwrap();
    let err = client(&s, &sig.endpoint())
        .call(&fqid, &m, "1, 0, 2", None)
        .unwrap_err();
    assert_eq!(err.code(), "BAD_SIGNATURE");

    let swap = TamperProxy::start(&s.handle.endpoint(), Tamper::SwapServerKey).unwrap();
    let err = client(&s, &swap.endpoint())
        .call(&fqid, &m, "1, 0, 2", None)
        .unwrap_err();
    assert_eq!(err.code(), "CHANNEL_NOT_BOUND");

    let replay = TamperProxy::start(&s.handle.endpoint(), Tamper::ReplayQuote).unwrap();
    let mut c = client(&s, &replay.endpoint());
    assert_eq!(c.call(&fqid, &m, "1, 0, 2", None).unwrap(), "1");
    let err = c.call(&fqid, &m, "1, 0, 2", None).unwrap_err();
    assert_eq!(err.code(), "NONCE_REPLAY");

    let err = client(&s, &s.handle.endpoint())
        .call(&fqid, &"0".repeat(64), "1, 0, 2", None)
        .unwrap_err();
    assert_eq!(err.code(), "MEASUREMENT_MISMATCH");
}

#[test]
fn protocol_violations_close_the_session() {
    let s = clamp_enclave();
    let mut conn = TcpStream::connect(s.handle.endpoint()).unwrap();
    write_frame(
        &mut conn,
        &Frame::new(FrameType::Call, "x", json!({"ciphertext": "00"})),
    )
    .unwrap();
    let f = read_frame(&mut conn).unwrap();
    assert_eq!(f.kind, FrameType::Error);
    assert_eq!(f.payload["code"], "PROTOCOL_VIOLATION");
    assert!(read_frame(&mut conn).is_err());

    let mut conn = TcpStream::connect(s.handle.endpoint()).unwrap();
    conn.write_all(&7u32.to_be_bytes()).unwrap();
    conn.write_all(b"{broken").unwrap();
    let f = read_frame(&mut conn).unwrap();
    assert_eq!(f.payload["code"], "DECODE_ERROR");
    assert!(read_frame(&mut conn).is_err());

    // The runtime keeps serving other sessions.
    assert_eq!(
        client(&s, &s.handle.endpoint())
            .call(&s.image.fqid, &s.image.measurement, "9, 0, 2", None)
            .unwrap(),
        "2"
    );
    let unknown = client(&s, &s.handle.endpoint())
        .call("nope#1", &s.image.measurement, "()", None)
        .unwrap_err();
    assert!(matches!(unknown, ClientError::Remote { ref code, .. } if code == "UNKNOWN_FUNCTION"));
}

#[test]
fn launch_refuses_bad_images() {
    let dir = tempfile::tempdir().unwrap();
    let s = clamp_enclave();
    let mut forged = s.image.clone();
    forged.signature.replace_range(
        0..2,
        if &forged.signature[0..2] == "00" {
            "01"
        } else {
            "00"
        },
    );
    assert!(matches!(
        launch(&forged, &s.keys, dir.path()),
        Err(EnclaveError::InvalidSignature(_))
    ));

    let other = KeyStore::generate();
    assert!(matches!(
        launch(&s.image, &other, dir.path()),
        Err(EnclaveError::InvalidSignature(_))
    ));

    let copy = dir.path().join("copy.bin");
    let mut bytes = std::fs::read(&s.image.binary).unwrap();
    *bytes.last_mut().unwrap() ^= 0xff;
    std::fs::write(&copy, bytes).unwrap();
    let swapped = SignedImage {
        binary: copy,
        ..s.image.clone()
    };
    assert!(matches!(
        launch(&swapped, &s.keys, dir.path()),
        Err(EnclaveError::MeasurementMismatch { .. })
    ));
}
