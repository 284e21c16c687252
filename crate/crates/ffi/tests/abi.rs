use std::ffi::{c_char, CString};
use std::ptr;

use sepkit::datagen::{stored_utterance, CorpusConfig, Split};
use sepkit::dsp::{NormStats, DEFAULT_SAMPLE_RATE};
use sepkit::neural::{AdamState, ArchConfig, Checkpoint, Model, ModelKind, Stage};
use sepkit_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { sepkit_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
    assert_eq!(bytes.len(), n.min(255));
    String::from_utf8(bytes).unwrap()
}

fn save_checkpoint(dir: &std::path::Path, stage: Stage) -> CString {
    let arch = ArchConfig {
        hidden: 4,
        embed_dim: 2,
        ..ArchConfig::desk()
    };
    let kind = if stage == Stage::Upit { ModelKind::Baseline } else { ModelKind::Def };
    let ckpt = Checkpoint {
        stage,
        model: Model::new(kind, &arch, 7).unwrap(),
        optimizer: AdamState::new(1e-3).unwrap(),
        norm: NormStats::identity(arch.bins),
        lineage: Vec::new(),
        metadata: Default::default(),
    };
    let path = dir.join(format!("{stage}.ckpt"));
    ckpt.save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn load(path: &CString) -> *mut SepkitModel {
    let mut model = ptr::null_mut();
    let st = unsafe { sepkit_model_load(path.as_ptr(), &mut model) };
    assert_eq!(st, SepkitStatus::Ok, "{}", last_error());
    assert!(!model.is_null());
    model
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { std::ffi::CStr::from_ptr(sepkit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn separate_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let utt = stored_utterance(&CorpusConfig::default(), Split::Test, 0).unwrap();
    let mix = &utt.mixture.samples;
    let n = mix.len();
    for (stage, want) in [(Stage::Joint, SepkitStage::Joint), (Stage::Upit, SepkitStage::Upit), (Stage::Dc, SepkitStage::Dc)] {
        let model = load(&save_checkpoint(dir.path(), stage));
        let mut s = SepkitStage::Dl;
        assert_eq!(unsafe { sepkit_model_stage(model, &mut s) }, SepkitStatus::Ok);
        assert_eq!(s, want);
        let mut k = 0usize;
        assert_eq!(unsafe { sepkit_model_num_sources(model, &mut k) }, SepkitStatus::Ok);
        assert_eq!(k, 2);
        assert_eq!(unsafe { sepkit_model_set_kmeans(model, 3, 50) }, SepkitStatus::Ok);

        let mut out = vec![0.0; 2 * n];
        let st = unsafe { sepkit_separate(model, mix.as_ptr(), n, DEFAULT_SAMPLE_RATE, out.as_mut_ptr(), out.len()) };
        assert_eq!(st, SepkitStatus::Ok, "{}", last_error());
        assert_eq!(last_error(), "");
        assert!(out.iter().all(|x| x.is_finite()));
        // Masks sum to at most one per bin for these models, so the sum of
        // estimates cannot be louder than the mixture by much.
        let e_mix: f64 = mix.iter().map(|x| x * x).sum();
        let e_out: f64 = out.iter().map(|x| x * x).sum();
        assert!(e_out > 0.0 && e_out < 4.0 * e_mix);

        let mut small = vec![0.0; n];
        let st = unsafe { sepkit_separate(model, mix.as_ptr(), n, DEFAULT_SAMPLE_RATE, small.as_mut_ptr(), n) };
        assert_eq!(st, SepkitStatus::BufferTooSmall);
        assert!(last_error().contains("need"));

        let st = unsafe { sepkit_separate(model, mix.as_ptr(), n, 16_000, out.as_mut_ptr(), out.len()) };
        assert_ne!(st, SepkitStatus::Ok);
        unsafe { sepkit_model_free(model) };
    }
}

#[test]
fn score_matches_the_library() {
    let utt = stored_utterance(&CorpusConfig::default(), Split::Dev, 1).unwrap();
    let n = utt.mixture.samples.len();
    let refs: Vec<f64> = utt.references.iter().flat_map(|s| s.samples.iter().copied()).collect();
    // Estimates: each reference leaking a little of the other, in swapped order.
    let est: Vec<f64> = (0..2)
        .flat_map(|k| {
            let (a, b) = (&utt.references[1 - k].samples, &utt.references[k].samples);
            a.iter().zip(b).map(|(x, y)| x + 0.1 * y).collect::<Vec<_>>()
        })
        .collect();
    let (mut sdr, mut sir, mut sar, mut asg) = ([0.0; 2], [0.0; 2], [0.0; 2], [9usize; 2]);
    let st = unsafe {
        sepkit_score(
            est.as_ptr(),
            refs.as_ptr(),
            2,
            n,
            DEFAULT_SAMPLE_RATE,
            SepkitAssign::Optimal as u32,
            sdr.as_mut_ptr(),
            sir.as_mut_ptr(),
            sar.as_mut_ptr(),
            asg.as_mut_ptr(),
        )
    };
    assert_eq!(st, SepkitStatus::Ok, "{}", last_error());
    assert_eq!(asg, [1, 0]);
    let lib = sepkit::metrics::score(
        &[
            sepkit::dsp::AudioBuffer::new(est[..n].to_vec(), DEFAULT_SAMPLE_RATE).unwrap(),
            sepkit::dsp::AudioBuffer::new(est[n..].to_vec(), DEFAULT_SAMPLE_RATE).unwrap(),
        ],
        &utt.references,
        sepkit::metrics::AssignMode::Optimal,
    )
    .unwrap();
    assert_eq!(sdr.to_vec(), lib.sdr_db);
    assert_eq!(sir.to_vec(), lib.sir_db);
    assert_eq!(sar.to_vec(), lib.sar_db);
    assert!(sdr.iter().all(|&d| d > 15.0));

    // Default pairing scores the swapped outputs badly; assignment may be null.
    let st = unsafe {
        sepkit_score(
            est.as_ptr(),
            refs.as_ptr(),
            2,
            n,
            DEFAULT_SAMPLE_RATE,
            SepkitAssign::Default as u32,
            sdr.as_mut_ptr(),
            sir.as_mut_ptr(),
            sar.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, SepkitStatus::Ok);
    assert!(sdr.iter().all(|&d| d < 0.0));
}

#[test]
fn errors_are_reported_not_raised() {
    let mut model = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { sepkit_model_load(missing.as_ptr(), &mut model) }, SepkitStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sepkit_model_load(junk.as_ptr(), &mut model) }, SepkitStatus::IncompatibleCheckpoint);

    assert_eq!(unsafe { sepkit_model_load(ptr::null(), &mut model) }, SepkitStatus::NullPointer);
    let mut k = 0usize;
    assert_eq!(unsafe { sepkit_model_num_sources(ptr::null(), &mut k) }, SepkitStatus::NullPointer);
    unsafe { sepkit_model_free(ptr::null_mut()) };

    let x = [0.0f64; 4];
    let mut o = [0.0f64; 3];
    let st = unsafe {
        sepkit_score(
            x.as_ptr(),
            x.as_ptr(),
            2,
            2,
            DEFAULT_SAMPLE_RATE,
            SepkitAssign::Default as u32,
            o.as_mut_ptr(),
            o.as_mut_ptr(),
            o.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, SepkitStatus::DegenerateReference);
    let st = unsafe {
        sepkit_score(
            x.as_ptr(),
            x.as_ptr(),
            7,
            0,
            DEFAULT_SAMPLE_RATE,
            SepkitAssign::Default as u32,
            o.as_mut_ptr(),
            o.as_mut_ptr(),
            o.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, SepkitStatus::InvalidArgument);
    let st = unsafe {
        sepkit_score(
            x.as_ptr(),
            x.as_ptr(),
            2,
            2,
            DEFAULT_SAMPLE_RATE,
            9,
            o.as_mut_ptr(),
            o.as_mut_ptr(),
            o.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, SepkitStatus::InvalidArgument);
    assert!(last_error().contains("mode 9"));

    // Truncation keeps the terminator and reports the full length.
    let mut tiny = [1 as c_char; 4];
    let full = unsafe { sepkit_last_error_message(tiny.as_mut_ptr(), tiny.len()) };
    assert!(full > 3);
    assert_eq!(tiny[3], 0);

    assert_eq!(unsafe { sepkit_model_set_kmeans(ptr::null_mut(), 0, 1) }, SepkitStatus::NullPointer);
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sepkit.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "sepkit_version",
        "sepkit_last_error_message",
        "sepkit_model_load",
        "sepkit_model_free",
        "sepkit_model_num_sources",
        "sepkit_model_stage",
        "sepkit_model_set_kmeans",
        "sepkit_separate",
        "sepkit_score",
        "typedef struct SepkitModel SepkitModel",
        "SEPKIT_STATUS_OK = 0",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    // A C compiler, when present, must accept the header as-is.
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ SepkitModel *m = 0; return sepkit_model_load(\"x\", &m) == SEPKIT_STATUS_OK; }}\n",
            header.display()
        ),
    )
    .unwrap();
    if let Ok(out) = std::process::Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg(&src).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
